//! Optional adapter to a real onion-routing daemon.
//!
//! Speaks SOCKS5 to the daemon's socks port for message exchange with `.onion`
//! names and the control-port protocol (cookie `AUTHENTICATE`, `SIGNAL
//! NEWNYM`) for fresh-circuit epochs. The bytes posted are exactly the wire
//! module's JSON messages, so a session run against a live daemon carries the
//! same payloads as the simulator.
//!
//! This module performs blocking network I/O and is exercised only by
//! explicitly opted-in integration runs; nothing here participates in the
//! default test suite or the acceptance gate.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

/// Errors from the daemon adapter.
#[derive(Debug, Error)]
pub enum SocksError {
    /// TCP or file I/O toward the daemon failed.
    #[error("daemon I/O error: {0}")]
    Io(#[from] std::io::Error),
    /// The SOCKS5 exchange was refused or malformed.
    #[error("socks proxy error: {0}")]
    Proxy(String),
    /// Control-port authentication was refused.
    #[error("control authentication failed: {0}")]
    ControlAuth(String),
    /// The control port rejected a command.
    #[error("control command failed: {0}")]
    Control(String),
    /// The HTTP exchange over the tunnel failed.
    #[error("http exchange failed: {0}")]
    Http(String),
}

/// Where to find the local daemon.
#[derive(Debug, Clone)]
pub struct SocksConfig {
    /// Socks listener, for example "127.0.0.1:8005".
    pub socks_addr: String,
    /// Control listener, for example "127.0.0.1:8006".
    pub control_addr: String,
    /// Path of the daemon's control authentication cookie file.
    pub control_cookie: PathBuf,
    /// Timeout applied to every connect/read/write.
    pub timeout: Duration,
}

impl SocksConfig {
    /// Config for a daemon on the conventional local ports 8005/8006.
    pub fn local(control_cookie: PathBuf) -> Self {
        Self {
            socks_addr: "127.0.0.1:8005".into(),
            control_addr: "127.0.0.1:8006".into(),
            control_cookie,
            timeout: Duration::from_secs(60),
        }
    }
}

/// Blocking transport through a local onion-routing daemon.
pub struct OnionDaemonTransport {
    config: SocksConfig,
}

impl OnionDaemonTransport {
    /// Wraps a daemon reachable per `config`.
    pub fn new(config: SocksConfig) -> Self {
        Self { config }
    }

    /// Requests a fresh-circuit epoch: connects to the control port,
    /// authenticates with the cookie, and issues `SIGNAL NEWNYM`.
    pub fn signal_newnym(&self) -> Result<(), SocksError> {
        let cookie = std::fs::read(&self.config.control_cookie)?;
        let mut stream = self.connect(&self.config.control_addr)?;
        let auth = format!("AUTHENTICATE {}\r\n", hex_lower(&cookie));
        stream.write_all(auth.as_bytes())?;
        let line = read_crlf_line(&mut stream)?;
        if !line.starts_with("250") {
            return Err(SocksError::ControlAuth(line));
        }
        stream.write_all(b"SIGNAL NEWNYM\r\n")?;
        let line = read_crlf_line(&mut stream)?;
        if !line.starts_with("250") {
            return Err(SocksError::Control(line));
        }
        let _ = stream.write_all(b"QUIT\r\n");
        Ok(())
    }

    /// POSTs `body` to `http://<host>:<port><path>` through the socks tunnel
    /// and returns the response body. `host` is typically a `.onion` name.
    pub fn post(
        &self,
        host: &str,
        port: u16,
        path: &str,
        body: &[u8],
    ) -> Result<Vec<u8>, SocksError> {
        let mut stream = self.connect(&self.config.socks_addr)?;
        socks5_handshake(&mut stream, host, port)?;
        stream.write_all(&build_http_post(host, path, body))?;
        let mut response = Vec::new();
        stream.read_to_end(&mut response)?;
        let (status, payload) = parse_http_response(&response)?;
        if status != 200 {
            return Err(SocksError::Http(format!("status {status}")));
        }
        Ok(payload)
    }

    fn connect(&self, addr: &str) -> Result<TcpStream, SocksError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(Some(self.config.timeout))?;
        stream.set_write_timeout(Some(self.config.timeout))?;
        Ok(stream)
    }
}

/// Runs the SOCKS5 no-auth handshake and CONNECT to `host:port`.
fn socks5_handshake(stream: &mut TcpStream, host: &str, port: u16) -> Result<(), SocksError> {
    stream.write_all(&[0x05, 0x01, 0x00])?;
    let mut greeting = [0u8; 2];
    stream.read_exact(&mut greeting)?;
    if greeting != [0x05, 0x00] {
        return Err(SocksError::Proxy(format!("greeting refused: {greeting:02x?}")));
    }
    stream.write_all(&build_socks5_connect(host, port)?)?;
    let mut head = [0u8; 4];
    stream.read_exact(&mut head)?;
    if head[1] != 0x00 {
        return Err(SocksError::Proxy(format!("connect refused: reply code {}", head[1])));
    }
    // Drain the bound-address field: 4, 16, or len-prefixed domain bytes, then the port.
    let addr_len = match head[3] {
        0x01 => 4,
        0x04 => 16,
        0x03 => {
            let mut len = [0u8; 1];
            stream.read_exact(&mut len)?;
            len[0] as usize
        }
        other => return Err(SocksError::Proxy(format!("unknown address type {other}"))),
    };
    let mut rest = vec![0u8; addr_len + 2];
    stream.read_exact(&mut rest)?;
    Ok(())
}

/// Encodes a SOCKS5 CONNECT request with a domain-name address.
fn build_socks5_connect(host: &str, port: u16) -> Result<Vec<u8>, SocksError> {
    if host.is_empty() || host.len() > 255 {
        return Err(SocksError::Proxy(format!("hostname length {} unsupported", host.len())));
    }
    let mut out = vec![0x05, 0x01, 0x00, 0x03, host.len() as u8];
    out.extend_from_slice(host.as_bytes());
    out.extend_from_slice(&port.to_be_bytes());
    Ok(out)
}

/// Minimal HTTP/1.1 POST with a JSON body and connection close.
fn build_http_post(host: &str, path: &str, body: &[u8]) -> Vec<u8> {
    let mut out = format!(
        "POST {path} HTTP/1.1\r\nHost: {host}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    )
    .into_bytes();
    out.extend_from_slice(body);
    out
}

/// Splits a raw HTTP response into (status code, body).
fn parse_http_response(raw: &[u8]) -> Result<(u16, Vec<u8>), SocksError> {
    let split = raw
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .ok_or_else(|| SocksError::Http("missing header terminator".into()))?;
    let head = std::str::from_utf8(&raw[..split])
        .map_err(|_| SocksError::Http("non-utf8 header".into()))?;
    let status_line = head.lines().next().unwrap_or_default();
    let status = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse::<u16>().ok())
        .ok_or_else(|| SocksError::Http(format!("bad status line {status_line:?}")))?;
    Ok((status, raw[split + 4..].to_vec()))
}

/// Reads one CRLF-terminated control-protocol line.
fn read_crlf_line(stream: &mut TcpStream) -> Result<String, SocksError> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    while line.len() < 4096 {
        stream.read_exact(&mut byte)?;
        if byte[0] == b'\n' {
            break;
        }
        if byte[0] != b'\r' {
            line.push(byte[0]);
        }
    }
    String::from_utf8(line).map_err(|_| SocksError::Control("non-utf8 control line".into()))
}

fn hex_lower(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn socks5_connect_request_layout() {
        let req = build_socks5_connect("abcdefghijklmnop.onion", 4000).unwrap();
        assert_eq!(&req[..4], &[0x05, 0x01, 0x00, 0x03]);
        assert_eq!(req[4] as usize, "abcdefghijklmnop.onion".len());
        assert_eq!(&req[5..5 + 22], b"abcdefghijklmnop.onion");
        assert_eq!(&req[5 + 22..], &4000u16.to_be_bytes());
        assert!(build_socks5_connect("", 1).is_err());
        assert!(build_socks5_connect(&"x".repeat(256), 1).is_err());
    }

    #[test]
    fn http_post_layout() {
        let req = build_http_post("svc.onion", "/get-key", b"{}");
        let text = String::from_utf8(req).unwrap();
        assert!(text.starts_with("POST /get-key HTTP/1.1\r\n"));
        assert!(text.contains("Host: svc.onion\r\n"));
        assert!(text.contains("Content-Length: 2\r\n"));
        assert!(text.ends_with("\r\n\r\n{}"));
    }

    #[test]
    fn http_response_parsing() {
        let raw = b"HTTP/1.1 200 OK\r\nContent-Length: 4\r\n\r\nbody";
        let (status, body) = parse_http_response(raw).unwrap();
        assert_eq!(status, 200);
        assert_eq!(body, b"body");
        assert!(parse_http_response(b"garbage").is_err());
        let (status, _) = parse_http_response(b"HTTP/1.1 404 Not Found\r\n\r\n").unwrap();
        assert_eq!(status, 404);
    }

    #[test]
    fn cookie_hex_is_lowercase_pairs() {
        assert_eq!(hex_lower(&[0x00, 0xAB, 0x10]), "00ab10");
    }
}
