//! Minimal RFC 6455 framing for the browser bridge: binary messages only,
//! no fragmentation, no extensions.

use std::io::{self, BufRead, Read, Write};

use base64::Engine as _;
use sha1::{Digest, Sha1};
use thiserror::Error;

use super::codec::{decode, encode, DecodeError, EncodeError};
use super::Message;

const WS_GUID: &str = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
pub const CLOSE_PROTOCOL_ERROR: u16 = 1002;
/// Upper bound on a frame payload; anything larger cannot be a datagram.
const MAX_PAYLOAD: u64 = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Opcode {
    Continuation,
    Text,
    Binary,
    Close,
    Ping,
    Pong,
}

impl Opcode {
    fn code(self) -> u8 {
        match self {
            Opcode::Continuation => 0x0,
            Opcode::Text => 0x1,
            Opcode::Binary => 0x2,
            Opcode::Close => 0x8,
            Opcode::Ping => 0x9,
            Opcode::Pong => 0xA,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0x0 => Opcode::Continuation,
            0x1 => Opcode::Text,
            0x2 => Opcode::Binary,
            0x8 => Opcode::Close,
            0x9 => Opcode::Ping,
            0xA => Opcode::Pong,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub fin: bool,
    pub opcode: Opcode,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error)]
pub enum WsError {
    #[error("text frames are not accepted")]
    TextFrame,
    #[error("fragmented messages are not accepted")]
    Fragmented,
    #[error("reserved bits or unknown opcode {0:#x}")]
    BadFrame(u8),
    #[error("frame payload of {0} bytes exceeds limit")]
    TooLarge(u64),
    #[error("client frame is not masked")]
    Unmasked,
    #[error("peer closed the connection")]
    Closed,
    #[error("bad handshake: {0}")]
    Handshake(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl WsError {
    /// Close code to send before dropping the connection.
    pub fn close_code(&self) -> u16 {
        match self {
            WsError::Io(_) | WsError::Closed => 1000,
            WsError::TooLarge(_) => 1009,
            _ => CLOSE_PROTOCOL_ERROR,
        }
    }
}

fn frame_bytes(opcode: Opcode, payload: &[u8], mask: Option<[u8; 4]>) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 14);
    out.push(0x80 | opcode.code());
    let mask_bit = if mask.is_some() { 0x80 } else { 0 };
    match payload.len() {
        n if n < 126 => out.push(mask_bit | n as u8),
        n if n <= u16::MAX as usize => {
            out.push(mask_bit | 126);
            out.extend_from_slice(&(n as u16).to_be_bytes());
        }
        n => {
            out.push(mask_bit | 127);
            out.extend_from_slice(&(n as u64).to_be_bytes());
        }
    }
    match mask {
        Some(key) => {
            out.extend_from_slice(&key);
            out.extend(payload.iter().enumerate().map(|(i, b)| b ^ key[i % 4]));
        }
        None => out.extend_from_slice(payload),
    }
    out
}

/// One unmasked binary frame carrying exactly the UDP datagram bytes.
pub fn ws_frame(msg: &Message) -> Result<Vec<u8>, WsError> {
    Ok(frame_bytes(Opcode::Binary, &encode(msg)?, None))
}

/// Inverse of [`ws_frame`]; also accepts masked (client-side) frames.
pub fn ws_unframe(bytes: &[u8]) -> Result<Message, WsError> {
    let mut cursor = io::Cursor::new(bytes);
    let frame = read_frame(&mut cursor, false)?;
    if cursor.position() as usize != bytes.len() {
        return Err(WsError::Decode(DecodeError::TrailingBytes(
            bytes.len() - cursor.position() as usize,
        )));
    }
    match frame.opcode {
        Opcode::Binary => Ok(decode(&frame.payload)?),
        Opcode::Close => Err(WsError::Closed),
        other => Err(WsError::BadFrame(other.code())),
    }
}

/// Read one frame. Text and fragmented frames are protocol errors.
pub fn read_frame<R: Read>(r: &mut R, require_mask: bool) -> Result<Frame, WsError> {
    let mut head = [0u8; 2];
    r.read_exact(&mut head)?;
    let fin = head[0] & 0x80 != 0;
    if head[0] & 0x70 != 0 {
        return Err(WsError::BadFrame(head[0]));
    }
    let opcode = Opcode::from_code(head[0] & 0x0F).ok_or(WsError::BadFrame(head[0] & 0x0F))?;
    match opcode {
        Opcode::Text => return Err(WsError::TextFrame),
        Opcode::Continuation => return Err(WsError::Fragmented),
        _ if !fin => return Err(WsError::Fragmented),
        _ => {}
    }
    let masked = head[1] & 0x80 != 0;
    if require_mask && !masked {
        return Err(WsError::Unmasked);
    }
    let len = match head[1] & 0x7F {
        126 => {
            let mut b = [0u8; 2];
            r.read_exact(&mut b)?;
            u16::from_be_bytes(b) as u64
        }
        127 => {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            u64::from_be_bytes(b)
        }
        n => n as u64,
    };
    if len > MAX_PAYLOAD {
        return Err(WsError::TooLarge(len));
    }
    let key = if masked {
        let mut k = [0u8; 4];
        r.read_exact(&mut k)?;
        Some(k)
    } else {
        None
    };
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    if let Some(k) = key {
        for (i, b) in payload.iter_mut().enumerate() {
            *b ^= k[i % 4];
        }
    }
    Ok(Frame { fin, opcode, payload })
}

/// Server-side write: unmasked, single frame.
pub fn write_frame<W: Write>(w: &mut W, opcode: Opcode, payload: &[u8]) -> io::Result<()> {
    w.write_all(&frame_bytes(opcode, payload, None))
}

/// Client-side masked frame, for tests and tools that speak to the bridge.
pub fn masked_frame(opcode: Opcode, payload: &[u8], key: [u8; 4]) -> Vec<u8> {
    frame_bytes(opcode, payload, Some(key))
}

pub fn accept_key(client_key: &str) -> String {
    let mut h = Sha1::new();
    h.update(client_key.trim().as_bytes());
    h.update(WS_GUID.as_bytes());
    base64::engine::general_purpose::STANDARD.encode(h.finalize())
}

/// Read the HTTP upgrade request; returns the `Sec-WebSocket-Key`.
pub fn parse_handshake<R: BufRead>(r: &mut R) -> Result<String, WsError> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if !line.starts_with("GET ") {
        return Err(WsError::Handshake(format!("unexpected request line {:?}", line.trim_end())));
    }
    let mut key = None;
    let mut upgrade = false;
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(WsError::Handshake("connection closed mid-request".into()));
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((name, value)) = l.split_once(':') {
            let name = name.trim().to_ascii_lowercase();
            let value = value.trim();
            if name == "sec-websocket-key" {
                key = Some(value.to_owned());
            } else if name == "upgrade" && value.eq_ignore_ascii_case("websocket") {
                upgrade = true;
            }
        }
    }
    if !upgrade {
        return Err(WsError::Handshake("missing Upgrade: websocket".into()));
    }
    key.ok_or_else(|| WsError::Handshake("missing Sec-WebSocket-Key".into()))
}

pub fn handshake_response(client_key: &str) -> String {
    format!(
        "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Accept: {}\r\n\r\n",
        accept_key(client_key)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Body, Header};

    #[test]
    fn rfc_accept_key() {
        assert_eq!(accept_key("dGhlIHNhbXBsZSBub25jZQ=="), "s3pPLMBiTxaQ9kYGzzhZRbK+xOo=");
    }

    #[test]
    fn frame_round_trip() {
        let m = Message::new(Header::default(), Body::Ping { t0: 77 });
        assert_eq!(ws_unframe(&ws_frame(&m).unwrap()).unwrap(), m);
        let masked = masked_frame(Opcode::Binary, &encode(&m).unwrap(), [1, 2, 3, 4]);
        assert_eq!(ws_unframe(&masked).unwrap(), m);
    }

    #[test]
    fn text_frame_is_protocol_error() {
        let f = masked_frame(Opcode::Text, b"hello", [9, 9, 9, 9]);
        let err = ws_unframe(&f).unwrap_err();
        assert!(matches!(err, WsError::TextFrame));
        assert_eq!(err.close_code(), 1002);
    }

    #[test]
    fn fragments_are_protocol_errors() {
        let mut f = masked_frame(Opcode::Binary, b"abc", [0; 4]);
        f[0] &= 0x7F;
        assert!(matches!(ws_unframe(&f), Err(WsError::Fragmented)));
        let c = masked_frame(Opcode::Continuation, b"abc", [0; 4]);
        assert!(matches!(ws_unframe(&c), Err(WsError::Fragmented)));
    }

    #[test]
    fn extended_lengths() {
        let payload = vec![7u8; 300];
        let f = frame_bytes(Opcode::Binary, &payload, None);
        assert_eq!(f[1], 126);
        let got = read_frame(&mut io::Cursor::new(&f), false).unwrap();
        assert_eq!(got.payload, payload);
    }

    #[test]
    fn handshake_parse() {
        let req = "GET /sim HTTP/1.1\r\nHost: x\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Key: dGhlIHNhbXBsZSBub25jZQ==\r\nSec-WebSocket-Version: 13\r\n\r\n";
        let key = parse_handshake(&mut io::Cursor::new(req.as_bytes())).unwrap();
        assert!(handshake_response(&key).contains("s3pPLMBiTxaQ9kYGzzhZRbK+xOo="));
        assert!(parse_handshake(&mut io::Cursor::new(b"GET / HTTP/1.1\r\n\r\n".as_slice())).is_err());
    }
}
