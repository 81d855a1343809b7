//! Wire frames exchanged with an external 2x model server.
//!
//! ```text
//! magic "HSR1" | kind u8 | level u32 | ndim u8 | dims u64 x ndim | payload
//! ```
//!
//! All integers are little-endian. Request and response payloads hold
//! `product(dims)` little-endian `f32` values; a frame with `ndim == 0` carries
//! no payload and is used for the handshake. Error frames use `ndim == 1`,
//! `dims[0]` = message length, and a UTF-8 message as payload.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::volume::Volume;

pub const FRAME_MAGIC: &[u8; 4] = b"HSR1";

/// Default cap on a single frame payload: 2 GiB.
pub const DEFAULT_PAYLOAD_CAP: u64 = 2 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Request = 0,
    Response = 1,
    Error = 2,
}

impl FrameKind {
    fn from_u8(b: u8) -> Option<Self> {
        match b {
            0 => Some(FrameKind::Request),
            1 => Some(FrameKind::Response),
            2 => Some(FrameKind::Error),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub level: u32,
    pub dims: Vec<u64>,
    /// Raw payload bytes.
    pub payload: Vec<u8>,
}

fn volume_bytes(v: &Volume) -> Vec<u8> {
    v.data().iter().flat_map(|x| x.to_le_bytes()).collect()
}

/// Payload byte length implied by the header, or `None` on overflow.
pub fn payload_len(kind: FrameKind, dims: &[u64]) -> Option<u64> {
    match kind {
        FrameKind::Error => dims.first().copied().filter(|_| dims.len() == 1),
        _ if dims.is_empty() => Some(0),
        _ => dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4)),
    }
}

impl Frame {
    pub fn request(level: u32, v: &Volume) -> Self {
        Frame {
            kind: FrameKind::Request,
            level,
            dims: v.dims().iter().map(|&d| d as u64).collect(),
            payload: volume_bytes(v),
        }
    }

    pub fn response(level: u32, v: &Volume) -> Self {
        Frame {
            kind: FrameKind::Response,
            ..Frame::request(level, v)
        }
    }

    /// Zero-dim frame used to open a session.
    pub fn handshake(kind: FrameKind, level: u32) -> Self {
        Frame {
            kind,
            level,
            dims: Vec::new(),
            payload: Vec::new(),
        }
    }

    pub fn error(level: u32, message: &str) -> Self {
        Frame {
            kind: FrameKind::Error,
            level,
            dims: vec![message.len() as u64],
            payload: message.as_bytes().to_vec(),
        }
    }

    pub fn is_handshake(&self) -> bool {
        self.kind != FrameKind::Error && self.dims.is_empty()
    }

    pub fn message(&self) -> String {
        String::from_utf8_lossy(&self.payload).into_owned()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 8 * self.dims.len() + self.payload.len());
        out.extend_from_slice(FRAME_MAGIC);
        out.push(self.kind as u8);
        out.extend_from_slice(&self.level.to_le_bytes());
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&self.encode())?;
        w.flush()
    }

    /// Reads one frame. `Ok(None)` on a clean end of stream before any byte.
    pub fn read_from(r: &mut impl Read, payload_cap: u64) -> Result<Option<Frame>> {
        let mut magic = [0u8; 4];
        let mut got = 0;
        while got < 4 {
            match r.read(&mut magic[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => {
                    return Err(Error::ProtocolViolation(
                        "stream ended inside a frame".into(),
                    ))
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        if &magic != FRAME_MAGIC {
            return Err(Error::ProtocolViolation(format!("bad magic {magic:02x?}")));
        }
        let mut head = [0u8; 6];
        read_exact(r, &mut head)?;
        let kind = FrameKind::from_u8(head[0])
            .ok_or_else(|| Error::ProtocolViolation(format!("unknown frame kind {}", head[0])))?;
        let level = u32::from_le_bytes([head[1], head[2], head[3], head[4]]);
        let ndim = head[5] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            read_exact(r, &mut b)?;
            dims.push(u64::from_le_bytes(b));
        }
        let len = payload_len(kind, &dims)
            .ok_or_else(|| Error::ProtocolViolation(format!("invalid {kind:?} dims {dims:?}")))?;
        if len > payload_cap {
            return Err(Error::PayloadTooLarge {
                bytes: len,
                cap: payload_cap,
            });
        }
        let mut payload = vec![0u8; len as usize];
        read_exact(r, &mut payload)?;
        Ok(Some(Frame {
            kind,
            level,
            dims,
            payload,
        }))
    }

    /// Interprets a request/response payload as a finite 2D or 3D volume.
    pub fn to_volume(&self) -> Result<Volume> {
        if self.dims.len() != 2 && self.dims.len() != 3 {
            return Err(Error::ProtocolViolation(format!(
                "expected 2 or 3 dims, got {}",
                self.dims.len()
            )));
        }
        let dims = self
            .dims
            .iter()
            .map(|&d| {
                usize::try_from(d)
                    .map_err(|_| Error::ProtocolViolation(format!("dim {d} too large")))
            })
            .collect::<Result<Vec<_>>>()?;
        let data = self
            .payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Volume::new(dims, data).map_err(|e| Error::ProtocolViolation(format!("payload: {e}")))
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::ProtocolViolation("stream ended inside a frame".into())
        } else {
            e.into()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_request_bytes() {
        let v = Volume::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = Frame::request(0, &v).encode();
        #[rustfmt::skip]
        let expected: [u8; 42] = [
            b'H', b'S', b'R', b'1',
            0x00,
            0x00, 0x00, 0x00, 0x00,
            0x02,
            0x02, 0, 0, 0, 0, 0, 0, 0,
            0x02, 0, 0, 0, 0, 0, 0, 0,
            0x00, 0x00, 0x80, 0x3f,
            0x00, 0x00, 0x00, 0x40,
            0x00, 0x00, 0x40, 0x40,
            0x00, 0x00, 0x80, 0x40,
        ];
        assert_eq!(bytes, expected);
        let back = Frame::read_from(&mut &bytes[..], DEFAULT_PAYLOAD_CAP)
            .unwrap()
            .unwrap();
        assert_eq!(back.to_volume().unwrap(), v);
    }

    #[test]
    fn error_and_handshake_frames() {
        let e = Frame::error(3, "bad level");
        let back = Frame::read_from(&mut &e.encode()[..], 1024)
            .unwrap()
            .unwrap();
        assert_eq!(back.message(), "bad level");
        assert_eq!(back.level, 3);
        let h = Frame::handshake(FrameKind::Request, 1);
        assert_eq!(h.encode().len(), 10);
        assert!(Frame::read_from(&mut &h.encode()[..], 0)
            .unwrap()
            .unwrap()
            .is_handshake());
        assert!(Frame::read_from(&mut &[][..], 0).unwrap().is_none());
    }

    #[test]
    fn malformed_frames() {
        let mut bytes = Frame::handshake(FrameKind::Request, 0).encode();
        bytes[0] = b'X';
        assert!(matches!(
            Frame::read_from(&mut &bytes[..], 0),
            Err(Error::ProtocolViolation(_))
        ));
        let v = Volume::zeros(vec![4, 4]).unwrap();
        let bytes = Frame::request(0, &v).encode();
        assert!(matches!(
            Frame::read_from(&mut &bytes[..bytes.len() - 1], 1 << 20),
            Err(Error::ProtocolViolation(_))
        ));
        assert!(matches!(
            Frame::read_from(&mut &bytes[..], 16),
            Err(Error::PayloadTooLarge { .. })
        ));
    }
}
