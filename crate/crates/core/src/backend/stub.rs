//! Minimal model server speaking the frame protocol.
//!
//! Used as a reference implementation and in tests; a real server wraps a
//! trained network instead of the closure passed to [`serve`].

use std::io::{Read, Write};

use super::frame::{Frame, FrameKind, DEFAULT_PAYLOAD_CAP};
use crate::error::{Error, Result};
use crate::resample::upscale2x_nearest;
use crate::volume::Volume;

/// Answers frames from `r` on `w` until the stream closes.
///
/// Handshakes are echoed, requests are passed to `upscale`, and anything
/// malformed gets an error frame. When `level` is set, requests for other
/// levels are refused.
pub fn serve<R, W, F>(mut r: R, mut w: W, level: Option<u32>, mut upscale: F) -> Result<()>
where
    R: Read,
    W: Write,
    F: FnMut(&Volume) -> std::result::Result<Volume, String>,
{
    loop {
        let frame = match Frame::read_from(&mut r, DEFAULT_PAYLOAD_CAP) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(e @ (Error::ProtocolViolation(_) | Error::PayloadTooLarge { .. })) => {
                // The stream cannot be resynchronized after a bad header.
                Frame::error(0, &e.to_string()).write_to(&mut w)?;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let reply = if frame.kind != FrameKind::Request {
            Frame::error(frame.level, "expected a request frame")
        } else if level.is_some_and(|l| l != frame.level) {
            Frame::error(
                frame.level,
                &format!(
                    "this server serves level {}, not {}",
                    level.unwrap(),
                    frame.level
                ),
            )
        } else if frame.is_handshake() {
            Frame::handshake(FrameKind::Response, frame.level)
        } else {
            match frame.to_volume() {
                Ok(v) => match upscale(&v) {
                    Ok(out) => Frame::response(frame.level, &out),
                    Err(msg) => Frame::error(frame.level, &msg),
                },
                Err(e) => Frame::error(frame.level, &e.to_string()),
            }
        };
        reply.write_to(&mut w)?;
    }
}

/// [`serve`] with nearest-neighbour replication as the model.
pub fn serve_nearest<R: Read, W: Write>(r: R, w: W, level: Option<u32>) -> Result<()> {
    serve(r, w, level, |v| Ok(upscale2x_nearest(v)))
}
