//! Binary PGM (P5) and PPM (P6) with maxval 255: the bit-exact test format.
//!
//! Writer emits `P5\n<w> <h>\n255\n` followed by raw bytes row-major; the
//! reader accepts any whitespace/comment layout permitted by the format.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{codes_to_raster, Raster, RasterError};
use crate::scalar::Scalar;

pub(super) fn load<S: Scalar>(path: &Path) -> Result<Raster<S>, RasterError> {
    let bytes = fs::read(path)?;
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => {
            return Err(RasterError::Format(format!(
                "{}: not a binary PGM/PPM",
                path.display()
            )))
        }
    };
    let mut pos = 2;
    let width = read_token_usize(&bytes, &mut pos)?;
    let height = read_token_usize(&bytes, &mut pos)?;
    let maxval = read_token_usize(&bytes, &mut pos)?;
    if maxval != 255 {
        return Err(RasterError::Unsupported(format!(
            "{}: maxval {maxval} (only 255 supported)",
            path.display()
        )));
    }
    // exactly one whitespace byte separates the header from the payload
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(RasterError::Format(format!(
                "{}: missing separator after maxval",
                path.display()
            )))
        }
    }
    let n = height * width * channels;
    let payload = bytes
        .get(pos..pos + n)
        .ok_or_else(|| RasterError::Format(format!("{}: truncated payload", path.display())))?;
    codes_to_raster(height, width, channels, payload)
}

pub(super) fn save(
    path: &Path,
    height: usize,
    width: usize,
    channels: usize,
    codes: &[u8],
) -> Result<(), RasterError> {
    let magic = match channels {
        1 => "P5",
        3 => "P6",
        c => return Err(RasterError::BadChannels(c)),
    };
    let mut out = fs::File::create(path)?;
    write!(out, "{magic}\n{width} {height}\n255\n")?;
    out.write_all(codes)?;
    Ok(())
}

fn read_token_usize(bytes: &[u8], pos: &mut usize) -> Result<usize, RasterError> {
    // skip whitespace and '#' comments
    loop {
        while bytes.get(*pos).is_some_and(|b| b.is_ascii_whitespace()) {
            *pos += 1;
        }
        if bytes.get(*pos) == Some(&b'#') {
            while bytes.get(*pos).is_some_and(|b| *b != b'\n') {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| b.is_ascii_digit()) {
        *pos += 1;
    }
    if start == *pos {
        return Err(RasterError::Format("expected integer in PNM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .expect("digits are ascii")
        .parse()
        .map_err(|e| RasterError::Format(format!("bad PNM header integer: {e}")))
}
