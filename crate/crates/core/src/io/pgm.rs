//! Binary portable graymap codec (P5, maxval 255) used for masks and gates.

use crate::error::{Error, Result};
use crate::img::ImageF;
use std::path::Path;

/// Writes a single-channel image, clamping values to [0, 1] and scaling to
/// 255. Rows are stored top-down as the format requires.
pub fn write_pgm(path: &Path, img: &ImageF) -> Result<()> {
    if img.channels() != 1 {
        return Err(Error::Config(format!(
            "PGM holds 1 channel, image has {}",
            img.channels()
        )));
    }
    let (w, h) = (img.width(), img.height());
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.reserve(w * h);
    for y in 0..h {
        for x in 0..w {
            bytes.push((img.at(x, y, 0).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a P5 graymap into a single-channel image scaled to [0, 1].
pub fn read_pgm(path: &Path) -> Result<ImageF> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let mut token = |what: &str| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, format!("missing {what} in header")));
        }
        std::str::from_utf8(&bytes[start..pos])
            .map(str::to_owned)
            .map_err(|_| Error::format(path, format!("non-ascii {what} in header")))
    };

    let magic = token("magic")?;
    if magic != "P5" {
        return Err(Error::format(
            path,
            format!("magic '{magic}' is not a binary graymap"),
        ));
    }
    let width: usize = token("width")?
        .parse()
        .map_err(|_| Error::format(path, "width is not a number"))?;
    let height: usize = token("height")?
        .parse()
        .map_err(|_| Error::format(path, "height is not a number"))?;
    let maxval: usize = token("maxval")?
        .parse()
        .map_err(|_| Error::format(path, "maxval is not a number"))?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(
            path,
            format!("unsupported maxval {maxval}; expected 1..=255"),
        ));
    }
    pos += 1;
    let need = width * height;
    let have = bytes.len().saturating_sub(pos);
    if have < need {
        return Err(Error::format(
            path,
            format!("truncated pixel data: need {need} bytes, found {have}"),
        ));
    }
    let mut img = ImageF::new(width, height, 1);
    for y in 0..height {
        for x in 0..width {
            img.set(x, y, 0, bytes[pos + y * width + x] as f64 / maxval as f64);
        }
    }
    Ok(img)
}
