//! Portable float map codec, little-endian only.
//!
//! Layout: a text header of magic ("Pf" grayscale, "PF" rgb), width and
//! height, and a scale whose sign encodes byte order (negative is
//! little-endian), followed by rows of f32 samples stored bottom-up.

use crate::error::{Error, Result};
use crate::img::ImageF;
use std::path::Path;

/// Writes `img` (1 or 3 channels) as a little-endian PFM file.
pub fn write_pfm(path: &Path, img: &ImageF) -> Result<()> {
    let magic = match img.channels() {
        1 => "Pf",
        3 => "PF",
        c => {
            return Err(Error::Config(format!(
                "PFM holds 1 or 3 channels, image has {c}"
            )))
        }
    };
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut bytes = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    bytes.reserve(w * h * ch * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            for c in 0..ch {
                bytes.extend_from_slice(&(img.at(x, y, c) as f32).to_le_bytes());
            }
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a little-endian PFM file. Big-endian files (positive scale) are
/// rejected with an explicit error.
pub fn read_pfm(path: &Path) -> Result<ImageF> {
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
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => {
            return Err(Error::format(
                path,
                format!("magic '{other}' is not a float map"),
            ))
        }
    };
    let width: usize = token("width")?
        .parse()
        .map_err(|_| Error::format(path, "width is not a number"))?;
    let height: usize = token("height")?
        .parse()
        .map_err(|_| Error::format(path, "height is not a number"))?;
    let scale: f32 = token("scale")?
        .parse()
        .map_err(|_| Error::format(path, "scale is not a number"))?;
    if scale > 0.0 {
        return Err(Error::format(
            path,
            "big-endian float map (positive scale); only little-endian (negative scale) is supported",
        ));
    }
    if scale == 0.0 {
        return Err(Error::format(path, "scale must be nonzero"));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(path, "zero image dimension"));
    }
    // Exactly one whitespace byte separates the header from the samples.
    pos += 1;
    let need = width * height * channels * 4;
    let have = bytes.len().saturating_sub(pos);
    if have < need {
        return Err(Error::format(
            path,
            format!("truncated pixel data: need {need} bytes, found {have}"),
        ));
    }

    let mut img = ImageF::new(width, height, channels);
    let mut off = pos;
    for y in (0..height).rev() {
        for x in 0..width {
            for c in 0..channels {
                let v = f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
                img.set(x, y, c, v as f64);
                off += 4;
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_dir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("mvps-pfm-{tag}"));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn ramp_image(w: usize, h: usize, ch: usize) -> ImageF {
        let mut img = ImageF::new(w, h, ch);
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    img.set(x, y, c, (x + 10 * y + 100 * c) as f64 * 0.125 - 3.0);
                }
            }
        }
        img
    }

    #[test]
    fn round_trip_preserves_f32_samples_and_bytes() {
        let dir = temp_dir("roundtrip");
        for ch in [1, 3] {
            let img = ramp_image(7, 5, ch);
            let path = dir.join(format!("a{ch}.pfm"));
            write_pfm(&path, &img).unwrap();
            let back = read_pfm(&path).unwrap();
            assert_eq!(back.width(), 7);
            assert_eq!(back.height(), 5);
            assert_eq!(back.channels(), ch);
            // Values survive as their f32 quantization.
            for (a, b) in img.data().iter().zip(back.data()) {
                assert_eq!(*a as f32, *b as f32);
                assert_eq!(*b, (*b as f32) as f64);
            }
            // A second write of the readback is byte-identical.
            let path2 = dir.join(format!("b{ch}.pfm"));
            write_pfm(&path2, &back).unwrap();
            assert_eq!(
                std::fs::read(&path).unwrap(),
                std::fs::read(&path2).unwrap()
            );
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn big_endian_scale_is_rejected_by_name() {
        let dir = temp_dir("endian");
        let path = dir.join("big.pfm");
        std::fs::write(&path, b"Pf\n2 2\n1.0\n0123456789abcdef").unwrap();
        let err = read_pfm(&path).unwrap_err().to_string();
        assert!(err.contains("little-endian"), "error was: {err}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn truncated_data_is_reported_with_counts() {
        let dir = temp_dir("trunc");
        let img = ramp_image(4, 4, 1);
        let path = dir.join("full.pfm");
        write_pfm(&path, &img).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 10);
        let short = dir.join("short.pfm");
        std::fs::write(&short, bytes).unwrap();
        let err = read_pfm(&short).unwrap_err().to_string();
        assert!(err.contains("truncated"), "error was: {err}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn wrong_magic_and_channel_counts_are_rejected() {
        let dir = temp_dir("magic");
        let path = dir.join("x.pfm");
        std::fs::write(&path, b"P5\n2 2\n255\nabcd").unwrap();
        assert!(read_pfm(&path).is_err());
        let two_channel = ImageF::new(2, 2, 2);
        assert!(write_pfm(&dir.join("two.pfm"), &two_channel).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rows_are_stored_bottom_up() {
        let dir = temp_dir("rows");
        let mut img = ImageF::new(2, 2, 1);
        img.set(0, 0, 0, 1.0);
        img.set(1, 0, 0, 2.0);
        img.set(0, 1, 0, 3.0);
        img.set(1, 1, 0, 4.0);
        let path = dir.join("rows.pfm");
        write_pfm(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let data = &bytes[bytes.len() - 16..];
        let sample = |i: usize| f32::from_le_bytes(data[4 * i..4 * i + 4].try_into().unwrap());
        // Bottom row (y = 1) first.
        assert_eq!(sample(0), 3.0);
        assert_eq!(sample(1), 4.0);
        assert_eq!(sample(2), 1.0);
        assert_eq!(sample(3), 2.0);
        std::fs::remove_dir_all(&dir).ok();
    }
}
