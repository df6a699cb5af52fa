//! Raster I/O. Binary PGM (P5) and PPM (P6) are read and written by hand so
//! their bytes are fully determined by the pixel values; PNG and JPEG go
//! through the `image` crate.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::codecs::jpeg::JpegEncoder;
use image::{DynamicImage, ExtendedColorType, ImageFormat};

use crate::error::{Error, Result};
use crate::tensor::Image;

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|e| match e {
        Error::Malformed { reason, .. } => Error::Malformed {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        return decode_pnm(bytes);
    }
    let format = image::guess_format(bytes)
        .map_err(|_| Error::UnsupportedFormat("unrecognised raster signature".into()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(Error::UnsupportedFormat(format!("{format:?}")));
    }
    let decoded = image::load_from_memory_with_format(bytes, format)?;
    from_dynamic(decoded)
}

fn from_dynamic(decoded: DynamicImage) -> Result<Image> {
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidDimensions("zero-sized image".into()));
    }
    let color = decoded.color();
    let sixteen = color.bytes_per_pixel() / color.channel_count() > 1;
    match (color.has_color(), sixteen) {
        (false, false) => {
            let buf = decoded.into_luma8();
            Image::new(h, w, 1, buf.iter().map(|&v| v as f32 / 255.0).collect())
        }
        (false, true) => {
            let buf = decoded.into_luma16();
            Image::new(h, w, 1, buf.iter().map(|&v| v as f32 / 65535.0).collect())
        }
        (true, false) => {
            let buf = decoded.into_rgb8();
            Image::new(h, w, 3, buf.iter().map(|&v| v as f32 / 255.0).collect())
        }
        (true, true) => {
            let buf = decoded.into_rgb16();
            Image::new(h, w, 3, buf.iter().map(|&v| v as f32 / 65535.0).collect())
        }
    }
}

fn malformed(reason: impl Into<String>) -> Error {
    Error::Malformed {
        path: "<memory>".into(),
        reason: reason.into(),
    }
}

/// Parses binary PGM/PPM with any maxval up to 65535.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let channels = match &bytes[..2.min(bytes.len())] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(malformed("missing P5/P6 magic")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(malformed("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("header field out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(malformed("missing separator after maxval"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions("zero-sized image".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(malformed(format!("maxval {maxval} out of range")));
    }
    let count = width * height * channels;
    let wide = maxval > 255;
    let needed = if wide { count * 2 } else { count };
    let body = bytes
        .get(pos..pos + needed)
        .ok_or_else(|| malformed("truncated pixel data"))?;
    let scale = maxval as f32;
    let data = if wide {
        body.chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as f32 / scale)
            .collect()
    } else {
        body.iter().map(|&v| v as f32 / scale).collect()
    };
    Image::new(height, width, channels, data)
}

#[inline]
pub fn quantize(value: f32) -> u8 {
    (value.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PGM (1 channel) or PPM (3 channels), maxval 255. An optional
/// comment line is placed after the magic number.
pub fn encode_pnm(image: &Image, comment: Option<&str>) -> Vec<u8> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = Vec::with_capacity(image.as_slice().len() + 64);
    out.extend_from_slice(magic.as_bytes());
    out.push(b'\n');
    if let Some(text) = comment {
        for line in text.lines() {
            out.extend_from_slice(b"# ");
            out.extend_from_slice(line.as_bytes());
            out.push(b'\n');
        }
    }
    out.extend_from_slice(format!("{} {}\n255\n", image.width(), image.height()).as_bytes());
    out.extend(image.as_slice().iter().map(|&v| quantize(v)));
    out
}

pub fn encode_png(image: &Image) -> Result<Vec<u8>> {
    let pixels: Vec<u8> = image.as_slice().iter().map(|&v| quantize(v)).collect();
    let color = if image.channels() == 1 {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    let mut out = Cursor::new(Vec::new());
    image::write_buffer_with_format(
        &mut out,
        &pixels,
        image.width() as u32,
        image.height() as u32,
        color,
        ImageFormat::Png,
    )?;
    Ok(out.into_inner())
}

/// Encodes to baseline JPEG at `quality` (1-100) and decodes again.
pub fn jpeg_round_trip(image: &Image, quality: u8) -> Result<Image> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidArgument(format!(
            "jpeg quality must be in 1..=100, got {quality}"
        )));
    }
    let pixels: Vec<u8> = image.as_slice().iter().map(|&v| quantize(v)).collect();
    let color = if image.channels() == 1 {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality).encode(
        &pixels,
        image.width() as u32,
        image.height() as u32,
        color,
    )?;
    let decoded = image::load_from_memory_with_format(&buf, ImageFormat::Jpeg)?;
    let out = from_dynamic(decoded)?;
    // the decoder may hand back a different channel count for grayscale input
    if out.channels() != image.channels() {
        return Err(Error::ShapeMismatch(format!(
            "jpeg decode changed channel count {} -> {}",
            image.channels(),
            out.channels()
        )));
    }
    Ok(out)
}

/// Encodes according to the file extension (`pgm`, `ppm`, `pnm`, `png`).
pub fn encode_for_path(path: &Path, image: &Image, comment: Option<&str>) -> Result<Vec<u8>> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "pgm" if image.channels() != 1 => Err(Error::UnsupportedFormat(
            "pgm output needs a single-channel image".into(),
        )),
        "ppm" if image.channels() != 3 => Err(Error::UnsupportedFormat(
            "ppm output needs a three-channel image".into(),
        )),
        "pgm" | "ppm" | "pnm" => Ok(encode_pnm(image, comment)),
        "png" => encode_png(image),
        other => Err(Error::UnsupportedFormat(format!(
            "cannot write extension '{other}'"
        ))),
    }
}

pub fn save_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    save_image_with_comment(path, image, None)
}

pub fn save_image_with_comment(
    path: impl AsRef<Path>,
    image: &Image,
    comment: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_for_path(path, image, comment)?;
    write_atomic(path, &bytes)
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp_name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        use std::io::Write;
        let mut file = fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&tmp)
            .map_err(|e| Error::io(&tmp, e))?;
        file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
