use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{Frame, Intrinsics};
use crate::{Error, Result};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn decode_png(path: &Path) -> Result<(png::OutputInfo, Vec<u8>)> {
    let mut decoder = png::Decoder::new(open(path)?);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

fn encode_png(path: &Path, width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let to_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::format(format!("{}: {other}", path.display())),
    };
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(data).map_err(to_err)?;
    writer.finish().map_err(to_err)
}

/// Reads a 16-bit grayscale PNG and returns raw depth units.
pub fn read_depth_png(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let (info, buf) = decode_png(path)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::format(format!(
            "{}: depth must be 16-bit grayscale, got {:?} {:?}",
            path.display(),
            info.color_type,
            info.bit_depth
        )));
    }
    // PNG stores 16-bit samples big-endian.
    let raw = buf
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((info.width as usize, info.height as usize, raw))
}

pub fn write_depth_png(path: &Path, width: usize, height: usize, raw: &[u16]) -> Result<()> {
    let bytes: Vec<u8> = raw.iter().flat_map(|d| d.to_be_bytes()).collect();
    encode_png(path, width, height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
}

fn read_color_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let (info, buf) = decode_png(path)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(format!(
            "{}: color must be 8-bit RGB, got {:?} {:?}",
            path.display(),
            info.color_type,
            info.bit_depth
        )));
    }
    Ok((info.width as usize, info.height as usize, buf))
}

pub fn load_intrinsics(path: &Path) -> Result<Intrinsics> {
    let k: Intrinsics = serde_json::from_reader(open(path)?)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    k.validate()?;
    Ok(k)
}

pub fn load_frame(color_path: &Path, depth_path: &Path, intrinsics_path: &Path) -> Result<Frame> {
    let k = load_intrinsics(intrinsics_path)?;
    let (cw, ch, color) = read_color_png(color_path)?;
    let (dw, dh, raw) = read_depth_png(depth_path)?;
    if (cw, ch) != (k.width, k.height) || (dw, dh) != (k.width, k.height) {
        return Err(Error::format(format!(
            "image sizes color {cw}x{ch}, depth {dw}x{dh} do not match intrinsics {}x{}",
            k.width, k.height
        )));
    }
    let depth = raw.iter().map(|&d| d as f64 * k.depth_scale).collect();
    let id = color_path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Frame::new(color, depth, k, id)
}

pub fn load_frame_dir(dir: &Path) -> Result<Frame> {
    load_frame(
        &dir.join("color.png"),
        &dir.join("depth.png"),
        &dir.join("intrinsics.json"),
    )
}

/// Writes `color.png`, `depth.png` and `intrinsics.json` into `dir`.
/// Depth is quantized to the nearest multiple of `depth_scale`.
pub fn save_frame_dir(frame: &Frame, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let k = &frame.intrinsics;
    let mut raw = Vec::with_capacity(frame.depth.len());
    for &d in &frame.depth {
        let units = (d / k.depth_scale).round();
        if units > u16::MAX as f64 {
            return Err(Error::format(format!(
                "depth {d} m exceeds the 16-bit range at scale {}",
                k.depth_scale
            )));
        }
        raw.push(units as u16);
    }
    encode_png(
        &dir.join("color.png"),
        k.width,
        k.height,
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        &frame.color,
    )?;
    write_depth_png(&dir.join("depth.png"), k.width, k.height, &raw)?;
    let path = dir.join("intrinsics.json");
    let json = serde_json::to_string_pretty(k)?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}
