//! Image and raw video input/output for 8-bit luma planes.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::plane::Plane;

/// Full-range BT.601 RGB to YCbCr.
pub fn rgb_to_ycbcr(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cb = 128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b;
    let cr = 128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b;
    (y, cb, cr)
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn plane_to_bytes(plane: &Plane) -> Vec<u8> {
    plane.data.iter().map(|&v| to_u8(v)).collect()
}

pub fn plane_from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Plane> {
    Plane::new(width, height, bytes.iter().map(|&b| b as f64).collect())
}

/// Luma plane of a decoded image; color images go through BT.601 and are rounded to 8 bits.
pub fn luma_of(img: &DynamicImage) -> Plane {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma8(g) => g.as_raw().iter().map(|&v| v as f64).collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| to_u8(rgb_to_ycbcr(p[0] as f64, p[1] as f64, p[2] as f64).0) as f64)
            .collect(),
    };
    Plane {
        width: w,
        height: h,
        data,
    }
}

/// Read a PGM or PNG file as an 8-bit luma plane.
pub fn read_luma(path: impl AsRef<Path>) -> Result<Plane> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    Ok(luma_of(&img))
}

/// Write a plane as binary PGM, rounding and clamping to 8 bits.
pub fn write_pgm(path: impl AsRef<Path>, plane: &Plane) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    PnmEncoder::new(f)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&plane_to_bytes(plane), plane.width as u32, plane.height as u32, ExtendedColorType::L8)
        .map_err(|e| Error::Image(e.to_string()))
}

fn y4m_err(e: y4m::Error) -> Error {
    match e {
        y4m::Error::IoError(io) => Error::Io(io),
        other => Error::Image(format!("y4m: {other:?}")),
    }
}

/// Luma planes of every frame of a Y4M file.
pub fn read_y4m(path: impl AsRef<Path>) -> Result<Vec<Plane>> {
    let mut dec = y4m::decode(BufReader::new(File::open(path)?)).map_err(y4m_err)?;
    if dec.get_bit_depth() != 8 {
        return Err(Error::Image("only 8-bit y4m input is supported".into()));
    }
    let (w, h) = (dec.get_width(), dec.get_height());
    let mut frames = Vec::new();
    loop {
        match dec.read_frame() {
            Ok(f) => frames.push(plane_from_bytes(w, h, f.get_y_plane())?),
            Err(y4m::Error::EOF) => break,
            Err(e) => return Err(y4m_err(e)),
        }
    }
    Ok(frames)
}

/// Write frames as a monochrome Y4M file at 30 fps.
pub fn write_y4m(path: impl AsRef<Path>, frames: &[Plane]) -> Result<()> {
    let first = frames.first().ok_or_else(|| Error::Image("no frames to write".into()))?;
    let out = BufWriter::new(File::create(path)?);
    let mut enc = y4m::encode(first.width, first.height, y4m::Ratio::new(30, 1))
        .with_colorspace(y4m::Colorspace::Cmono)
        .write_header(out)
        .map_err(y4m_err)?;
    for f in frames {
        if (f.width, f.height) != (first.width, first.height) {
            return Err(Error::Shape("frames differ in size".into()));
        }
        let y = plane_to_bytes(f);
        enc.write_frame(&y4m::Frame::new([&y, &[], &[]], None)).map_err(y4m_err)?;
    }
    Ok(())
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("pgm" | "png")
    )
}

/// PGM/PNG files of a directory ordered by the first number in the name, then by name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    let key = |p: &PathBuf| {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let digits: String = name
            .chars()
            .skip_while(|c| !c.is_ascii_digit())
            .take_while(|c| c.is_ascii_digit())
            .collect();
        (digits.parse::<u64>().unwrap_or(u64::MAX), name)
    };
    files.sort_by_key(key);
    Ok(files)
}

/// Frames from a Y4M file or a directory of numbered PGM/PNG frames.
pub fn read_video(path: impl AsRef<Path>) -> Result<Vec<Plane>> {
    let path = path.as_ref();
    if path.is_dir() {
        list_images(path)?.iter().map(read_luma).collect()
    } else {
        read_y4m(path)
    }
}

/// Write frames as `frame_0000.pgm`, `frame_0001.pgm`, ... into `dir`.
pub fn write_pgm_dir(dir: impl AsRef<Path>, frames: &[Plane]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (i, f) in frames.iter().enumerate() {
        write_pgm(dir.join(format!("frame_{i:04}.pgm")), f)?;
    }
    Ok(())
}
