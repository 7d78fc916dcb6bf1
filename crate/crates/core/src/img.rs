//! Image containers and file formats.
//!
//! Images are `[H,W,C]` tensors with values in `[0,1]` for display channels.
//! Three on-disk formats:
//! - 8-bit RGB PNG for rendered frames,
//! - paletted PNG for segmentation label maps (palette below),
//! - `.flt`, a little-endian raw float format for precision-critical maps
//!   (normals, depth): magic `FLT1`, then `u32` width/height/channels, then
//!   `f32` data in row-major `[H,W,C]` order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Fixed palette for segmentation maps, indexed by label code.
///
/// 0 background (black), 1 face (amber), 2 hands (red), 3 cloth (blue),
/// 4 body (green).
pub const LABEL_PALETTE: [[u8; 3]; 5] = [
    [0, 0, 0],
    [230, 180, 60],
    [200, 60, 60],
    [60, 120, 200],
    [120, 200, 120],
];

fn to_byte<T: Real>(v: T) -> u8 {
    let f = v.to_f64c().clamp(0.0, 1.0);
    (f * 255.0).round() as u8
}

/// Write an `[H,W,3]` tensor as an 8-bit RGB PNG.
pub fn save_png_rgb<T: Real>(image: &Tensor<T>, path: &Path) -> Result<()> {
    let shape = image.shape();
    assert_eq!(shape.len(), 3, "expected [H,W,3] image");
    assert_eq!(shape[2], 3, "expected 3 channels");
    let (h, w) = (shape[0], shape[1]);
    let bytes: Vec<u8> = image.data().iter().map(|&v| to_byte(v)).collect();

    let file = std::fs::File::create(path)?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(&bytes)?;
    Ok(())
}

/// Read an 8-bit RGB (or RGBA, alpha dropped) PNG into an `[H,W,3]` tensor.
pub fn load_png_rgb<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let decoder = png::Decoder::new(std::fs::File::open(path)?);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let scale = T::from_f64c(1.0 / 255.0);
    let data: Vec<T> = match info.color_type {
        png::ColorType::Rgb => buf[..w * h * 3]
            .iter()
            .map(|&b| T::from_usizec(b as usize) * scale)
            .collect(),
        png::ColorType::Rgba => buf[..w * h * 4]
            .chunks(4)
            .flat_map(|px| px[..3].iter().map(|&b| T::from_usizec(b as usize) * scale))
            .collect(),
        other => {
            return Err(Error::Format(format!("unsupported PNG color type {other:?}")));
        }
    };
    Ok(Tensor::from_vec([h, w, 3], data))
}

/// Write a label map (one palette index per pixel, row-major) as a paletted PNG.
pub fn save_png_labels(labels: &[u8], width: usize, height: usize, path: &Path) -> Result<()> {
    assert_eq!(labels.len(), width * height, "label count must match dimensions");
    if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= LABEL_PALETTE.len()) {
        return Err(Error::Contract(format!("label {bad} outside the palette")));
    }
    let file = std::fs::File::create(path)?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(LABEL_PALETTE.iter().flatten().copied().collect::<Vec<u8>>());
    let mut writer = enc.write_header()?;
    writer.write_image_data(labels)?;
    Ok(())
}

/// Read a paletted PNG back as raw label indices.
pub fn load_png_labels(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let mut decoder = png::Decoder::new(std::fs::File::open(path)?);
    // keep palette indices instead of expanding to RGB
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Indexed || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format("expected an 8-bit paletted PNG".into()));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    buf.truncate(w * h);
    Ok((buf, w, h))
}

const FLT_MAGIC: &[u8; 4] = b"FLT1";

/// Write an `[H,W,C]` tensor as raw little-endian `f32` data.
pub fn save_flt<T: Real>(image: &Tensor<T>, path: &Path) -> Result<()> {
    let shape = image.shape();
    assert_eq!(shape.len(), 3, "expected [H,W,C] image");
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(FLT_MAGIC)?;
    for dim in [w, h, c] {
        file.write_all(&(dim as u32).to_le_bytes())?;
    }
    for &v in image.data() {
        file.write_all(&(v.to_f64c() as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn load_flt<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != FLT_MAGIC {
        return Err(Error::Format("bad float-image magic".into()));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let mut b = [0u8; 4];
        file.read_exact(&mut b)?;
        *d = u32::from_le_bytes(b) as usize;
    }
    let (w, h, c) = (dims[0], dims[1], dims[2]);
    let mut data = Vec::with_capacity(w * h * c);
    let mut b = [0u8; 4];
    for _ in 0..w * h * c {
        file.read_exact(&mut b)?;
        data.push(T::from_f64c(f32::from_le_bytes(b) as f64));
    }
    Ok(Tensor::from_vec([h, w, c], data))
}

/// Extract channel `c` of an `[H,W,C]` tensor as `[H,W,1]`.
pub fn channel<T: Real>(image: &Tensor<T>, c: usize) -> Tensor<T> {
    let shape = image.shape();
    assert_eq!(shape.len(), 3);
    let (h, w, nc) = (shape[0], shape[1], shape[2]);
    assert!(c < nc);
    let data: Vec<T> = (0..h * w).map(|p| image.data()[p * nc + c]).collect();
    Tensor::from_vec([h, w, 1], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("img_{tag}_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn rgb_png_roundtrips_within_quantization() {
        let dir = tmpdir("rgb");
        let img = Tensor::<f64>::from_vec(
            [2, 3, 3],
            (0..18).map(|i| i as f64 / 17.0).collect::<Vec<f64>>(),
        );
        let path = dir.join("a.png");
        save_png_rgb(&img, &path).unwrap();
        let back = load_png_rgb::<f64>(&path).unwrap();
        assert_eq!(back.shape(), [2, 3, 3]);
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-9, "{a} vs {b}");
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn label_png_roundtrips_exactly() {
        let dir = tmpdir("labels");
        let labels = vec![0u8, 1, 2, 3, 4, 0, 3, 3, 1, 2, 4, 0];
        let path = dir.join("seg.png");
        save_png_labels(&labels, 4, 3, &path).unwrap();
        let (back, w, h) = load_png_labels(&path).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(back, labels);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn label_out_of_palette_is_rejected() {
        let dir = tmpdir("badlabel");
        let err = save_png_labels(&[9u8], 1, 1, &dir.join("x.png"));
        assert!(err.is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn flt_roundtrips_at_f32_precision() {
        let dir = tmpdir("flt");
        let img = Tensor::<f64>::from_vec(
            [3, 2, 2],
            (0..12).map(|i| (i as f64 - 5.5) * 1.25).collect::<Vec<f64>>(),
        );
        let path = dir.join("d.flt");
        save_flt(&img, &path).unwrap();
        let back = load_flt::<f64>(&path).unwrap();
        assert_eq!(back.shape(), [3, 2, 2]);
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn flt_rejects_wrong_magic() {
        let dir = tmpdir("fltbad");
        let path = dir.join("bad.flt");
        std::fs::write(&path, b"NOPE0000").unwrap();
        assert!(load_flt::<f64>(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn channel_extracts_planes() {
        let img = Tensor::<f64>::from_vec([1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let c1 = channel(&img, 1);
        assert_eq!(c1.shape(), [1, 2, 1]);
        assert_eq!(c1.data(), &[2.0, 5.0]);
    }
}
