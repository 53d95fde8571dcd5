use std::path::Path;

use super::{GrayMap, Image, Raster};
use crate::error::{Error, Result};

/// Reads any PNG or JPEG file as RGB in `[0, 1]`.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let rgb = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image(other),
        })?
        .to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Image::new(h as usize, w as usize, data)
}

/// Reads a file as an 8-bit grayscale map.
pub fn read_gray(path: impl AsRef<Path>) -> Result<GrayMap> {
    let path = path.as_ref();
    let luma = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image(other),
        })?
        .to_luma8();
    let (w, h) = luma.dimensions();
    let data = luma.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    GrayMap::new(h as usize, w as usize, data)
}

fn to_u8(v: f32) -> u8 {
    (255.0 * v).round().clamp(0.0, 255.0) as u8
}

/// Writes an image; the format follows the extension (`.png`, `.jpg`).
pub fn write_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = img.dims();
    let buf = image::RgbImage::from_raw(w as u32, h as u32, img.data().iter().map(|&v| to_u8(v)).collect())
        .expect("buffer length matches dimensions");
    buf.save(path.as_ref())?;
    Ok(())
}

/// Writes a map as 8-bit grayscale PNG, `v -> round(255 v)`.
pub fn write_gray_png(map: &GrayMap, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = map.dims();
    let buf = image::GrayImage::from_raw(w as u32, h as u32, map.data().iter().map(|&v| to_u8(v)).collect())
        .expect("buffer length matches dimensions");
    buf.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_png_quantisation_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = GrayMap::new(1, 4, vec![0.0, 0.5, 0.999, 1.0]).unwrap();
        write_gray_png(&m, &p).unwrap();
        let back = read_gray(&p).unwrap();
        let raw: Vec<u8> = back.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(raw, vec![0, 128, 255, 255]);
    }

    #[test]
    fn rgb_png_roundtrip_is_lossless_at_8_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let img = Image::from_fn(5, 7, |r, c| [r as f32 / 4.0, c as f32 / 6.0, 1.0]).unwrap();
        let img = Image::new(5, 7, img.data().iter().map(|v| (v * 255.0).round() / 255.0).collect()).unwrap();
        write_image(&img, &p).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_image("/nonexistent/file.png"), Err(Error::Io { .. })));
    }
}
