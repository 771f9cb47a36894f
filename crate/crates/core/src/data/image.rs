use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

fn image_err(path: &Path, message: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Decode an 8-bit grayscale or RGB PNG into `[C, H, W]` values in `[0, 1]`.
pub fn read_png<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| image_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| image_err(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (channels, keep) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(image_err(path, "unexpanded palette image")),
    };
    let bytes = &buf[..info.buffer_size()];
    let mut data = vec![T::zero(); keep * h * w];
    let scale = 1.0 / 255.0;
    for y in 0..h {
        for x in 0..w {
            for c in 0..keep {
                data[(c * h + y) * w + x] = lit(bytes[(y * w + x) * channels + c] as f64 * scale);
            }
        }
    }
    Tensor::from_vec(&[keep, h, w], data)
}

/// Encode a `[C, H, W]` tensor (C = 1 or 3) as an 8-bit PNG, clamping to `[0, 1]`.
pub fn write_png<T: Scalar>(path: &Path, pixels: &Tensor<T>) -> Result<()> {
    let (c, h, w) = match *pixels.shape() {
        [c @ (1 | 3), h, w] => (c, h, w),
        ref s => return Err(Error::Shape(format!("png needs [1|3, H, W], got {s:?}"))),
    };
    let mut bytes = vec![0u8; c * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = pixels.data()[(ch * h + y) * w + x].as_f64();
                bytes[(y * w + x) * c + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(if c == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| image_err(path, e))?;
    writer.write_image_data(&bytes).map_err(|e| image_err(path, e))?;
    writer.finish().map_err(|e| image_err(path, e))
}
