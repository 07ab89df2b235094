use std::path::Path;

use image::imageops::FilterType;

use super::load::DataError;

/// Dense RGB image, channel-major `[3, size, size]`, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(size: usize) -> Self {
        Image {
            size,
            data: vec![0.0; 3 * size * size],
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.size + y) * self.size + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.size + y) * self.size + x] = v;
    }

    pub fn shape(&self) -> [usize; 3] {
        [3, self.size, self.size]
    }
}

/// Decode an image file and bilinear-resize it to `size` x `size`.
pub fn load_image(path: &Path, size: usize) -> Result<Image, DataError> {
    let img = image::open(path).map_err(|e| DataError::BadImage {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let img = img
        .resize_exact(size as u32, size as u32, FilterType::Triangle)
        .to_rgb8();
    let mut out = Image::zeros(size);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out.set(c, y as usize, x as usize, f64::from(px.0[c]) / 255.0);
        }
    }
    Ok(out)
}

/// Quantize to 8-bit RGB and write a PNG.
pub fn save_png(path: &Path, img: &Image) -> Result<(), DataError> {
    let s = img.size as u32;
    let mut buf = image::RgbImage::new(s, s);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = img.at(c, y as usize, x as usize).clamp(0.0, 1.0);
            px.0[c] = (v * 255.0).round() as u8;
        }
    }
    buf.save(path).map_err(|e| DataError::BadImage {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}
