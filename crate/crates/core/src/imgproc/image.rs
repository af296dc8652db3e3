use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::codec_err;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

/// Single-channel image, row-major, intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "image data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(bad) = data
            .iter()
            .find(|v| !v.is_finite() || **v < T::zero() || **v > T::one())
        {
            return Err(Error::InvalidArgument(format!(
                "image value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y)`; values are clamped into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                let v = if v.is_nan() { T::zero() } else { v };
                data.push(v.max(T::zero()).min(T::one()));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, value: T) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    /// Pixel lookup with coordinates clamped to the border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> T {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    /// Bilinear sample with border clamping.
    pub fn bilinear(&self, x: T, y: T) -> T {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let xi = x0.to_isize().unwrap_or(0);
        let yi = y0.to_isize().unwrap_or(0);
        let a = self.get_clamped(xi, yi);
        let b = self.get_clamped(xi + 1, yi);
        let c = self.get_clamped(xi, yi + 1);
        let d = self.get_clamped(xi + 1, yi + 1);
        let top = a + (b - a) * fx;
        let bottom = c + (d - c) * fx;
        top + (bottom - top) * fy
    }

    /// Mirror-pads the image by `border` pixels on every side (edge pixel not repeated).
    pub fn pad_reflect(&self, border: usize) -> Self {
        let w = self.width + 2 * border;
        let h = self.height + 2 * border;
        let reflect = |i: isize, n: usize| -> usize {
            let n = n as isize;
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let mut j = i.rem_euclid(period);
            if j >= n {
                j = period - j;
            }
            j as usize
        };
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = reflect(y as isize - border as isize, self.height);
            for x in 0..w {
                let sx = reflect(x as isize - border as isize, self.width);
                data.push(self.get(sx, sy));
            }
        }
        Self {
            width: w,
            height: h,
            data,
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::DimensionMismatch(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + width]);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

fn luminance(r: f64, g: f64, b: f64) -> f64 {
    LUMA_R * r + LUMA_G * g + LUMA_B * b
}

/// Loads an 8- or 16-bit grayscale or RGB(A) PNG as luminance in `[0, 1]`.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| codec_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.pixels().map(|p| p[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| p[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.pixels().map(|p| p[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(b) => b.pixels().map(|p| p[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageRgb8(b) => b
            .pixels()
            .map(|p| luminance(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0)
            .collect(),
        DynamicImage::ImageRgba8(b) => b
            .pixels()
            .map(|p| luminance(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0)
            .collect(),
        DynamicImage::ImageRgb16(b) => b
            .pixels()
            .map(|p| luminance(p[0] as f64, p[1] as f64, p[2] as f64) / 65535.0)
            .collect(),
        DynamicImage::ImageRgba16(b) => b
            .pixels()
            .map(|p| luminance(p[0] as f64, p[1] as f64, p[2] as f64) / 65535.0)
            .collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: color type {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Ok(Image::from_fn(w, h, |x, y| T::lit(data[y * w + x])))
}

/// Writes the image as a 16-bit grayscale PNG.
pub fn save_gray16<T: Scalar>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
            let v = img.get(x as usize, y as usize).as_f64();
            Luma([(v * 65535.0).round().clamp(0.0, 65535.0) as u16])
        });
    buf.save(path).map_err(|e| codec_err(path, e))
}

/// Writes the image as an 8-bit grayscale PNG.
pub fn save_gray8<T: Scalar>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
            let v = img.get(x as usize, y as usize).as_f64();
            Luma([(v * 255.0).round().clamp(0.0, 255.0) as u8])
        });
    buf.save(path).map_err(|e| codec_err(path, e))
}

/// Writes an interleaved RGB8 buffer.
pub fn save_rgb8(width: usize, height: usize, rgb: &[[u8; 3]], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if rgb.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "rgb buffer has {} pixels, expected {}",
            rgb.len(),
            width * height
        )));
    }
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
            Rgb(rgb[y as usize * width + x as usize])
        });
    buf.save(path).map_err(|e| codec_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageBuffer, Luma, Rgb};

    #[test]
    fn eight_bit_extremes_map_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_fn(2, 1, |x, _| Luma([if x == 0 { 0 } else { 255 }]));
        buf.save(&path).unwrap();
        let img: Image<f64> = load_image(&path).unwrap();
        assert_eq!(img.get(0, 0), 0.0);
        assert_eq!(img.get(1, 0), 1.0);
    }

    #[test]
    fn rgb_red_uses_luminance_weight() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(1, 1, |_, _| Rgb([255, 0, 0]));
        buf.save(&path).unwrap();
        let img: Image<f64> = load_image(&path).unwrap();
        assert!((img.get(0, 0) - 0.299).abs() < 1e-12);
    }

    #[test]
    fn gray_rgb_luminance_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g3.png");
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_fn(4, 1, |x, _| Rgb([x as u8 * 60; 3]));
        buf.save(&path).unwrap();
        let img: Image<f64> = load_image(&path).unwrap();
        for x in 0..4 {
            assert!((img.get(x, 0) - (x as f64 * 60.0) / 255.0).abs() < 1e-12);
        }
        let gray = dir.path().join("g16.png");
        save_gray16(&img, &gray).unwrap();
        let again: Image<f64> = load_image(&gray).unwrap();
        for x in 0..4 {
            assert!((again.get(x, 0) - img.get(x, 0)).abs() < 1.0 / 65535.0);
        }
    }

    #[test]
    fn sixteen_bit_gray_scales_by_max() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g16.png");
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(1, 1, |_, _| Luma([65535]));
        buf.save(&path).unwrap();
        let img: Image<f32> = load_image(&path).unwrap();
        assert_eq!(img.get(0, 0), 1.0);
    }

    #[test]
    fn unreadable_file_is_an_error() {
        assert!(load_image::<f32>("/nonexistent/file.png").is_err());
    }

    #[test]
    fn rejects_out_of_range_values() {
        assert!(Image::new(1, 1, vec![1.5f64]).is_err());
        assert!(Image::new(2, 1, vec![0.5f64]).is_err());
    }

    #[test]
    fn reflect_padding_mirrors_without_repeating_edge() {
        let img = Image::new(3, 1, vec![0.1f64, 0.2, 0.3]).unwrap();
        let p = img.pad_reflect(2);
        assert_eq!(p.width(), 7);
        let row: Vec<f64> = (0..7).map(|x| p.get(x, 2)).collect();
        assert_eq!(row, vec![0.3, 0.2, 0.1, 0.2, 0.3, 0.2, 0.1]);
    }
}
