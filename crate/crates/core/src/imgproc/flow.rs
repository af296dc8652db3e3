use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};
use log::warn;

use super::codec_err;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sub-pixel resolution of the 16-bit flow encoding.
pub const FLOW_PNG_SCALE: f64 = 64.0;
/// Encoded value of a zero displacement.
pub const FLOW_PNG_OFFSET: f64 = 32768.0;

/// Dense displacement field with a per-pixel validity flag.
///
/// Invalid pixels always carry `u = v = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField<T> {
    width: usize,
    height: usize,
    u: Vec<T>,
    v: Vec<T>,
    valid: Vec<bool>,
}

impl<T: Scalar> FlowField<T> {
    /// All-invalid field.
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            u: vec![T::zero(); n],
            v: vec![T::zero(); n],
            valid: vec![false; n],
        }
    }

    /// Field that is valid everywhere with a constant displacement.
    pub fn constant(width: usize, height: usize, u: T, v: T) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            u: vec![u; n],
            v: vec![v; n],
            valid: vec![true; n],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> Option<(T, T)>,
    ) -> Self {
        let mut out = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if let Some((u, v)) = f(x, y) {
                    out.set(x, y, u, v);
                }
            }
        }
        out
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
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<(T, T)> {
        self.get_index(y * self.width + x)
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> Option<(T, T)> {
        if self.valid[i] {
            Some((self.u[i], self.v[i]))
        } else {
            None
        }
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    /// Stores a displacement; non-finite values leave the pixel invalid.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, u: T, v: T) {
        let i = y * self.width + x;
        self.set_index(i, u, v);
    }

    #[inline]
    pub fn set_index(&mut self, i: usize, u: T, v: T) {
        if u.is_finite() && v.is_finite() {
            self.u[i] = u;
            self.v[i] = v;
            self.valid[i] = true;
        } else {
            self.invalidate_index(i);
        }
    }

    #[inline]
    pub fn invalidate(&mut self, x: usize, y: usize) {
        self.invalidate_index(y * self.width + x);
    }

    #[inline]
    pub fn invalidate_index(&mut self, i: usize) {
        self.u[i] = T::zero();
        self.v[i] = T::zero();
        self.valid[i] = false;
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn u(&self) -> &[T] {
        &self.u
    }

    pub fn v(&self) -> &[T] {
        &self.v
    }

    pub fn cast<U: Scalar>(&self) -> FlowField<U> {
        FlowField {
            width: self.width,
            height: self.height,
            u: self.u.iter().map(|x| U::lit(x.as_f64())).collect(),
            v: self.v.iter().map(|x| U::lit(x.as_f64())).collect(),
            valid: self.valid.clone(),
        }
    }

    /// Bilinear lookup at a sub-pixel position.
    ///
    /// Uses the four surrounding pixels when all are valid, otherwise falls
    /// back to the nearest pixel. Returns `None` outside the field or when
    /// the fallback pixel is invalid.
    pub fn sample(&self, x: T, y: T) -> Option<(T, T)> {
        let (w, h) = (self.width as isize, self.height as isize);
        let half = T::lit(0.5);
        if x < -half || y < -half || x > T::lit(w as f64 - 0.5) || y > T::lit(h as f64 - 0.5) {
            return None;
        }
        let x0 = x.floor().to_isize()?;
        let y0 = y.floor().to_isize()?;
        if x0 >= 0 && y0 >= 0 && x0 + 1 < w && y0 + 1 < h {
            let idx = |xx: isize, yy: isize| (yy * w + xx) as usize;
            let ids = [idx(x0, y0), idx(x0 + 1, y0), idx(x0, y0 + 1), idx(x0 + 1, y0 + 1)];
            if ids.iter().all(|&i| self.valid[i]) {
                let fx = x - T::lit(x0 as f64);
                let fy = y - T::lit(y0 as f64);
                let lerp = |c: &[T]| {
                    let top = c[ids[0]] + (c[ids[1]] - c[ids[0]]) * fx;
                    let bot = c[ids[2]] + (c[ids[3]] - c[ids[2]]) * fx;
                    top + (bot - top) * fy
                };
                return Some((lerp(&self.u), lerp(&self.v)));
            }
        }
        let xn = x.round().to_isize()?.clamp(0, w - 1);
        let yn = y.round().to_isize()?.clamp(0, h - 1);
        self.get(xn as usize, yn as usize)
    }
}

fn encode_component(value: f64, clamped: &mut usize) -> u16 {
    let raw = (value * FLOW_PNG_SCALE).round() + FLOW_PNG_OFFSET;
    if !(0.0..=65535.0).contains(&raw) {
        *clamped += 1;
    }
    raw.clamp(0.0, 65535.0) as u16
}

/// Writes a flow field as a 16-bit RGB PNG in the KITTI devkit layout:
/// `ch1 = round(64 u) + 2^15`, `ch2 = round(64 v) + 2^15`, `ch3 = valid`.
///
/// Components outside the encodable range are clamped with a warning.
pub fn write_flow_png<T: Scalar>(flow: &FlowField<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut clamped = 0usize;
    let mut buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
        ImageBuffer::new(flow.width() as u32, flow.height() as u32);
    for (i, px) in buf.pixels_mut().enumerate() {
        *px = match flow.get_index(i) {
            Some((u, v)) => Rgb([
                encode_component(u.as_f64(), &mut clamped),
                encode_component(v.as_f64(), &mut clamped),
                1,
            ]),
            None => Rgb([FLOW_PNG_OFFSET as u16, FLOW_PNG_OFFSET as u16, 0]),
        };
    }
    if clamped > 0 {
        warn!(
            "{}: {clamped} flow components outside the encodable range were clamped",
            path.display()
        );
    }
    buf.save(path).map_err(|e| codec_err(path, e))
}

/// Reads a 16-bit 3-channel flow PNG.
pub fn read_flow_png<T: Scalar>(path: impl AsRef<Path>) -> Result<FlowField<T>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| codec_err(path, e))?;
    let buf = match img {
        DynamicImage::ImageRgb16(b) => b,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: flow PNG must be 16-bit RGB, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let mut flow = FlowField::new(w, h);
    for (i, px) in buf.pixels().enumerate() {
        if px[2] != 0 {
            let u = (px[0] as f64 - FLOW_PNG_OFFSET) / FLOW_PNG_SCALE;
            let v = (px[1] as f64 - FLOW_PNG_OFFSET) / FLOW_PNG_SCALE;
            flow.set_index(i, T::lit(u), T::lit(v));
        }
    }
    Ok(flow)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, px: [u16; 3]) {
        let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(1, 1, |_, _| Rgb(px));
        buf.save(path).unwrap();
    }

    #[test]
    fn decodes_reference_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        write_raw(&p, [32832, 32768, 1]);
        assert_eq!(read_flow_png::<f64>(&p).unwrap().get(0, 0), Some((1.0, 0.0)));
        write_raw(&p, [32768, 32768, 0]);
        assert_eq!(read_flow_png::<f64>(&p).unwrap().get(0, 0), None);
        write_raw(&p, [32704, 32896, 1]);
        assert_eq!(read_flow_png::<f64>(&p).unwrap().get(0, 0), Some((-1.0, 2.0)));
    }

    #[test]
    fn quarter_pixel_roundtrips_exactly_and_small_values_quantize() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        let mut f = FlowField::<f64>::new(3, 1);
        f.set(0, 0, 3.25, -0.5);
        f.set(1, 0, 1.0 / 128.0, 0.0);
        write_flow_png(&f, &p).unwrap();
        let g = read_flow_png::<f64>(&p).unwrap();
        assert_eq!(g.get(0, 0), Some((3.25, -0.5)));
        let (u, _) = g.get(1, 0).unwrap();
        assert!(u == 0.0 || u == 1.0 / 64.0);
        assert_eq!(g.get(2, 0), None);

        let raw = image::open(&p).unwrap().into_rgb16();
        assert_eq!(raw.get_pixel(2, 0).0, [32768, 32768, 0]);
    }

    #[test]
    fn out_of_range_values_clamp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        let f = FlowField::<f64>::constant(1, 1, 1000.0, -1000.0);
        write_flow_png(&f, &p).unwrap();
        let raw = image::open(&p).unwrap().into_rgb16();
        assert_eq!(raw.get_pixel(0, 0).0, [65535, 0, 1]);
    }

    #[test]
    fn wrong_bit_depth_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let buf: ImageBuffer<image::Luma<u8>, Vec<u8>> =
            ImageBuffer::from_fn(1, 1, |_, _| image::Luma([0]));
        buf.save(&p).unwrap();
        assert!(matches!(
            read_flow_png::<f64>(&p),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn non_finite_values_stay_invalid() {
        let mut f = FlowField::<f64>::new(1, 1);
        f.set(0, 0, f64::NAN, 1.0);
        assert_eq!(f.get(0, 0), None);
        assert_eq!(f.u()[0], 0.0);
    }

    #[test]
    fn sample_interpolates_between_valid_pixels() {
        let f = FlowField::<f64>::from_fn(2, 2, |x, y| Some((x as f64, y as f64 * 2.0)));
        let (u, v) = f.sample(0.25, 0.5).unwrap();
        assert!((u - 0.25).abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        assert!(f.sample(5.0, 0.0).is_none());
    }
}
