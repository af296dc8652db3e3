use crate::error::{Error, Result};
use crate::imgproc::Image;
use crate::scalar::Scalar;

/// Channel-major activation tensor `(channels, height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_image(img: &Image<T>) -> Self {
        Self {
            channels: 1,
            height: img.height(),
            width: img.width(),
            data: img.data().to_vec(),
        }
    }

    /// Single-channel crop `[x0, x0 + width) x [y0, y0 + height)` of an image.
    pub fn crop_image(img: &Image<T>, x0: usize, y0: usize, width: usize, height: usize) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            let row = &img.data()[y * img.width() + x0..y * img.width() + x0 + width];
            data.extend_from_slice(row);
        }
        Self {
            channels: 1,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Per-pixel feature vectors, stored pixel-major so that one pixel's vector
/// is contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    width: usize,
    height: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(width: usize, height: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * dim {
            return Err(Error::DimensionMismatch(format!(
                "feature data has {} values, expected {width}x{height}x{dim}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            dim,
            data,
        })
    }

    pub(crate) fn from_tensor(t: &Tensor3<T>) -> Self {
        let (w, h, d) = (t.width, t.height, t.channels);
        let mut data = vec![T::zero(); w * h * d];
        for c in 0..d {
            for (i, v) in t.plane(c).iter().enumerate() {
                data[i * d + c] = *v;
            }
        }
        Self {
            width: w,
            height: h,
            dim: d,
            data,
        }
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
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn feature(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }
}

/// Inner-product matching score between two feature vectors.
pub fn match_score<T: Scalar>(f: &[T], g: &[T]) -> Result<T> {
    if f.len() != g.len() {
        return Err(Error::DimensionMismatch(format!(
            "feature vectors of length {} and {}",
            f.len(),
            g.len()
        )));
    }
    Ok(dot(f, g))
}

#[inline]
pub(crate) fn dot<T: Scalar>(f: &[T], g: &[T]) -> T {
    // eight independent accumulators let the compiler vectorize the loop
    let mut acc = [T::zero(); 8];
    let mut fc = f.chunks_exact(8);
    let mut gc = g.chunks_exact(8);
    for (a, b) in (&mut fc).zip(&mut gc) {
        for k in 0..8 {
            acc[k] = acc[k] + a[k] * b[k];
        }
    }
    let mut tail = T::zero();
    for (a, b) in fc.remainder().iter().zip(gc.remainder()) {
        tail = tail + *a * *b;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_examples() {
        assert_eq!(match_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = 0.5f64.sqrt();
        assert!((match_score(&[s, s], &[s, s]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(match_score(&[1.0, 2.0], &[3.0, -1.0]).unwrap(), 1.0);
        assert!(match_score(&[1.0f64], &[1.0, 2.0]).is_err());
    }
}
