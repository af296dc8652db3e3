use rand::Rng;

use super::tensor::Tensor3;
use crate::imgproc::{FlowField, Image};
use crate::scalar::Scalar;

/// Direction of the one-dimensional candidate strip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// One anchor patch plus a strip of `range + 1` candidate locations.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample<T> {
    /// `patch x patch` crop around the source pixel.
    pub anchor: Tensor3<T>,
    /// `patch x (patch + range)` (horizontal) or `(patch + range) x patch` crop
    /// centred on the ground-truth target.
    pub candidates: Tensor3<T>,
    pub axis: Axis,
    pub gt_index: usize,
}

impl<T> TrainingExample<T> {
    pub fn support(&self) -> usize {
        match self.axis {
            Axis::Horizontal => self.candidates.width,
            Axis::Vertical => self.candidates.height,
        }
        .saturating_sub(self.anchor.width - 1)
    }
}

/// Builds one training example centred on `center` in the first image and on
/// the rounded ground-truth target in the second.
///
/// Returns `None` when the flow is invalid at `center` or either crop leaves
/// the image; the caller is expected to draw another pixel.
pub fn sample_training_pair<T: Scalar>(
    img1: &Image<T>,
    img2: &Image<T>,
    gt_flow: &FlowField<T>,
    center: (usize, usize),
    axis: Axis,
    range: usize,
    patch: usize,
) -> Option<TrainingExample<T>> {
    debug_assert!(!patch.is_multiple_of(2) && range.is_multiple_of(2));
    let (x, y) = center;
    let (fx, fy) = gt_flow.get(x, y)?;
    let half = (patch / 2) as i64;
    let tx = (T::lit(x as f64) + fx).round().to_i64()?;
    let ty = (T::lit(y as f64) + fy).round().to_i64()?;

    let inside = |img: &Image<T>, x0: i64, y0: i64, w: i64, h: i64| {
        x0 >= 0 && y0 >= 0 && x0 + w <= img.width() as i64 && y0 + h <= img.height() as i64
    };
    let (ax, ay) = (x as i64 - half, y as i64 - half);
    let p = patch as i64;
    if !inside(img1, ax, ay, p, p) {
        return None;
    }
    let r = (range / 2) as i64;
    let (cx, cy, cw, ch) = match axis {
        Axis::Horizontal => (tx - half - r, ty - half, p + range as i64, p),
        Axis::Vertical => (tx - half, ty - half - r, p, p + range as i64),
    };
    if !inside(img2, cx, cy, cw, ch) {
        return None;
    }
    Some(TrainingExample {
        anchor: Tensor3::crop_image(img1, ax as usize, ay as usize, patch, patch),
        candidates: Tensor3::crop_image(img2, cx as usize, cy as usize, cw as usize, ch as usize),
        axis,
        gt_index: range / 2,
    })
}

/// Both axis examples for one pixel, or `None` if either is rejected.
pub fn sample_pixel_examples<T: Scalar>(
    img1: &Image<T>,
    img2: &Image<T>,
    gt_flow: &FlowField<T>,
    center: (usize, usize),
    range: usize,
    patch: usize,
) -> Option<[TrainingExample<T>; 2]> {
    let h = sample_training_pair(img1, img2, gt_flow, center, Axis::Horizontal, range, patch)?;
    let v = sample_training_pair(img1, img2, gt_flow, center, Axis::Vertical, range, patch)?;
    Some([h, v])
}

/// Draws random pixels until `count` examples (two per pixel) are collected
/// or `max_draws` pixels were tried.
pub fn draw_examples<T: Scalar, R: Rng>(
    img1: &Image<T>,
    img2: &Image<T>,
    gt_flow: &FlowField<T>,
    count: usize,
    range: usize,
    patch: usize,
    max_draws: usize,
    rng: &mut R,
) -> Vec<TrainingExample<T>> {
    let mut out = Vec::with_capacity(count);
    let mut draws = 0;
    while out.len() < count && draws < max_draws {
        draws += 1;
        let x = rng.gen_range(0..img1.width());
        let y = rng.gen_range(0..img1.height());
        if let Some(pair) = sample_pixel_examples(img1, img2, gt_flow, (x, y), range, patch) {
            for ex in pair {
                if out.len() < count {
                    out.push(ex);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image<f64> {
        Image::from_fn(w, h, |x, y| ((x * 7 + y * 13) % 97) as f64 / 97.0)
    }

    #[test]
    fn full_size_strip_dimensions() {
        let img = ramp(260, 260);
        let flow = FlowField::constant(260, 260, 0.0, 0.0);
        let ex =
            sample_training_pair(&img, &img, &flow, (130, 130), Axis::Horizontal, 200, 19).unwrap();
        assert_eq!((ex.anchor.height, ex.anchor.width), (19, 19));
        assert_eq!((ex.candidates.height, ex.candidates.width), (19, 219));
        assert_eq!(ex.gt_index, 100);
        assert_eq!(ex.support(), 201);
        let ex =
            sample_training_pair(&img, &img, &flow, (130, 130), Axis::Vertical, 200, 19).unwrap();
        assert_eq!((ex.candidates.height, ex.candidates.width), (219, 19));
    }

    #[test]
    fn zero_flow_strip_is_same_centre_crop() {
        let img1 = ramp(40, 30);
        let img2 = Image::from_fn(40, 30, |x, y| ((x * 3 + y * 5) % 11) as f64 / 11.0);
        let flow = FlowField::constant(40, 30, 0.0, 0.0);
        let ex = sample_training_pair(&img1, &img2, &flow, (20, 15), Axis::Horizontal, 10, 5).unwrap();
        let expect = Tensor3::crop_image(&img2, 20 - 2 - 5, 15 - 2, 15, 5);
        assert_eq!(ex.candidates, expect);
    }

    #[test]
    fn strip_follows_ground_truth_target() {
        let img = ramp(60, 40);
        let flow = FlowField::constant(60, 40, 4.0, -3.0);
        let ex = sample_training_pair(&img, &img, &flow, (20, 20), Axis::Vertical, 6, 5).unwrap();
        let expect = Tensor3::crop_image(&img, 24 - 2, 17 - 2 - 3, 5, 11);
        assert_eq!(ex.candidates, expect);
    }

    #[test]
    fn border_samples_are_rejected() {
        let img = ramp(30, 30);
        let flow = FlowField::constant(30, 30, 0.0, 0.0);
        assert!(sample_training_pair(&img, &img, &flow, (1, 15), Axis::Vertical, 4, 5).is_none());
        assert!(sample_training_pair(&img, &img, &flow, (15, 15), Axis::Horizontal, 40, 5).is_none());
        let mut invalid = FlowField::<f64>::new(30, 30);
        invalid.set(0, 0, 0.0, 0.0);
        assert!(sample_training_pair(&img, &img, &invalid, (15, 15), Axis::Vertical, 4, 5).is_none());
    }

    #[test]
    fn two_examples_per_pixel() {
        let img = ramp(50, 50);
        let flow = FlowField::constant(50, 50, 1.0, 1.0);
        let pair = sample_pixel_examples(&img, &img, &flow, (25, 25), 10, 5).unwrap();
        assert_eq!(pair[0].axis, Axis::Horizontal);
        assert_eq!(pair[1].axis, Axis::Vertical);
    }
}
