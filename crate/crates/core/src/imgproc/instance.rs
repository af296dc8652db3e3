use std::collections::BTreeMap;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use super::{codec_err, Mask};
use crate::error::{Error, Result};

/// Per-pixel rigid-body labels: 0 is background, `1..=M` are instances.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    num_instances: u32,
}

impl InstanceMap {
    /// Relabels arbitrary raw labels onto the contiguous set `{0..M}`,
    /// keeping 0 as background and preserving the order of the raw ids.
    pub fn from_raw(width: usize, height: usize, raw: &[u32]) -> Result<Self> {
        if raw.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "label raster has {} entries, expected {}x{}",
                raw.len(),
                width,
                height
            )));
        }
        let mut remap: BTreeMap<u32, u32> = BTreeMap::new();
        for &l in raw {
            if l != 0 {
                remap.entry(l).or_insert(0);
            }
        }
        for (next, v) in remap.values_mut().enumerate() {
            *v = next as u32 + 1;
        }
        let labels = raw
            .iter()
            .map(|l| if *l == 0 { 0 } else { remap[l] })
            .collect();
        Ok(Self {
            width,
            height,
            labels,
            num_instances: remap.len() as u32,
        })
    }

    pub fn background(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
            num_instances: 0,
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
    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Number of foreground instances `M`.
    pub fn num_instances(&self) -> u32 {
        self.num_instances
    }

    pub fn mask(&self, label: u32) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| self.label(x, y) == label)
    }

    pub fn foreground_mask(&self) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| self.label(x, y) != 0)
    }
}

/// Loads an 8- or 16-bit single-channel label PNG and relabels it contiguously.
pub fn load_instance_map(path: impl AsRef<Path>) -> Result<InstanceMap> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| codec_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw: Vec<u32> = match img {
        DynamicImage::ImageLuma8(b) => b.pixels().map(|p| p[0] as u32).collect(),
        DynamicImage::ImageLuma16(b) => b.pixels().map(|p| p[0] as u32).collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: instance map must be single-channel, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    InstanceMap::from_raw(w, h, &raw)
}

/// Writes labels as a 16-bit single-channel PNG.
pub fn save_instance_map(map: &InstanceMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if map.num_instances > u16::MAX as u32 {
        return Err(Error::InvalidArgument(format!(
            "{} instances exceed the 16-bit label range",
            map.num_instances
        )));
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(map.width as u32, map.height as u32, |x, y| {
            Luma([map.label(x as usize, y as usize) as u16])
        });
    buf.save(path).map_err(|e| codec_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_zero_is_pure_background() {
        let m = InstanceMap::from_raw(2, 2, &[0; 4]).unwrap();
        assert_eq!(m.num_instances(), 0);
    }

    #[test]
    fn sparse_labels_become_contiguous() {
        let m = InstanceMap::from_raw(3, 1, &[9, 0, 5]).unwrap();
        assert_eq!(m.labels(), &[2, 0, 1]);
        assert_eq!(m.num_instances(), 2);
    }

    #[test]
    fn contiguous_labels_unchanged() {
        let m = InstanceMap::from_raw(3, 1, &[0, 1, 2]).unwrap();
        assert_eq!(m.labels(), &[0, 1, 2]);
    }

    #[test]
    fn png_roundtrip_8bit_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_fn(3, 1, |x, _| Luma([[0u8, 5, 9][x as usize]]));
        buf.save(&p).unwrap();
        let m = load_instance_map(&p).unwrap();
        assert_eq!(m.labels(), &[0, 1, 2]);
        let q = dir.path().join("m16.png");
        save_instance_map(&m, &q).unwrap();
        assert_eq!(load_instance_map(&q).unwrap(), m);
    }

    proptest! {
        #[test]
        fn relabel_preserves_partition(raw in proptest::collection::vec(0u32..6, 1..40)) {
            let m = InstanceMap::from_raw(raw.len(), 1, &raw).unwrap();
            for i in 0..raw.len() {
                prop_assert_eq!(raw[i] == 0, m.labels()[i] == 0);
                for j in 0..raw.len() {
                    prop_assert_eq!(raw[i] == raw[j], m.labels()[i] == m.labels()[j]);
                }
            }
            let max = m.labels().iter().copied().max().unwrap_or(0);
            prop_assert_eq!(max, m.num_instances());
        }
    }
}
