use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};
use crate::imgproc::Image;

/// Kind of boundary between two adjacent superpixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryType {
    /// Both planes agree on both sides of the boundary.
    Coplanar,
    /// Planes meet along the boundary but may fold.
    Hinge,
    /// No continuity: one surface occludes the other.
    Occlusion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SuperpixelEdge {
    /// Smaller superpixel id.
    pub a: u32,
    /// Larger superpixel id.
    pub b: u32,
    pub kind: BoundaryType,
}

/// Partition of an image into superpixels with their 4-adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelGraph {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    centroids: Vec<[f64; 2]>,
    edges: Vec<SuperpixelEdge>,
}

/// Per-pixel superpixel ids, 4-adjacent pairs `(a, b)` with `a < b`, and the
/// pixel pairs `(pixel in a, pixel in b)` along each boundary.
pub(crate) fn boundary_pairs(labels: &[u32], width: usize) -> BTreeMap<(u32, u32), Vec<(usize, usize)>> {
    let height = labels.len() / width.max(1);
    let mut out: BTreeMap<(u32, u32), Vec<(usize, usize)>> = BTreeMap::new();
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let mut push = |j: usize| {
                let (a, b) = (labels[i], labels[j]);
                if a < b {
                    out.entry((a, b)).or_default().push((i, j));
                } else if b < a {
                    out.entry((b, a)).or_default().push((j, i));
                }
            };
            if x + 1 < width {
                push(i + 1);
            }
            if y + 1 < height {
                push(i + width);
            }
        }
    }
    out
}

fn centroids_of(labels: &[u32], width: usize, count: usize) -> Vec<[f64; 2]> {
    let mut acc = vec![[0.0f64; 3]; count];
    for (i, &l) in labels.iter().enumerate() {
        let a = &mut acc[l as usize];
        a[0] += (i % width) as f64;
        a[1] += (i / width) as f64;
        a[2] += 1.0;
    }
    acc.iter().map(|a| [a[0] / a[2].max(1.0), a[1] / a[2].max(1.0)]).collect()
}

impl SuperpixelGraph {
    /// Graph of an arbitrary labelling. Ids are renumbered densely in order
    /// of first appearance, so unused ids disappear.
    pub fn from_labels(width: usize, height: usize, labels: &[u32]) -> Result<Self> {
        if labels.len() != width * height || labels.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{} superpixel labels for {width}x{height}",
                labels.len()
            )));
        }
        let mut remap: BTreeMap<u32, u32> = BTreeMap::new();
        let mut dense = Vec::with_capacity(labels.len());
        for &l in labels {
            let next = remap.len() as u32;
            dense.push(*remap.entry(l).or_insert(next));
        }
        Ok(Self::with_kinds(width, height, dense, remap.len(), &BTreeMap::new()))
    }

    /// Graph over dense ids `0..count`, taking boundary kinds from `kinds`
    /// (coplanar when absent).
    pub(crate) fn with_kinds(
        width: usize,
        height: usize,
        labels: Vec<u32>,
        count: usize,
        kinds: &BTreeMap<(u32, u32), BoundaryType>,
    ) -> Self {
        let edges = boundary_pairs(&labels, width)
            .keys()
            .map(|&(a, b)| SuperpixelEdge {
                a,
                b,
                kind: kinds.get(&(a, b)).copied().unwrap_or(BoundaryType::Coplanar),
            })
            .collect();
        Self {
            width,
            height,
            centroids: centroids_of(&labels, width, count),
            labels,
            edges,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of superpixels.
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn centroid(&self, id: u32) -> [f64; 2] {
        self.centroids[id as usize]
    }

    /// Adjacent pairs sorted by `(a, b)`.
    pub fn edges(&self) -> &[SuperpixelEdge] {
        &self.edges
    }

    pub fn edge(&self, a: u32, b: u32) -> Option<&SuperpixelEdge> {
        let key = (a.min(b), a.max(b));
        self.edges
            .binary_search_by(|e| (e.a, e.b).cmp(&key))
            .ok()
            .map(|i| &self.edges[i])
    }

    /// Whether pixel `(x, y)` touches a different superpixel on its right or
    /// below.
    pub fn is_boundary(&self, x: usize, y: usize) -> bool {
        let l = self.label(x, y);
        (x + 1 < self.width && self.label(x + 1, y) != l) || (y + 1 < self.height && self.label(x, y + 1) != l)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuperpixelParams {
    /// Target number of superpixels.
    pub count: usize,
    /// Intensity difference worth one grid spacing of distance.
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SuperpixelParams {
    fn default() -> Self {
        Self {
            count: 800,
            compactness: 0.1,
            iterations: 10,
        }
    }
}

/// Grid-seeded local k-means in `(x, y, intensity)`, followed by splitting
/// disconnected clusters and merging fragments smaller than a quarter cell
/// into the previously labelled neighbour.
pub fn superpixels(guide: &Image<f64>, params: &SuperpixelParams) -> Result<SuperpixelGraph> {
    let (w, h) = (guide.width(), guide.height());
    if w == 0 || h == 0 || params.count == 0 || !(params.compactness > 0.0) {
        return Err(Error::InvalidArgument(format!("invalid superpixel request {params:?} on {w}x{h}")));
    }
    let s = ((w * h) as f64 / params.count as f64).sqrt().max(1.0);
    let nx = ((w as f64 / s).round() as usize).max(1);
    let ny = ((h as f64 / s).round() as usize).max(1);
    let (sx, sy) = (w as f64 / nx as f64, h as f64 / ny as f64);
    let mut centres: Vec<[f64; 3]> = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (x, y) = ((i as f64 + 0.5) * sx, (j as f64 + 0.5) * sy);
            let (px, py) = ((x as usize).min(w - 1), (y as usize).min(h - 1));
            centres.push([x, y, guide.get(px, py)]);
        }
    }
    let mut labels = vec![0u32; w * h];
    let mut dist = vec![f64::INFINITY; w * h];
    let reach = 2.0 * s;
    for _ in 0..params.iterations.max(1) {
        dist.fill(f64::INFINITY);
        for (k, c) in centres.iter().enumerate() {
            let x0 = (c[0] - reach).floor().max(0.0) as usize;
            let x1 = ((c[0] + reach).ceil() as usize).min(w - 1);
            let y0 = (c[1] - reach).floor().max(0.0) as usize;
            let y1 = ((c[1] + reach).ceil() as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let di = (guide.get(x, y) - c[2]) / params.compactness;
                    let ds = ((x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2)) / (s * s);
                    let d = di * di + ds;
                    let i = y * w + x;
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = k as u32;
                    }
                }
            }
        }
        let mut acc = vec![[0.0f64; 4]; centres.len()];
        for (i, &l) in labels.iter().enumerate() {
            let a = &mut acc[l as usize];
            let (x, y) = (i % w, i / w);
            a[0] += x as f64;
            a[1] += y as f64;
            a[2] += guide.get(x, y);
            a[3] += 1.0;
        }
        for (c, a) in centres.iter_mut().zip(&acc) {
            if a[3] > 0.0 {
                *c = [a[0] / a[3], a[1] / a[3], a[2] / a[3]];
            }
        }
    }
    // connected components, small ones absorbed by an earlier neighbour
    let min_size = ((s * s) / 4.0).max(1.0) as usize;
    let mut out = vec![u32::MAX; w * h];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    let mut comp = Vec::new();
    for start in 0..w * h {
        if out[start] != u32::MAX {
            continue;
        }
        let (sx0, sy0) = (start % w, start / w);
        let mut adjacent = None;
        for (nx0, ny0) in neighbours4(sx0, sy0, w, h) {
            let j = ny0 * w + nx0;
            if out[j] != u32::MAX {
                adjacent = Some(out[j]);
                break;
            }
        }
        comp.clear();
        out[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            for (x, y) in neighbours4(i % w, i / w, w, h) {
                let j = y * w + x;
                if out[j] == u32::MAX && labels[j] == labels[start] {
                    out[j] = next;
                    queue.push_back(j);
                }
            }
        }
        match adjacent {
            Some(a) if comp.len() < min_size => {
                for &i in &comp {
                    out[i] = a;
                }
            }
            _ => next += 1,
        }
    }
    SuperpixelGraph::from_labels(w, h, &out)
}

fn neighbours4(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let mut v = [(usize::MAX, usize::MAX); 4];
    if x > 0 {
        v[0] = (x - 1, y);
    }
    if y > 0 {
        v[1] = (x, y - 1);
    }
    if x + 1 < w {
        v[2] = (x + 1, y);
    }
    if y + 1 < h {
        v[3] = (x, y + 1);
    }
    v.into_iter().filter(|p| p.0 != usize::MAX)
}
