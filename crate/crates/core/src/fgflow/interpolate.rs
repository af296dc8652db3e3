//! Edge-aware densification of a semi-dense flow field: geodesic nearest
//! seeds, per-seed locally weighted affine models, and one damped Jacobi
//! smoothing sweep with edge-stopping weights.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::imgproc::{FlowField, Image, Mask};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpolationParams {
    /// Geodesic step cost is `1 + edge_weight * |dI|`.
    pub edge_weight: f64,
    /// Step cost multiplier for paths leaving the region.
    pub outside_factor: f64,
    /// Seed weights are `exp(-kernel * D)`.
    pub kernel: f64,
    /// Seeds used by each local model.
    pub neighbours: usize,
    pub smoothing_sweeps: usize,
    /// Step size of the Jacobi sweep, in `(0, 1]`.
    pub smoothing_step: f64,
    /// Smoothing weights are `exp(-edge_stop * |dI|)`.
    pub edge_stop: f64,
}

impl Default for InterpolationParams {
    fn default() -> Self {
        Self {
            edge_weight: 50.0,
            outside_factor: 50.0,
            kernel: 0.5,
            neighbours: 25,
            smoothing_sweeps: 1,
            smoothing_step: 0.5,
            edge_stop: 20.0,
        }
    }
}

/// Totally ordered f64 for the priority queues.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Key(f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

const NEIGHBOURS4: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

struct Geodesic {
    dist: Vec<f64>,
    /// Seed index owning each pixel.
    owner: Vec<usize>,
}

fn step_cost(guide: &Image<f64>, region: &Mask, a: usize, b: usize, p: &InterpolationParams) -> f64 {
    let di = (guide.data()[a] - guide.data()[b]).abs();
    let mut c = 1.0 + p.edge_weight * di;
    if !region.data()[a] || !region.data()[b] {
        c *= p.outside_factor;
    }
    c
}

/// Multi-source Dijkstra from the seed pixels over the whole image.
fn geodesic(seeds: &[usize], guide: &Image<f64>, region: &Mask, p: &InterpolationParams) -> Geodesic {
    let (w, h) = (guide.width(), guide.height());
    let mut dist = vec![f64::INFINITY; w * h];
    let mut owner = vec![usize::MAX; w * h];
    let mut heap = BinaryHeap::new();
    for (s, &i) in seeds.iter().enumerate() {
        dist[i] = 0.0;
        owner[i] = s;
        heap.push(Reverse((Key(0.0), s, i)));
    }
    while let Some(Reverse((Key(d), s, i))) = heap.pop() {
        if d > dist[i] || (d == dist[i] && s != owner[i]) {
            continue;
        }
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for (dx, dy) in NEIGHBOURS4 {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            let nd = d + step_cost(guide, region, i, j, p);
            // ties resolved towards the lower seed index for determinism
            if nd < dist[j] || (nd == dist[j] && s < owner[j]) {
                dist[j] = nd;
                owner[j] = s;
                heap.push(Reverse((Key(nd), s, j)));
            }
        }
    }
    Geodesic { dist, owner }
}

/// Seed adjacency from touching geodesic Voronoi cells, weighted by the
/// shortest path through the shared boundary.
fn seed_graph(geo: &Geodesic, guide: &Image<f64>, region: &Mask, n_seeds: usize, p: &InterpolationParams) -> Vec<Vec<(usize, f64)>> {
    let (w, h) = (guide.width(), guide.height());
    let mut edges: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if nx >= w || ny >= h {
                    continue;
                }
                let j = ny * w + nx;
                let (a, b) = (geo.owner[i], geo.owner[j]);
                if a == b || a == usize::MAX || b == usize::MAX {
                    continue;
                }
                let d = geo.dist[i] + step_cost(guide, region, i, j, p) + geo.dist[j];
                let key = (a.min(b), a.max(b));
                let e = edges.entry(key).or_insert(f64::INFINITY);
                if d < *e {
                    *e = d;
                }
            }
        }
    }
    let mut adj = vec![Vec::new(); n_seeds];
    for ((a, b), d) in edges {
        adj[a].push((b, d));
        adj[b].push((a, d));
    }
    adj
}

/// The `k` seeds nearest to `s` in the seed graph (including `s`).
fn nearest_seeds(adj: &[Vec<(usize, f64)>], s: usize, k: usize) -> Vec<(usize, f64)> {
    let mut best: std::collections::HashMap<usize, f64> = Default::default();
    let mut done = Vec::with_capacity(k);
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((Key(0.0), s)));
    best.insert(s, 0.0);
    while let Some(Reverse((Key(d), n))) = heap.pop() {
        if done.len() >= k {
            break;
        }
        if best.get(&n).is_some_and(|b| d > *b) || done.iter().any(|(m, _)| *m == n) {
            continue;
        }
        done.push((n, d));
        for &(m, c) in &adj[n] {
            let nd = d + c;
            if best.get(&m).is_none_or(|b| nd < *b) {
                best.insert(m, nd);
                heap.push(Reverse((Key(nd), m)));
            }
        }
    }
    done
}

/// Affine flow model `(u, v) = A [1, x - cx, y - cy]`.
#[derive(Clone, Copy, Debug)]
struct LocalModel {
    centre: [f64; 2],
    u: [f64; 3],
    v: [f64; 3],
}

impl LocalModel {
    fn eval(&self, x: f64, y: f64) -> (f64, f64) {
        let b = [1.0, x - self.centre[0], y - self.centre[1]];
        (
            self.u[0] * b[0] + self.u[1] * b[1] + self.u[2] * b[2],
            self.v[0] * b[0] + self.v[1] * b[1] + self.v[2] * b[2],
        )
    }
}

fn fit_local(samples: &[([f64; 2], (f64, f64), f64)], centre: [f64; 2]) -> LocalModel {
    let first = samples[0].1;
    if samples.iter().all(|s| s.1 == first) {
        return LocalModel { centre, u: [first.0, 0.0, 0.0], v: [first.1, 0.0, 0.0] };
    }
    let mut ata = Matrix3::<f64>::zeros();
    let mut atu = Vector3::<f64>::zeros();
    let mut atv = Vector3::<f64>::zeros();
    let (mut sw, mut su, mut sv) = (0.0, 0.0, 0.0);
    for (pos, (u, v), wt) in samples {
        let b = Vector3::new(1.0, pos[0] - centre[0], pos[1] - centre[1]);
        ata += b * b.transpose() * *wt;
        atu += b * (*u * *wt);
        atv += b * (*v * *wt);
        sw += wt;
        su += u * wt;
        sv += v * wt;
    }
    let mean = LocalModel { centre, u: [su / sw, 0.0, 0.0], v: [sv / sw, 0.0, 0.0] };
    if samples.len() < 3 {
        return mean;
    }
    let eig = ata.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 1e-6 * hi) {
        return mean;
    }
    match ata.cholesky() {
        Some(ch) => {
            let cu = ch.solve(&atu);
            let cv = ch.solve(&atv);
            LocalModel { centre, u: [cu[0], cu[1], cu[2]], v: [cv[0], cv[1], cv[2]] }
        }
        None => mean,
    }
}

/// Fills every pixel of `region` from the valid pixels of `semi_dense`
/// inside it. Seeds keep their values until the smoothing sweep.
pub fn interpolate_dense(
    semi_dense: &FlowField<f64>,
    guide: &Image<f64>,
    region: &Mask,
    params: &InterpolationParams,
) -> Result<FlowField<f64>> {
    let (w, h) = (semi_dense.width(), semi_dense.height());
    if (guide.width(), guide.height()) != (w, h) || (region.width(), region.height()) != (w, h) {
        return Err(Error::DimensionMismatch("interpolation inputs differ in size".into()));
    }
    let seeds: Vec<usize> = (0..w * h)
        .filter(|&i| region.data()[i] && semi_dense.valid_mask()[i])
        .collect();
    if seeds.is_empty() {
        return Err(Error::Insufficient("no valid seeds inside the region".into()));
    }
    let geo = geodesic(&seeds, guide, region, params);
    let adj = seed_graph(&geo, guide, region, seeds.len(), params);
    let mut models: std::collections::HashMap<usize, LocalModel> = Default::default();
    let mut out = FlowField::new(w, h);
    for i in 0..w * h {
        if !region.data()[i] {
            continue;
        }
        if let Some((u, v)) = semi_dense.get_index(i) {
            out.set_index(i, u, v);
            continue;
        }
        let s = geo.owner[i];
        let model = *models.entry(s).or_insert_with(|| {
            let centre = [(seeds[s] % w) as f64, (seeds[s] / w) as f64];
            let samples: Vec<([f64; 2], (f64, f64), f64)> = nearest_seeds(&adj, s, params.neighbours)
                .into_iter()
                .map(|(n, d)| {
                    let j = seeds[n];
                    let uv = semi_dense.get_index(j).expect("seed is valid");
                    ([(j % w) as f64, (j / w) as f64], uv, (-params.kernel * d).exp())
                })
                .collect();
            fit_local(&samples, centre)
        });
        let (u, v) = model.eval((i % w) as f64, (i / w) as f64);
        out.set_index(i, u, v);
    }
    for _ in 0..params.smoothing_sweeps {
        out = smooth_once(&out, guide, region, params);
    }
    Ok(out)
}

/// Damped Jacobi step `u_p + t * sum w (u_q - u_p) / sum w` over in-region
/// 4-neighbours, with `w = exp(-edge_stop * |dI|)`.
fn smooth_once(f: &FlowField<f64>, guide: &Image<f64>, region: &Mask, p: &InterpolationParams) -> FlowField<f64> {
    let (w, h) = (f.width(), f.height());
    let mut out = f.clone();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let Some((u, v)) = f.get_index(i) else {
                continue;
            };
            let (mut sw, mut du, mut dv) = (0.0, 0.0, 0.0);
            for (dx, dy) in NEIGHBOURS4 {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !region.data()[j] {
                    continue;
                }
                let Some((uq, vq)) = f.get_index(j) else {
                    continue;
                };
                let wt = (-p.edge_stop * (guide.data()[i] - guide.data()[j]).abs()).exp();
                sw += wt;
                du += wt * (uq - u);
                dv += wt * (vq - v);
            }
            if sw > 0.0 {
                out.set_index(i, u + p.smoothing_step * du / sw, v + p.smoothing_step * dv / sw);
            }
        }
    }
    out
}
