use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::superpixel::{boundary_pairs, BoundaryType, SuperpixelGraph};
use super::vz::{VzRatioField, OMEGA_MAX};
use crate::error::{Error, Result};

/// Vz-ratio plane `a (x - xc) + b (y - yc) + c` of one superpixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub centroid: [f64; 2],
}

impl PlaneParams {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.a * (x - self.centroid[0]) + self.b * (y - self.centroid[1]) + self.c
    }

    fn at(&self, i: usize, width: usize) -> f64 {
        self.eval((i % width) as f64, (i / width) as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlantedPlaneParams {
    /// Weight of squared plane disagreement on coplanar and hinge
    /// boundaries, per boundary pixel pair.
    pub coplanar_weight: f64,
    /// Fixed cost of a hinge, per boundary pixel pair.
    pub hinge_penalty: f64,
    /// Fixed cost of an occlusion, per boundary pixel pair.
    pub occlusion_penalty: f64,
    /// Huber scale, in vz label steps; also the unit of plane disagreement.
    pub huber_steps: f64,
    pub max_sweeps: usize,
    /// Relative energy decrease below which the descent stops.
    pub tolerance: f64,
    /// Reweighted least-squares rounds per plane update.
    pub irls_iterations: usize,
}

impl Default for SlantedPlaneParams {
    fn default() -> Self {
        Self {
            coplanar_weight: 1.0,
            hinge_penalty: 0.5,
            occlusion_penalty: 2.0,
            huber_steps: 3.0,
            max_sweeps: 20,
            tolerance: 1e-6,
            irls_iterations: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlantedPlaneResult {
    /// Plane value at every pixel.
    pub field: VzRatioField,
    /// Final assignment and boundary kinds.
    pub graph: SuperpixelGraph,
    pub planes: Vec<PlaneParams>,
    /// Energy after initialization and after each sweep.
    pub energies: Vec<f64>,
}

pub fn huber(r: f64) -> f64 {
    let a = r.abs();
    if a <= 1.0 {
        0.5 * a * a
    } else {
        a - 0.5
    }
}

type PairMap = BTreeMap<(u32, u32), Vec<(usize, usize)>>;

struct Problem<'a> {
    width: usize,
    field: &'a VzRatioField,
    sigma: f64,
    params: SlantedPlaneParams,
}

impl Problem<'_> {
    fn sample(&self, i: usize) -> Option<f64> {
        self.field.get(i % self.width, i / self.width)
    }

    fn unary(&self, plane: &PlaneParams, members: &[usize]) -> f64 {
        members
            .iter()
            .filter_map(|&i| self.sample(i).map(|w| huber((plane.at(i, self.width) - w) / self.sigma)))
            .sum()
    }

    fn pair_cost(&self, kind: BoundaryType, pa: &PlaneParams, pb: &PlaneParams, p: usize, q: usize) -> f64 {
        let wc = self.params.coplanar_weight / (self.sigma * self.sigma);
        match kind {
            BoundaryType::Coplanar => {
                let dp = pa.at(p, self.width) - pb.at(p, self.width);
                let dq = pa.at(q, self.width) - pb.at(q, self.width);
                0.5 * wc * (dp * dp + dq * dq)
            }
            BoundaryType::Hinge => {
                let (x, y) = self.midpoint(p, q);
                let d = pa.eval(x, y) - pb.eval(x, y);
                self.params.hinge_penalty + wc * d * d
            }
            BoundaryType::Occlusion => self.params.occlusion_penalty,
        }
    }

    fn midpoint(&self, p: usize, q: usize) -> (f64, f64) {
        let w = self.width;
        (((p % w + q % w) as f64) / 2.0, ((p / w + q / w) as f64) / 2.0)
    }

    fn edge_cost(&self, kind: BoundaryType, pa: &PlaneParams, pb: &PlaneParams, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(p, q)| self.pair_cost(kind, pa, pb, p, q)).sum()
    }
}

/// Current assignment with the derived member lists and boundaries.
struct State {
    labels: Vec<u32>,
    planes: Vec<PlaneParams>,
    kinds: BTreeMap<(u32, u32), BoundaryType>,
    members: Vec<Vec<usize>>,
    pairs: PairMap,
    /// Per superpixel: `(neighbour, edge key)`.
    incident: Vec<Vec<(u32, (u32, u32))>>,
}

impl State {
    fn rebuild(&mut self, width: usize) {
        let n = self.planes.len();
        self.members = vec![Vec::new(); n];
        for (i, &l) in self.labels.iter().enumerate() {
            self.members[l as usize].push(i);
        }
        self.pairs = boundary_pairs(&self.labels, width);
        self.incident = vec![Vec::new(); n];
        for &(a, b) in self.pairs.keys() {
            self.incident[a as usize].push((b, (a, b)));
            self.incident[b as usize].push((a, (a, b)));
            self.kinds.entry((a, b)).or_insert(BoundaryType::Coplanar);
        }
    }

    fn kind(&self, key: (u32, u32)) -> BoundaryType {
        self.kinds.get(&key).copied().unwrap_or(BoundaryType::Coplanar)
    }

    fn energy(&self, pr: &Problem<'_>) -> f64 {
        let unary: f64 = self
            .planes
            .iter()
            .zip(&self.members)
            .map(|(p, m)| pr.unary(p, m))
            .sum();
        let edges: f64 = self
            .pairs
            .iter()
            .map(|(&(a, b), pairs)| pr.edge_cost(self.kind((a, b)), &self.planes[a as usize], &self.planes[b as usize], pairs))
            .sum();
        unary + edges
    }

    fn local_energy(&self, pr: &Problem<'_>, id: usize, plane: &PlaneParams) -> f64 {
        let mut e = pr.unary(plane, &self.members[id]);
        for &(other, key) in &self.incident[id] {
            e += pr.edge_cost(self.kind(key), plane, &self.planes[other as usize], &self.pairs[&key]);
        }
        e
    }

    /// Reweighted least-squares refit of one plane with its neighbours
    /// fixed; a round is kept only if it does not raise the local energy.
    fn refit(&self, pr: &Problem<'_>, id: usize, with_boundaries: bool) -> PlaneParams {
        let w = pr.width;
        let s2 = pr.sigma * pr.sigma;
        let wc = pr.params.coplanar_weight / s2;
        let mut plane = self.planes[id];
        let local = |p: &PlaneParams| {
            if with_boundaries {
                self.local_energy(pr, id, p)
            } else {
                pr.unary(p, &self.members[id])
            }
        };
        if !with_boundaries && self.members[id].iter().all(|&i| pr.sample(i).is_none()) {
            return plane;
        }
        let mut current = local(&plane);
        for _ in 0..pr.params.irls_iterations.max(1) {
            let mut h = Matrix3::<f64>::zeros();
            let mut g = Vector3::<f64>::zeros();
            let c0 = plane.centroid;
            let mut add = |x: f64, y: f64, target: f64, weight: f64| {
                let phi = Vector3::new(x - c0[0], y - c0[1], 1.0);
                h += weight * phi * phi.transpose();
                g += weight * target * phi;
            };
            for &i in &self.members[id] {
                if let Some(omega) = pr.sample(i) {
                    let r = (plane.at(i, w) - omega).abs() / pr.sigma;
                    let weight = if r <= 1.0 { 1.0 } else { 1.0 / r };
                    add((i % w) as f64, (i / w) as f64, omega, 0.5 * weight / s2);
                }
            }
            if with_boundaries {
                for &(other, key) in &self.incident[id] {
                    let op = &self.planes[other as usize];
                    for &(p, q) in &self.pairs[&key] {
                        match self.kind(key) {
                            BoundaryType::Coplanar => {
                                for i in [p, q] {
                                    add((i % w) as f64, (i / w) as f64, op.at(i, w), 0.5 * wc);
                                }
                            }
                            BoundaryType::Hinge => {
                                let (x, y) = pr.midpoint(p, q);
                                add(x, y, op.eval(x, y), wc);
                            }
                            BoundaryType::Occlusion => {}
                        }
                    }
                }
            }
            let ridge = 1e-12 * (h.trace() + 1.0);
            let Some(theta) = (h + Matrix3::identity() * ridge).lu().solve(&g) else {
                break;
            };
            let candidate = PlaneParams {
                a: theta[0],
                b: theta[1],
                c: theta[2],
                centroid: c0,
            };
            let e = local(&candidate);
            if !(e < current) {
                break;
            }
            let done = current - e <= 1e-15 * current.abs().max(1.0);
            plane = candidate;
            current = e;
            if done {
                break;
            }
        }
        plane
    }

    /// Greedy colouring of the adjacency graph; superpixels of one colour
    /// share no boundary.
    fn colour_classes(&self) -> Vec<Vec<usize>> {
        let n = self.planes.len();
        let mut colour = vec![usize::MAX; n];
        let mut classes: Vec<Vec<usize>> = Vec::new();
        for id in 0..n {
            let used: Vec<usize> = self.incident[id].iter().map(|(o, _)| colour[*o as usize]).collect();
            let c = (0..).find(|c| !used.contains(c)).unwrap();
            colour[id] = c;
            if c == classes.len() {
                classes.push(Vec::new());
            }
            classes[c].push(id);
        }
        classes
    }

    fn update_planes(&mut self, pr: &Problem<'_>) {
        for class in self.colour_classes() {
            let fits: Vec<PlaneParams> = class.par_iter().map(|&id| self.refit(pr, id, true)).collect();
            for (id, p) in class.into_iter().zip(fits) {
                self.planes[id] = p;
            }
        }
    }

    fn update_kinds(&mut self, pr: &Problem<'_>) {
        for (&(a, b), pairs) in &self.pairs {
            let (pa, pb) = (&self.planes[a as usize], &self.planes[b as usize]);
            let mut best = (BoundaryType::Coplanar, pr.edge_cost(BoundaryType::Coplanar, pa, pb, pairs));
            for kind in [BoundaryType::Hinge, BoundaryType::Occlusion] {
                let e = pr.edge_cost(kind, pa, pb, pairs);
                if e < best.1 {
                    best = (kind, e);
                }
            }
            self.kinds.insert((a, b), best.0);
        }
    }

    /// Moves boundary pixels whose neighbours all belong to their own or one
    /// other superpixel, when that lowers the energy.
    fn reassign(&mut self, pr: &Problem<'_>, height: usize) {
        let w = pr.width;
        let mut sizes: Vec<usize> = self.members.iter().map(Vec::len).collect();
        for p in 0..self.labels.len() {
            let (x, y) = (p % w, p / w);
            let i = self.labels[p];
            let mut nbrs = [usize::MAX; 4];
            if x > 0 {
                nbrs[0] = p - 1;
            }
            if x + 1 < w {
                nbrs[1] = p + 1;
            }
            if y > 0 {
                nbrs[2] = p - w;
            }
            if y + 1 < height {
                nbrs[3] = p + w;
            }
            let mut other = None;
            let mut ok = true;
            for &n in nbrs.iter().filter(|n| **n != usize::MAX) {
                let l = self.labels[n];
                if l != i {
                    match other {
                        None => other = Some(l),
                        Some(o) if o != l => ok = false,
                        _ => {}
                    }
                }
            }
            let Some(j) = other else { continue };
            if !ok || sizes[i as usize] <= 1 {
                continue;
            }
            let (pi, pj) = (&self.planes[i as usize], &self.planes[j as usize]);
            let key = (i.min(j), i.max(j));
            let kind = self.kind(key);
            let mut delta = 0.0;
            if let Some(omega) = pr.sample(p) {
                delta += huber((pj.at(p, w) - omega) / pr.sigma) - huber((pi.at(p, w) - omega) / pr.sigma);
            }
            for &n in nbrs.iter().filter(|n| **n != usize::MAX) {
                let c = pr.pair_cost(kind, pi, pj, p, n);
                if self.labels[n] == j {
                    delta -= c;
                } else {
                    delta += c;
                }
            }
            if delta < -1e-12 {
                self.labels[p] = j;
                sizes[i as usize] -= 1;
                sizes[j as usize] += 1;
            }
        }
    }
}

/// Piecewise-planar vz-ratio field over the superpixels of `graph`, fitted
/// to the valid samples of `field` by block coordinate descent over robust
/// plane fits, boundary kinds, and boundary pixel assignment. `label_step`
/// is the vz label spacing that sets the Huber scale.
pub fn slanted_plane(
    field: &VzRatioField,
    graph: &SuperpixelGraph,
    params: &SlantedPlaneParams,
    label_step: f64,
) -> Result<SlantedPlaneResult> {
    let (w, h) = (graph.width(), graph.height());
    if field.width() != w || field.height() != h {
        return Err(Error::DimensionMismatch(format!(
            "vz field {}x{} vs superpixels {w}x{h}",
            field.width(),
            field.height()
        )));
    }
    let sigma = params.huber_steps * label_step;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid Huber scale {sigma}")));
    }
    let pr = Problem {
        width: w,
        field,
        sigma,
        params: *params,
    };
    let mut all: Vec<f64> = (0..w * h).filter_map(|i| pr.sample(i)).collect();
    all.sort_by(f64::total_cmp);
    let global = if all.is_empty() { 0.0 } else { all[all.len() / 2] };
    let mut st = State {
        labels: graph.labels().to_vec(),
        planes: (0..graph.len())
            .map(|id| PlaneParams {
                a: 0.0,
                b: 0.0,
                c: global,
                centroid: graph.centroid(id as u32),
            })
            .collect(),
        kinds: graph.edges().iter().map(|e| ((e.a, e.b), e.kind)).collect(),
        members: Vec::new(),
        pairs: BTreeMap::new(),
        incident: Vec::new(),
    };
    st.rebuild(w);
    // independent robust fits, then the boundary kinds they imply
    for id in 0..st.planes.len() {
        let mut m: Vec<f64> = st.members[id].iter().filter_map(|&i| pr.sample(i)).collect();
        if !m.is_empty() {
            m.sort_by(f64::total_cmp);
            st.planes[id].c = m[m.len() / 2];
        }
    }
    let fits: Vec<PlaneParams> = (0..st.planes.len()).into_par_iter().map(|id| st.refit(&pr, id, false)).collect();
    st.planes = fits;
    st.update_kinds(&pr);
    let mut energies = vec![st.energy(&pr)];
    for _ in 0..params.max_sweeps {
        st.update_planes(&pr);
        st.update_kinds(&pr);
        st.reassign(&pr, h);
        st.rebuild(w);
        let e = st.energy(&pr);
        let prev = *energies.last().unwrap();
        energies.push(e);
        if prev - e < params.tolerance * prev.abs().max(1.0) {
            break;
        }
    }
    let mut out = VzRatioField::new(w, h);
    for (i, &l) in st.labels.iter().enumerate() {
        let v = st.planes[l as usize].at(i, w);
        out.set(i % w, i / w, if v.is_finite() { v.min(OMEGA_MAX) } else { 0.0 })?;
    }
    let kinds = st.kinds.clone();
    Ok(SlantedPlaneResult {
        field: out,
        graph: SuperpixelGraph::with_kinds(w, h, st.labels, st.planes.len(), &kinds),
        planes: st.planes,
        energies,
    })
}
