use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costvol::Match;
use crate::epigeo::{skew, FundamentalMatrix};
use crate::error::{Error, Result};
use crate::imgproc::{
    load_image, load_instance_map, load_mask, read_flow_png, save_gray16, save_instance_map,
    save_mask, write_flow_png, FlowField, Image, InstanceMap, Mask,
};

/// Parameters of a random driving-like scene: a camera in a street between
/// two facades, above a textured ground plane and facing a distant wall,
/// with box-shaped bodies on the ground.
/// Ranges are `[lo, hi]`; `max_*` values bound a symmetric range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Metres above the ground.
    pub camera_height: f64,
    pub wall_distance: f64,
    /// Distance from the camera to either facade.
    pub street_half_width: f64,
    pub objects: usize,
    /// Forward camera motion, metres.
    pub ego_forward: [f64; 2],
    pub max_ego_lateral: f64,
    pub max_ego_yaw_deg: f64,
    /// Speed of a body along its heading, metres per frame; the sign is random.
    pub object_speed: [f64; 2],
    pub max_object_yaw_deg: f64,
    /// Depth of the nearest bodies.
    pub object_distance: [f64; 2],
    /// Samples per pixel along each axis.
    pub supersample: usize,
    /// Multiplies every motion; 0 gives a static scene.
    pub motion_scale: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 256,
            height: 128,
            focal: 150.0,
            camera_height: 1.5,
            wall_distance: 60.0,
            street_half_width: 7.0,
            objects: 2,
            ego_forward: [0.3, 0.6],
            max_ego_lateral: 0.05,
            max_ego_yaw_deg: 1.0,
            object_speed: [0.4, 1.2],
            max_object_yaw_deg: 2.0,
            object_distance: [9.0, 15.0],
            supersample: 2,
            motion_scale: 1.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.width >= 16
            && self.height >= 16
            && self.focal > 0.0
            && self.camera_height > 0.0
            && self.wall_distance > self.object_distance[1] + 5.0
            && self.street_half_width > 4.0
            && self.ego_forward[0] <= self.ego_forward[1]
            && self.object_speed[0] <= self.object_speed[1]
            && self.object_distance[0] >= 4.0
            && self.object_distance[0] <= self.object_distance[1]
            && self.supersample >= 1
            && self.motion_scale >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid scene spec {self:?}")))
        }
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        let (cx, cy) = self.principal_point();
        Matrix3::new(self.focal, 0.0, cx, 0.0, self.focal, cy, 0.0, 0.0, 1.0)
    }

    /// Pixel centres sit at integer coordinates.
    pub fn principal_point(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }
}

/// Rigid transform `x -> r x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Pose {
    r: Matrix3<f64>,
    t: Vector3<f64>,
}

impl Pose {
    fn identity() -> Self {
        Self {
            r: Matrix3::identity(),
            t: Vector3::zeros(),
        }
    }

    fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.r * x + self.t
    }

    fn inverse(&self) -> Self {
        let rt = self.r.transpose();
        Self { r: rt, t: -(rt * self.t) }
    }
}

fn yaw(angle: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::y_axis(), angle).matrix()
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    /// `y = height`, in front of the wall.
    Ground { height: f64, limit: f64 },
    /// `z = distance`.
    Wall { distance: f64 },
    /// `x = offset`, in front of the wall.
    Facade { offset: f64, limit: f64 },
    /// Axis-aligned box centred on the body origin.
    Box { half: Vector3<f64> },
}

#[derive(Clone, Copy, Debug)]
struct Hit {
    depth: f64,
    body: usize,
    /// Texture key of the surface hit.
    surface: u64,
    uv: [f64; 2],
    cell: f64,
    point: Vector3<f64>,
}

#[derive(Clone, Debug)]
struct Body {
    shapes: Vec<Shape>,
    /// Body coordinates to camera coordinates, per frame.
    poses: [Pose; 2],
    key: u64,
}

fn intersect(shape: &Shape, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, usize, [f64; 2], f64)> {
    const EPS: f64 = 1e-6;
    match *shape {
        Shape::Ground { height, limit } => {
            if d.y.abs() < 1e-12 {
                return None;
            }
            let t = (height - o.y) / d.y;
            let p = o + d * t;
            (t > EPS && p.z < limit).then_some((t, 0, [p.x, p.z], 0.12))
        }
        Shape::Wall { distance } => {
            if d.z.abs() < 1e-12 {
                return None;
            }
            let t = (distance - o.z) / d.z;
            let p = o + d * t;
            (t > EPS).then_some((t, 1, [p.x, p.y], 0.5))
        }
        Shape::Facade { offset, limit } => {
            if d.x.abs() < 1e-12 {
                return None;
            }
            let t = (offset - o.x) / d.x;
            let p = o + d * t;
            let face = if offset < 0.0 { 8 } else { 9 };
            (t > EPS && p.z < limit).then_some((t, face, [p.z, p.y], 0.15))
        }
        Shape::Box { half } => {
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut face = 0;
            for a in 0..3 {
                if d[a].abs() < 1e-12 {
                    if o[a].abs() > half[a] {
                        return None;
                    }
                    continue;
                }
                let (mut ta, mut tb) = ((-half[a] - o[a]) / d[a], (half[a] - o[a]) / d[a]);
                let mut f = 2 * a;
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                    f += 1;
                }
                if ta > t0 {
                    t0 = ta;
                    face = f;
                }
                t1 = t1.min(tb);
            }
            if !(t0 > EPS && t0 <= t1) {
                return None;
            }
            let p = o + d * t0;
            let a = face / 2;
            let uv = [p[(a + 1) % 3], p[(a + 2) % 3]];
            Some((t0, 2 + face, uv, 0.08))
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(key: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(key ^ splitmix((ix as u64).wrapping_mul(0x632b_e59b_d9b4_e019) ^ (iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothly interpolated lattice noise in `[0, 1)`.
fn value_noise(key: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (s(x - fx), s(y - fy));
    let a = lattice(key, ix, iy) * (1.0 - sx) + lattice(key, ix + 1, iy) * sx;
    let b = lattice(key, ix, iy + 1) * (1.0 - sx) + lattice(key, ix + 1, iy + 1) * sx;
    a * (1.0 - sy) + b * sy
}

/// Intensity of a surface at texture coordinates `uv` (metres): three
/// octaves of lattice noise above the finest cell size `cell`, plus a
/// per-surface offset.
fn texture(key: u64, uv: [f64; 2], cell: f64) -> f64 {
    let mut v = 0.0;
    let mut norm = 0.0;
    for (octave, (scale, amp)) in [(1.0, 0.5), (2.7, 0.3), (7.3, 0.2)].into_iter().enumerate() {
        let k = splitmix(key.wrapping_add(octave as u64));
        v += amp * value_noise(k, uv[0] / (cell * scale), uv[1] / (cell * scale));
        norm += amp;
    }
    let base = (splitmix(key ^ 0xabcd) >> 11) as f64 / (1u64 << 53) as f64;
    (0.15 + 0.45 * base + 0.5 * (v / norm - 0.5) * 1.6).clamp(0.02, 0.98)
}

fn cast(bodies: &[Body], frame: usize, ray: &Vector3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (b, body) in bodies.iter().enumerate() {
        let inv = body.poses[frame].inverse();
        let o = inv.t;
        let d = inv.r * ray;
        for shape in &body.shapes {
            if let Some((t, face, uv, cell)) = intersect(shape, &o, &d) {
                if best.is_none_or(|h| t < h.depth) {
                    best = Some(Hit {
                        depth: t,
                        body: b,
                        surface: splitmix(body.key ^ face as u64),
                        uv,
                        cell,
                        point: o + d * t,
                    });
                }
            }
        }
    }
    best
}

/// Relative motion of one body between the two camera frames
/// (`X2 = rotation * X1 + translation`) and the fundamental matrix it
/// induces, if it translates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyMotion {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub fundamental: Option<[[f64; 3]; 3]>,
}

impl BodyMotion {
    pub fn fundamental_matrix(&self) -> Option<FundamentalMatrix> {
        self.fundamental
            .and_then(|f| FundamentalMatrix::from_matrix(Matrix3::from_fn(|i, j| f[i][j])).ok())
    }
}

/// A rendered frame pair with exact ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub seed: u64,
    pub image1: Image<f64>,
    pub image2: Image<f64>,
    /// Valid wherever the first-frame point stays in front of the camera.
    pub flow: FlowField<f64>,
    /// Pixels visible in both frames and landing inside the second image.
    pub noc: Mask,
    pub instances: InstanceMap,
    /// Indexed by instance label; 0 is the background.
    pub bodies: Vec<BodyMotion>,
}

fn relative_motion(body: &Body, k: &Matrix3<f64>) -> BodyMotion {
    let (p1, p2) = (body.poses[0], body.poses[1]);
    let r = p2.r * p1.r.transpose();
    let t = p2.t - r * p1.t;
    let kinv = k.try_inverse().expect("intrinsics are invertible");
    let fundamental = (t.norm() > 1e-9)
        .then(|| FundamentalMatrix::from_matrix(kinv.transpose() * skew(t) * r * kinv).ok())
        .flatten()
        .map(|f| {
            let m = f.matrix();
            [0, 1, 2].map(|i| [0, 1, 2].map(|j| m[(i, j)]))
        });
    BodyMotion {
        rotation: [0, 1, 2].map(|i| [0, 1, 2].map(|j| r[(i, j)])),
        translation: [t.x, t.y, t.z],
        fundamental,
    }
}

fn build_bodies(seed: u64, spec: &SceneSpec) -> Result<Vec<Body>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = spec.motion_scale;
    let sym = |rng: &mut ChaCha8Rng, max: f64| if max > 0.0 { rng.gen_range(-max..=max) } else { 0.0 };
    let range = |rng: &mut ChaCha8Rng, r: [f64; 2]| if r[1] > r[0] { rng.gen_range(r[0]..=r[1]) } else { r[0] };

    let forward = range(&mut rng, spec.ego_forward) * m;
    let lateral = sym(&mut rng, spec.max_ego_lateral) * m;
    let psi = sym(&mut rng, spec.max_ego_yaw_deg).to_radians() * m;
    let r_e = yaw(psi);
    let ego = Pose {
        r: r_e,
        t: -(r_e * Vector3::new(lateral, 0.0, forward)),
    };

    let mut bodies = vec![Body {
        shapes: vec![
            Shape::Ground {
                height: spec.camera_height,
                limit: spec.wall_distance,
            },
            Shape::Wall {
                distance: spec.wall_distance,
            },
            Shape::Facade {
                offset: -spec.street_half_width,
                limit: spec.wall_distance,
            },
            Shape::Facade {
                offset: spec.street_half_width,
                limit: spec.wall_distance,
            },
        ],
        poses: [Pose::identity(), ego],
        key: splitmix(seed ^ 0x5eed),
    }];

    let half = Vector3::new(0.85, 0.7, 2.0);
    for k in 0..spec.objects {
        let side = if k % 2 == 0 { -1.0 } else { 1.0 };
        let x = side * rng.gen_range(2.2..3.8);
        let z = range(&mut rng, spec.object_distance) + 7.0 * (k / 2) as f64;
        let heading = rng.gen_range(-0.5..0.5);
        let centre = Vector3::new(x, spec.camera_height - half.y, z);
        let r_body = yaw(heading);
        let speed = range(&mut rng, spec.object_speed) * if rng.gen::<bool>() { 1.0 } else { -1.0 } * m;
        let turn = sym(&mut rng, spec.max_object_yaw_deg).to_radians() * m;
        let r_o = yaw(turn);
        let t_o = r_body * Vector3::new(0.0, 0.0, speed);
        let pose1 = Pose { r: r_body, t: centre };
        // rotate about the body centre, translate, then view from camera 2
        let moved = Pose {
            r: r_o * r_body,
            t: centre + t_o,
        };
        let pose2 = Pose {
            r: ego.r * moved.r,
            t: ego.apply(&moved.t),
        };
        bodies.push(Body {
            shapes: vec![Shape::Box { half }],
            poses: [pose1, pose2],
            key: splitmix(seed ^ (k as u64 + 1).wrapping_mul(0x1234_5678_9abc_def1)),
        });
    }

    for (b, body) in bodies.iter().enumerate().skip(1) {
        for pose in &body.poses {
            for corner in 0..8 {
                let c = Vector3::new(
                    if corner & 1 == 0 { -half.x } else { half.x },
                    if corner & 2 == 0 { -half.y } else { half.y },
                    if corner & 4 == 0 { -half.z } else { half.z },
                );
                if pose.apply(&c).z < 1.0 {
                    return Err(Error::Degenerate(format!(
                        "body {b} comes within 1 m of the camera plane"
                    )));
                }
            }
        }
    }
    Ok(bodies)
}

fn render(bodies: &[Body], spec: &SceneSpec, frame: usize) -> Image<f64> {
    let (w, h, s) = (spec.width, spec.height, spec.supersample);
    let (cx, cy) = spec.principal_point();
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let mut acc = 0.0;
                    for sy in 0..s {
                        for sx in 0..s {
                            let px = x as f64 + (sx as f64 + 0.5) / s as f64 - 0.5;
                            let py = y as f64 + (sy as f64 + 0.5) / s as f64 - 0.5;
                            let ray = Vector3::new((px - cx) / spec.focal, (py - cy) / spec.focal, 1.0);
                            acc += cast(bodies, frame, &ray)
                                .map_or(0.5, |hit| texture(hit.surface, hit.uv, hit.cell));
                        }
                    }
                    acc / (s * s) as f64
                })
                .collect()
        })
        .collect();
    Image::from_fn(w, h, |x, y| rows[y][x])
}

/// Renders a random scene and its ground truth. Fails if a body would come
/// too close to the camera or is not visible in the first frame.
pub fn make_synthetic_scene(seed: u64, spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let bodies = build_bodies(seed, spec)?;
    let (w, h) = (spec.width, spec.height);
    let (cx, cy) = spec.principal_point();
    let f = spec.focal;
    let (image1, image2) = rayon::join(|| render(&bodies, spec, 0), || render(&bodies, spec, 1));

    type Truth = (u32, Option<[f64; 2]>, bool);
    let truth: Vec<Truth> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let ray = Vector3::new((x - cx) / f, (y - cy) / f, 1.0);
            let Some(hit) = cast(&bodies, 0, &ray) else {
                return (0, None, false);
            };
            let label = hit.body as u32;
            let x2 = bodies[hit.body].poses[1].apply(&hit.point);
            if x2.z < 0.05 {
                return (label, None, false);
            }
            let q = [f * x2.x / x2.z + cx, f * x2.y / x2.z + cy];
            let flow = [q[0] - x, q[1] - y];
            // reprojection of an unmoved border pixel may round just outside
            let tol = 1e-9;
            let inside = q[0] >= -tol
                && q[1] >= -tol
                && q[0] <= (w - 1) as f64 + tol
                && q[1] <= (h - 1) as f64 + tol;
            let visible = inside
                && cast(&bodies, 1, &Vector3::new((q[0] - cx) / f, (q[1] - cy) / f, 1.0))
                    .is_some_and(|h2| h2.body == hit.body && (h2.depth - x2.z).abs() <= 1e-6 * x2.z.max(1.0));
            (label, Some(flow), visible)
        })
        .collect();

    let mut flow = FlowField::new(w, h);
    let mut raw = vec![0u32; w * h];
    let mut noc = Mask::filled(w, h, false);
    for (i, (label, fl, visible)) in truth.iter().enumerate() {
        raw[i] = *label;
        if let Some([u, v]) = fl {
            flow.set(i % w, i / w, *u, *v);
        }
        noc.set(i % w, i / w, *visible);
    }
    for k in 1..bodies.len() as u32 {
        if !raw.contains(&k) {
            return Err(Error::Degenerate(format!("body {k} is not visible")));
        }
    }
    let instances = InstanceMap::from_raw(w, h, &raw)?;
    let k = spec.intrinsics();
    Ok(SyntheticScene {
        spec: spec.clone(),
        seed,
        image1,
        image2,
        flow,
        noc,
        instances,
        bodies: bodies.iter().map(|b| relative_motion(b, &k)).collect(),
    })
}

/// Metadata written next to the rasters of a bundle.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct BundleMeta {
    seed: u64,
    spec: SceneSpec,
    bodies: Vec<BodyMotion>,
}

impl SyntheticScene {
    /// Ground-truth correspondences of one body, every `step` pixels,
    /// optionally restricted to non-occluded pixels.
    pub fn body_matches(&self, label: u32, step: usize, noc_only: bool) -> Vec<Match> {
        let (w, h) = (self.flow.width(), self.flow.height());
        let step = step.max(1);
        let mut out = Vec::new();
        for y in (0..h).step_by(step) {
            for x in (0..w).step_by(step) {
                if self.instances.label(x, y) != label || (noc_only && !self.noc.get(x, y)) {
                    continue;
                }
                if let Some((u, v)) = self.flow.get(x, y) {
                    let p = [x as f64, y as f64];
                    out.push(Match::new(p, [p[0] + u, p[1] + v], 0.0));
                }
            }
        }
        out
    }

    /// Ground truth restricted to non-occluded pixels.
    pub fn noc_flow(&self) -> FlowField<f64> {
        let mut out = self.flow.clone();
        for y in 0..out.height() {
            for x in 0..out.width() {
                if !self.noc.get(x, y) {
                    out.invalidate(x, y);
                }
            }
        }
        out
    }

    /// Writes `image1.png`, `image2.png` (16-bit), `flow.png` (KITTI
    /// encoding), `noc.png`, `instances.png` and `scene.json`.
    pub fn write_bundle(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        save_gray16(&self.image1, dir.join("image1.png"))?;
        save_gray16(&self.image2, dir.join("image2.png"))?;
        write_flow_png(&self.flow, dir.join("flow.png"))?;
        save_mask(&self.noc, dir.join("noc.png"))?;
        save_instance_map(&self.instances, dir.join("instances.png"))?;
        let meta = BundleMeta {
            seed: self.seed,
            spec: self.spec.clone(),
            bodies: self.bodies.clone(),
        };
        let path = dir.join("scene.json");
        let text = serde_json::to_string_pretty(&meta).map_err(|e| crate::imgproc::codec_err(&path, e))?;
        std::fs::write(&path, text).map_err(|source| Error::Io { path, source })
    }
}

/// Rasters of a frame pair with ground truth, as read back from disk.
#[derive(Clone, Debug)]
pub struct SceneBundle {
    pub image1: Image<f64>,
    pub image2: Image<f64>,
    pub flow: FlowField<f64>,
    pub noc: Mask,
    pub instances: InstanceMap,
}

/// Reads a directory written by [`SyntheticScene::write_bundle`]. A missing
/// `noc.png` means every pixel with ground truth counts as non-occluded.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<SceneBundle> {
    let dir = dir.as_ref();
    let image1 = load_image(dir.join("image1.png"))?;
    let image2 = load_image(dir.join("image2.png"))?;
    let flow: FlowField<f64> = read_flow_png(dir.join("flow.png"))?;
    let instances = load_instance_map(dir.join("instances.png"))?;
    let noc_path = dir.join("noc.png");
    let noc = if noc_path.exists() {
        load_mask(noc_path)?
    } else {
        Mask::filled(flow.width(), flow.height(), true)
    };
    Ok(SceneBundle {
        image1,
        image2,
        flow,
        noc,
        instances,
    })
}

impl From<SyntheticScene> for SceneBundle {
    fn from(s: SyntheticScene) -> Self {
        Self {
            image1: s.image1,
            image2: s.image2,
            flow: s.flow,
            noc: s.noc,
            instances: s.instances,
        }
    }
}
