//! Acceptance run: one line per criterion, then a single assertion over all
//! of them. Everything runs sequentially in one test so wall-clock budgets
//! are measured without interference from parallel test threads.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rigidflow::bgflow::{
    backward_omega, extrapolate_vz, omega_from_disparity, slanted_plane, superpixels, vz_disparity,
    BoundaryType, SlantedPlaneParams, SuperpixelGraph, SuperpixelParams, VzRatioField, OMEGA_MAX,
};
use rigidflow::costvol::{aggregate, build_cost_volume, Candidate, Match, SearchWindow, TopKCostVolume};
use rigidflow::epigeo::{eight_point, ransac_f, Epipole, RansacConfig};
use rigidflow::fgflow::{chain_energy, sgm_1d, SgmPenalties};
use rigidflow::imgproc::{read_flow_png, write_flow_png, FlowField, Image, InstanceMap, Mask};
use rigidflow::matchnet::{
    argmax_accuracy, batch_loss, batch_loss_and_grads, draw_examples, layers, make_target, match_score,
    save_checkpoint, softmax_xent_loss, train, Axis, FeatureMap, NetParams, NetSpec, Tensor3, TrainConfig,
    TrainingExample,
};
use rigidflow::pipeline::{
    evaluate_fl, make_synthetic_scene, run_with_net, train_matcher, MatcherTrainingConfig, PipelineConfig,
    SceneSpec,
};

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    passed: bool,
}

fn check(results: &mut Vec<Criterion>, name: &'static str, budget: Duration, f: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let (passed, detail) = match outcome {
        Ok(d) if elapsed <= budget => (true, d),
        Ok(d) => (false, format!("{d}; over the {:.0} s budget", budget.as_secs_f64())),
        Err(d) => (false, d),
    };
    let tag = if passed { "PASS" } else { "FAIL" };
    say(&format!("[{tag}] {name}: {detail} ({:.2} s)", elapsed.as_secs_f64()));
    results.push(Criterion { name, passed });
}

/// Writes past the test harness's output capture so the criterion lines
/// show up in a plain `cargo test` run.
fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- geometry

struct Rig {
    k: Matrix3<f64>,
    r: Matrix3<f64>,
    t: Vector3<f64>,
}

impl Rig {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let f = rng.gen_range(300.0..900.0);
        let k = Matrix3::new(f, 0.0, rng.gen_range(200.0..400.0), 0.0, f, rng.gen_range(100.0..200.0), 0.0, 0.0, 1.0);
        let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let r = Rotation3::from_scaled_axis(axis * 0.05).into_inner();
        let t = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.3..0.3), rng.gen_range(-1.0..1.0));
        Self { k, r, t }
    }

    fn project(&self, x: Vector3<f64>) -> [f64; 2] {
        let p = self.k * x;
        [p.x / p.z, p.y / p.z]
    }

    fn matches(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<Match> {
        (0..n)
            .map(|_| {
                let x = Vector3::new(rng.gen_range(-8.0..8.0), rng.gen_range(-4.0..4.0), rng.gen_range(6.0..40.0));
                Match::new(self.project(x), self.project(self.r * x + self.t), 1.0)
            })
            .collect()
    }
}

/// Distance of `q` to the line `F p`, computed from the raw matrix.
fn line_distance(f: &Matrix3<f64>, p: [f64; 2], q: [f64; 2]) -> f64 {
    let l = f * Vector3::new(p[0], p[1], 1.0);
    (l.x * q[0] + l.y * q[1] + l.z).abs() / l.x.hypot(l.y)
}

fn eight_point_exactness() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rig = Rig::random(&mut rng);
        let m = rig.matches(&mut rng, 100);
        let f = eight_point(&m).map_err(|e| format!("scene {seed}: {e}"))?;
        for x in m.iter().chain(&rig.matches(&mut rng, 50)) {
            let d = line_distance(f.matrix(), x.p, x.q);
            worst = worst.max(d);
            ensure(d < 1e-6, || format!("scene {seed}: residual {d:e} px"))?;
        }
    }
    Ok(format!("50 scenes, worst residual {worst:.2e} px"))
}

fn ransac_robustness() -> Outcome {
    let mut good = 0;
    let mut worst = 1.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let rig = Rig::random(&mut rng);
        let mut m = rig.matches(&mut rng, 70);
        for _ in 0..30 {
            let p = [rng.gen_range(0.0..640.0), rng.gen_range(0.0..360.0)];
            let q = [rng.gen_range(0.0..640.0), rng.gen_range(0.0..360.0)];
            m.push(Match::new(p, q, 1.0));
        }
        let cfg = RansacConfig { iterations: 2000, inlier_threshold: 1.0, seed };
        let res = ransac_f(&m, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        let recovered = res.inliers.iter().filter(|&&i| i < 70).count() as f64 / 70.0;
        worst = worst.min(recovered);
        if recovered >= 0.95 {
            good += 1;
        }
    }
    ensure(good >= 19, || format!("only {good}/20 runs recovered 95% of the inliers"))?;
    Ok(format!("{good}/20 runs >= 95% inliers, worst {:.1}%", 100.0 * worst))
}

// --------------------------------------------------------------------- SGM

/// Exhaustive minimum over every labelling, with its own energy function.
fn exhaustive_optimum(costs: &[Vec<i64>], p1: i64, p2: i64) -> i64 {
    let (n, l) = (costs.len(), costs[0].len());
    let energy = |labels: &[usize]| -> i64 {
        let mut e: i64 = labels.iter().enumerate().map(|(i, &d)| costs[i][d]).sum();
        for w in labels.windows(2) {
            e += match w[0].abs_diff(w[1]) {
                0 => 0,
                1 => p1,
                _ => p2,
            };
        }
        e
    };
    let mut labels = vec![0usize; n];
    let mut best = i64::MAX;
    loop {
        best = best.min(energy(&labels));
        let mut i = 0;
        while i < n {
            labels[i] += 1;
            if labels[i] < l {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

/// Plain Viterbi over absolute path energies; used where enumeration is too
/// large (`labels^length` above a few million).
fn viterbi_optimum(costs: &[Vec<i64>], p1: i64, p2: i64) -> i64 {
    let pair = |a: usize, b: usize| match a.abs_diff(b) {
        0 => 0,
        1 => p1,
        _ => p2,
    };
    let mut best = costs[0].clone();
    for c in &costs[1..] {
        best = (0..c.len())
            .map(|d| c[d] + (0..c.len()).map(|e| best[e] + pair(e, d)).min().unwrap())
            .collect();
    }
    *best.iter().min().unwrap()
}

fn sgm_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut enumerated = 0;
    for case in 0..200 {
        let n = rng.gen_range(1..=12usize);
        let l = rng.gen_range(1..=8usize);
        let costs: Vec<Vec<i64>> = (0..n).map(|_| (0..l).map(|_| rng.gen_range(0..100)).collect()).collect();
        let p1 = rng.gen_range(1..40);
        let p2 = p1 + rng.gen_range(1..80);
        let pen = SgmPenalties { p1, p2 };
        let labels = sgm_1d(&costs, &pen).map_err(|e| format!("case {case}: {e}"))?;
        let got = chain_energy(&costs, &labels, &pen);
        let want = if (l as f64).powi(n as i32) <= 2e6 {
            enumerated += 1;
            exhaustive_optimum(&costs, p1, p2)
        } else {
            viterbi_optimum(&costs, p1, p2)
        };
        ensure(got == want, || format!("case {case}: energy {got}, optimum {want}"))?;
    }
    Ok(format!("200 chains optimal ({enumerated} by enumeration, the rest by Viterbi)"))
}

// -------------------------------------------------------------- cost volume

fn random_features(rng: &mut ChaCha8Rng, w: usize, h: usize, dim: usize) -> FeatureMap<f64> {
    let data = (0..w * h * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureMap::new(w, h, dim, data).unwrap()
}

/// Every in-bounds displacement scored and fully sorted; the stable sort
/// keeps scanline order among equal scores.
fn exhaustive_top_k(f1: &FeatureMap<f64>, f2: &FeatureMap<f64>, window: SearchWindow, k: usize) -> Vec<Vec<(i32, i32, f64)>> {
    let (w, h) = (f1.width() as i32, f1.height() as i32);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let mut all = Vec::new();
            for dv in window.v_min..window.v_max {
                for du in window.u_min..window.u_max {
                    let (tx, ty) = (x + du, y + dv);
                    if tx < 0 || ty < 0 || tx >= w || ty >= h {
                        continue;
                    }
                    let s = match_score(f1.feature(x as usize, y as usize), f2.feature(tx as usize, ty as usize)).unwrap();
                    all.push((du, dv, s));
                }
            }
            all.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap());
            all.truncate(k);
            out.push(all);
        }
    }
    out
}

/// Repeated neighbourhood mean over a dense label array, divided by the
/// number of in-bounds neighbours.
fn box_mean(vals: &[Vec<f64>], w: usize, h: usize, iters: usize, r: usize) -> Vec<Vec<f64>> {
    let mut cur = vals.to_vec();
    for _ in 0..iters {
        let mut next = cur.clone();
        for y in 0..h {
            for x in 0..w {
                let ys = y.saturating_sub(r)..=(y + r).min(h - 1);
                let xs = x.saturating_sub(r)..=(x + r).min(w - 1);
                let n = (ys.clone().count() * xs.clone().count()) as f64;
                for s in 0..cur[0].len() {
                    let mut sum = 0.0;
                    for yy in ys.clone() {
                        for xx in xs.clone() {
                            sum += cur[yy * w + xx][s];
                        }
                    }
                    next[y * w + x][s] = sum / n;
                }
            }
        }
        cur = next;
    }
    cur
}

fn cost_volume_oracle() -> Outcome {
    let (w, h, dim) = (16, 16, 8);
    let window = SearchWindow::covering(w, h);
    let mut worst_agg = 0.0f64;
    for pair in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + pair);
        let f1 = random_features(&mut rng, w, h, dim);
        let f2 = random_features(&mut rng, w, h, dim);
        for k in [1, 3, 30] {
            let cv = build_cost_volume(&f1, &f2, window, k).map_err(|e| e.to_string())?;
            let got: Vec<Vec<(i32, i32, f64)>> =
                cv.lists().iter().map(|l| l.iter().map(|c| (c.du, c.dv, c.score)).collect()).collect();
            ensure(got == exhaustive_top_k(&f1, &f2, window, k), || format!("pair {pair}, K = {k}: lists differ"))?;
        }

        let labels: Vec<(i32, i32)> = window.iter().collect();
        let dense: Vec<Vec<f64>> = (0..w * h).map(|_| labels.iter().map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let lists = dense
            .iter()
            .map(|v| labels.iter().zip(v).map(|(&(du, dv), &score)| Candidate { du, dv, score }).collect())
            .collect();
        let cv = TopKCostVolume::from_lists(w, h, labels.len(), window, lists).map_err(|e| e.to_string())?;
        let (iters, size) = (2, 5);
        let agg = aggregate(&cv, iters, size).map_err(|e| e.to_string())?;
        let want = box_mean(&dense, w, h, iters, size / 2);
        for (i, list) in agg.lists().iter().enumerate() {
            ensure(list.len() == labels.len(), || format!("pair {pair}: pixel {i} lost labels"))?;
            for c in list {
                let e = (c.score - want[i][window.index(c.du, c.dv)]).abs();
                worst_agg = worst_agg.max(e);
                ensure(e < 1e-9, || format!("pair {pair}: aggregation error {e:e}"))?;
            }
        }
    }
    Ok(format!("20 pairs x K in {{1, 3, 30}} exact; worst aggregation error {worst_agg:.1e}"))
}

// ------------------------------------------------------------------ matcher

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-300)
}

fn numeric_grad(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-6;
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let fp = f(x);
            x[i] = orig - h;
            let fm = f(x);
            x[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor3<f64> {
    let mut t = Tensor3::zeros(c, h, w);
    t.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    t
}

fn weighted_sum(t: &Tensor3<f64>, r: &Tensor3<f64>) -> f64 {
    t.data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
}

fn conv_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ci, co) = (2, 3);
    let input = random_tensor(&mut rng, ci, 6, 7);
    let mut weight: Vec<f64> = (0..co * ci * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut bias: Vec<f64> = (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r = random_tensor(&mut rng, co, 4, 5);
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; co];
    let gin = layers::conv_backward(&input, &weight, &r, &mut gw, &mut gb, true).unwrap();
    let mut x = input.data.clone();
    let nx = numeric_grad(&mut x, |d| {
        let t = Tensor3 { data: d.to_vec(), ..input.clone() };
        weighted_sum(&layers::conv_forward(&t, &weight, &bias, co), &r)
    });
    let b0 = bias.clone();
    let nw = numeric_grad(&mut weight, |w| weighted_sum(&layers::conv_forward(&input, w, &b0, co), &r));
    let w0 = weight.clone();
    let nb = numeric_grad(&mut bias, |b| weighted_sum(&layers::conv_forward(&input, &w0, b, co), &r));
    rel_err(&gin.data, &nx).max(rel_err(&gw, &nw)).max(rel_err(&gb, &nb))
}

fn batch_norm_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 3;
    let batch = vec![random_tensor(&mut rng, c, 3, 4), random_tensor(&mut rng, c, 2, 5)];
    let mut gamma: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..1.5)).collect();
    let mut beta: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let rs = vec![random_tensor(&mut rng, c, 3, 4), random_tensor(&mut rng, c, 2, 5)];
    let eps = 1e-5;
    let loss = |b: &[Tensor3<f64>], g: &[f64], be: &[f64]| {
        let mut y = b.to_vec();
        layers::batch_norm_train(&mut y, g, be, eps);
        y.iter().zip(&rs).map(|(t, r)| weighted_sum(t, r)).sum::<f64>()
    };
    let mut y = batch.clone();
    let cache = layers::batch_norm_train(&mut y, &gamma, &beta, eps);
    let mut grads = rs.clone();
    let mut gg = vec![0.0; c];
    let mut gbeta = vec![0.0; c];
    layers::batch_norm_backward(&cache, &gamma, &mut grads, &mut gg, &mut gbeta);
    let split = batch[0].data.len();
    let mut x: Vec<f64> = batch.iter().flat_map(|t| t.data.clone()).collect();
    let nx = numeric_grad(&mut x, |d| {
        let mut b = batch.clone();
        b[0].data.copy_from_slice(&d[..split]);
        b[1].data.copy_from_slice(&d[split..]);
        loss(&b, &gamma, &beta)
    });
    let ax: Vec<f64> = grads.iter().flat_map(|t| t.data.clone()).collect();
    let b0 = beta.clone();
    let ng = numeric_grad(&mut gamma, |g| loss(&batch, g, &b0));
    let g0 = gamma.clone();
    let nb = numeric_grad(&mut beta, |be| loss(&batch, &g0, be));
    rel_err(&ax, &nx).max(rel_err(&gg, &ng)).max(rel_err(&gbeta, &nb))
}

fn relu_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input = random_tensor(&mut rng, 2, 4, 4);
    input.data.iter_mut().for_each(|v| {
        if v.abs() < 1e-3 {
            *v = 0.5
        }
    });
    let r = random_tensor(&mut rng, 2, 4, 4);
    let mut out = input.clone();
    layers::relu_forward(&mut out);
    let mut g = r.clone();
    layers::relu_backward(&out, &mut g);
    let mut x = input.data.clone();
    let n = numeric_grad(&mut x, |d| {
        let mut t = Tensor3 { data: d.to_vec(), ..input.clone() };
        layers::relu_forward(&mut t);
        weighted_sum(&t, &r)
    });
    rel_err(&g.data, &n)
}

fn softmax_xent_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dim, n) = (5, 9);
    let f: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..dim * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let target = make_target(n, rng.gen_range(0..n)).unwrap();
    let scores_of = |f: &[f64], g: &[f64]| -> Vec<f64> { (0..n).map(|j| (0..dim).map(|c| f[c] * g[c * n + j]).sum()).collect() };
    let scores = scores_of(&f, &g);
    let (_, ds) = softmax_xent_loss(&scores, &target).unwrap();
    let af: Vec<f64> = (0..dim).map(|c| (0..n).map(|j| ds[j] * g[c * n + j]).sum()).collect();
    let ag: Vec<f64> = (0..dim * n).map(|k| ds[k % n] * f[k / n]).collect();
    let mut fx = f.clone();
    let nf = numeric_grad(&mut fx, |x| softmax_xent_loss(&scores_of(x, &g), &target).unwrap().0);
    let mut gx = g.clone();
    let ng = numeric_grad(&mut gx, |x| softmax_xent_loss(&scores_of(&f, x), &target).unwrap().0);
    let mut sx = scores.clone();
    let ns = numeric_grad(&mut sx, |s| softmax_xent_loss(s, &target).unwrap().0);
    rel_err(&af, &nf).max(rel_err(&ag, &ng)).max(rel_err(&ds, &ns))
}

fn random_examples(rng: &mut ChaCha8Rng, count: usize, range: usize) -> Vec<TrainingExample<f64>> {
    (0..count)
        .map(|k| {
            let axis = if k % 2 == 0 { Axis::Horizontal } else { Axis::Vertical };
            let (h, w) = match axis {
                Axis::Horizontal => (5, 5 + range),
                Axis::Vertical => (5 + range, 5),
            };
            let mut anchor = Tensor3::zeros(1, 5, 5);
            anchor.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
            let mut candidates = Tensor3::zeros(1, h, w);
            candidates.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
            TrainingExample { anchor, candidates, axis, gt_index: rng.gen_range(0..=range) }
        })
        .collect()
}

fn tiny_net_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = NetParams::<f64>::init(NetSpec::with_filters(vec![8, 8]), &mut rng).unwrap();
    let examples = random_examples(&mut rng, 3, 6);
    let refs: Vec<&TrainingExample<f64>> = examples.iter().collect();
    let res = batch_loss_and_grads(&params, &refs).unwrap();
    let analytic: Vec<f64> = res.grads.iter().flat_map(|g| g.tensors().into_iter().flat_map(|t| t.clone())).collect();
    let mut flat: Vec<f64> =
        params.layers.iter().flat_map(|l| l.trainable().into_iter().flat_map(|t| t.clone())).collect();
    let mut probe = params.clone();
    let numeric = numeric_grad(&mut flat, |x| {
        let mut k = 0;
        for l in &mut probe.layers {
            for t in l.trainable_mut() {
                for v in t.iter_mut() {
                    *v = x[k];
                    k += 1;
                }
            }
        }
        batch_loss(&probe, &examples).unwrap()
    });
    rel_err(&analytic, &numeric)
}

/// Worst relative gradient error for one seed.
type GradCheck = fn(u64) -> f64;

fn gradient_checks() -> Outcome {
    let checks: [(&str, GradCheck); 5] = [
        ("conv", conv_check),
        ("batch norm", batch_norm_check),
        ("relu", relu_check),
        ("softmax cross-entropy", softmax_xent_check),
        ("2-layer net", tiny_net_check),
    ];
    let mut worst = Vec::new();
    for (name, f) in checks {
        let mut w = 0.0f64;
        for seed in 0..10 {
            let e = f(1000 + seed);
            ensure(e < 1e-4, || format!("{name}, seed {seed}: relative error {e:e}"))?;
            w = w.max(e);
        }
        worst.push(format!("{name} {w:.1e}"));
    }
    Ok(format!("10 seeds, worst relative errors: {}", worst.join(", ")))
}

/// Image pair related by an integer translation of blurred hashed noise.
fn shifted_pair(seed: u64, w: usize, h: usize, dx: i64, dy: i64) -> (Image<f32>, Image<f32>, FlowField<f32>) {
    let noise = |x: i64, y: i64| {
        let mut z = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
            ^ seed.wrapping_mul(0x1656_67B1_9E37_79F9);
        z ^= z >> 29;
        z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z ^= z >> 32;
        (z % 10_000) as f32 / 10_000.0
    };
    let tex = |x: i64, y: i64| {
        let mut acc = 0.0;
        for (oy, wy) in [(-1, 1.0), (0, 2.0), (1, 1.0)] {
            for (ox, wx) in [(-1, 1.0), (0, 2.0), (1, 1.0)] {
                acc += wx * wy * noise(x + ox, y + oy);
            }
        }
        acc / 16.0
    };
    let img1 = Image::from_fn(w, h, |x, y| tex(x as i64, y as i64));
    let img2 = Image::from_fn(w, h, |x, y| tex(x as i64 - dx, y as i64 - dy));
    (img1, img2, FlowField::constant(w, h, dx as f32, dy as f32))
}

fn shifted_patch_examples(seed: u64, count: usize) -> Vec<TrainingExample<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut k = 0;
    while out.len() < count {
        let (dx, dy) = (rng.gen_range(-4..=4), rng.gen_range(-4..=4));
        let (a, b, f) = shifted_pair(seed * 1000 + k, 48, 48, dx, dy);
        k += 1;
        out.extend(draw_examples(&a, &b, &f, 10, 10, 5, 1000, &mut rng));
    }
    out.truncate(count);
    out
}

fn toy_training() -> Outcome {
    let examples = shifted_patch_examples(7, 2000);
    let mut spec = NetSpec::with_filters(vec![8, 8]);
    spec.final_relu = false;
    let cfg = TrainConfig {
        iterations: 3000,
        batch_size: 32,
        learning_rate: 0.01,
        lr_milestones: vec![2000],
        seed: 1,
        ..TrainConfig::default()
    };
    let net = train(&examples, spec, &cfg).map_err(|e| e.to_string())?;
    let acc = argmax_accuracy(&net, &examples).map_err(|e| e.to_string())?;
    let held_out = argmax_accuracy(&net, &shifted_patch_examples(8, 500)).map_err(|e| e.to_string())?;
    ensure(acc >= 0.9, || format!("accuracy {:.1}% after {} iterations", 100.0 * acc, cfg.iterations))?;
    Ok(format!(
        "2000 examples, {} iterations: accuracy {:.1}% (held out {:.1}%)",
        cfg.iterations,
        100.0 * acc,
        100.0 * held_out
    ))
}

// ---------------------------------------------------------------- vz-ratio

fn vz_algebra() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..100 {
        let delta = 0.5 + i as f64 * 7.3;
        for j in 0..100 {
            let omega = -0.9 + 1.85 * j as f64 / 99.0;
            let d = vz_disparity(delta, omega).map_err(|e| e.to_string())?;
            // d = delta * omega / (1 - omega) and omega = d / (delta + d)
            let closed = delta * omega / (1.0 - omega);
            let e1 = (d - closed).abs() / closed.abs().max(1.0);
            let e2 = (omega_from_disparity(delta, d).map_err(|e| e.to_string())? - omega).abs();
            let b = backward_omega(omega);
            let e3 = (b + omega / (1.0 - omega)).abs().max((backward_omega(b) - omega).abs());
            let e = e1.max(e2).max(e3);
            worst = worst.max(e);
            ensure(e < 1e-12, || format!("delta {delta}, omega {omega}: error {e:e}"))?;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_fill = 0.0f64;
    let mut filled_count = 0;
    for case in 0..20 {
        let (w, h) = (40, 30);
        let epi = Epipole::Finite([rng.gen_range(-20.0..60.0), rng.gen_range(-20.0..50.0)]);
        let (alpha, beta) = (rng.gen_range(-0.002..0.002), rng.gen_range(-0.1..0.3));
        let (hx, hy) = (rng.gen_range(0..30usize), rng.gen_range(0..20usize));
        let line = |x: usize, y: usize| {
            let p = [x as f64, y as f64];
            let Epipole::Finite(o) = epi else { unreachable!() };
            alpha * (p[0] - o[0]).hypot(p[1] - o[1]) + beta
        };
        let field = VzRatioField::from_fn(w, h, |x, y| {
            let hole = (hx..hx + 8).contains(&x) && (hy..hy + 8).contains(&y);
            (!hole).then(|| line(x, y))
        })
        .map_err(|e| e.to_string())?;
        let filled = extrapolate_vz(&field, &epi, &InstanceMap::background(w, h)).map_err(|e| e.to_string())?;
        for y in 0..h {
            for x in 0..w {
                if let Some(v) = filled.get(x, y) {
                    if !field.is_valid(x, y) {
                        filled_count += 1;
                    }
                    let e = (v - line(x, y).min(OMEGA_MAX)).abs();
                    worst_fill = worst_fill.max(e);
                    ensure(e < 1e-9, || format!("case {case}: ({x},{y}) off by {e:e}"))?;
                }
            }
        }
    }
    ensure(filled_count > 0, || "no hole pixel was filled".into())?;
    Ok(format!(
        "10^4 grid worst {worst:.1e}; {filled_count} extrapolated pixels worst {worst_fill:.1e}"
    ))
}

// ----------------------------------------------------------- slanted plane

fn plane_instance(seed: u64) -> (VzRatioField, SuperpixelGraph) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (48, 32);
    let guide = Image::from_fn(w, h, |x, y| {
        let s = if x * 3 + y * 2 > 90 { 0.7 } else { 0.3 };
        s + 0.05 * ((x * 7 + y * 13) % 5) as f64
    });
    let graph = superpixels(&guide, &SuperpixelParams { count: 24, ..Default::default() }).unwrap();
    let planes: [(f64, f64, f64); 2] = [
        (rng.gen_range(-0.003..0.003), rng.gen_range(-0.003..0.003), rng.gen_range(0.0..0.2)),
        (rng.gen_range(-0.003..0.003), rng.gen_range(-0.003..0.003), rng.gen_range(0.0..0.2)),
    ];
    let field = VzRatioField::from_fn(w, h, |x, y| {
        if rng.gen_bool(0.2) {
            return None;
        }
        if rng.gen_bool(0.05) {
            return Some(rng.gen_range(0.0..0.4));
        }
        let (a, b, c) = planes[usize::from(x * 3 + y * 2 > 90)];
        Some(a * x as f64 + b * y as f64 + c + rng.gen_range(-0.004..0.004))
    })
    .unwrap();
    (field, graph)
}

fn slanted_plane_descent() -> Outcome {
    let params = SlantedPlaneParams::default();
    let mut sweeps = 0;
    for seed in 0..20 {
        let (field, graph) = plane_instance(seed);
        let res = slanted_plane(&field, &graph, &params, 0.002).map_err(|e| e.to_string())?;
        sweeps += res.energies.len() - 1;
        for e in res.energies.windows(2) {
            ensure(e[1] <= e[0], || format!("instance {seed}: energy rose {} -> {}", e[0], e[1]))?;
        }
    }

    let (w, h) = (24, 16);
    let l: Vec<u32> = (0..w * h).map(|i| u32::from(i % w >= w / 2)).collect();
    let halves = SuperpixelGraph::from_labels(w, h, &l).map_err(|e| e.to_string())?;
    let plane = VzRatioField::from_fn(w, h, |x, y| Some(0.1 + 0.002 * x as f64 - 0.001 * y as f64)).unwrap();
    let step = VzRatioField::from_fn(w, h, |x, _| Some(if x < w / 2 { 0.05 } else { 0.25 })).unwrap();
    for (name, field, want) in [("plane", plane, BoundaryType::Coplanar), ("step", step, BoundaryType::Occlusion)] {
        let res = slanted_plane(&field, &halves, &params, 0.002).map_err(|e| e.to_string())?;
        let kind = res.graph.edge(0, 1).map(|e| e.kind);
        ensure(kind == Some(want), || format!("{name}: boundary {kind:?}, expected {want:?}"))?;
    }
    Ok(format!("20 instances non-increasing over {sweeps} sweeps; coplanar and occlusion oracles classified"))
}

// --------------------------------------------------------------- pipeline

/// Small matcher trained on scenes whose seeds (1000 and up) are disjoint
/// from the evaluated ones.
fn toy_matcher() -> NetParams<f32> {
    let cfg = MatcherTrainingConfig {
        scenes: 4,
        examples_per_scene: 500,
        range: 24,
        filters: vec![16, 16, 16],
        train: TrainConfig {
            iterations: 600,
            batch_size: 32,
            learning_rate: 0.005,
            lr_milestones: vec![400],
            ..Default::default()
        },
        ..Default::default()
    };
    train_matcher::<f32>(&cfg).unwrap().0
}

fn scene_config() -> PipelineConfig {
    PipelineConfig {
        window_u_min: -32,
        window_u_max: 33,
        window_v_min: -16,
        window_v_max: 17,
        ..Default::default()
    }
}

fn end_to_end(net: &NetParams<f32>) -> Outcome {
    let spec = SceneSpec::default();
    let cfg = scene_config();
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    let (mut worst_all, mut worst_fg) = (0.0f64, 0.0f64);
    for seed in 0..10 {
        let s = make_synthetic_scene(seed, &spec).map_err(|e| e.to_string())?;
        let out = run_with_net(&s.image1, &s.image2, &s.instances, net, &cfg).map_err(|e| format!("scene {seed}: {e}"))?;
        let r = evaluate_fl(&out.flow, &s.flow, &s.noc, &s.instances).map_err(|e| e.to_string())?;
        let (all, fg) = (r.noc.all.percent(), r.noc.fg.percent());
        worst_all = worst_all.max(all);
        worst_fg = worst_fg.max(fg);
        lines.push(format!("    scene {seed}: Fl-all {all:.2}%  Fl-fg {fg:.2}%  (occluded incl.: {:.2}% / {:.2}%)", r.all.all.percent(), r.all.fg.percent()));
        if all >= 5.0 || fg >= 8.0 {
            failures.push(seed);
        }
    }
    say(&lines.join("\n"));
    ensure(failures.is_empty(), || format!("scenes {failures:?} over the limits"))?;
    Ok(format!("10 scenes, worst non-occluded Fl-all {worst_all:.2}% (< 5), Fl-fg {worst_fg:.2}% (< 8)"))
}

fn format_fidelity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("flow.png");
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for field in 0..1000 {
        let (w, h) = (rng.gen_range(1..24usize), rng.gen_range(1..24usize));
        let mut f = FlowField::<f64>::new(w, h);
        for i in 0..w * h {
            if rng.gen_bool(0.9) {
                let u = (rng.gen_range(0..=65535u32) as f64 - 32768.0) / 64.0;
                let v = (rng.gen_range(0..=65535u32) as f64 - 32768.0) / 64.0;
                f.set_index(i, u, v);
            }
        }
        write_flow_png(&f, &path).map_err(|e| e.to_string())?;
        let back: FlowField<f64> = read_flow_png(&path).map_err(|e| e.to_string())?;
        for i in 0..w * h {
            let (a, b) = (f.get_index(i), back.get_index(i));
            let same = match (a, b) {
                (Some((u0, v0)), Some((u1, v1))) => u0.to_bits() == u1.to_bits() && v0.to_bits() == v1.to_bits(),
                (None, None) => true,
                _ => false,
            };
            ensure(same, || format!("field {field}, pixel {i}: {a:?} -> {b:?}"))?;
        }
    }

    let single = |est: f64, gt: f64| {
        let r = evaluate_fl(
            &FlowField::constant(1, 1, est, 0.0),
            &FlowField::constant(1, 1, gt, 0.0),
            &Mask::filled(1, 1, true),
            &InstanceMap::background(1, 1),
        )
        .unwrap();
        r.all.all.outliers
    };
    // 2.9 px on 10 px, 4 px on 100 px, 6 px on 100 px
    let cases = [(12.9, 10.0, 0), (104.0, 100.0, 0), (106.0, 100.0, 1)];
    for (est, gt, want) in cases {
        let got = single(est, gt);
        ensure(got == want, || format!("estimate {est} vs {gt}: {got} outliers, expected {want}"))?;
    }
    Ok("1000 random fields bit-exact; 3 threshold cases reproduced".into())
}

fn run_estimate(bin: &str, dir: &Path, threads: usize, out: &str) -> Result<Vec<u8>, String> {
    let status = Command::new(bin)
        .args(["--threads", &threads.to_string(), "estimate"])
        .arg("--image1")
        .arg(dir.join("scene/image1.png"))
        .arg("--image2")
        .arg(dir.join("scene/image2.png"))
        .arg("--instances")
        .arg(dir.join("scene/instances.png"))
        .arg("--config")
        .arg(dir.join("flow.toml"))
        .arg("--out")
        .arg(dir.join(out))
        .env_remove("FLOW_CONFIG")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || {
        format!("estimate with {threads} threads failed: {}", String::from_utf8_lossy(&status.stderr))
    })?;
    std::fs::read(dir.join(out)).map_err(|e| e.to_string())
}

fn determinism(net: &NetParams<f32>) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scene = make_synthetic_scene(3, &SceneSpec::default()).map_err(|e| e.to_string())?;
    scene.write_bundle(dir.path().join("scene")).map_err(|e| e.to_string())?;
    save_checkpoint(net, dir.path().join("matcher.json")).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig { checkpoint: Some("matcher.json".into()), ..scene_config() };
    std::fs::write(dir.path().join("flow.toml"), cfg.to_toml_string().map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_flow");
    let one = run_estimate(bin, dir.path(), 1, "one.png")?;
    let four = run_estimate(bin, dir.path(), 4, "four.png")?;
    ensure(one == four, || "outputs with 1 and 4 threads differ".into())?;
    Ok(format!("1 and 4 threads give identical {}-byte PNGs", one.len()))
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    let secs = Duration::from_secs;
    check(&mut results, "eight-point exactness", secs(1), eight_point_exactness);
    check(&mut results, "RANSAC robustness", secs(5), ransac_robustness);
    check(&mut results, "SGM optimality", secs(5), sgm_optimality);
    check(&mut results, "cost-volume oracle", secs(10), cost_volume_oracle);
    check(&mut results, "matcher gradient check", secs(30), gradient_checks);
    check(&mut results, "toy training", secs(600), toy_training);
    check(&mut results, "vz-ratio algebra", secs(1), vz_algebra);
    check(&mut results, "slanted-plane descent", secs(30), slanted_plane_descent);

    let suite = Instant::now();
    let net = toy_matcher();
    say(&format!("    toy matcher trained in {:.1} s", suite.elapsed().as_secs_f64()));
    let remaining = secs(1800).saturating_sub(suite.elapsed());
    check(&mut results, "end-to-end synthetic", remaining, || end_to_end(&net));
    check(&mut results, "format fidelity", secs(60), format_fidelity);
    check(&mut results, "determinism", secs(600), || determinism(&net));

    let failed: Vec<&str> = results.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    say(&format!("{}/{} criteria passed", results.len() - failed.len(), results.len()));
    assert!(failed.is_empty(), "failed: {failed:?}");
}
