use rigidflow::imgproc::FlowField;

/// Hue segment lengths of the standard flow colour wheel (red, yellow,
/// green, cyan, blue, magenta).
const SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

fn colour_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::new();
    let ramps: [([f64; 3], [f64; 3]); 6] = [
        ([255.0, 0.0, 0.0], [0.0, 255.0, 0.0]),
        ([255.0, 255.0, 0.0], [-255.0, 0.0, 0.0]),
        ([0.0, 255.0, 0.0], [0.0, 0.0, 255.0]),
        ([0.0, 255.0, 255.0], [0.0, -255.0, 0.0]),
        ([0.0, 0.0, 255.0], [255.0, 0.0, 0.0]),
        ([255.0, 0.0, 255.0], [0.0, 0.0, -255.0]),
    ];
    for (n, (start, step)) in SEGMENTS.iter().zip(ramps) {
        for i in 0..*n {
            let t = i as f64 / *n as f64;
            wheel.push([start[0] + step[0] * t, start[1] + step[1] * t, start[2] + step[2] * t]);
        }
    }
    wheel
}

/// Colour-wheel rendering: hue is direction, saturation is magnitude
/// relative to `max_flow` (the largest valid magnitude if `None`). Invalid
/// pixels are black.
pub fn flow_to_rgb(flow: &FlowField<f64>, max_flow: Option<f64>) -> Vec<[u8; 3]> {
    let wheel = colour_wheel();
    let n = wheel.len() as f64;
    let max = max_flow.unwrap_or_else(|| {
        (0..flow.len())
            .filter_map(|i| flow.get_index(i))
            .map(|(u, v)| u.hypot(v))
            .fold(0.0, f64::max)
    });
    let max = if max > 0.0 { max } else { 1.0 };
    (0..flow.len())
        .map(|i| {
            let Some((u, v)) = flow.get_index(i) else {
                return [0, 0, 0];
            };
            let (u, v) = (u / max, v / max);
            let rad = u.hypot(v);
            let angle = (-v).atan2(-u) / std::f64::consts::PI;
            let fk = (angle + 1.0) / 2.0 * (n - 1.0);
            let k0 = fk.floor() as usize % wheel.len();
            let k1 = (k0 + 1) % wheel.len();
            let f = fk - fk.floor();
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let col = ((1.0 - f) * wheel[k0][c] + f * wheel[k1][c]) / 255.0;
                let col = if rad <= 1.0 {
                    1.0 - rad * (1.0 - col)
                } else {
                    col * 0.75
                };
                rgb[c] = (255.0 * col).round().clamp(0.0, 255.0) as u8;
            }
            rgb
        })
        .collect()
}

/// Log-scaled error bands: upper bound of the normalized error and colour.
const ERROR_BANDS: [(f64, [u8; 3]); 10] = [
    (0.0625, [49, 54, 149]),
    (0.125, [69, 117, 180]),
    (0.25, [116, 173, 209]),
    (0.5, [171, 217, 233]),
    (1.0, [224, 243, 248]),
    (2.0, [254, 224, 144]),
    (4.0, [253, 174, 97]),
    (8.0, [244, 109, 67]),
    (16.0, [215, 48, 39]),
    (f64::INFINITY, [165, 0, 38]),
];

/// Error map: the end-point error is divided by the outlier threshold at
/// that pixel, so blue is well inside and red is well beyond. Pixels
/// without ground truth are black.
pub fn error_to_rgb(estimate: &FlowField<f64>, truth: &FlowField<f64>) -> Vec<[u8; 3]> {
    use rigidflow::pipeline::{FL_ABS_THRESHOLD, FL_REL_THRESHOLD};
    (0..truth.len())
        .map(|i| {
            let Some((tu, tv)) = truth.get_index(i) else {
                return [0, 0, 0];
            };
            let Some((u, v)) = estimate.get_index(i) else {
                return ERROR_BANDS[9].1;
            };
            let threshold = FL_ABS_THRESHOLD.max(FL_REL_THRESHOLD * tu.hypot(tv));
            let e = (u - tu).hypot(v - tv) / threshold;
            ERROR_BANDS.iter().find(|(hi, _)| e < *hi).map_or(ERROR_BANDS[9].1, |b| b.1)
        })
        .collect()
}
