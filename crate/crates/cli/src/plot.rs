//! SVG rendering of entropy surfaces, covariance ellipses and eigenvalue
//! histograms.

use std::fmt::Write as _;

use mmc_core::linalg::symmetric_eigen;
use mmc_core::model::{entropy, ClassState, Model};
use mmc_core::tasks::{Bounds, Task};
use mmc_core::Tensor;
use rand::Rng;

use crate::error::{CliError, Result};

const SIZE: f64 = 600.0;
const MARGIN: f64 = 40.0;
const CLASS_COLORS: [&str; 10] = [
    "#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00", "#a65628", "#f781bf", "#999999", "#66c2a5", "#ffd92f",
];

/// Maps data coordinates onto the drawing area (y grows upwards).
#[derive(Clone, Copy, Debug)]
struct Frame {
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.lo[0]) / (self.hi[0] - self.lo[0]) * (SIZE - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        SIZE - MARGIN - (y - self.lo[1]) / (self.hi[1] - self.lo[1]) * (SIZE - 2.0 * MARGIN)
    }

    fn sx(&self, dx: f64) -> f64 {
        dx / (self.hi[0] - self.lo[0]) * (SIZE - 2.0 * MARGIN)
    }

    fn sy(&self, dy: f64) -> f64 {
        dy / (self.hi[1] - self.lo[1]) * (SIZE - 2.0 * MARGIN)
    }
}

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" font-size="16" text-anchor="middle">{title}</text>"#, SIZE / 2.0);
}

/// Piecewise-linear dark-blue → teal → yellow ramp over `t ∈ [0, 1]`.
pub fn color_ramp(t: f64) -> String {
    const STOPS: [[f64; 3]; 3] = [[68.0, 1.0, 84.0], [33.0, 145.0, 140.0], [253.0, 231.0, 37.0]];
    let t = t.clamp(0.0, 1.0) * 2.0;
    let i = (t.floor() as usize).min(1);
    let f = t - i as f64;
    let c: Vec<u8> = (0..3).map(|k| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Per-pixel predictive entropy on a `resolution²` grid over `bounds`,
/// row-major with the second coordinate outermost.
pub fn entropy_surface(
    model: &mut Model,
    states: &[ClassState],
    bounds: &Bounds,
    resolution: usize,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let points = bounds.grid(resolution);
    let features = model.features(&points)?;
    features
        .iter()
        .map(|z| Ok(entropy(&model.predictive(states, z, samples, rng)?)))
        .collect()
}

/// Entropy heatmap with support (filled) and query (hollow) points on top.
/// The color scale spans `[0, log C]`.
pub fn render_entropy(task: &Task, bounds: &Bounds, resolution: usize, values: &[f64]) -> String {
    let frame = Frame { lo: [bounds.lo[0], bounds.lo[1]], hi: [bounds.hi[0], bounds.hi[1]] };
    let max = (task.ways as f64).ln();
    let mut out = String::new();
    svg_open(&mut out, &format!("Predictive entropy (0 to log {} nats)", task.ways));
    let cell_w = frame.sx((bounds.hi[0] - bounds.lo[0]) / (resolution - 1) as f64);
    let cell_h = frame.sy((bounds.hi[1] - bounds.lo[1]) / (resolution - 1) as f64);
    for (k, p) in bounds.grid(resolution).iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            frame.px(p[0]) - cell_w / 2.0,
            frame.py(p[1]) - cell_h / 2.0,
            cell_w + 0.05,
            cell_h + 0.05,
            color_ramp(values[k] / max)
        );
    }
    for s in &task.query {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="none" stroke="{}" stroke-width="0.8"/>"#,
            frame.px(s.x[0]),
            frame.py(s.x[1]),
            CLASS_COLORS[s.label % CLASS_COLORS.len()]
        );
    }
    for s in &task.support {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4.5" fill="{}" stroke="black" stroke-width="1"/>"#,
            frame.px(s.x[0]),
            frame.py(s.x[1]),
            CLASS_COLORS[s.label % CLASS_COLORS.len()]
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Semi-axes (1-σ) and orientation of a 2×2 covariance's contour ellipse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub major: f64,
    pub minor: f64,
    /// Angle of the major axis in radians.
    pub angle: f64,
}

pub fn ellipse_axes(cov: [[f64; 2]; 2]) -> Ellipse {
    let (a, b, d) = (cov[0][0], 0.5 * (cov[0][1] + cov[1][0]), cov[1][1]);
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d).powi(2) + b * b).sqrt();
    Ellipse {
        major: (mid + rad).max(0.0).sqrt(),
        minor: (mid - rad).max(0.0).sqrt(),
        angle: 0.5 * (2.0 * b).atan2(a - d),
    }
}

/// Dense `Σ_c = precision⁻¹` via the precision's eigendecomposition.
pub fn covariance_of(state: &ClassState) -> Result<Tensor> {
    let eig = symmetric_eigen(&state.precision)?;
    let inv: Vec<f64> = eig.values.iter().map(|v| 1.0 / v).collect();
    Ok(eig.recompose(&inv))
}

/// Top-2 eigenvectors of the mean class covariance: the common viewing plane.
fn viewing_plane(covs: &[Tensor]) -> Result<[Vec<f64>; 2]> {
    let d = covs[0].rows();
    let mut mean = Tensor::zeros(&[d, d]);
    for c in covs {
        for (m, v) in mean.data_mut().iter_mut().zip(c.data()) {
            *m += v / covs.len() as f64;
        }
    }
    let eig = symmetric_eigen(&mean)?;
    let col = |k: usize| (0..d).map(|i| if k < d { eig.vectors.at(i, k) } else { 0.0 }).collect::<Vec<f64>>();
    Ok([col(0), col(1)])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// 1-σ and 2-σ ellipses of every class covariance, projected onto the top-2
/// eigen-directions of the mean covariance, with projected support features.
pub fn render_covariances(states: &[ClassState], support: &[(Vec<f64>, usize)]) -> Result<String> {
    if states.is_empty() {
        return Err(CliError::Config("no classes to plot".into()));
    }
    let covs = states.iter().map(covariance_of).collect::<Result<Vec<_>>>()?;
    let [u, v] = viewing_plane(&covs)?;
    let project = |x: &[f64]| [dot(x, &u), dot(x, &v)];
    let mut ellipses = Vec::new();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    let mut grow = |p: [f64; 2], r: f64| {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k] - r);
            hi[k] = hi[k].max(p[k] + r);
        }
    };
    for (state, cov) in states.iter().zip(&covs) {
        let cu = cov.matmul(&Tensor::matrix(u.len(), 1, u.clone())?)?;
        let cv = cov.matmul(&Tensor::matrix(v.len(), 1, v.clone())?)?;
        let c2 = [[dot(&u, cu.data()), dot(&u, cv.data())], [dot(&v, cu.data()), dot(&v, cv.data())]];
        let e = ellipse_axes(c2);
        let center = project(&state.prototype);
        grow(center, 2.0 * e.major);
        ellipses.push((center, e));
    }
    let points: Vec<([f64; 2], usize)> = support.iter().map(|(z, y)| (project(z), *y)).collect();
    for (p, _) in &points {
        grow(*p, 0.0);
    }
    // Equal scales on both axes keep circles circular.
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9) * 1.05;
    let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    let frame = Frame { lo: [mid[0] - span / 2.0, mid[1] - span / 2.0], hi: [mid[0] + span / 2.0, mid[1] + span / 2.0] };

    let mut out = String::new();
    svg_open(&mut out, "Class covariances (1σ and 2σ), top-2 eigen-directions");
    for (class, (c, e)) in ellipses.iter().enumerate() {
        let color = CLASS_COLORS[class % CLASS_COLORS.len()];
        for (k, dash) in [(1.0, ""), (2.0, r#" stroke-dasharray="6 4""#)] {
            let _ = writeln!(
                out,
                r#"<ellipse cx="{:.3}" cy="{:.3}" rx="{:.3}" ry="{:.3}" transform="rotate({:.4} {:.3} {:.3})" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
                frame.px(c[0]),
                frame.py(c[1]),
                frame.sx(k * e.major),
                frame.sy(k * e.minor),
                -e.angle.to_degrees(),
                frame.px(c[0]),
                frame.py(c[1]),
            );
        }
        let _ = writeln!(
            out,
            r#"<path d="M {:.2} {:.2} l 6 6 m 0 -6 l -6 6" stroke="{color}" stroke-width="2" transform="translate(-3 -3)"/>"#,
            frame.px(c[0]),
            frame.py(c[1])
        );
    }
    for (p, y) in &points {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{}" fill-opacity="0.7"/>"#,
            frame.px(p[0]),
            frame.py(p[1]),
            CLASS_COLORS[y % CLASS_COLORS.len()]
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Counts of `log10(values)` in `bins` equal-width bins; returns `(lo, width, counts)`.
pub fn log_histogram(values: &[f64], bins: usize) -> (f64, f64, Vec<usize>) {
    let logs: Vec<f64> = values.iter().filter(|v| **v > 0.0).map(|v| v.log10()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if logs.is_empty() {
        return (0.0, 1.0, vec![0; bins]);
    }
    let width = ((hi - lo) / bins as f64).max(1e-6);
    let mut counts = vec![0; bins];
    for l in logs {
        counts[(((l - lo) / width) as usize).min(bins - 1)] += 1;
    }
    (lo, width, counts)
}

pub fn render_histogram(values: &[f64], bins: usize) -> String {
    let (lo, width, counts) = log_histogram(values, bins);
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let frame = Frame { lo: [lo, 0.0], hi: [lo + width * bins as f64, top] };
    let mut out = String::new();
    svg_open(&mut out, "Precision eigenvalues (log10)");
    for (k, c) in counts.iter().enumerate() {
        let x0 = lo + width * k as f64;
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#377eb8" stroke="white"/>"##,
            frame.px(x0),
            frame.py(*c as f64),
            frame.sx(width),
            frame.sy(*c as f64)
        );
    }
    for (x, anchor) in [(lo, "start"), (lo + width * bins as f64, "end")] {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="{anchor}">{x:.2}</text>"#,
            frame.px(x),
            SIZE - MARGIN + 16.0
        );
    }
    out.push_str("</svg>\n");
    out
}
