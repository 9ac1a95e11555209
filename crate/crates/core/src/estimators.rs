//! Length estimators, power-law fits and scaling collapse.
//!
//! Every function is pure; bootstrap resampling takes an explicit seed.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("lattice must be at least 8 sites in each direction, got {lx} x {ly}")]
    LatticeTooSmall { lx: usize, ly: usize },
    #[error("fields in an ensemble must share dimensions")]
    ShapeMismatch,
    #[error("empty input")]
    Empty,
    #[error("unresolvable: no ordering peak (S(q_op + q1) = {s1} >= S(q_op) = {s0})")]
    NoPeak { s0: f64, s1: f64 },
    #[error("unresolvable: correlation length {xi} exceeds L/4 = {limit}")]
    Saturated { xi: f64, limit: f64 },
    #[error("fit needs at least 6 points spanning one decade; got {points} points over {decades:.3} decades")]
    InsufficientData { points: usize, decades: f64 },
    #[error("non-positive value {value} at t = {t} inside the fit window")]
    NonPositive { t: f64, value: f64 },
    #[error("collapse needs at least 3 curves, got {0}")]
    TooFewCurves(usize),
    #[error("scaled ranges do not overlap")]
    NonOverlap,
    #[error("collapse is degenerate: {0}")]
    Degenerate(String),
}

/// Real scalar field on a periodic `lx x ly` grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub lx: usize,
    pub ly: usize,
    pub data: Vec<f64>,
}

impl Field {
    pub fn new(lx: usize, ly: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), lx * ly, "field size mismatch");
        Self { lx, ly, data }
    }

    pub fn from_spins(lx: usize, ly: usize, spins: &[i8]) -> Self {
        Self::new(lx, ly, spins.iter().map(|&s| s as f64).collect())
    }
}

/// Ordering channel of the second-moment estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// `q_op = 0`.
    Magnetization,
    /// `q_op = (pi, pi)`.
    Staggered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum XiMethod {
    /// `(1/q1) sqrt(S(q_op) / S(q_op + q1) - 1)`.
    #[default]
    SecondMoment,
    /// Whittle maximum-likelihood fit of `A / (1 + xi^2 qhat^2)` over `qhat < 4/xi`.
    OrnsteinZernike,
}

/// Ensemble-averaged `S(q) = |phi(q)|^2 / N` on the reciprocal grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureFactor {
    pub lx: usize,
    pub ly: usize,
    /// Row-major over `(qy, qx)` with `q = 2 pi n / L`.
    pub s: Vec<f64>,
    pub samples: usize,
    /// Per-sample `S(q_op)` and mean `S(q_op + q1)` values, kept for error estimates.
    peak: Vec<f64>,
    shell: Vec<f64>,
}

fn fft2_in_place(buf: &mut [Complex64], lx: usize, ly: usize, planner: &mut FftPlanner<f64>, inverse: bool) {
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(lx), planner.plan_fft_inverse(ly))
    } else {
        (planner.plan_fft_forward(lx), planner.plan_fft_forward(ly))
    };
    for chunk in buf.chunks_mut(lx) {
        row.process(chunk);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); ly];
    for x in 0..lx {
        for y in 0..ly {
            column[y] = buf[y * lx + x];
        }
        col.process(&mut column);
        for y in 0..ly {
            buf[y * lx + x] = column[y];
        }
    }
}

fn fft2(field: &Field, planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = field.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut buf, field.lx, field.ly, planner, false);
    buf
}

impl StructureFactor {
    pub fn from_fields(fields: &[Field], channel: Channel) -> Result<Self, EstimatorError> {
        let first = fields.first().ok_or(EstimatorError::Empty)?;
        let (lx, ly) = (first.lx, first.ly);
        if lx < 8 || ly < 8 {
            return Err(EstimatorError::LatticeTooSmall { lx, ly });
        }
        if fields.iter().any(|f| f.lx != lx || f.ly != ly) {
            return Err(EstimatorError::ShapeMismatch);
        }
        let n = (lx * ly) as f64;
        let mut planner = FftPlanner::new();
        let mut s = vec![0.0; lx * ly];
        let (mut peak, mut shell) = (Vec::new(), Vec::new());
        let (ox, oy) = match channel {
            Channel::Magnetization => (0, 0),
            Channel::Staggered => (lx / 2, ly / 2),
        };
        for f in fields {
            let spec = fft2(f, &mut planner);
            let power: Vec<f64> = spec.iter().map(|c| c.norm_sqr() / n).collect();
            for (acc, p) in s.iter_mut().zip(&power) {
                *acc += p;
            }
            let at = |dx: usize, dy: usize| power[((oy + dy) % ly) * lx + (ox + dx) % lx];
            peak.push(at(0, 0));
            shell.push(0.25 * (at(1, 0) + at(lx - 1, 0) + at(0, 1) + at(0, ly - 1)));
        }
        let m = fields.len() as f64;
        s.iter_mut().for_each(|v| *v /= m);
        Ok(Self { lx, ly, s, samples: fields.len(), peak, shell })
    }

    pub fn at(&self, nx: usize, ny: usize) -> f64 {
        self.s[(ny % self.ly) * self.lx + nx % self.lx]
    }

    /// Real-space correlation `C(r)` along x, `C(0)` the on-site moment.
    pub fn correlation_x(&self) -> Vec<f64> {
        let n = (self.lx * self.ly) as f64;
        (0..self.lx)
            .map(|r| {
                let mut c = 0.0;
                for ny in 0..self.ly {
                    for nx in 0..self.lx {
                        let q = 2.0 * PI * (nx * r) as f64 / self.lx as f64;
                        c += self.at(nx, ny) * q.cos();
                    }
                }
                c / n
            })
            .collect()
    }
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    if v.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Correlation length of an ensemble of fields in the given channel.
///
/// With the second-moment method, a flat structure factor (`S(q_op + q1)`
/// not significantly above `S(q_op)` over the ensemble) yields `0`; a
/// significant inversion is reported as [`EstimatorError::NoPeak`].
pub fn second_moment_xi(fields: &[Field], channel: Channel, method: XiMethod) -> Result<f64, EstimatorError> {
    let sf = StructureFactor::from_fields(fields, channel)?;
    let limit = sf.lx.min(sf.ly) as f64 / 4.0;
    let xi = match method {
        XiMethod::SecondMoment => {
            let s0 = sf.peak.iter().sum::<f64>() / sf.samples as f64;
            let s1 = sf.shell.iter().sum::<f64>() / sf.samples as f64;
            let q1 = 2.0 * PI / sf.lx.min(sf.ly) as f64;
            if s1 <= 0.0 {
                return Err(EstimatorError::Saturated { xi: f64::INFINITY, limit });
            }
            if s1 >= s0 {
                let diff: Vec<f64> = sf.peak.iter().zip(&sf.shell).map(|(a, b)| a - b).collect();
                let (d, se) = mean_and_se(&diff);
                if d.abs() <= 3.0 * se {
                    return Ok(0.0);
                }
                return Err(EstimatorError::NoPeak { s0, s1 });
            }
            (s0 / s1 - 1.0).sqrt() / q1
        }
        XiMethod::OrnsteinZernike => whittle_oz(&sf, channel),
    };
    if xi > limit {
        return Err(EstimatorError::Saturated { xi, limit });
    }
    Ok(xi)
}

/// `S(q_op)^(1 / (2 - eta))`: a length proportional to the correlation length
/// wherever `S(q_op)` scales as `xi^(2 - eta)`, e.g. critical relaxation
/// (`eta = 1/4` for 2D Ising). Averages `S(q_op)` over the ensemble.
pub fn susceptibility_length(fields: &[Field], channel: Channel, eta: f64) -> Result<f64, EstimatorError> {
    let sf = StructureFactor::from_fields(fields, channel)?;
    let s0 = sf.peak.iter().sum::<f64>() / sf.samples as f64;
    Ok(s0.powf(1.0 / (2.0 - eta)))
}

/// Lattice momenta `qhat^2 = 4 sin^2(qx/2) + 4 sin^2(qy/2)` measured from `q_op`,
/// paired with `S`, excluding `q_op` itself.
fn shells(sf: &StructureFactor, channel: Channel) -> Vec<(f64, f64)> {
    let (ox, oy) = match channel {
        Channel::Magnetization => (0, 0),
        Channel::Staggered => (sf.lx / 2, sf.ly / 2),
    };
    let mut out = Vec::with_capacity(sf.s.len());
    for ny in 0..sf.ly {
        for nx in 0..sf.lx {
            if nx == 0 && ny == 0 {
                continue;
            }
            let qx = PI * nx as f64 / sf.lx as f64;
            let qy = PI * ny as f64 / sf.ly as f64;
            let q2 = 4.0 * (qx.sin().powi(2) + qy.sin().powi(2));
            out.push((q2, sf.at(nx + ox, ny + oy)));
        }
    }
    out
}

/// Profile negative log-likelihood of the OZ form over `qhat^2 < q2_max`.
fn whittle_profile(pts: &[(f64, f64)], xi: f64, q2_max: f64) -> f64 {
    let x2 = xi * xi;
    let (mut n, mut a, mut log_den) = (0usize, 0.0, 0.0);
    for &(q2, s) in pts {
        if q2 < q2_max {
            let den = 1.0 + x2 * q2;
            a += s * den;
            log_den += den.ln();
            n += 1;
        }
    }
    if n == 0 {
        return f64::INFINITY;
    }
    let a = a / n as f64;
    n as f64 * a.ln() - log_den
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (hi - r * (hi - lo), lo + r * (hi - lo));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            hi = d;
            (d, fd) = (c, fc);
            c = hi - r * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            (c, fc) = (d, fd);
            d = lo + r * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

fn whittle_oz(sf: &StructureFactor, channel: Channel) -> f64 {
    let pts = shells(sf, channel);
    let lmax = sf.lx.max(sf.ly) as f64;
    let q2_min = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let fit = |q2_max: f64| {
        let obj = |lx: f64| whittle_profile(&pts, lx.exp(), q2_max);
        // coarse scan then golden refinement in ln xi
        let grid: Vec<f64> = (0..=80).map(|i| (0.02f64).ln() + i as f64 * (lmax / 0.02).ln() / 80.0).collect();
        let best = grid.iter().copied().min_by(|a, b| obj(*a).total_cmp(&obj(*b))).unwrap();
        let step = (lmax / 0.02).ln() / 80.0;
        golden_min(obj, best - step, best + step, 60).exp()
    };
    let mut xi = fit(1.0);
    for _ in 0..20 {
        let q2_max = (16.0 / (xi * xi)).clamp(6.0 * q2_min, 8.0);
        let next = fit(q2_max);
        let done = (next - xi).abs() <= 1e-4 * xi;
        xi = next;
        if done {
            break;
        }
    }
    if xi <= 0.021 {
        0.0
    } else {
        xi
    }
}

/// `1 / rho_wall` with `rho_wall` the fraction of unsatisfied nearest-neighbour bonds.
pub fn defect_length(lx: usize, ly: usize, spins: &[i8]) -> f64 {
    1.0 / wall_density(lx, ly, spins)
}

pub fn wall_density(lx: usize, ly: usize, spins: &[i8]) -> f64 {
    assert_eq!(spins.len(), lx * ly, "spin array size mismatch");
    let mut broken = 0usize;
    for y in 0..ly {
        for x in 0..lx {
            let s = spins[y * lx + x];
            broken += (s != spins[y * lx + (x + 1) % lx]) as usize;
            broken += (s != spins[((y + 1) % ly) * lx + x]) as usize;
        }
    }
    broken as f64 / (2 * lx * ly) as f64
}

/// `1 / (rho_wall - rho_eq)`: the length of the nonequilibrium wall excess.
/// Infinite when the excess is not positive.
pub fn excess_defect_length(lx: usize, ly: usize, spins: &[i8], rho_eq: f64) -> f64 {
    let excess = wall_density(lx, ly, spins) - rho_eq;
    if excess > 0.0 {
        1.0 / excess
    } else {
        f64::INFINITY
    }
}

/// `1 / (kink density)` on a periodic chain.
pub fn kink_length(spins: &[i8]) -> f64 {
    let n = spins.len();
    let kinks = (0..n).filter(|&i| spins[i] != spins[(i + 1) % n]).count();
    n as f64 / kinks as f64
}

/// One point of a series with an optional one-sigma error on `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t: f64,
    pub y: f64,
    #[serde(default)]
    pub err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub exponent: f64,
    pub amplitude: f64,
    /// Bootstrap standard error of the exponent.
    pub stderr: f64,
    pub window: (f64, f64),
    pub points: usize,
    /// Weighted coefficient of determination in log-log space.
    pub r_squared: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { resamples: 200, seed: 0x5eed }
    }
}

/// Weighted line fit `(slope, intercept, r^2)`.
pub(crate) fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * dy;
        syy += w[i] * dy * dy;
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

/// Weighted least squares of `ln y` on `ln t` inside `window` (inclusive).
pub fn fit_power_law(series: &[SeriesPoint], window: (f64, f64), opts: FitOptions) -> Result<FitResult, EstimatorError> {
    let pts: Vec<&SeriesPoint> = series.iter().filter(|p| p.t >= window.0 && p.t <= window.1).collect();
    if let Some(p) = pts.iter().find(|p| p.t <= 0.0 || p.y <= 0.0 || !p.y.is_finite()) {
        return Err(EstimatorError::NonPositive { t: p.t, value: if p.t <= 0.0 { p.t } else { p.y } });
    }
    let (tmin, tmax) = pts.iter().fold((f64::INFINITY, 0.0f64), |(a, b), p| (a.min(p.t), b.max(p.t)));
    let decades = if pts.is_empty() { 0.0 } else { (tmax / tmin).log10() };
    if pts.len() < 6 || decades < 1.0 - 1e-9 {
        return Err(EstimatorError::InsufficientData { points: pts.len(), decades });
    }
    let x: Vec<f64> = pts.iter().map(|p| p.t.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.y.ln()).collect();
    let w: Vec<f64> = pts
        .iter()
        .map(|p| match p.err {
            Some(e) if e > 0.0 => (p.y / e).powi(2),
            _ => 1.0,
        })
        .collect();
    let (slope, icpt, r2) = weighted_line(&x, &y, &w);

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(opts.seed);
    let n = x.len();
    let mut boots = Vec::with_capacity(opts.resamples);
    let (mut bx, mut by, mut bw) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    while boots.len() < opts.resamples {
        for j in 0..n {
            let i = rng.random_range(0..n);
            (bx[j], by[j], bw[j]) = (x[i], y[i], w[i]);
        }
        if bx.iter().all(|&v| v == bx[0]) {
            continue;
        }
        boots.push(weighted_line(&bx, &by, &bw).0);
    }
    let mb = boots.iter().sum::<f64>() / boots.len().max(1) as f64;
    let var = boots.iter().map(|b| (b - mb).powi(2)).sum::<f64>() / (boots.len().max(2) - 1) as f64;
    Ok(FitResult {
        exponent: slope,
        amplitude: icpt.exp(),
        stderr: var.sqrt(),
        window: (tmin, tmax),
        points: n,
        r_squared: r2,
    })
}

/// Widest window of positive values; logged so that it never enters a fit unseen.
pub fn suggest_window(series: &[SeriesPoint]) -> Option<(f64, f64)> {
    let pos: Vec<&SeriesPoint> = series.iter().filter(|p| p.t > 0.0 && p.y > 0.0 && p.y.is_finite()).collect();
    let lo = pos.iter().map(|p| p.t).fold(f64::INFINITY, f64::min);
    let hi = pos.iter().map(|p| p.t).fold(0.0, f64::max);
    if pos.len() < 2 {
        return None;
    }
    log::info!("suggested fit window [{lo}, {hi}] over {} points", pos.len());
    Some((lo, hi))
}

/// Mann-Kendall statistic `S` and its normal score (no tie correction).
pub fn mann_kendall(y: &[f64]) -> (i64, f64) {
    let n = y.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += (y[j] - y[i]).partial_cmp(&0.0).map_or(0, |o| o as i64);
        }
    }
    let nf = n as f64;
    let var = nf * (nf - 1.0) * (2.0 * nf + 5.0) / 18.0;
    let z = match s.cmp(&0) {
        std::cmp::Ordering::Greater => (s as f64 - 1.0) / var.sqrt(),
        std::cmp::Ordering::Less => (s as f64 + 1.0) / var.sqrt(),
        std::cmp::Ordering::Equal => 0.0,
    };
    (s, z)
}

/// Cubic smoothing spline minimizing `sum w (y - g)^2 + lambda int g''^2`
/// (Reinsch), returning fitted values at the (strictly increasing) knots.
pub fn smoothing_spline(x: &[f64], y: &[f64], w: &[f64], lambda: f64) -> Vec<f64> {
    let n = x.len();
    if n < 3 {
        return y.to_vec();
    }
    let h: Vec<f64> = x.windows(2).map(|p| p[1] - p[0]).collect();
    let m = n - 2;
    // Q is n x m: column j couples rows j, j+1, j+2
    let q = |j: usize| [1.0 / h[j], -1.0 / h[j] - 1.0 / h[j + 1], 1.0 / h[j + 1]];
    // pentadiagonal A = R + lambda Q^T W^-1 Q, stored as three bands
    let (mut d0, mut d1, mut d2) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for j in 0..m {
        d0[j] = (h[j] + h[j + 1]) / 3.0;
        if j + 1 < m {
            d1[j] = h[j + 1] / 6.0;
        }
    }
    for j in 0..m {
        let qj = q(j);
        for k in j..(j + 3).min(m) {
            let qk = q(k);
            // rows shared by columns j and k: j+a = k+b
            let mut acc = 0.0;
            for (a, qa) in qj.iter().enumerate() {
                let row = j + a;
                if row >= k && row - k < 3 {
                    acc += qa * qk[row - k] / w[row];
                }
            }
            match k - j {
                0 => d0[j] += lambda * acc,
                1 => d1[j] += lambda * acc,
                _ => d2[j] += lambda * acc,
            }
        }
    }
    let rhs: Vec<f64> = (0..m).map(|j| {
        let qj = q(j);
        qj[0] * y[j] + qj[1] * y[j + 1] + qj[2] * y[j + 2]
    }).collect();
    let gamma = solve_penta(&d0, &d1, &d2, &rhs);
    let mut g = y.to_vec();
    for j in 0..m {
        let qj = q(j);
        for a in 0..3 {
            g[j + a] -= lambda * qj[a] * gamma[j] / w[j + a];
        }
    }
    g
}

/// Symmetric positive-definite pentadiagonal solve by banded LDL^T.
fn solve_penta(d0: &[f64], d1: &[f64], d2: &[f64], b: &[f64]) -> Vec<f64> {
    let m = d0.len();
    let (mut d, mut l1, mut l2) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for i in 0..m {
        let mut di = d0[i];
        if i >= 1 {
            di -= l1[i - 1] * l1[i - 1] * d[i - 1];
        }
        if i >= 2 {
            di -= l2[i - 2] * l2[i - 2] * d[i - 2];
        }
        d[i] = di;
        if i + 1 < m {
            let mut v = d1[i];
            if i >= 1 {
                v -= l1[i - 1] * l2[i - 1] * d[i - 1];
            }
            l1[i] = v / di;
        }
        if i + 2 < m {
            l2[i] = d2[i] / di;
        }
    }
    let mut z = b.to_vec();
    for i in 0..m {
        if i >= 1 {
            z[i] -= l1[i - 1] * z[i - 1];
        }
        if i >= 2 {
            z[i] -= l2[i - 2] * z[i - 2];
        }
    }
    for i in 0..m {
        z[i] /= d[i];
    }
    for i in (0..m).rev() {
        if i + 1 < m {
            z[i] -= l1[i] * z[i + 1];
        }
        if i + 2 < m {
            z[i] -= l2[i] * z[i + 2];
        }
    }
    z
}

/// One measured curve `l(t)` at ramp timescale `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub tau: f64,
    pub t: Vec<f64>,
    pub l: Vec<f64>,
}

/// Abscissa of the collapse: `ln(t / tau^a_t)` for positive times,
/// `asinh(t / tau^a_t)` when a curve crosses `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Abscissa {
    Log,
    Asinh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseOptions {
    /// Spline bandwidth as a fraction of the pooled abscissa range.
    pub bandwidth: f64,
    pub alpha_xi_range: (f64, f64),
    pub alpha_t_range: (f64, f64),
    pub grid: usize,
}

impl Default for CollapseOptions {
    fn default() -> Self {
        Self { bandwidth: 0.05, alpha_xi_range: (0.0, 1.0), alpha_t_range: (0.0, 1.0), grid: 41 }
    }
}

fn abscissa_for(curves: &[Curve]) -> Abscissa {
    if curves.iter().all(|c| c.t.iter().all(|&t| t > 0.0)) {
        Abscissa::Log
    } else {
        Abscissa::Asinh
    }
}

fn validate_curves(curves: &[Curve]) -> Result<(), EstimatorError> {
    if curves.len() < 3 {
        return Err(EstimatorError::TooFewCurves(curves.len()));
    }
    for c in curves {
        if c.t.len() != c.l.len() || c.t.is_empty() {
            return Err(EstimatorError::ShapeMismatch);
        }
        if !(c.tau > 0.0) {
            return Err(EstimatorError::NonPositive { t: f64::NAN, value: c.tau });
        }
        if let Some(i) = c.l.iter().position(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(EstimatorError::NonPositive { t: c.t[i], value: c.l[i] });
        }
    }
    Ok(())
}

/// Summed squared deviation of the rescaled curves from a common smoothing
/// spline, in `(abscissa, ln(l / tau^a_xi))` coordinates.
pub fn collapse_residual(curves: &[Curve], alpha_xi: f64, alpha_t: f64, opts: &CollapseOptions) -> Result<f64, EstimatorError> {
    validate_curves(curves)?;
    let absc = abscissa_for(curves);
    let mut pts: Vec<(f64, f64)> = Vec::new();
    let mut ranges = Vec::with_capacity(curves.len());
    for c in curves {
        let st = c.tau.powf(alpha_t);
        let sl = c.tau.powf(alpha_xi).ln();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (&t, &l) in c.t.iter().zip(&c.l) {
            let u = match absc {
                Abscissa::Log => (t / st).ln(),
                Abscissa::Asinh => (t / st).asinh(),
            };
            lo = lo.min(u);
            hi = hi.max(u);
            pts.push((u, l.ln() - sl));
        }
        ranges.push((lo, hi));
    }
    // every curve must overlap at least one other
    for (i, a) in ranges.iter().enumerate() {
        let overlaps = ranges.iter().enumerate().any(|(j, b)| i != j && a.0 <= b.1 && b.0 <= a.1);
        if !overlaps {
            return Err(EstimatorError::NonOverlap);
        }
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let span = pts.last().unwrap().0 - pts[0].0;
    if span <= 0.0 {
        return Err(EstimatorError::Degenerate("all scaled abscissae coincide".into()));
    }
    // merge coincident abscissae into weighted knots
    let tie = 1e-12 * span;
    let (mut x, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new());
    let mut within = 0.0;
    let mut i = 0;
    while i < pts.len() {
        let mut j = i;
        while j < pts.len() && pts[j].0 - pts[i].0 <= tie {
            j += 1;
        }
        let group = &pts[i..j];
        let mean = group.iter().map(|p| p.1).sum::<f64>() / group.len() as f64;
        within += group.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>();
        x.push((pts[i].0 - pts[0].0) / span);
        y.push(mean);
        w.push(group.len() as f64);
        i = j;
    }
    let lambda = pts.len() as f64 * opts.bandwidth.powi(4);
    let g = smoothing_spline(&x, &y, &w, lambda);
    let fit: f64 = (0..x.len()).map(|k| w[k] * (y[k] - g[k]).powi(2)).sum();
    Ok(fit + within)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseResult {
    pub alpha_xi: f64,
    pub alpha_t: f64,
    pub residual: f64,
    /// Half-widths at which the residual doubles along each axis.
    pub alpha_xi_err: f64,
    pub alpha_t_err: f64,
    pub abscissa: Abscissa,
}

/// Grid search over `(alpha_xi, alpha_t)` followed by pattern-search refinement.
pub fn optimize_collapse(curves: &[Curve], opts: &CollapseOptions) -> Result<CollapseResult, EstimatorError> {
    validate_curves(curves)?;
    let tau0 = curves[0].tau;
    if curves.iter().all(|c| c.tau == tau0) {
        return Err(EstimatorError::Degenerate("all curves share one tau; exponents are unconstrained".into()));
    }
    let res = |a: f64, b: f64| collapse_residual(curves, a, b, opts).unwrap_or(f64::INFINITY);
    let (ax, at) = (opts.alpha_xi_range, opts.alpha_t_range);
    let n = opts.grid.max(3);
    let lin = |r: (f64, f64), i: usize| r.0 + (r.1 - r.0) * i as f64 / (n - 1) as f64;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let mut all = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (lin(ax, i), lin(at, j));
            let r = res(a, b);
            all.push(r);
            if r < best.0 {
                best = (r, a, b);
            }
        }
    }
    if !best.0.is_finite() {
        return Err(EstimatorError::NonOverlap);
    }
    let finite: Vec<f64> = all.iter().copied().filter(|r| r.is_finite()).collect();
    let worst = finite.iter().copied().fold(0.0, f64::max);
    if worst - best.0 <= 1e-12 * worst.max(1e-300) {
        return Err(EstimatorError::Degenerate("residual surface is flat".into()));
    }

    let (mut r0, mut a, mut b) = best;
    let mut step = ((ax.1 - ax.0) / (n - 1) as f64).max((at.1 - at.0) / (n - 1) as f64);
    while step > 1e-6 {
        let mut moved = false;
        for (da, db) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step), (step, step), (-step, -step), (step, -step), (-step, step)] {
            let r = res(a + da, b + db);
            if r < r0 {
                (r0, a, b) = (r, a + da, b + db);
                moved = true;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }

    let doubling = |f: &dyn Fn(f64) -> f64| {
        let target = 2.0 * r0.max(1e-300);
        let mut widths = Vec::new();
        for dir in [1.0, -1.0] {
            let mut d = 1e-4;
            while d < 1.0 && f(dir * d) < target {
                d *= 1.5;
            }
            let (mut lo, mut hi) = (d / 1.5, d);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if f(dir * mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            widths.push(0.5 * (lo + hi));
        }
        0.5 * (widths[0] + widths[1])
    };
    let err_xi = doubling(&|d| res(a + d, b));
    let err_t = doubling(&|d| res(a, b + d));
    Ok(CollapseResult {
        alpha_xi: a,
        alpha_t: b,
        residual: r0,
        alpha_xi_err: err_xi,
        alpha_t_err: err_t,
        abscissa: abscissa_for(curves),
    })
}
