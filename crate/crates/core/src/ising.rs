//! Kinetic 2D Ising model under time-dependent temperature protocols.
//!
//! Heat-bath single-spin-flip dynamics with random site selection on a
//! periodic `lx x ly` lattice. Time is counted in sweeps of `lx * ly`
//! attempted updates. Temperatures are in units of the exchange coupling.

use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{second_moment_xi, weighted_line, Channel, EstimatorError, Field, XiMethod};

/// Exact critical temperature of the square lattice, `2 / ln(1 + sqrt 2)`.
pub const T_C: f64 = 2.269_185_314_213_022;

#[derive(Debug, Error)]
pub enum IsingError {
    #[error("temperature must be finite-or-infinite and >= 0, got {0}")]
    InvalidTemperature(f64),
    #[error("lattice sides must be >= 4, got {lx} x {ly}")]
    InvalidSize { lx: usize, ly: usize },
    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),
    #[error("snapshot time {time} lies outside the schedule [0, {total}]")]
    SnapshotOutOfRange { time: u64, total: u64 },
    #[error("malformed snapshot: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// Square lattice of +-1 spins with its own random stream.
#[derive(Debug, Clone)]
pub struct SpinLattice {
    lx: usize,
    ly: usize,
    spins: Vec<i8>,
    seed: u64,
    sweeps: u64,
    rng: Xoshiro256PlusPlus,
}

/// Heat-bath acceptance thresholds on a 32-bit uniform, indexed by `(dE + 8) / 4`.
fn flip_thresholds(temperature: f64) -> Result<[u64; 5], IsingError> {
    if temperature.is_nan() || temperature < 0.0 {
        return Err(IsingError::InvalidTemperature(temperature));
    }
    let scale = (1u64 << 32) as f64;
    let mut thr = [0u64; 5];
    for (slot, de) in thr.iter_mut().zip([-8.0, -4.0, 0.0, 4.0, 8.0f64]) {
        let p = if temperature == 0.0 {
            match de.partial_cmp(&0.0).unwrap() {
                std::cmp::Ordering::Less => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Greater => 0.0,
            }
        } else {
            1.0 / (1.0 + (de / temperature).exp())
        };
        *slot = (p * scale).round() as u64;
    }
    Ok(thr)
}

impl SpinLattice {
    /// All-up lattice.
    pub fn new(lx: usize, ly: usize, seed: u64) -> Result<Self, IsingError> {
        if lx < 4 || ly < 4 {
            return Err(IsingError::InvalidSize { lx, ly });
        }
        Ok(Self {
            lx,
            ly,
            spins: vec![1; lx * ly],
            seed,
            sweeps: 0,
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
        })
    }

    pub fn lx(&self) -> usize {
        self.lx
    }

    pub fn ly(&self) -> usize {
        self.ly
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sweeps(&self) -> u64 {
        self.sweeps
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    /// Row-major spins, index `y * lx + x`.
    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn set(&mut self, x: usize, y: usize, s: i8) {
        assert!(s == 1 || s == -1, "spin must be +-1");
        self.spins[y * self.lx + x] = s;
    }

    pub fn fill(&mut self, s: i8) {
        assert!(s == 1 || s == -1, "spin must be +-1");
        self.spins.fill(s);
    }

    /// Infinite-temperature configuration drawn from the lattice's stream.
    pub fn randomize(&mut self) {
        for s in &mut self.spins {
            *s = if self.rng.next_u32() & 1 == 0 { 1 } else { -1 };
        }
    }

    pub fn magnetization(&self) -> f64 {
        self.spins.iter().map(|&s| s as i64).sum::<i64>() as f64 / self.len() as f64
    }

    /// Sum over right and down bonds of `s_i s_j`.
    fn bond_sum(&self) -> i64 {
        let (lx, ly) = (self.lx, self.ly);
        let mut sum = 0i64;
        for y in 0..ly {
            let row = y * lx;
            let down = ((y + 1) % ly) * lx;
            for x in 0..lx {
                let s = self.spins[row + x] as i64;
                sum += s * self.spins[row + (x + 1) % lx] as i64;
                sum += s * self.spins[down + x] as i64;
            }
        }
        sum
    }

    /// `-(1/N) sum_<ij> s_i s_j`, in `[-2, 2]`.
    pub fn energy_per_site(&self) -> f64 {
        -(self.bond_sum() as f64) / self.len() as f64
    }

    /// Fraction of unsatisfied bonds.
    pub fn wall_density(&self) -> f64 {
        let bonds = 2 * self.len() as i64;
        (bonds - self.bond_sum()) as f64 / (2 * bonds) as f64
    }

    /// One sweep of `lx * ly` heat-bath updates at uniformly random sites.
    pub fn glauber_sweep(&mut self, temperature: f64) -> Result<(), IsingError> {
        let thr = flip_thresholds(temperature)?;
        let reject = ((1u64 << 32) % self.lx as u64, (1u64 << 32) % self.ly as u64);
        for _ in 0..self.spins.len() {
            let (x, y) = self.random_site(reject);
            self.update(x, y, &thr);
        }
        self.sweeps += 1;
        Ok(())
    }

    /// Uniform site from one 64-bit draw, one exact Lemire reduction per half.
    #[inline]
    fn random_site(&mut self, reject: (u64, u64)) -> (usize, usize) {
        let (lx, ly) = (self.lx as u64, self.ly as u64);
        loop {
            let r = self.rng.next_u64();
            let mx = (r >> 32) * lx;
            let my = (r & 0xffff_ffff) * ly;
            // reject the few low words that would bias a non-power-of-two side
            let lo_x = mx & 0xffff_ffff;
            let lo_y = my & 0xffff_ffff;
            if lo_x < reject.0 || lo_y < reject.1 {
                continue;
            }
            return ((mx >> 32) as usize, (my >> 32) as usize);
        }
    }

    /// Single heat-bath update of site `(x, y)`; does not advance the clock.
    pub fn update_site(&mut self, x: usize, y: usize, temperature: f64) -> Result<(), IsingError> {
        let thr = flip_thresholds(temperature)?;
        self.update(x, y, &thr);
        Ok(())
    }

    #[inline]
    fn update(&mut self, x: usize, y: usize, thr: &[u64; 5]) {
        let (lx, n) = (self.lx, self.spins.len());
        let i = y * lx + x;
        let left = if x == 0 { i + lx - 1 } else { i - 1 };
        let right = if x + 1 == lx { i + 1 - lx } else { i + 1 };
        let up = if i < lx { i + n - lx } else { i - lx };
        let down = if i + lx >= n { i + lx - n } else { i + lx };
        let s = self.spins[i];
        let field = self.spins[left] + self.spins[right] + self.spins[up] + self.spins[down];
        // dE = 2 s field, so (dE + 8) / 4 = (s field + 4) / 2
        let t = thr[((s * field + 4) / 2) as usize];
        let flip = ((self.rng.next_u32() as u64) < t) as i8;
        self.spins[i] = s * (1 - 2 * flip);
    }
}

/// One piece of a temperature schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Segment {
    /// `T(s) = from + (to - from) s^power` for `s` the fraction of the segment elapsed.
    Ramp {
        from: f64,
        to: f64,
        duration: u64,
        #[serde(default = "unit_power")]
        power: f64,
    },
    Hold { temperature: f64, duration: u64 },
}

fn unit_power() -> f64 {
    1.0
}

impl Segment {
    pub fn duration(&self) -> u64 {
        match *self {
            Segment::Ramp { duration, .. } | Segment::Hold { duration, .. } => duration,
        }
    }

    /// Temperature for sweep `n` of the segment, sampled at the sweep midpoint.
    pub fn temperature(&self, n: u64) -> f64 {
        match *self {
            Segment::Hold { temperature, .. } => temperature,
            Segment::Ramp { from, to, duration, power } => {
                let s = (n as f64 + 0.5) / duration as f64;
                from + (to - from) * s.powf(power)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Random,
    AllUp,
    /// All-up background with a down rectangle.
    EmbeddedDomain { x0: usize, y0: usize, width: usize, height: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalProtocol {
    pub initial: InitialCondition,
    pub segments: Vec<Segment>,
}

impl ThermalProtocol {
    /// Instantaneous quench from a random state to `temperature`, held for `duration`.
    pub fn quench(temperature: f64, duration: u64) -> Self {
        Self { initial: InitialCondition::Random, segments: vec![Segment::Hold { temperature, duration }] }
    }

    pub fn validate(&self) -> Result<(), IsingError> {
        let bad = |m: String| Err(IsingError::InvalidProtocol(m));
        if self.segments.is_empty() {
            return bad("schedule has no segments".into());
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.duration() == 0 {
                return bad(format!("segment {i} has zero duration"));
            }
            let temps = match *seg {
                Segment::Hold { temperature, .. } => vec![temperature],
                Segment::Ramp { from, to, power, .. } => {
                    if !(power.is_finite() && power > 0.0) {
                        return bad(format!("segment {i} has invalid power {power}"));
                    }
                    vec![from, to]
                }
            };
            if temps.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                return bad(format!("segment {i} has a negative or non-finite temperature"));
            }
        }
        Ok(())
    }

    pub fn total_duration(&self) -> u64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    /// Temperature used for the sweep starting at time `t`.
    pub fn temperature_at(&self, mut t: u64) -> Option<f64> {
        for seg in &self.segments {
            if t < seg.duration() {
                return Some(seg.temperature(t));
            }
            t -= seg.duration();
        }
        None
    }

    fn apply_initial(&self, lattice: &mut SpinLattice) -> Result<(), IsingError> {
        match self.initial {
            InitialCondition::Random => lattice.randomize(),
            InitialCondition::AllUp => lattice.fill(1),
            InitialCondition::EmbeddedDomain { x0, y0, width, height } => {
                if x0 + width > lattice.lx || y0 + height > lattice.ly {
                    return Err(IsingError::InvalidProtocol("embedded domain exceeds the lattice".into()));
                }
                lattice.fill(1);
                for y in y0..y0 + height {
                    for x in x0..x0 + width {
                        lattice.set(x, y, -1);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Copy of the lattice at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSnapshot {
    pub time: u64,
    /// Bath temperature of the most recent sweep (the first scheduled one at time 0).
    pub temperature: f64,
    pub lx: usize,
    pub ly: usize,
    pub spins: Vec<i8>,
    pub energy: f64,
    pub magnetization: f64,
}

impl LatticeSnapshot {
    fn capture(lattice: &SpinLattice, temperature: f64) -> Self {
        Self {
            time: lattice.sweeps,
            temperature,
            lx: lattice.lx,
            ly: lattice.ly,
            spins: lattice.spins.clone(),
            energy: lattice.energy_per_site(),
            magnetization: lattice.magnetization(),
        }
    }
}

/// Run `protocol` from its initial condition, calling `sink` at each requested time.
///
/// The lattice is reinitialized and its sweep counter reset. Times may repeat
/// or come unsorted; each distinct time is emitted once, in increasing order.
pub fn run_protocol_with<F>(
    lattice: &mut SpinLattice,
    protocol: &ThermalProtocol,
    snapshot_times: &[u64],
    mut sink: F,
) -> Result<(), IsingError>
where
    F: FnMut(LatticeSnapshot),
{
    protocol.validate()?;
    let total = protocol.total_duration();
    let mut times = snapshot_times.to_vec();
    times.sort_unstable();
    times.dedup();
    if let Some(&bad) = times.iter().find(|&&t| t > total) {
        return Err(IsingError::SnapshotOutOfRange { time: bad, total });
    }
    protocol.apply_initial(lattice)?;
    lattice.sweeps = 0;

    let mut next = times.into_iter().peekable();
    let mut temperature = protocol.temperature_at(0).unwrap_or(0.0);
    if next.peek() == Some(&0) {
        sink(LatticeSnapshot::capture(lattice, temperature));
        next.next();
    }
    'outer: for seg in &protocol.segments {
        for n in 0..seg.duration() {
            if next.peek().is_none() {
                break 'outer;
            }
            temperature = seg.temperature(n);
            lattice.glauber_sweep(temperature)?;
            if next.peek() == Some(&lattice.sweeps) {
                sink(LatticeSnapshot::capture(lattice, temperature));
                next.next();
            }
        }
    }
    Ok(())
}

/// Collecting form of [`run_protocol_with`].
pub fn run_protocol(
    lattice: &mut SpinLattice,
    protocol: &ThermalProtocol,
    snapshot_times: &[u64],
) -> Result<Vec<LatticeSnapshot>, IsingError> {
    let mut out = Vec::with_capacity(snapshot_times.len());
    run_protocol_with(lattice, protocol, snapshot_times, |s| out.push(s))?;
    Ok(out)
}

/// Run one replica per seed and reduce each snapshot with `measure`.
///
/// Returns `result[replica][snapshot]`, replicas in seed order.
pub fn run_ensemble<M, T>(
    lx: usize,
    ly: usize,
    seeds: &[u64],
    protocol: &ThermalProtocol,
    snapshot_times: &[u64],
    measure: M,
) -> Result<Vec<Vec<T>>, IsingError>
where
    M: Fn(&LatticeSnapshot) -> T + Sync,
    T: Send,
{
    seeds
        .par_iter()
        .map(|&seed| {
            let mut lattice = SpinLattice::new(lx, ly, seed)?;
            let mut out = Vec::new();
            run_protocol_with(&mut lattice, protocol, snapshot_times, |s| out.push(measure(&s)))?;
            Ok(out)
        })
        .collect()
}

// Packed snapshot file: magic, version, lx, ly (u32), time (u64),
// temperature, energy, magnetization (f64), then one bit per site in
// row-major order, least significant bit first, set for spin +1.
const MAGIC: &[u8; 4] = b"KZIS";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 3 + 8 * 4;

impl LatticeSnapshot {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.spins.len().div_ceil(8));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.lx as u32).to_le_bytes());
        out.extend_from_slice(&(self.ly as u32).to_le_bytes());
        out.extend_from_slice(&self.time.to_le_bytes());
        for v in [self.temperature, self.energy, self.magnetization] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for chunk in self.spins.chunks(8) {
            let byte = chunk.iter().enumerate().fold(0u8, |b, (j, &s)| if s > 0 { b | (1 << j) } else { b });
            out.push(byte);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IsingError> {
        let fmt = |m: &str| IsingError::Format(m.to_string());
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(fmt("bad magic or truncated header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        if u32_at(4) != FORMAT_VERSION {
            return Err(fmt("unsupported version"));
        }
        let (lx, ly) = (u32_at(8) as usize, u32_at(12) as usize);
        let time = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let n = lx * ly;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != n.div_ceil(8) {
            return Err(fmt("payload length does not match dimensions"));
        }
        let spins = (0..n).map(|i| if payload[i / 8] >> (i % 8) & 1 == 1 { 1 } else { -1 }).collect();
        Ok(Self { time, temperature: f64_at(24), energy: f64_at(32), magnetization: f64_at(40), lx, ly, spins })
    }

    pub fn write(&self, path: &Path) -> Result<(), IsingError> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn read(path: &Path) -> Result<Self, IsingError> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn index_entry(&self, file: &str) -> SnapshotIndexEntry {
        SnapshotIndexEntry {
            file: file.to_string(),
            time: self.time,
            temperature: self.temperature,
            energy: self.energy,
            magnetization: self.magnetization,
        }
    }
}

/// One line of the JSON index that accompanies a snapshot directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotIndexEntry {
    pub file: String,
    pub time: u64,
    pub temperature: f64,
    pub energy: f64,
    pub magnetization: f64,
}

/// Complete elliptic integral of the first kind, modulus `k < 1`, by AGM.
fn elliptic_k(k: f64) -> f64 {
    let (mut a, mut b) = (1.0f64, (1.0 - k * k).sqrt());
    for _ in 0..64 {
        if (a - b).abs() <= 4.0 * f64::EPSILON * a {
            break;
        }
        (a, b) = (0.5 * (a + b), (a * b).sqrt());
    }
    PI / (2.0 * a)
}

/// Onsager equilibrium energy per site of the infinite lattice.
pub fn equilibrium_energy(temperature: f64) -> f64 {
    if temperature <= 0.0 {
        return -2.0;
    }
    let beta = 1.0 / temperature;
    let t2 = (2.0 * beta).tanh();
    let coth = 1.0 / t2;
    let k = 2.0 * (2.0 * beta).sinh() / (2.0 * beta).cosh().powi(2);
    let bracket = 2.0 * t2 * t2 - 1.0;
    if bracket == 0.0 || k >= 1.0 {
        return -coth;
    }
    -coth * (1.0 + 2.0 / PI * bracket * elliptic_k(k))
}

/// Equilibrium fraction of unsatisfied bonds.
pub fn equilibrium_wall_density(temperature: f64) -> f64 {
    0.5 * (1.0 + 0.5 * equilibrium_energy(temperature))
}

/// Cooling ramps from `t_high` to `t_low` at several durations, with the
/// correlation length measured when the ramp ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KzRampConfig {
    pub lx: usize,
    pub ly: usize,
    pub seeds: Vec<u64>,
    pub taus: Vec<u64>,
    #[serde(default = "default_t_high")]
    pub t_high: f64,
    #[serde(default = "default_t_low")]
    pub t_low: f64,
    /// Equilibration sweeps at `t_high` from a random start.
    #[serde(default = "default_pre_hold")]
    pub pre_hold: u64,
    #[serde(default = "default_kz_method")]
    pub method: XiMethod,
}

fn default_t_high() -> f64 {
    2.0 * T_C
}
fn default_t_low() -> f64 {
    T_C
}
fn default_pre_hold() -> u64 {
    100
}
fn default_kz_method() -> XiMethod {
    XiMethod::OrnsteinZernike
}

/// Ramps shorter than this many sweeps are outside the scaling regime.
pub const KZ_MIN_TAU: u64 = 10;

impl KzRampConfig {
    pub fn new(lx: usize, ly: usize, seeds: Vec<u64>, taus: Vec<u64>) -> Self {
        Self {
            lx,
            ly,
            seeds,
            taus,
            t_high: default_t_high(),
            t_low: default_t_low(),
            pre_hold: default_pre_hold(),
            method: default_kz_method(),
        }
    }

    pub fn protocol(&self, tau: u64) -> ThermalProtocol {
        let mut segments = Vec::new();
        if self.pre_hold > 0 {
            segments.push(Segment::Hold { temperature: self.t_high, duration: self.pre_hold });
        }
        segments.push(Segment::Ramp { from: self.t_high, to: self.t_low, duration: tau, power: 1.0 });
        ThermalProtocol { initial: InitialCondition::Random, segments }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KzRampRow {
    pub tau: u64,
    /// Length from the structure factor pooled over all seeds.
    pub xi: f64,
    /// Leave-one-seed-out jackknife error.
    pub xi_err: f64,
    pub seeds: usize,
    /// `xi > lx / 8`: finite-size effects likely.
    pub finite_size_warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KzRampResult {
    pub rows: Vec<KzRampRow>,
    /// Ramps dropped for being shorter than [`KZ_MIN_TAU`].
    pub excluded_taus: Vec<u64>,
    pub exponent: f64,
    pub exponent_err: f64,
    pub amplitude: f64,
}

fn pooled_xi(fields: &[Field], method: XiMethod) -> Result<(f64, f64), IsingError> {
    let xi = second_moment_xi(fields, Channel::Magnetization, method)?;
    let n = fields.len();
    if n < 2 {
        return Ok((xi, f64::NAN));
    }
    let jack: Vec<f64> = (0..n)
        .map(|k| {
            let rest: Vec<Field> = fields.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, f)| f.clone()).collect();
            second_moment_xi(&rest, Channel::Magnetization, method)
        })
        .collect::<Result<_, _>>()?;
    let mean = jack.iter().sum::<f64>() / n as f64;
    let var = jack.iter().map(|j| (j - mean).powi(2)).sum::<f64>() * (n - 1) as f64 / n as f64;
    Ok((xi, var.sqrt()))
}

/// Run the ensemble for every ramp duration and fit `xi ~ tau^exponent`.
pub fn kz_ramp_experiment(config: &KzRampConfig) -> Result<KzRampResult, IsingError> {
    if config.seeds.len() < 8 || config.lx.min(config.ly) < 256 {
        log::warn!(
            "{} seeds on {}x{}: below 8 seeds / 256^2 the exponent is not reliable",
            config.seeds.len(),
            config.lx,
            config.ly
        );
    }
    let (mut used, mut excluded): (Vec<u64>, Vec<u64>) = config.taus.iter().partition(|&&t| t >= KZ_MIN_TAU);
    used.sort_unstable();
    used.dedup();
    excluded.sort_unstable();
    for t in &excluded {
        log::warn!("tau = {t} sweeps is below {KZ_MIN_TAU}; excluded from the fit");
    }
    let mut rows = Vec::with_capacity(used.len());
    for &tau in &used {
        let protocol = config.protocol(tau);
        let end = protocol.total_duration();
        let fields: Vec<Field> = run_ensemble(config.lx, config.ly, &config.seeds, &protocol, &[end], |s| {
            Field::from_spins(s.lx, s.ly, &s.spins)
        })?
        .into_iter()
        .flatten()
        .collect();
        let (xi, xi_err) = pooled_xi(&fields, config.method)?;
        let warn = xi > config.lx as f64 / 8.0;
        if warn {
            log::warn!("tau = {tau}: xi = {xi:.2} exceeds lx/8 = {}; finite-size contamination likely", config.lx as f64 / 8.0);
        }
        rows.push(KzRampRow { tau, xi, xi_err, seeds: config.seeds.len(), finite_size_warning: warn });
    }
    if rows.len() < 2 {
        return Err(IsingError::InvalidProtocol(format!("need two ramp durations >= {KZ_MIN_TAU} sweeps to fit")));
    }
    let x: Vec<f64> = rows.iter().map(|r| (r.tau as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.xi.ln()).collect();
    let w: Vec<f64> = rows
        .iter()
        .map(|r| if r.xi_err.is_finite() && r.xi_err > 0.0 { (r.xi / r.xi_err).powi(2) } else { 1.0 })
        .collect();
    let (slope, icpt, _) = weighted_line(&x, &y, &w);
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, b)| b * (a - mx).powi(2)).sum();
    Ok(KzRampResult { rows, excluded_taus: excluded, exponent: slope, exponent_err: sxx.recip().sqrt(), amplitude: icpt.exp() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn critical_temperature() {
        assert_relative_eq!(T_C, 2.0 / (1.0 + 2f64.sqrt()).ln(), max_relative = 1e-15);
    }

    #[test]
    fn onsager_energy() {
        assert_relative_eq!(equilibrium_energy(T_C), -(2f64.sqrt()), max_relative = 1e-9);
        assert_eq!(equilibrium_energy(0.0), -2.0);
        // high-temperature series -2 tanh(beta) to leading order
        assert_relative_eq!(equilibrium_energy(100.0), -2.0 * 0.01f64.tanh(), max_relative = 1e-3);
        // low-temperature expansion -2 + 8 e^(-8 beta)
        let t = 0.5;
        assert_relative_eq!(equilibrium_energy(t), -2.0 + 8.0 * (-8.0 / t).exp(), max_relative = 1e-9);
        let mut last = -2.0;
        for i in 1..60 {
            let e = equilibrium_energy(0.1 * i as f64);
            assert!(e >= last);
            last = e;
        }
    }

    #[test]
    fn thresholds() {
        let thr = flip_thresholds(0.0).unwrap();
        assert_eq!(thr, [1 << 32, 1 << 32, 1 << 31, 0, 0]);
        let hot = flip_thresholds(f64::INFINITY).unwrap();
        assert!(hot.iter().all(|&t| t == 1 << 31));
        assert!(flip_thresholds(-1.0).is_err());
        assert!(flip_thresholds(f64::NAN).is_err());
    }

    #[test]
    fn ground_state_frozen_at_zero_temperature() {
        let mut l = SpinLattice::new(16, 16, 3).unwrap();
        for _ in 0..20 {
            l.glauber_sweep(0.0).unwrap();
        }
        assert!(l.spins().iter().all(|&s| s == 1));
        assert_eq!(l.sweeps(), 20);
    }

    #[test]
    fn isolated_spin_flips_at_zero_temperature() {
        let mut l = SpinLattice::new(8, 8, 1).unwrap();
        l.set(3, 4, -1);
        l.update_site(3, 4, 0.0).unwrap();
        assert!(l.spins().iter().all(|&s| s == 1));
    }

    #[test]
    fn energy_and_walls() {
        let mut l = SpinLattice::new(8, 8, 0).unwrap();
        assert_eq!(l.energy_per_site(), -2.0);
        assert_eq!(l.wall_density(), 0.0);
        for y in 0..8 {
            for x in 0..8 {
                l.set(x, y, if (x + y) % 2 == 0 { 1 } else { -1 });
            }
        }
        assert_eq!(l.energy_per_site(), 2.0);
        assert_eq!(l.wall_density(), 1.0);
        assert_eq!(l.magnetization(), 0.0);
    }

    #[test]
    fn protocol_temperatures() {
        let p = ThermalProtocol {
            initial: InitialCondition::AllUp,
            segments: vec![
                Segment::Ramp { from: 4.0, to: 2.0, duration: 4, power: 1.0 },
                Segment::Hold { temperature: 1.0, duration: 3 },
            ],
        };
        p.validate().unwrap();
        assert_eq!(p.total_duration(), 7);
        assert_eq!(p.temperature_at(0), Some(3.75));
        assert_eq!(p.temperature_at(3), Some(2.25));
        assert_eq!(p.temperature_at(6), Some(1.0));
        assert_eq!(p.temperature_at(7), None);
    }

    #[test]
    fn protocol_validation() {
        let hold = |t: f64, d: u64| ThermalProtocol::quench(t, d);
        assert!(hold(-1.0, 10).validate().is_err());
        assert!(hold(1.0, 0).validate().is_err());
        let empty = ThermalProtocol { initial: InitialCondition::Random, segments: vec![] };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn snapshots_at_requested_times() {
        let mut l = SpinLattice::new(16, 16, 9).unwrap();
        let p = ThermalProtocol::quench(1.0, 10);
        let snaps = run_protocol(&mut l, &p, &[10, 0, 5, 5]).unwrap();
        assert_eq!(snaps.iter().map(|s| s.time).collect::<Vec<_>>(), vec![0, 5, 10]);
        assert!(snaps.iter().all(|s| (-2.0..=2.0).contains(&s.energy) && s.magnetization.abs() <= 1.0));
        let err = run_protocol(&mut l, &p, &[11]).unwrap_err();
        assert!(matches!(err, IsingError::SnapshotOutOfRange { time: 11, total: 10 }));
    }

    #[test]
    fn embedded_domain_initial_state() {
        let mut l = SpinLattice::new(10, 10, 0).unwrap();
        let p = ThermalProtocol {
            initial: InitialCondition::EmbeddedDomain { x0: 2, y0: 3, width: 4, height: 2 },
            segments: vec![Segment::Hold { temperature: 0.0, duration: 1 }],
        };
        let s = run_protocol(&mut l, &p, &[0]).unwrap();
        assert_eq!(s[0].spins.iter().filter(|&&v| v == -1).count(), 8);
    }

    #[test]
    fn deterministic_given_seed() {
        let p = ThermalProtocol::quench(1.5, 20);
        let run = |seed| run_protocol(&mut SpinLattice::new(32, 32, seed).unwrap(), &p, &[20]).unwrap();
        assert_eq!(run(42), run(42));
        assert_ne!(run(42)[0].spins, run(43)[0].spins);
    }

    #[test]
    fn snapshot_roundtrip() {
        let mut l = SpinLattice::new(13, 7, 5).unwrap();
        let s = run_protocol(&mut l, &ThermalProtocol::quench(2.0, 3), &[3]).unwrap().remove(0);
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + 12);
        assert_eq!(LatticeSnapshot::from_bytes(&bytes).unwrap(), s);
        assert!(LatticeSnapshot::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn ensemble_matches_single_runs() {
        let p = ThermalProtocol::quench(1.0, 5);
        let e = run_ensemble(16, 16, &[1, 2], &p, &[5], |s| s.energy).unwrap();
        let single = run_protocol(&mut SpinLattice::new(16, 16, 2).unwrap(), &p, &[5]).unwrap();
        assert_eq!(e[1][0], single[0].energy);
    }
}
