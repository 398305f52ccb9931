//! Seeded Monte-Carlo experiments, CSV output and brute-force validation
//! oracles.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{noma_no_irs, oma_maxmin, quantized_result, Mode, OmaPhases, QuantizationSpec};
use crate::channels::{
    dbm_to_watts, derive_seed, rng_from, sample_channels, ChannelParams, ChannelSet, Geometry, PhaseConfig, Point3,
};
use crate::error::{Error, Result};
use crate::miso::solve_miso;
use crate::numerics::{cis, ComplexVector};
use crate::ordering::{order_users, OrderingResult};
use crate::phase_step::target_sinrs;
use crate::siso::{optimal_power_allocation, solve_siso, PhaseUpdate, SolveResult, SolverConfig};

/// Configuration schema version understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

/// Largest user count accepted by the exhaustive ordering oracle.
pub const MAX_ORACLE_USERS: usize = 5;
/// Largest element count accepted by the phase-grid oracle.
pub const MAX_GRID_ELEMENTS: usize = 4;
/// Largest number of phase levels per element for the grid oracle.
pub const MAX_GRID_LEVELS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "irs-noma")]
    IrsNoma,
    #[serde(rename = "irs-oma")]
    IrsOma,
    #[serde(rename = "noma")]
    Noma,
    #[serde(rename = "oma")]
    Oma,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::IrsNoma, Scheme::IrsOma, Scheme::Noma, Scheme::Oma];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::IrsNoma => "irs-noma",
            Scheme::IrsOma => "irs-oma",
            Scheme::Noma => "noma",
            Scheme::Oma => "oma",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    PowerDbm,
    Elements,
    Users,
    Antennas,
    Bits,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "power_dbm" => Self::PowerDbm,
            "elements" => Self::Elements,
            "users" => Self::Users,
            "antennas" => Self::Antennas,
            "bits" => Self::Bits,
            _ => return Err(Error::Config(format!("unknown sweep parameter '{s}'"))),
        })
    }
}

/// One sweep value as written in the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Number(f64),
    Text(String),
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepValue::Number(x) => write!(f, "{x}"),
            SweepValue::Text(t) => write!(f, "{t}"),
        }
    }
}

impl SweepValue {
    /// Parse a CLI token: a number, or free text such as `continuous`.
    pub fn parse(s: &str) -> Self {
        s.trim()
            .parse::<f64>()
            .map(SweepValue::Number)
            .unwrap_or_else(|_| SweepValue::Text(s.trim().to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<SweepValue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// The geometry's listed user positions, in order.
    #[default]
    Fixed,
    /// Uniform in the drop region, redrawn every trial.
    Random,
}

/// Axis-aligned user drop area at a fixed height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropRegion {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub height: f64,
}

impl Default for DropRegion {
    fn default() -> Self {
        Self {
            x: [30.0, 50.0],
            y: [15.0, 30.0],
            height: 1.5,
        }
    }
}

/// Link-budget parameters in the units used by configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Pathloss at 1 m, dB (negative).
    pub pathloss_ref_db: f64,
    pub exponent_bs_user: f64,
    pub exponent_bs_irs: f64,
    pub exponent_irs_user: f64,
    pub rician_k1: f64,
    pub rician_k2: f64,
    pub noise_dbm: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let p = ChannelParams::default();
        Self {
            pathloss_ref_db: 10.0 * p.pathloss_ref_gain.log10(),
            exponent_bs_user: p.exponent_bs_user,
            exponent_bs_irs: p.exponent_bs_irs,
            exponent_irs_user: p.exponent_irs_user,
            rician_k1: p.rician_k1,
            rician_k2: p.rician_k2,
            noise_dbm: crate::channels::watts_to_dbm(p.noise_power),
        }
    }
}

impl ChannelConfig {
    pub fn to_params(&self) -> ChannelParams {
        ChannelParams {
            pathloss_ref_gain: 10f64.powf(self.pathloss_ref_db / 10.0),
            exponent_bs_user: self.exponent_bs_user,
            exponent_bs_irs: self.exponent_bs_irs,
            exponent_irs_user: self.exponent_irs_user,
            rician_k1: self.rician_k1,
            rician_k2: self.rician_k2,
            noise_power: dbm_to_watts(self.noise_dbm),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub users: usize,
    pub elements: usize,
    pub antennas: usize,
    pub power_dbm: f64,
    /// Phase resolution applied after optimization of the IRS-NOMA scheme.
    pub bits: QuantizationSpec,
    pub placement: Placement,
    pub drop_region: DropRegion,
    pub geometry: Geometry,
    pub channel: ChannelConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            users: 2,
            elements: 16,
            antennas: 1,
            power_dbm: 10.0,
            bits: QuantizationSpec::Continuous,
            placement: Placement::Fixed,
            drop_region: DropRegion::default(),
            geometry: Geometry::default(),
            channel: ChannelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub eps: f64,
    pub eps_b: f64,
    pub randomization_trials: usize,
    pub iteration_cap: usize,
    /// `joint` or `fixed-split`; single-antenna solves only.
    pub phase_update: PhaseUpdate,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            eps: d.eps,
            eps_b: d.eps_b,
            randomization_trials: d.randomization_trials,
            iteration_cap: d.iteration_cap,
            phase_update: d.phase_update,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    /// Solver family; `None` picks single-antenna when `antennas = 1`.
    #[serde(default)]
    pub mode: Option<Mode>,
    /// OMA with IRS reconfigures phases for every user's slot.
    #[serde(default)]
    pub oma_per_slot_phases: bool,
    /// Fill `runtime_ms`; off by default so output is reproducible byte for byte.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub scenario: Scenario,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub solver: SolverSettings,
}

fn default_schemes() -> Vec<Scheme> {
    Scheme::ALL.to_vec()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            trials: 1,
            master_seed: 0,
            schemes: default_schemes(),
            mode: None,
            oma_per_slot_phases: false,
            record_timing: false,
            scenario: Scenario::default(),
            sweep: None,
            solver: SolverSettings::default(),
        }
    }
}

/// Scenario values for one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub label: String,
    pub users: usize,
    pub elements: usize,
    pub antennas: usize,
    pub power_dbm: f64,
    pub bits: QuantizationSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be ≥ 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("at least one scheme is required".into()));
        }
        if self.solver.randomization_trials == 0 || self.solver.iteration_cap == 0 {
            return Err(Error::Config("randomization_trials and iteration_cap must be ≥ 1".into()));
        }
        if !(self.solver.eps > 0.0 && self.solver.eps_b > 0.0) {
            return Err(Error::Config("eps and eps_b must be positive".into()));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep values must be non-empty".into()));
            }
        }
        self.scenario.geometry.validate()?;
        self.scenario.channel.to_params().validate()?;
        let r = &self.scenario.drop_region;
        if !(r.x[0] <= r.x[1] && r.y[0] <= r.y[1]) {
            return Err(Error::Config("drop region bounds must be ordered".into()));
        }
        for p in self.points()? {
            if p.users < 2 {
                return Err(Error::Config("at least two users are required".into()));
            }
            if p.antennas == 0 {
                return Err(Error::Config("at least one antenna is required".into()));
            }
            if self.scenario.placement == Placement::Fixed
                && self.scenario.geometry.user_positions.len() < p.users
            {
                return Err(Error::Config(format!(
                    "{} users requested but only {} fixed positions given; use placement = \"random\"",
                    p.users,
                    self.scenario.geometry.user_positions.len()
                )));
            }
            if self.mode_for(&p) == Mode::Siso && p.antennas != 1 {
                return Err(Error::Config("single-antenna mode needs antennas = 1".into()));
            }
            self.scenario.geometry.grid_for(p.elements)?;
        }
        Ok(())
    }

    pub fn mode_for(&self, p: &Point) -> Mode {
        self.mode
            .unwrap_or(if p.antennas == 1 { Mode::Siso } else { Mode::Miso })
    }

    /// Sweep points in configuration order; a single point without a sweep.
    pub fn points(&self) -> Result<Vec<Point>> {
        let s = &self.scenario;
        let base = Point {
            label: String::new(),
            users: s.users,
            elements: s.elements,
            antennas: s.antennas,
            power_dbm: s.power_dbm,
            bits: s.bits,
        };
        let Some(sweep) = &self.sweep else {
            return Ok(vec![Point {
                label: "-".into(),
                ..base
            }]);
        };
        let count = |v: &SweepValue| -> Result<usize> {
            match v {
                SweepValue::Number(x) if *x >= 0.0 && x.fract() == 0.0 => Ok(*x as usize),
                _ => Err(Error::Config(format!("sweep value '{v}' is not a count"))),
            }
        };
        sweep
            .values
            .iter()
            .map(|v| {
                let mut p = Point {
                    label: v.to_string(),
                    ..base.clone()
                };
                match sweep.param {
                    SweepParam::PowerDbm => match v {
                        SweepValue::Number(x) if x.is_finite() => p.power_dbm = *x,
                        _ => return Err(Error::Config(format!("power value '{v}' is not a number"))),
                    },
                    SweepParam::Elements => p.elements = count(v)?,
                    SweepParam::Users => p.users = count(v)?,
                    SweepParam::Antennas => p.antennas = count(v)?,
                    SweepParam::Bits => {
                        p.bits = match v {
                            SweepValue::Number(_) => count(v)?.to_string().parse()?,
                            SweepValue::Text(t) => t.parse()?,
                        }
                    }
                }
                Ok(p)
            })
            .collect()
    }

    pub fn solver_config(&self, power: f64, seed: u64) -> SolverConfig {
        SolverConfig {
            power,
            eps: self.solver.eps,
            eps_b: self.solver.eps_b,
            randomization_trials: self.solver.randomization_trials,
            iteration_cap: self.solver.iteration_cap,
            seed,
            phase_update: self.solver.phase_update,
        }
    }
}

/// One CSV line: a single user's outcome under one scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub trial: usize,
    pub sweep_value: String,
    pub scheme: String,
    pub user_index: usize,
    /// bits/s/Hz.
    pub rate: f64,
    /// Linear SINR with `rate = log₂(1 + q_linear)`.
    pub q_linear: f64,
    pub iterations: usize,
    pub runtime_ms: f64,
    pub seed: u64,
    /// `ok`, `ok:<flags>` or `failed:<reason>`.
    pub status: String,
}

impl ResultRow {
    pub fn failed(&self) -> bool {
        self.status.starts_with("failed")
    }
}

/// Seed of the channel draw for a trial; shared by every sweep point and scheme.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    derive_seed(master, &[trial as u64])
}

const STREAM_PLACEMENT: u64 = 0x706c;
const STREAM_SOLVER: u64 = 0x736f;

fn user_positions(cfg: &ExperimentConfig, users: usize, seed: u64) -> Vec<Point3> {
    let s = &cfg.scenario;
    match s.placement {
        Placement::Fixed => s.geometry.user_positions[..users].to_vec(),
        Placement::Random => {
            let mut rng = rng_from(derive_seed(seed, &[STREAM_PLACEMENT]));
            let r = &s.drop_region;
            (0..users)
                .map(|_| {
                    let x = r.x[0] + (r.x[1] - r.x[0]) * rng.random::<f64>();
                    let y = r.y[0] + (r.y[1] - r.y[0]) * rng.random::<f64>();
                    [x, y, r.height]
                })
                .collect()
        }
    }
}

/// Channels for one trial at one sweep point.
pub fn trial_channels(cfg: &ExperimentConfig, point: &Point, trial: usize) -> Result<ChannelSet> {
    let seed = trial_seed(cfg.master_seed, trial);
    let mut geometry = cfg.scenario.geometry.clone();
    geometry.user_positions = user_positions(cfg, point.users, seed);
    sample_channels(
        &geometry,
        &cfg.scenario.channel.to_params(),
        point.users,
        point.elements,
        point.antennas,
        seed,
    )
}

struct SchemeOutcome {
    /// Per original user: (rate, q).
    per_user: Vec<(f64, f64)>,
    iterations: usize,
    flags: Vec<&'static str>,
}

fn noma_outcome(r: &SolveResult, k: usize) -> SchemeOutcome {
    let mut per_user = vec![(f64::NAN, f64::NAN); k];
    for (pos, &user) in r.order.iter().enumerate() {
        let rate = r.rates[pos];
        per_user[user] = (rate, rate.exp2() - 1.0);
    }
    let mut flags = Vec::new();
    if r.flags.iteration_cap_reached {
        flags.push("iteration_cap");
    }
    if r.flags.ordering_unmet {
        flags.push("ordering_unmet");
    }
    if r.flags.extraction_fallback {
        flags.push("extraction_fallback");
    }
    SchemeOutcome {
        per_user,
        iterations: r.iterations,
        flags,
    }
}

fn run_scheme(
    cfg: &ExperimentConfig,
    point: &Point,
    ch: &ChannelSet,
    scheme: Scheme,
    solver: &SolverConfig,
) -> Result<SchemeOutcome> {
    let mode = cfg.mode_for(point);
    let k = ch.users();
    match scheme {
        Scheme::IrsNoma => {
            let ordering = order_users(ch, solver.randomization_trials, solver.seed)?;
            let r = match mode {
                Mode::Siso => solve_siso(ch, &ordering, solver)?,
                Mode::Miso => solve_miso(ch, &ordering, solver)?,
            };
            let r = match point.bits {
                QuantizationSpec::Continuous => r,
                spec => quantized_result(ch, &r, spec, solver.power)?,
            };
            Ok(noma_outcome(&r, k))
        }
        Scheme::Noma => Ok(noma_outcome(&noma_no_irs(ch, mode, solver)?, k)),
        Scheme::IrsOma | Scheme::Oma => {
            let phases = match (scheme, cfg.oma_per_slot_phases) {
                (Scheme::Oma, _) => OmaPhases::None,
                (_, true) => OmaPhases::PerSlot,
                (_, false) => OmaPhases::Shared,
            };
            let r = oma_maxmin(ch, solver.power, phases, solver.randomization_trials, solver.seed)?;
            Ok(SchemeOutcome {
                per_user: r.rates.iter().map(|&x| (x, x.exp2() - 1.0)).collect(),
                iterations: 1,
                flags: Vec::new(),
            })
        }
    }
}

fn rows_for_item(cfg: &ExperimentConfig, point: &Point, trial: usize) -> Vec<ResultRow> {
    let seed = trial_seed(cfg.master_seed, trial);
    let power = dbm_to_watts(point.power_dbm);
    let channels = trial_channels(cfg, point, trial).map_err(|e| e.to_string());
    let mut rows = Vec::with_capacity(cfg.schemes.len() * point.users);
    for (si, &scheme) in cfg.schemes.iter().enumerate() {
        // Independent of the sweep point, so a resolution sweep quantizes one solve.
        let solver_seed = derive_seed(seed, &[STREAM_SOLVER, si as u64]);
        let solver = cfg.solver_config(power, solver_seed);
        let start = Instant::now();
        let outcome = channels
            .as_ref()
            .map_err(Clone::clone)
            .and_then(|ch| run_scheme(cfg, point, ch, scheme, &solver).map_err(|e| e.to_string()));
        let runtime_ms = if cfg.record_timing {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        for user in 0..point.users {
            let row = match &outcome {
                Ok(o) => ResultRow {
                    trial,
                    sweep_value: point.label.clone(),
                    scheme: scheme.name().into(),
                    user_index: user,
                    rate: o.per_user[user].0,
                    q_linear: o.per_user[user].1,
                    iterations: o.iterations,
                    runtime_ms,
                    seed: solver_seed,
                    status: if o.flags.is_empty() {
                        "ok".into()
                    } else {
                        format!("ok:{}", o.flags.join("+"))
                    },
                },
                Err(e) => ResultRow {
                    trial,
                    sweep_value: point.label.clone(),
                    scheme: scheme.name().into(),
                    user_index: user,
                    rate: f64::NAN,
                    q_linear: f64::NAN,
                    iterations: 0,
                    runtime_ms,
                    seed: solver_seed,
                    status: format!("failed:{e}"),
                },
            };
            rows.push(row);
        }
    }
    rows
}

/// Run every (sweep point, trial) pair in parallel and return rows ordered
/// by sweep point, trial, scheme and user. Solver failures become rows with
/// a `failed:` status.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let points = cfg.points()?;
    let items: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..cfg.trials).map(move |t| (p, t)))
        .collect();
    let chunks: Vec<Vec<ResultRow>> = items
        .par_iter()
        .map(|&(p, t)| rows_for_item(cfg, &points[p], t))
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Mean over trials of each scheme's minimum user rate, per sweep label.
pub fn mean_min_rates(rows: &[ResultRow]) -> Vec<(String, String, f64)> {
    use std::collections::BTreeMap;
    let mut mins: BTreeMap<(String, String, usize), f64> = BTreeMap::new();
    let mut first_seen: Vec<(String, String)> = Vec::new();
    for r in rows {
        let key = (r.sweep_value.clone(), r.scheme.clone());
        if !first_seen.contains(&key) {
            first_seen.push(key.clone());
        }
        let e = mins.entry((key.0, key.1, r.trial)).or_insert(f64::INFINITY);
        *e = e.min(r.rate);
    }
    first_seen
        .into_iter()
        .map(|(v, s)| {
            let vals: Vec<f64> = mins
                .iter()
                .filter(|((a, b, _), _)| *a == v && *b == s)
                .map(|(_, x)| *x)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            (v, s, mean)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Oracles.

/// Best max-min SINR over all `K!` decoding orders. Ties keep the first
/// permutation in lexicographic order.
pub fn exhaustive_order_oracle(ch: &ChannelSet, mode: Mode, config: &SolverConfig) -> Result<(Vec<usize>, f64)> {
    let k = ch.users();
    if k > MAX_ORACLE_USERS {
        return Err(Error::Refused(format!(
            "exhaustive ordering over {k}! permutations exceeds the K ≤ {MAX_ORACLE_USERS} guard"
        )));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for perm in permutations(k) {
        let ordering = OrderingResult {
            permutation: perm.clone(),
            strengths: Vec::new(),
            best_phases: Vec::new(),
        };
        let r = match mode {
            Mode::Siso => solve_siso(ch, &ordering, config)?,
            Mode::Miso => solve_miso(ch, &ordering, config)?,
        };
        if best.as_ref().is_none_or(|(_, q)| r.q_star > *q) {
            best = Some((perm, r.q_star));
        }
    }
    Ok(best.expect("at least one permutation"))
}

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..k).collect();
    loop {
        out.push(p.clone());
        // Next lexicographic permutation.
        let Some(i) = (1..k).rev().find(|&i| p[i - 1] < p[i]) else {
            return out;
        };
        let j = (i..k).rev().find(|&j| p[j] > p[i - 1]).expect("pivot exists");
        p.swap(i - 1, j);
        p[i..].reverse();
    }
}

/// Exhaustive search over `levels^M` phase tuples `θ_m ∈ {2πl/levels}`.
/// `inner` scores the combined channels `h_k` (users in the channel's own
/// order) at each tuple; the best score and its phases are returned.
pub fn grid_phase_oracle(
    ch: &ChannelSet,
    levels: usize,
    mut inner: impl FnMut(&[ComplexVector]) -> Result<f64>,
) -> Result<(f64, PhaseConfig)> {
    let m = ch.elements();
    if m > MAX_GRID_ELEMENTS || levels == 0 || levels > MAX_GRID_LEVELS {
        return Err(Error::Refused(format!(
            "grid of {levels} levels over {m} elements exceeds the M ≤ {MAX_GRID_ELEMENTS}, levels ≤ {MAX_GRID_LEVELS} guard"
        )));
    }
    let k = ch.users();
    let gammas = (0..k).map(|u| ch.lifted_gamma(u)).collect::<Result<Vec<_>>>()?;
    let rots: Vec<_> = (0..levels).map(|l| cis(2.0 * PI * l as f64 / levels as f64)).collect();
    let mut idx = vec![0usize; m];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut hs: Vec<ComplexVector> = vec![ComplexVector::zeros(ch.antennas()); k];
    loop {
        for (u, g) in gammas.iter().enumerate() {
            // h^H = v^H + Σ e^{jθ_i} row_i(Γ)
            let mut row = g.row(m).into_owned();
            for (i, &l) in idx.iter().enumerate() {
                row += g.row(i) * rots[l];
            }
            hs[u] = row.adjoint();
        }
        let score = inner(&hs)?;
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, idx.clone()));
        }
        // Odometer increment.
        let mut pos = 0;
        loop {
            if pos == m {
                let (q, best_idx) = best.expect("at least one tuple");
                let theta = best_idx
                    .iter()
                    .map(|&l| 2.0 * PI * l as f64 / levels as f64)
                    .collect();
                return Ok((q, PhaseConfig::from_theta(theta)));
            }
            idx[pos] += 1;
            if idx[pos] < levels {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Grid scorer: users decoded in ascending strength at each tuple, closed-form
/// power split, exact SIC-aware max-min SINR.
pub fn closed_form_power_score(power: f64, noise: f64) -> impl FnMut(&[ComplexVector]) -> Result<f64> {
    move |hs: &[ComplexVector]| {
        let mut sorted: Vec<ComplexVector> = hs.to_vec();
        sorted.sort_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()));
        let s: Vec<f64> = sorted.iter().map(|h| h.norm_squared()).collect();
        let (alpha, _) = optimal_power_allocation(&s, power, noise)?;
        Ok(target_sinrs(&sorted, &alpha.beams(power), noise)
            .into_iter()
            .fold(f64::INFINITY, f64::min))
    }
}

/// Grid scorer with the transmit beams held fixed.
pub fn fixed_beam_score(beams: Vec<ComplexVector>, noise: f64) -> impl FnMut(&[ComplexVector]) -> Result<f64> {
    move |hs: &[ComplexVector]| {
        Ok(target_sinrs(hs, &beams, noise)
            .into_iter()
            .fold(f64::INFINITY, f64::min))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_listing() {
        assert_eq!(permutations(2), vec![vec![0, 1], vec![1, 0]]);
        let p = permutations(4);
        assert_eq!(p.len(), 24);
        assert_eq!(p[0], vec![0, 1, 2, 3]);
        assert_eq!(p[23], vec![3, 2, 1, 0]);
    }

    #[test]
    fn config_round_trip_and_rejection() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let bad = format!("{text}\nbogus = 1\n");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::Config(_))));
        let wrong_version = text.replace("schema_version = 1", "schema_version = 9");
        assert!(ExperimentConfig::from_toml(&wrong_version).is_err());
    }

    #[test]
    fn sweep_points() {
        let mut cfg = ExperimentConfig::default();
        cfg.sweep = Some(Sweep {
            param: SweepParam::Bits,
            values: vec![SweepValue::Number(1.0), SweepValue::Text("continuous".into())],
        });
        let pts = cfg.points().unwrap();
        assert_eq!(pts[0].bits, QuantizationSpec::Bits(1));
        assert_eq!(pts[1].bits, QuantizationSpec::Continuous);
        cfg.sweep = Some(Sweep {
            param: SweepParam::Users,
            values: vec![SweepValue::Number(2.5)],
        });
        assert!(cfg.points().is_err());
    }

    #[test]
    fn fixed_placement_needs_positions() {
        let mut cfg = ExperimentConfig::default();
        cfg.scenario.users = 3;
        assert!(cfg.validate().is_err());
        cfg.scenario.placement = Placement::Random;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn oracle_guards() {
        let ch = sample_channels(&Geometry::default(), &ChannelParams::default(), 2, 5, 1, 0).unwrap();
        assert!(matches!(
            grid_phase_oracle(&ch, 4, |_| Ok(0.0)),
            Err(Error::Refused(_))
        ));
        let ch = sample_channels(&Geometry::default(), &ChannelParams::default(), 2, 1, 1, 0).unwrap();
        assert!(matches!(grid_phase_oracle(&ch, 65, |_| Ok(0.0)), Err(Error::Refused(_))));
    }
}
