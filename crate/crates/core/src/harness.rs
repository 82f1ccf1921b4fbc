//! Seeded Monte Carlo experiments: profile reconstructions, PD-vs-SNR
//! curves, ROC curves and solver timing.
//!
//! Every random draw is a pure function of the spec's `base_seed` and the
//! trial coordinates, so results do not depend on the worker count and
//! every algorithm sees the same scenes (common random numbers).

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{
    calibration_trial_seed, decide, test_cell, threshold_from_statistics, CellTest, Decision,
    DetectorConfig, ThresholdCalibration,
};
use crate::dictionary::{AngleDopplerGrid, Profile, SteeringDictionary};
use crate::error::{Result, StapError};
use crate::scene::{synthesize_snapshot, GainPhaseError, RadarConfig, Snapshot, TargetSpec};
use crate::solver::{
    aligned_error, solve_resolved, InverseErrorMode, ResolvedParams, SolveReport, SolverParams,
};
use crate::C64;

/// Below this many trials a PD estimate is refused unless overridden.
pub const MIN_PD_TRIALS: usize = 50;

// Seed streams, so that H₁, H₀ and one-off realizations never share draws.
const STREAM_H1: u64 = 1;
const STREAM_H0: u64 = 2;
const STREAM_PROFILE: u64 = 3;
const STREAM_TIMING: u64 = 4;

/// SplitMix64-style mixing of a seed path into one 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = splitmix(h);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    /// Joint profile and gain/phase estimation.
    #[serde(rename = "jie-adm")]
    JieAdm,
    /// Errors ignored (`t = 1`).
    #[serde(rename = "adm")]
    Adm,
    /// Errors known (`t = 1/c`).
    #[serde(rename = "admt")]
    Admt,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::JieAdm, Algorithm::Adm, Algorithm::Admt];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::JieAdm => "jie-adm",
            Algorithm::Adm => "adm",
            Algorithm::Admt => "admt",
        }
    }

    fn mode(self, errors: &GainPhaseError) -> InverseErrorMode {
        match self {
            Algorithm::JieAdm => InverseErrorMode::Estimate,
            Algorithm::Adm => InverseErrorMode::Fixed(vec![C64::new(1.0, 0.0); errors.c.len()]),
            Algorithm::Admt => InverseErrorMode::Fixed(errors.inverse()),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = StapError;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| StapError::Spec(format!("unknown algorithm `{s}` (expected jie-adm, adm or admt)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFactors {
    pub rho_s: f64,
    pub rho_d: f64,
}

/// Bounds of the uniformly drawn gain/phase errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorCase {
    pub eps_max: f64,
    /// Radians.
    pub phi_max: f64,
}

impl ErrorCase {
    pub const NONE: ErrorCase = ErrorCase { eps_max: 0.0, phi_max: 0.0 };

    /// `ε_max = level`, `φ_max = level·π`.
    pub fn level(level: f64) -> Self {
        Self {
            eps_max: level,
            phi_max: level * std::f64::consts::PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSpec {
    pub pfa: f64,
    /// H₀ trials per (error case, algorithm, Doppler) threshold.
    pub num_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSpec {
    /// Array sizes `M = N` to sweep.
    pub sizes: Vec<usize>,
    /// Grid oversampling in both dimensions.
    pub oversample: f64,
    /// Iterations per solve, run without early stopping.
    pub iterations: usize,
    pub repeats: usize,
}

impl Default for TimingSpec {
    /// `NM` from 16 to 144 at 5× oversampling: 400 to 3600 columns.
    fn default() -> Self {
        Self {
            sizes: vec![4, 6, 8, 10, 12],
            oversample: 5.0,
            iterations: 50,
            repeats: 5,
        }
    }
}

fn default_snr_grid() -> Vec<f64> {
    vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0]
}

fn default_pfa_grid() -> Vec<f64> {
    vec![1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 0.1, 0.2, 0.5, 1.0]
}

/// Everything one experiment needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub radar: RadarConfig,
    pub grid: GridFactors,
    pub solver: SolverParams,
    pub detector: DetectorConfig,
    pub error_cases: Vec<ErrorCase>,
    /// Targets placed in the cell under test. Profile runs inject all of
    /// them at once; PD curves use the first; ROC curves treat each as its
    /// own speed class.
    pub targets: Vec<TargetSpec>,
    pub algorithms: Vec<Algorithm>,
    pub num_trials: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    pub calibration: CalibrationSpec,
    #[serde(default = "default_snr_grid")]
    pub snr_grid: Vec<f64>,
    #[serde(default = "default_pfa_grid")]
    pub pfa_grid: Vec<f64>,
    #[serde(default)]
    pub timing: TimingSpec,
    /// Permits PD curves from fewer than [`MIN_PD_TRIALS`] trials.
    #[serde(default)]
    pub allow_few_trials: bool,
}

impl ExperimentSpec {
    /// Desk-scale defaults: `M = N = 8`, 3× oversampling, four secondary
    /// bins, 200 trials, `P_fa = 10⁻²`, one target at `f_d = 0.36`.
    pub fn desk() -> Self {
        Self {
            radar: RadarConfig::desk_scale(),
            grid: GridFactors { rho_s: 3.0, rho_d: 3.0 },
            solver: SolverParams {
                beta: 5e-4,
                ..SolverParams::default()
            },
            detector: DetectorConfig {
                num_secondary: 4,
                ..DetectorConfig::default()
            },
            error_cases: vec![ErrorCase::NONE, ErrorCase::level(0.1)],
            targets: vec![TargetSpec::boresight(0.36, -3.8)],
            algorithms: Algorithm::ALL.to_vec(),
            num_trials: 200,
            base_seed: 20_160_601,
            output_dir: PathBuf::from("out"),
            calibration: CalibrationSpec {
                pfa: 1e-2,
                num_trials: 1000,
            },
            snr_grid: default_snr_grid(),
            pfa_grid: default_pfa_grid(),
            timing: TimingSpec::default(),
            allow_few_trials: false,
        }
    }

    /// Three boresight targets, error-free / moderate / strong errors.
    pub fn fig3() -> Self {
        Self {
            error_cases: vec![ErrorCase::NONE, ErrorCase::level(0.05), ErrorCase::level(0.1)],
            targets: vec![
                TargetSpec::boresight(-0.13, 0.2),
                TargetSpec::boresight(0.11, -3.8),
                TargetSpec::boresight(0.41, -3.8),
            ],
            ..Self::desk()
        }
    }

    /// PD against SNR over six error levels.
    pub fn pd_curve() -> Self {
        Self {
            error_cases: [0.0, 0.025, 0.05, 0.1, 0.15, 0.2]
                .into_iter()
                .map(ErrorCase::level)
                .collect(),
            ..Self::desk()
        }
    }

    /// ROC for slow, medium and fast targets at `ε_max = 0.1`.
    pub fn roc() -> Self {
        Self {
            error_cases: vec![ErrorCase::level(0.1)],
            targets: vec![
                TargetSpec::boresight(0.13, 0.2),
                TargetSpec::boresight(0.23, -3.8),
                TargetSpec::boresight(0.36, -3.8),
            ],
            ..Self::desk()
        }
    }

    /// Full-size reference system: `M = N = 10`, 5× oversampling,
    /// `β = 0.1`, ten secondary bins, `P_fa = 10⁻³`.
    pub fn paper() -> Self {
        Self {
            radar: RadarConfig::l_band_reference(),
            grid: GridFactors { rho_s: 5.0, rho_d: 5.0 },
            solver: SolverParams::default(),
            detector: DetectorConfig::default(),
            calibration: CalibrationSpec {
                pfa: 1e-3,
                num_trials: 10_000,
            },
            ..Self::pd_curve()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "fig3" | "profile" => Ok(Self::fig3()),
            "fig5" | "pd" | "pd-curve" => Ok(Self::pd_curve()),
            "roc" => Ok(Self::roc()),
            "paper" => Ok(Self::paper()),
            other => Err(StapError::Spec(format!(
                "unknown preset `{other}` (expected desk, fig3, pd-curve, roc or paper)"
            ))),
        }
    }

    pub const PRESETS: [&'static str; 5] = ["desk", "fig3", "pd-curve", "roc", "paper"];

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(StapError::Spec(msg));
        self.radar.validate()?;
        self.solver.validate()?;
        self.detector.validate()?;
        AngleDopplerGrid::new(
            self.radar.num_elements,
            self.radar.num_pulses,
            self.grid.rho_s,
            self.grid.rho_d,
        )?;
        if self.algorithms.is_empty() {
            return bad("algorithms must name at least one of jie-adm, adm, admt".into());
        }
        for (k, a) in self.algorithms.iter().enumerate() {
            if self.algorithms[..k].contains(a) {
                return bad(format!("algorithm `{a}` listed twice"));
            }
        }
        if self.num_trials == 0 {
            return bad("num_trials must be at least 1".into());
        }
        if self.error_cases.is_empty() {
            return bad("error_cases must not be empty".into());
        }
        for (k, e) in self.error_cases.iter().enumerate() {
            if !(e.eps_max >= 0.0 && e.eps_max < 1.0) || !(e.phi_max >= 0.0 && e.phi_max.is_finite()) {
                return bad(format!(
                    "error_cases[{k}]: need 0 <= eps_max < 1 and phi_max >= 0, got ({}, {})",
                    e.eps_max, e.phi_max
                ));
            }
        }
        for (k, t) in self.targets.iter().enumerate() {
            let ok = |f: f64| f.is_finite() && (-0.5..0.5).contains(&f);
            if !ok(t.normalized_doppler) || !ok(t.normalized_spatial) || !t.snr_db.is_finite() {
                return bad(format!(
                    "targets[{k}]: frequencies must lie in [-0.5, 0.5) and SNR must be finite"
                ));
            }
        }
        let c = &self.calibration;
        if !(c.pfa > 0.0 && c.pfa <= 1.0) {
            return bad(format!("calibration.pfa must lie in (0, 1], got {}", c.pfa));
        }
        if c.num_trials == 0 {
            return bad("calibration.num_trials must be at least 1".into());
        }
        if self.snr_grid.iter().any(|s| !s.is_finite()) {
            return bad("snr_grid entries must be finite".into());
        }
        if self.pfa_grid.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return bad("pfa_grid entries must lie in (0, 1]".into());
        }
        let t = &self.timing;
        if t.sizes.iter().any(|&m| m < 2) || t.iterations == 0 || t.repeats == 0 {
            return bad("timing needs sizes >= 2, iterations >= 1 and repeats >= 1".into());
        }
        if !(t.oversample > 1.0) {
            return bad(format!("timing.oversample must exceed 1, got {}", t.oversample));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding. The output directory is
    /// excluded: it says where results go, not what they are.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("spec serializes");
        hex(&Sha256::digest(json))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Spec I/O and overrides

pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path).map_err(|e| StapError::io(path, e))?;
    parse_spec(&text)
}

pub fn parse_spec(text: &str) -> Result<ExperimentSpec> {
    let spec: ExperimentSpec =
        serde_json::from_str(text).map_err(|e| StapError::Spec(format!("malformed spec: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

pub fn save_spec(spec: &ExperimentSpec, path: &Path) -> Result<()> {
    write_json(path, spec)
}

/// Applies `a.b.c=value` overrides. The path must already exist in the
/// spec's JSON form; the value is parsed as JSON, falling back to a string.
pub fn apply_overrides(spec: &ExperimentSpec, overrides: &[String]) -> Result<ExperimentSpec> {
    let mut doc = serde_json::to_value(spec)?;
    for o in overrides {
        let (path, raw) = o
            .split_once('=')
            .ok_or_else(|| StapError::Spec(format!("override `{o}` is not of the form key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.into()));
        let mut slot = &mut doc;
        for key in path.split('.') {
            slot = match slot {
                serde_json::Value::Object(map) => map.get_mut(key),
                serde_json::Value::Array(items) => key.parse::<usize>().ok().and_then(|k| items.get_mut(k)),
                _ => None,
            }
            .ok_or_else(|| StapError::Spec(format!("override path `{path}` does not exist (at `{key}`)")))?;
        }
        *slot = value;
    }
    let spec: ExperimentSpec = serde_json::from_value(doc)
        .map_err(|e| StapError::Spec(format!("override produced an invalid spec: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| StapError::io(path, e))
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| StapError::io(path, e))?))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| StapError::io(dir, e))
}

// ---------------------------------------------------------------------------
// Trials

/// One algorithm's outcome on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    /// Scene seed; shared by every algorithm of the trial.
    pub seed: u64,
    pub algorithm: Algorithm,
    /// 0-based index into `error_cases`.
    pub error_case: usize,
    pub target_present: bool,
    pub snr_db: Option<f64>,
    /// One entry per tested target Doppler.
    pub doppler: Vec<f64>,
    #[serde(with = "crate::serde_ext::vec_f64_ext")]
    pub statistic_db: Vec<f64>,
    pub decisions: Vec<Decision>,
    pub iterations: usize,
}

pub fn save_records(records: &[TrialRecord], path: &Path) -> Result<()> {
    write_json(path, records)
}

pub fn load_records(path: &Path) -> Result<Vec<TrialRecord>> {
    let text = fs::read_to_string(path).map_err(|e| StapError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| StapError::Spec(format!("malformed records: {e}")))
}

/// Grid, dictionary and resolved solver parameters shared by every trial.
pub struct Workspace {
    pub grid: AngleDopplerGrid,
    pub dict: SteeringDictionary,
    pub params: ResolvedParams,
}

impl Workspace {
    pub fn new(spec: &ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        Self::for_radar(&spec.radar, spec.grid, &spec.solver)
    }

    fn for_radar(radar: &RadarConfig, grid: GridFactors, solver: &SolverParams) -> Result<Self> {
        let grid = AngleDopplerGrid::new(radar.num_elements, radar.num_pulses, grid.rho_s, grid.rho_d)?;
        let dict = SteeringDictionary::new(grid.clone());
        let params = solver.resolve(&dict)?;
        Ok(Self { grid, dict, params })
    }

    pub fn solve(&self, algorithm: Algorithm, batch: &[Snapshot], errors: &GainPhaseError) -> Result<SolveReport> {
        solve_resolved(batch, &self.dict, self.params, algorithm.mode(errors))
    }
}

/// A simulated cell under test plus its secondary range bins.
#[derive(Debug, Clone)]
pub struct Scene {
    pub seed: u64,
    pub errors: GainPhaseError,
    /// Cell under test first, then the secondaries.
    pub batch: Vec<Snapshot>,
}

/// Draws errors, then the cell under test with `targets`, then target-free
/// secondaries. The number of draws does not depend on the target SNRs, so
/// one seed gives the same clutter and noise at every SNR.
pub fn draw_scene(spec: &ExperimentSpec, case: ErrorCase, targets: &[TargetSpec], seed: u64) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let errors = GainPhaseError::draw(spec.radar.num_elements, case.eps_max, case.phi_max, &mut rng)?;
    let mut batch = Vec::with_capacity(1 + spec.detector.num_secondary);
    batch.push(synthesize_snapshot(&spec.radar, &errors, targets, &mut rng)?);
    for _ in 0..spec.detector.num_secondary {
        batch.push(synthesize_snapshot(&spec.radar, &errors, &[], &mut rng)?);
    }
    Ok(Scene { seed, errors, batch })
}

pub fn h1_seed(spec: &ExperimentSpec, case: usize, trial: usize) -> u64 {
    derive_seed(&[spec.base_seed, STREAM_H1, case as u64, trial as u64])
}

pub fn h0_seed(spec: &ExperimentSpec, case: usize, trial: usize) -> u64 {
    calibration_trial_seed(derive_seed(&[spec.base_seed, STREAM_H0, case as u64]), trial as u64)
}

/// The CFAR cell at target Doppler `fd` on a joint solve.
pub fn cell_at(spec: &ExperimentSpec, ws: &Workspace, report: &SolveReport, fd: f64, xi: f64) -> CellTest {
    test_cell(
        &report.profiles[0],
        &report.profiles[1..],
        &ws.grid,
        fd,
        spec.detector.mainlobe_spatial,
        xi,
    )
}

/// Solves `scene` with every algorithm of the spec and tests each Doppler.
fn evaluate_scene(
    spec: &ExperimentSpec,
    ws: &Workspace,
    scene: &Scene,
    trial: usize,
    case: usize,
    snr_db: Option<f64>,
    dopplers: &[f64],
    thresholds: &dyn Fn(Algorithm, usize) -> f64,
) -> Result<Vec<TrialRecord>> {
    spec.algorithms
        .iter()
        .map(|&alg| {
            let report = ws.solve(alg, &scene.batch, &scene.errors)?;
            let mut statistic_db = Vec::with_capacity(dopplers.len());
            let mut decisions = Vec::with_capacity(dopplers.len());
            for (k, &fd) in dopplers.iter().enumerate() {
                let cell = cell_at(spec, ws, &report, fd, thresholds(alg, k));
                statistic_db.push(cell.statistic_db);
                decisions.push(cell.decision);
            }
            Ok(TrialRecord {
                trial,
                seed: scene.seed,
                algorithm: alg,
                error_case: case,
                target_present: snr_db.is_some(),
                snr_db,
                doppler: dopplers.to_vec(),
                statistic_db,
                decisions,
                iterations: report.iterations,
            })
        })
        .collect()
}

/// H₀ trial `trial` of error case `case`: a target-free scene tested at each
/// Doppler of `dopplers`.
pub fn h0_trial(
    spec: &ExperimentSpec,
    ws: &Workspace,
    case: usize,
    trial: usize,
    dopplers: &[f64],
    thresholds: &dyn Fn(Algorithm, usize) -> f64,
) -> Result<Vec<TrialRecord>> {
    let seed = h0_seed(spec, case, trial);
    let scene = draw_scene(spec, spec.error_cases[case], &[], seed)?;
    evaluate_scene(spec, ws, &scene, trial, case, None, dopplers, thresholds)
}

/// H₁ trial with one target; the same `trial` gives the same clutter and
/// noise for every SNR and algorithm.
pub fn h1_trial(
    spec: &ExperimentSpec,
    ws: &Workspace,
    case: usize,
    trial: usize,
    target: TargetSpec,
    thresholds: &dyn Fn(Algorithm, usize) -> f64,
) -> Result<Vec<TrialRecord>> {
    let seed = h1_seed(spec, case, trial);
    let scene = draw_scene(spec, spec.error_cases[case], &[target], seed)?;
    evaluate_scene(
        spec,
        ws,
        &scene,
        trial,
        case,
        Some(target.snr_db),
        &[target.normalized_doppler],
        thresholds,
    )
}

fn no_threshold(_: Algorithm, _: usize) -> f64 {
    f64::INFINITY
}

fn flatten(runs: Vec<Vec<TrialRecord>>) -> Vec<TrialRecord> {
    runs.into_iter().flatten().collect()
}

// ---------------------------------------------------------------------------
// Thresholds

/// Calibrated `ξ` for one (error case, algorithm, Doppler).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedThreshold {
    pub error_case: usize,
    pub algorithm: Algorithm,
    pub doppler: f64,
    #[serde(flatten)]
    pub calibration: ThresholdCalibration,
    /// Fraction of H₀ trials with a zero median and a nonzero CUT; these
    /// alarm at any threshold, so `P_fa` below this is unreachable.
    pub forced_alarm_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub thresholds: Vec<CalibratedThreshold>,
}

impl CalibrationSet {
    pub fn xi(&self, case: usize, alg: Algorithm, fd: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .find(|t| t.error_case == case && t.algorithm == alg && t.doppler == fd)
            .map(|t| t.calibration.xi)
    }
}

/// H₀ statistics for every algorithm, `calibration.num_trials` trials.
pub fn h0_statistics(spec: &ExperimentSpec, ws: &Workspace, case: usize, dopplers: &[f64]) -> Result<Vec<TrialRecord>> {
    let runs = (0..spec.calibration.num_trials)
        .into_par_iter()
        .map(|k| h0_trial(spec, ws, case, k, dopplers, &no_threshold))
        .collect::<Result<Vec<_>>>()?;
    Ok(flatten(runs))
}

fn statistics_of(records: &[TrialRecord], alg: Algorithm, k: usize) -> Vec<f64> {
    records
        .iter()
        .filter(|r| r.algorithm == alg)
        .map(|r| r.statistic_db[k])
        .collect()
}

/// Calibrates `ξ` at `calibration.pfa` for every error case, algorithm and
/// target Doppler of the spec.
pub fn calibrate(spec: &ExperimentSpec, ws: &Workspace) -> Result<CalibrationSet> {
    if spec.targets.is_empty() {
        return Err(StapError::Spec("calibration needs at least one target Doppler".into()));
    }
    if (spec.calibration.num_trials as f64) * spec.calibration.pfa < 10.0 {
        log::warn!(
            "calibrating P_fa = {} from {} trials leaves fewer than 10 exceedances",
            spec.calibration.pfa,
            spec.calibration.num_trials
        );
    }
    let dopplers = target_dopplers(spec);
    let mut thresholds = Vec::new();
    for case in 0..spec.error_cases.len() {
        let records = h0_statistics(spec, ws, case, &dopplers)?;
        for &alg in &spec.algorithms {
            for (k, &fd) in dopplers.iter().enumerate() {
                let stats = statistics_of(&records, alg, k);
                let forced = stats.iter().filter(|s| **s == f64::INFINITY).count();
                thresholds.push(CalibratedThreshold {
                    error_case: case,
                    algorithm: alg,
                    doppler: fd,
                    calibration: ThresholdCalibration {
                        pfa: spec.calibration.pfa,
                        trials: stats.len(),
                        xi: threshold_from_statistics(&stats, spec.calibration.pfa)?,
                        seed: derive_seed(&[spec.base_seed, STREAM_H0, case as u64]),
                    },
                    forced_alarm_fraction: forced as f64 / stats.len() as f64,
                });
            }
        }
    }
    Ok(CalibrationSet { thresholds })
}

fn target_dopplers(spec: &ExperimentSpec) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for t in &spec.targets {
        if !out.contains(&t.normalized_doppler) {
            out.push(t.normalized_doppler);
        }
    }
    out
}

/// Fraction of H₀ statistics that alarm at `xi`.
pub fn false_alarm_rate(stats: &[f64], xi: f64) -> f64 {
    let hits = stats.iter().filter(|&&s| decide(s, xi) == Decision::H1).count();
    hits as f64 / stats.len().max(1) as f64
}

// ---------------------------------------------------------------------------
// Binomial helpers

/// Wilson score interval for `successes / trials` at normal quantile `z`.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// 95% two-sided normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

// ---------------------------------------------------------------------------
// Profile experiment

/// One seeded joint reconstruction.
#[derive(Debug, Clone)]
pub struct ProfileRun {
    pub error_case: usize,
    pub algorithm: Algorithm,
    pub errors: GainPhaseError,
    pub report: SolveReport,
    /// Aligned error of the estimated `c` (zero-error algorithms report the
    /// error of the vector they assume).
    pub c_error: f64,
}

impl ProfileRun {
    pub fn cut_profile(&self) -> &Profile {
        &self.report.profiles[0]
    }
}

/// Reconstructs one seeded realization with every target injected, per
/// error case and algorithm.
pub fn profile_runs(spec: &ExperimentSpec, ws: &Workspace) -> Result<Vec<ProfileRun>> {
    let cells: Vec<(usize, Algorithm)> = (0..spec.error_cases.len())
        .flat_map(|case| spec.algorithms.iter().map(move |&a| (case, a)))
        .collect();
    cells
        .into_par_iter()
        .map(|(case, alg)| {
            let seed = derive_seed(&[spec.base_seed, STREAM_PROFILE, case as u64]);
            let scene = draw_scene(spec, spec.error_cases[case], &spec.targets, seed)?;
            let report = ws.solve(alg, &scene.batch, &scene.errors)?;
            let c_error = aligned_error(&report.c, &scene.errors.c);
            Ok(ProfileRun {
                error_case: case,
                algorithm: alg,
                errors: scene.errors,
                report,
                c_error,
            })
        })
        .collect()
}

pub fn profile_file_name(case: usize, alg: Algorithm) -> String {
    format!("profile_case{}_{}.csv", case + 1, alg)
}

/// Writes `profile_case<k>_<alg>.csv` (`f_d,f_s,magnitude`) for the cell
/// under test, plus `errors_case<k>_jie-adm.csv` for joint runs.
pub fn run_profile_experiment(spec: &ExperimentSpec) -> Result<Vec<PathBuf>> {
    let ws = Workspace::new(spec)?;
    ensure_dir(&spec.output_dir)?;
    let mut written = Vec::new();
    for run in profile_runs(spec, &ws)? {
        let path = spec.output_dir.join(profile_file_name(run.error_case, run.algorithm));
        let mut out = create_file(&path)?;
        run.cut_profile()
            .write_csv(&ws.grid, &mut out)
            .and_then(|_| out.flush())
            .map_err(|e| StapError::io(&path, e))?;
        written.push(path);
        if run.algorithm == Algorithm::JieAdm {
            let path = spec
                .output_dir
                .join(format!("errors_case{}_{}.csv", run.error_case + 1, run.algorithm));
            let mut out = create_file(&path)?;
            run.report
                .write_errors_csv(&mut out)
                .and_then(|_| out.flush())
                .map_err(|e| StapError::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// PD against SNR

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdPoint {
    pub snr_db: f64,
    /// 0-based error case index.
    pub error_case: usize,
    pub algorithm: Algorithm,
    pub pd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub trials: usize,
}

#[derive(Debug, Clone)]
pub struct PdCurve {
    pub points: Vec<PdPoint>,
    pub calibration: CalibrationSet,
    pub records: Vec<TrialRecord>,
}

impl PdCurve {
    pub fn point(&self, snr_db: f64, case: usize, alg: Algorithm) -> Option<&PdPoint> {
        self.points
            .iter()
            .find(|p| p.snr_db == snr_db && p.error_case == case && p.algorithm == alg)
    }

    /// `snr_db,case,algorithm,pd,ci_lo,ci_hi,trials`, cases 1-based.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "snr_db,case,algorithm,pd,ci_lo,ci_hi,trials")?;
        for p in &self.points {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.snr_db,
                p.error_case + 1,
                p.algorithm,
                p.pd,
                p.ci_lo,
                p.ci_hi,
                p.trials
            )?;
        }
        Ok(())
    }
}

fn check_trial_count(spec: &ExperimentSpec) -> Result<()> {
    if spec.num_trials < MIN_PD_TRIALS && !spec.allow_few_trials {
        return Err(StapError::Spec(format!(
            "num_trials = {} is below {MIN_PD_TRIALS}; set allow_few_trials to override",
            spec.num_trials
        )));
    }
    Ok(())
}

/// PD at each SNR of `snr_grid` for the first target, every error case and
/// algorithm, against thresholds calibrated (or taken from `calibration`).
pub fn pd_vs_snr(
    spec: &ExperimentSpec,
    ws: &Workspace,
    snr_grid: &[f64],
    calibration: Option<CalibrationSet>,
) -> Result<PdCurve> {
    check_trial_count(spec)?;
    let base = *spec
        .targets
        .first()
        .ok_or_else(|| StapError::Spec("pd curve needs a target".into()))?;
    let calibration = match calibration {
        Some(c) => c,
        None => calibrate(spec, ws)?,
    };
    let mut points = Vec::new();
    let mut records = Vec::new();
    for case in 0..spec.error_cases.len() {
        let xi = |alg: Algorithm, _: usize| {
            calibration
                .xi(case, alg, base.normalized_doppler)
                .unwrap_or(spec.detector.threshold_db)
        };
        for &snr in snr_grid {
            let target = TargetSpec { snr_db: snr, ..base };
            let runs = (0..spec.num_trials)
                .into_par_iter()
                .map(|k| h1_trial(spec, ws, case, k, target, &xi))
                .collect::<Result<Vec<_>>>()?;
            let runs = flatten(runs);
            for &alg in &spec.algorithms {
                let hits = runs
                    .iter()
                    .filter(|r| r.algorithm == alg && r.decisions[0].is_detection())
                    .count();
                let trials = runs.iter().filter(|r| r.algorithm == alg).count();
                let (ci_lo, ci_hi) = wilson_interval(hits, trials, Z95);
                points.push(PdPoint {
                    snr_db: snr,
                    error_case: case,
                    algorithm: alg,
                    pd: hits as f64 / trials as f64,
                    ci_lo,
                    ci_hi,
                    trials,
                });
            }
            records.extend(runs);
        }
    }
    Ok(PdCurve {
        points,
        calibration,
        records,
    })
}

/// Runs [`pd_vs_snr`] and writes `pd_curve.csv`, `thresholds.json` and
/// `trials.json`.
pub fn run_pd_vs_snr(spec: &ExperimentSpec, snr_grid: &[f64]) -> Result<(PdCurve, Vec<PathBuf>)> {
    check_trial_count(spec)?;
    let ws = Workspace::new(spec)?;
    let curve = pd_vs_snr(spec, &ws, snr_grid, None)?;
    ensure_dir(&spec.output_dir)?;
    let csv = spec.output_dir.join("pd_curve.csv");
    let mut out = create_file(&csv)?;
    curve
        .write_csv(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| StapError::io(&csv, e))?;
    let thresholds = spec.output_dir.join("thresholds.json");
    write_json(&thresholds, &curve.calibration)?;
    let trials = spec.output_dir.join("trials.json");
    save_records(&curve.records, &trials)?;
    Ok((curve, vec![csv, thresholds, trials]))
}

// ---------------------------------------------------------------------------
// ROC

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub pfa: f64,
    pub pd: f64,
    pub doppler: f64,
    pub algorithm: Algorithm,
    #[serde(with = "crate::serde_ext::f64_ext")]
    pub xi: f64,
}

#[derive(Debug, Clone)]
pub struct RocCurves {
    pub points: Vec<RocPoint>,
    pub h1: Vec<TrialRecord>,
    pub h0: Vec<TrialRecord>,
}

impl RocCurves {
    /// `pfa,pd,doppler,algorithm`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "pfa,pd,doppler,algorithm")?;
        for p in &self.points {
            writeln!(out, "{},{},{},{}", p.pfa, p.pd, p.doppler, p.algorithm)?;
        }
        Ok(())
    }

    /// H₁ statistics of one speed class and algorithm, in trial order.
    pub fn h1_statistics(&self, fd: f64, alg: Algorithm) -> Vec<f64> {
        let mut v: Vec<(usize, f64)> = self
            .h1
            .iter()
            .filter(|r| r.algorithm == alg && r.doppler[0] == fd)
            .map(|r| (r.trial, r.statistic_db[0]))
            .collect();
        v.sort_by_key(|p| p.0);
        v.into_iter().map(|p| p.1).collect()
    }

    pub fn h0_statistics(&self, fd: f64, alg: Algorithm) -> Vec<f64> {
        let k = self.h0.first().and_then(|r| r.doppler.iter().position(|&d| d == fd));
        match k {
            Some(k) => statistics_of(&self.h0, alg, k),
            None => Vec::new(),
        }
    }
}

/// PD at `pfa` given sorted-or-not H₀ and H₁ statistics. `P_fa = 1` is the
/// detector that always declares H₁.
pub fn roc_point(h0: &[f64], h1: &[f64], pfa: f64) -> Result<(f64, f64)> {
    let xi = threshold_from_statistics(h0, pfa)?;
    if xi == f64::NEG_INFINITY {
        return Ok((xi, 1.0));
    }
    let hits = h1.iter().filter(|&&s| decide(s, xi) == Decision::H1).count();
    Ok((xi, hits as f64 / h1.len().max(1) as f64))
}

/// ROC curves on the first error case, one per target speed class; each
/// target carries its own SNR.
pub fn roc(spec: &ExperimentSpec, ws: &Workspace, pfa_grid: &[f64]) -> Result<RocCurves> {
    check_trial_count(spec)?;
    if spec.targets.is_empty() {
        return Err(StapError::Spec("roc needs at least one target".into()));
    }
    let case = 0;
    let dopplers = target_dopplers(spec);
    let h0 = h0_statistics(spec, ws, case, &dopplers)?;
    let mut h1 = Vec::new();
    for &target in &spec.targets {
        let runs = (0..spec.num_trials)
            .into_par_iter()
            .map(|k| h1_trial(spec, ws, case, k, target, &no_threshold))
            .collect::<Result<Vec<_>>>()?;
        h1.extend(flatten(runs));
    }
    let mut curves = RocCurves {
        points: Vec::new(),
        h1,
        h0,
    };
    let mut points = Vec::new();
    for target in &spec.targets {
        let fd = target.normalized_doppler;
        for &alg in &spec.algorithms {
            let s0 = curves.h0_statistics(fd, alg);
            let s1 = curves.h1_statistics(fd, alg);
            for &pfa in pfa_grid {
                let (xi, pd) = roc_point(&s0, &s1, pfa)?;
                points.push(RocPoint {
                    pfa,
                    pd,
                    doppler: fd,
                    algorithm: alg,
                    xi,
                });
            }
        }
    }
    curves.points = points;
    Ok(curves)
}

/// Runs [`roc`] and writes `roc.csv` and `trials.json`.
pub fn run_roc(spec: &ExperimentSpec, pfa_grid: &[f64]) -> Result<(RocCurves, Vec<PathBuf>)> {
    check_trial_count(spec)?;
    let ws = Workspace::new(spec)?;
    let curves = roc(spec, &ws, pfa_grid)?;
    ensure_dir(&spec.output_dir)?;
    let csv = spec.output_dir.join("roc.csv");
    let mut out = create_file(&csv)?;
    curves
        .write_csv(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| StapError::io(&csv, e))?;
    let trials = spec.output_dir.join("trials.json");
    let all: Vec<TrialRecord> = curves.h1.iter().chain(&curves.h0).cloned().collect();
    save_records(&all, &trials)?;
    Ok((curves, vec![csv, trials]))
}

// ---------------------------------------------------------------------------
// Timing

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingPoint {
    pub columns: usize,
    pub algorithm: Algorithm,
    /// Per solve of `iterations` iterations.
    pub mean_ms: f64,
    pub std_ms: f64,
    pub iterations: usize,
}

impl TimingPoint {
    pub fn per_iteration_ms(&self) -> f64 {
        self.mean_ms / self.iterations as f64
    }
}

pub fn write_timing_csv<W: Write>(points: &[TimingPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "columns,algorithm,mean_ms,std_ms")?;
    for p in points {
        writeln!(out, "{},{},{},{}", p.columns, p.algorithm, p.mean_ms, p.std_ms)?;
    }
    Ok(())
}

/// Wall time of fixed-length solves of JIE-ADM and plain ADM against
/// dictionary size. Runs sequentially so that timings do not contend.
pub fn timing(spec: &ExperimentSpec) -> Result<Vec<TimingPoint>> {
    spec.validate()?;
    let t = &spec.timing;
    let solver = SolverParams {
        max_iter: t.iterations,
        // Never met: every solve runs exactly `iterations` iterations.
        zeta: f64::MIN_POSITIVE,
        ..spec.solver.clone()
    };
    let grid = GridFactors {
        rho_s: t.oversample,
        rho_d: t.oversample,
    };
    let mut points = Vec::new();
    for &m in &t.sizes {
        let radar = spec.radar.with_dimensions(m, m);
        let ws = Workspace::for_radar(&radar, grid, &solver)?;
        let sized = ExperimentSpec {
            radar,
            ..spec.clone()
        };
        let seed = derive_seed(&[spec.base_seed, STREAM_TIMING, m as u64]);
        let case = spec.error_cases.last().copied().unwrap_or(ErrorCase::NONE);
        let target = spec.targets.first().copied().into_iter().collect::<Vec<_>>();
        let scene = draw_scene(&sized, case, &target, seed)?;
        for alg in [Algorithm::JieAdm, Algorithm::Adm] {
            // One untimed warm-up solve.
            ws.solve(alg, &scene.batch, &scene.errors)?;
            let mut samples = Vec::with_capacity(t.repeats);
            for _ in 0..t.repeats {
                let start = Instant::now();
                let report = ws.solve(alg, &scene.batch, &scene.errors)?;
                samples.push(start.elapsed().as_secs_f64() * 1e3);
                debug_assert_eq!(report.iterations, t.iterations);
            }
            let (mean, std) = mean_std(&samples);
            points.push(TimingPoint {
                columns: ws.dict.num_columns(),
                algorithm: alg,
                mean_ms: mean,
                std_ms: std,
                iterations: t.iterations,
            });
        }
    }
    Ok(points)
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Runs [`timing`] and writes `timing.csv`.
pub fn run_timing(spec: &ExperimentSpec) -> Result<(Vec<TimingPoint>, Vec<PathBuf>)> {
    let points = timing(spec)?;
    ensure_dir(&spec.output_dir)?;
    let csv = spec.output_dir.join("timing.csv");
    let mut out = create_file(&csv)?;
    write_timing_csv(&points, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| StapError::io(&csv, e))?;
    Ok((points, vec![csv]))
}

/// Calibrates every threshold and writes `thresholds.json`.
pub fn run_calibration(spec: &ExperimentSpec) -> Result<(CalibrationSet, Vec<PathBuf>)> {
    let ws = Workspace::new(spec)?;
    let set = calibrate(spec, &ws)?;
    ensure_dir(&spec.output_dir)?;
    let path = spec.output_dir.join("thresholds.json");
    write_json(&path, &set)?;
    Ok((set, vec![path]))
}

// ---------------------------------------------------------------------------
// Run manifest

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

/// Written before a run starts and rewritten when it ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub status: RunStatus,
    pub spec_hash: String,
    pub base_seed: u64,
    pub version: String,
    pub spec: ExperimentSpec,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn new(command: &str, spec: &ExperimentSpec) -> Self {
        Self {
            command: command.into(),
            status: RunStatus::Running,
            spec_hash: spec.hash(),
            base_seed: spec.base_seed,
            version: env!("CARGO_PKG_VERSION").into(),
            spec: spec.clone(),
            outputs: Vec::new(),
            error: None,
        }
    }

    pub fn path(dir: &Path) -> PathBuf {
        dir.join(Self::FILE_NAME)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        ensure_dir(dir)?;
        let path = Self::path(dir);
        write_json(&path, self)?;
        Ok(path)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        let text = fs::read_to_string(&path).map_err(|e| StapError::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Records output file names relative to `dir`.
    pub fn finish(&mut self, dir: &Path, outputs: &[PathBuf]) {
        self.status = RunStatus::Complete;
        self.outputs = outputs
            .iter()
            .map(|p| p.strip_prefix(dir).unwrap_or(p).display().to_string())
            .collect();
    }

    pub fn fail(&mut self, err: &StapError) {
        self.status = RunStatus::Failed;
        self.error = Some(err.to_string());
    }
}
