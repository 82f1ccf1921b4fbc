//! Median CFAR detection on recovered spatio-Doppler profiles.
//!
//! For a candidate Doppler frequency the detector sums `|α|` over one
//! spatio-Doppler resolution cell centred on (`f_d`, mainlobe `f_s`) in the
//! cell under test, and compares it in decibels against the median of the
//! same sum over the secondary range bins.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dictionary::{AngleDopplerGrid, Profile};
use crate::error::{Result, StapError};
use crate::C64;

/// Slack applied to window edges so that grid points lying on an edge are
/// excluded irrespective of rounding.
const EDGE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Spatial frequency of the transmit mainlobe (0 at boresight).
    #[serde(default)]
    pub mainlobe_spatial: f64,
    /// Secondary range bins feeding the median.
    pub num_secondary: usize,
    /// Guard bins per side of the cell under test.
    pub num_guard: usize,
    /// Decision threshold `ξ`, dB.
    pub threshold_db: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            mainlobe_spatial: 0.0,
            num_secondary: 10,
            num_guard: 2,
            threshold_db: 10.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_secondary == 0 {
            return Err(StapError::InvalidConfig(
                "detector needs at least one secondary range bin".into(),
            ));
        }
        if !self.mainlobe_spatial.is_finite() || !(-0.5..0.5).contains(&self.mainlobe_spatial) {
            return Err(StapError::InvalidConfig(format!(
                "mainlobe_spatial must lie in [-0.5, 0.5), got {}",
                self.mainlobe_spatial
            )));
        }
        if self.threshold_db.is_nan() {
            return Err(StapError::InvalidConfig("threshold_db is NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    H0,
    H1,
}

impl Decision {
    pub fn is_detection(self) -> bool {
        self == Decision::H1
    }
}

/// Profile entries whose grid frequencies fall strictly inside
/// `(f_d − 1/2N, f_d + 1/2N) × (f_s − 1/2M, f_s + 1/2M)`.
pub fn extract_window(profile: &Profile, grid: &AngleDopplerGrid, fd: f64, fs: f64) -> Vec<C64> {
    window_columns(grid, fd, fs)
        .into_iter()
        .map(|q| profile.0[q])
        .collect()
}

/// Dictionary columns of the test window, Doppler-major.
pub fn window_columns(grid: &AngleDopplerGrid, fd: f64, fs: f64) -> Vec<usize> {
    let dop = window_indices(fd, 0.5 / grid.num_pulses as f64, grid.num_doppler);
    let spa = window_indices(fs, 0.5 / grid.num_elements as f64, grid.num_spatial);
    let mut out = Vec::with_capacity(dop.len() * spa.len());
    for &kd in &dop {
        for &ks in &spa {
            out.push(grid.column_index(kd, ks));
        }
    }
    out
}

/// Grid indices `k` with `|(-0.5 + k/count) − centre| < half_width`.
fn window_indices(centre: f64, half_width: f64, count: usize) -> Vec<usize> {
    let limit = half_width - EDGE_SLACK;
    (0..count)
        .filter(|&k| {
            let f = -0.5 + k as f64 / count as f64;
            (f - centre).abs() < limit
        })
        .collect()
}

/// `ϑ = Σ |entries|`.
pub fn test_statistic(window: &[C64]) -> f64 {
    window.iter().map(|z| z.norm()).sum()
}

/// Median with the two central order statistics averaged for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// `20 log10 ϑ_CUT − 20 log10 median(ϑ_l)`, with `+∞` for a positive CUT
/// over a zero median and `−∞` for a zero CUT.
pub fn cfar_statistic_db(cut: f64, median_secondary: f64) -> f64 {
    if cut <= 0.0 {
        f64::NEG_INFINITY
    } else if median_secondary <= 0.0 {
        f64::INFINITY
    } else {
        20.0 * cut.log10() - 20.0 * median_secondary.log10()
    }
}

/// Median CFAR decision: H₁ iff the dB ratio exceeds `threshold_db`.
pub fn median_cfar(cut: f64, secondary: &[f64], threshold_db: f64) -> Decision {
    let med = median(secondary).unwrap_or(0.0);
    decide(cfar_statistic_db(cut, med), threshold_db)
}

/// `±∞` statistics (zero CUT or zero median) decide regardless of `ξ`.
pub fn decide(statistic_db: f64, threshold_db: f64) -> Decision {
    if statistic_db == f64::NEG_INFINITY {
        Decision::H0
    } else if statistic_db == f64::INFINITY || statistic_db > threshold_db {
        Decision::H1
    } else {
        Decision::H0
    }
}

/// Per-cell inputs and outcome of the median CFAR test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTest {
    pub doppler: f64,
    pub theta_cut: f64,
    pub median_secondary: f64,
    #[serde(with = "crate::serde_ext::f64_ext")]
    pub statistic_db: f64,
    pub decision: Decision,
}

/// Median CFAR test at one (Doppler, mainlobe) cell.
pub fn test_cell(
    cut: &Profile,
    secondary: &[Profile],
    grid: &AngleDopplerGrid,
    fd: f64,
    fs: f64,
    threshold_db: f64,
) -> CellTest {
    let theta_cut = test_statistic(&extract_window(cut, grid, fd, fs));
    let thetas: Vec<f64> = secondary
        .iter()
        .map(|p| test_statistic(&extract_window(p, grid, fd, fs)))
        .collect();
    let median_secondary = median(&thetas).unwrap_or(0.0);
    let statistic_db = cfar_statistic_db(theta_cut, median_secondary);
    CellTest {
        doppler: fd,
        theta_cut,
        median_secondary,
        statistic_db,
        decision: decide(statistic_db, threshold_db),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub threshold_db: f64,
    pub mainlobe_spatial: f64,
    pub cells: Vec<CellTest>,
}

impl DetectionReport {
    /// `f_d,statistic_db,decision` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "f_d,statistic_db,decision")?;
        for c in &self.cells {
            let d = match c.decision {
                Decision::H0 => "H0",
                Decision::H1 => "H1",
            };
            writeln!(out, "{},{},{}", c.doppler, c.statistic_db, d)?;
        }
        Ok(())
    }

    pub fn detections(&self) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.decision.is_detection())
            .map(|(k, _)| k)
            .collect()
    }
}

/// Tests every grid Doppler value at the mainlobe spatial frequency.
pub fn detect_doppler_sweep(
    cut: &Profile,
    secondary: &[Profile],
    grid: &AngleDopplerGrid,
    cfg: &DetectorConfig,
) -> DetectionReport {
    let cells = grid
        .doppler_values()
        .into_iter()
        .map(|fd| test_cell(cut, secondary, grid, fd, cfg.mainlobe_spatial, cfg.threshold_db))
        .collect();
    DetectionReport {
        threshold_db: cfg.threshold_db,
        mainlobe_spatial: cfg.mainlobe_spatial,
        cells,
    }
}

/// Outcome of a Monte Carlo threshold calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCalibration {
    pub pfa: f64,
    pub trials: usize,
    #[serde(with = "crate::serde_ext::f64_ext")]
    pub xi: f64,
    pub seed: u64,
}

/// 1-based rank of the order statistic used as the `1 − P_fa` quantile,
/// `ceil((1 − P_fa) n)`; 0 means "below every sample".
pub fn quantile_rank(pfa: f64, n: usize) -> usize {
    let r = ((1.0 - pfa) * n as f64 - 1e-9).ceil();
    (r.max(0.0) as usize).min(n)
}

/// Empirical `1 − P_fa` quantile of H₀ statistics; `−∞` when every sample
/// must exceed it.
pub fn threshold_from_statistics(stats: &[f64], pfa: f64) -> Result<f64> {
    if stats.is_empty() {
        return Err(StapError::InvalidParameter(
            "threshold calibration needs at least one trial".into(),
        ));
    }
    if !(pfa > 0.0 && pfa <= 1.0) {
        return Err(StapError::InvalidParameter(format!(
            "false alarm probability must lie in (0, 1], got {pfa}"
        )));
    }
    let mut v = stats.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = quantile_rank(pfa, v.len());
    Ok(if rank == 0 {
        f64::NEG_INFINITY
    } else {
        v[rank - 1]
    })
}

/// Derives the seed of H₀ trial `trial` from the calibration seed.
pub fn calibration_trial_seed(seed: u64, trial: u64) -> u64 {
    crate::harness::derive_seed(&[seed, 0xCA1B, trial])
}

/// Runs `num_trials` H₀ trials of `scenario` (fed a per-trial seed) and
/// returns the empirical `1 − P_fa` quantile of the statistic as `ξ`.
pub fn calibrate_threshold<F>(
    scenario: F,
    pfa: f64,
    num_trials: usize,
    seed: u64,
) -> Result<ThresholdCalibration>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    use rayon::prelude::*;
    if (num_trials as f64) * pfa < 10.0 {
        log::warn!(
            "calibrating P_fa = {pfa} from {num_trials} trials leaves fewer than 10 exceedances; the threshold is unstable"
        );
    }
    let stats: Vec<f64> = (0..num_trials as u64)
        .into_par_iter()
        .map(|k| scenario(calibration_trial_seed(seed, k)))
        .collect::<Result<_>>()?;
    Ok(ThresholdCalibration {
        pfa,
        trials: num_trials,
        xi: threshold_from_statistics(&stats, pfa)?,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn window_on_grid_point() {
        let g = AngleDopplerGrid::new(4, 4, 5.0, 5.0).unwrap();
        let p = Profile((0..g.num_columns()).map(|q| c(q as f64, 0.0)).collect());
        let fd = g.doppler_value(7);
        let w = extract_window(&p, &g, fd, 0.0);
        assert_eq!(w.len(), 25);
    }

    #[test]
    fn window_between_grid_points() {
        let g = AngleDopplerGrid::new(4, 4, 5.0, 5.0).unwrap();
        let p = Profile::zeros(g.num_columns());
        // Quarter of a grid step off: still five Doppler points.
        let fd = g.doppler_value(7) + 0.25 * g.doppler_spacing;
        assert_eq!(extract_window(&p, &g, fd, 0.0).len(), 25);
        // Exactly midway the outermost points land on the open edges.
        let fd = g.doppler_value(7) + 0.5 * g.doppler_spacing;
        assert_eq!(extract_window(&p, &g, fd, 0.0).len(), 20);
    }

    #[test]
    fn window_entries_strictly_inside() {
        let g = AngleDopplerGrid::new(3, 5, 3.0, 3.0).unwrap();
        let p = Profile((0..g.num_columns()).map(|q| c(q as f64, 0.0)).collect());
        let (fd, fs) = (0.137, -0.08);
        for z in extract_window(&p, &g, fd, fs) {
            let (qd, qs) = g.frequencies(z.re as usize);
            assert!((qd - fd).abs() < 0.5 / 5.0);
            assert!((qs - fs).abs() < 0.5 / 3.0);
        }
    }

    #[test]
    fn window_truncates_at_grid_edge() {
        let g = AngleDopplerGrid::new(4, 4, 3.0, 3.0).unwrap();
        let p = Profile::zeros(g.num_columns());
        // Centre at -0.5: only the points at and above -0.5 remain.
        assert_eq!(extract_window(&p, &g, -0.5, 0.0).len(), 2 * 3);
        assert!(extract_window(&p, &g, -0.9, 0.0).is_empty());
    }

    #[test]
    fn zero_profile_gives_zero_window() {
        let g = AngleDopplerGrid::new(4, 4, 3.0, 3.0).unwrap();
        let w = extract_window(&Profile::zeros(g.num_columns()), &g, 0.1, 0.0);
        assert!(w.iter().all(|z| *z == c(0.0, 0.0)));
    }

    #[test]
    fn statistic_values() {
        assert_eq!(test_statistic(&[c(3.0, 4.0), c(0.0, 0.0)]), 5.0);
        assert_eq!(test_statistic(&[]), 0.0);
        let w = [c(1.0, 2.0), c(-0.5, 0.1)];
        let scaled: Vec<C64> = w.iter().map(|z| z * 3.0).collect();
        assert!((test_statistic(&scaled) - 3.0 * test_statistic(&w)).abs() < 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn cfar_decisions() {
        let sec = [1.0, 2.0, 3.0];
        assert_eq!(median_cfar(2.0, &sec, 0.5), Decision::H0);
        assert_eq!(median_cfar(20.0, &sec, 10.0), Decision::H1);
        // 20 dB exactly vs threshold 20 dB is not strictly greater.
        assert_eq!(median_cfar(20.0, &sec, 20.0), Decision::H0);
        assert_eq!(median_cfar(1.0, &[0.0, 0.0], 100.0), Decision::H1);
        assert_eq!(median_cfar(0.0, &[0.0, 0.0], -100.0), Decision::H0);
        assert_eq!(median_cfar(0.0, &sec, f64::NEG_INFINITY), Decision::H0);
    }

    #[test]
    fn cfar_scale_invariant() {
        let sec = [0.3, 1.7, 0.9, 2.2];
        for cut in [0.1, 1.0, 3.0, 7.0] {
            for xi in [-3.0, 0.0, 4.0, 9.0] {
                let base = median_cfar(cut, &sec, xi);
                let s = 13.7;
                let scaled: Vec<f64> = sec.iter().map(|v| v * s).collect();
                assert_eq!(median_cfar(cut * s, &scaled, xi), base);
            }
        }
    }

    #[test]
    fn sweep_identical_profiles_all_h0() {
        let g = AngleDopplerGrid::new(4, 4, 2.0, 2.0).unwrap();
        let p = Profile((0..g.num_columns()).map(|q| c(1.0 + q as f64, 0.5)).collect());
        let cfg = DetectorConfig {
            threshold_db: 1.0,
            ..DetectorConfig::default()
        };
        let rep = detect_doppler_sweep(&p, &vec![p.clone(); 5], &g, &cfg);
        assert_eq!(rep.cells.len(), g.num_doppler);
        assert!(rep.detections().is_empty());
        assert!(rep.cells.iter().all(|c| c.statistic_db == 0.0));
    }

    #[test]
    fn sweep_finds_injected_peak() {
        let g = AngleDopplerGrid::new(4, 4, 3.0, 3.0).unwrap();
        let flat = Profile(vec![c(0.1, 0.0); g.num_columns()]);
        let mut cut = flat.clone();
        let kd = 9;
        cut.0[g.column_index(kd, g.nearest_spatial_index(0.0))] = c(10.0, 0.0);
        let cfg = DetectorConfig {
            threshold_db: 6.0,
            ..DetectorConfig::default()
        };
        let rep = detect_doppler_sweep(&cut, &vec![flat; 4], &g, &cfg);
        // The resolution-cell window spans ±1 Doppler bin at 3x oversampling.
        assert_eq!(rep.detections(), vec![kd - 1, kd, kd + 1]);
        let cell = &rep.cells[kd];
        assert!((cell.median_secondary - 0.9).abs() < 1e-12);
        assert!((cell.theta_cut - 10.8).abs() < 1e-12);
    }

    #[test]
    fn report_csv() {
        let g = AngleDopplerGrid::new(2, 2, 2.0, 2.0).unwrap();
        let p = Profile(vec![c(1.0, 0.0); 16]);
        let rep = detect_doppler_sweep(&p, std::slice::from_ref(&p), &g, &DetectorConfig::default());
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next(), Some("f_d,statistic_db,decision"));
        assert_eq!(s.lines().count(), 5);
        assert!(s.lines().nth(1).unwrap().ends_with(",0,H0"));
    }

    #[test]
    fn quantile_order_statistic() {
        assert_eq!(quantile_rank(1e-2, 2000), 1980);
        assert_eq!(quantile_rank(0.5, 7), 4);
        assert_eq!(quantile_rank(1.0, 10), 0);
        let stats: Vec<f64> = (1..=2000).map(|k| k as f64).collect();
        assert_eq!(threshold_from_statistics(&stats, 1e-2).unwrap(), 1980.0);
        let stats = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(threshold_from_statistics(&stats, 0.5).unwrap(), 3.0);
        assert_eq!(
            threshold_from_statistics(&stats, 1.0).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(threshold_from_statistics(&[], 0.1).is_err());
        assert!(threshold_from_statistics(&stats, 0.0).is_err());
    }

    #[test]
    fn calibration_is_deterministic() {
        let scenario = |seed: u64| -> Result<f64> { Ok((seed % 1000) as f64) };
        let a = calibrate_threshold(scenario, 0.1, 200, 42).unwrap();
        let b = calibrate_threshold(scenario, 0.1, 200, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials, 200);
        let c = calibrate_threshold(scenario, 0.1, 200, 43).unwrap();
        assert_ne!(a.xi, c.xi);
    }
}
