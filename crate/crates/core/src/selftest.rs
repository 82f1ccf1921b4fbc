//! Oracle-equivalence and invariant checks that exercise the whole library
//! on small randomized instances. Each check reports pass/fail with a
//! one-line detail instead of panicking, so the same code backs the CLI
//! `selftest` command and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::detector::{
    extract_window, median_cfar, test_statistic, window_columns, DetectorConfig,
};
use crate::dictionary::{AngleDopplerGrid, Profile, SteeringDictionary};
use crate::scene::{
    clutter_covariance, space_time_steering, spatial_steering, temporal_steering, RadarConfig,
    Snapshot,
};
use crate::solver::{
    constrained_ls_oracle, single, soft_threshold, solve_jie_adm, update_t, AdmIteration,
    InverseErrorMode, SolverParams, SolverState,
};
use crate::C64;

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }

    fn failed(name: &'static str, err: impl std::fmt::Display) -> Self {
        Self::new(name, false, format!("error: {err}"))
    }
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn rvec<R: Rng>(rng: &mut R, len: usize) -> Vec<C64> {
    (0..len)
        .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

fn rel_diff(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// `update_t` against the dense KKT oracle on random instances with
/// `M ≤ 16` and `L ∈ {1, 4}`, plus the normalization `Σ t_m = ς`.
pub fn oracle_equivalence(instances: usize, seed: u64) -> CheckOutcome {
    const NAME: &str = "update_t matches constrained least-squares oracle";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut worst_sum = 0.0f64;
    for k in 0..instances {
        let m = rng.random_range(1..=16);
        let n = rng.random_range(1..=4);
        let l = if k % 2 == 0 { 1 } else { 4 };
        let grid = match AngleDopplerGrid::new(m, n, 2.0, 2.0) {
            Ok(g) => g,
            Err(e) => return CheckOutcome::failed(NAME, e),
        };
        let dict = SteeringDictionary::new(grid);
        let params = SolverParams {
            varsigma: Some(c(rng.random_range(0.5..2.0) * m as f64, rng.random_range(-1.0..1.0))),
            ..SolverParams::default()
        };
        let params = match params.resolve(&dict) {
            Ok(p) => p,
            Err(e) => return CheckOutcome::failed(NAME, e),
        };
        let batch: Vec<Snapshot> = (0..l)
            .map(|_| Snapshot::new(rvec(&mut rng, m * n), m, n).expect("sized"))
            .collect();
        let state = SolverState {
            profiles: (0..l).map(|_| rvec(&mut rng, dict.num_columns())).collect(),
            residuals: (0..l).map(|_| rvec(&mut rng, m * n)).collect(),
            multipliers: (0..l).map(|_| rvec(&mut rng, m * n)).collect(),
            t: rvec(&mut rng, m),
            iteration: 0,
        };
        let z: Vec<Vec<C64>> = (0..l)
            .map(|j| {
                let pa = dict.apply(&state.profiles[j]).expect("sized");
                pa.iter()
                    .zip(&state.residuals[j])
                    .zip(&state.multipliers[j])
                    .map(|((a, r), lam)| a + r - lam / params.beta)
                    .collect()
            })
            .collect();
        let fast = match update_t(&state, &dict, &batch, &params) {
            Ok(t) => t,
            Err(e) => return CheckOutcome::failed(NAME, e),
        };
        let oracle = match constrained_ls_oracle(&z, &batch, params.varsigma) {
            Ok(t) => t,
            Err(e) => return CheckOutcome::failed(NAME, e),
        };
        worst = worst.max(rel_diff(&fast, &oracle));
        let sum: C64 = fast.iter().sum();
        worst_sum = worst_sum.max((sum - params.varsigma).norm() / params.varsigma.norm());
    }
    CheckOutcome::new(
        NAME,
        worst <= 1e-8 && worst_sum <= 1e-9,
        format!("{instances} instances, max relative error {worst:.2e}, max |Σt − ς|/|ς| {worst_sum:.2e}"),
    )
}

/// Componentwise shrinkage formula on random inputs, the `0/0 := 0` case
/// and the worked example `(3+4j, 2.5) → 1.5+2j`.
pub fn shrinkage_formula(cases: usize, seed: u64) -> CheckOutcome {
    const NAME: &str = "soft threshold follows the shrinkage formula";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..cases {
        let len = rng.random_range(1..32);
        let mut v = rvec(&mut rng, len);
        // Sprinkle exact zeros and tiny values.
        for z in v.iter_mut() {
            match rng.random_range(0..6) {
                0 => *z = c(0.0, 0.0),
                1 => *z *= 1e-300,
                _ => *z *= 10f64.powf(rng.random_range(-3.0..3.0)),
            }
        }
        let kappa = if rng.random_bool(0.1) { 0.0 } else { 10f64.powf(rng.random_range(-3.0..1.0)) };
        let out = soft_threshold(&v, kappa);
        for (x, y) in v.iter().zip(&out) {
            let mag = x.norm();
            let expected = if mag == 0.0 { c(0.0, 0.0) } else { *x * ((mag - kappa).max(0.0) / mag) };
            let ok = (y - expected).norm() <= 1e-15 * mag.max(1.0)
                && y.norm() <= mag
                && (mag > kappa || *y == c(0.0, 0.0));
            if !ok || !y.re.is_finite() || !y.im.is_finite() {
                failures += 1;
            }
        }
    }
    let example = soft_threshold(&[c(3.0, 4.0)], 2.5)[0];
    let example_ok = (example - c(1.5, 2.0)).norm() < 1e-15;
    let zero_ok = soft_threshold(&[c(0.0, 0.0)], 0.0)[0] == c(0.0, 0.0);
    CheckOutcome::new(
        NAME,
        failures == 0 && example_ok && zero_ok,
        format!("{cases} vectors, {failures} mismatches; (3+4j, 2.5) → {example}; 0/0 → 0: {zero_ok}"),
    )
}

/// The batched iteration at `L = 1` against the literal single-snapshot
/// updates, compared bit for bit.
pub fn single_snapshot_reduction(problems: usize, iterations: usize, seed: u64) -> CheckOutcome {
    const NAME: &str = "L = 1 iterates equal single-snapshot iterates bitwise";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..problems {
        let m = rng.random_range(2..=6);
        let n = rng.random_range(2..=6);
        let dict = SteeringDictionary::new(AngleDopplerGrid::new(m, n, 2.0, 2.0).expect("valid"));
        let params = SolverParams::default().resolve(&dict).expect("valid");
        let x = Snapshot::new(rvec(&mut rng, m * n), m, n).expect("sized");
        let batch = vec![x.clone()];
        let mut looped = match AdmIteration::new(&dict, &batch, params, InverseErrorMode::Estimate) {
            Ok(it) => it,
            Err(e) => return CheckOutcome::failed(NAME, e),
        };
        let mut it = single::Iterate {
            alpha: vec![c(0.0, 0.0); dict.num_columns()],
            r: vec![c(0.0, 0.0); m * n],
            lambda: vec![c(0.0, 0.0); m * n],
            t: vec![c(1.0, 0.0); m],
        };
        for p in 0..iterations {
            looped.step();
            it = match single::sweep(&dict, &x, &it, &params) {
                Ok(next) => next,
                Err(e) => return CheckOutcome::failed(NAME, e),
            };
            let s = looped.state();
            if s.profiles[0] != it.alpha || s.residuals[0] != it.r || s.multipliers[0] != it.lambda || s.t != it.t {
                return CheckOutcome::new(NAME, false, format!("problem {k} diverges at iteration {}", p + 1));
            }
        }
    }
    CheckOutcome::new(NAME, true, format!("{problems} problems × {iterations} iterations identical"))
}

/// Outcome of the noiseless on-grid recovery experiment.
#[derive(Debug, Clone, Serialize)]
pub struct RecoveryOutcome {
    pub support_exact: bool,
    pub relative_error: f64,
    pub iterations: usize,
}

/// `K` well-separated on-grid atoms, no noise, no errors, `M = N = 4`,
/// 2× oversampling, solved by JIE-ADM with default parameters. The support
/// estimate keeps entries above 10% of the weakest true coefficient.
/// `k` must leave room for the separation rule (at most 4 on this grid).
pub fn noiseless_recovery(k: usize, seed: u64) -> crate::Result<RecoveryOutcome> {
    let (m, n) = (4, 4);
    let grid = AngleDopplerGrid::new(m, n, 2.0, 2.0)?;
    let dict = SteeringDictionary::new(grid.clone());
    if k > grid.num_doppler.min(grid.num_spatial) / 2 {
        return Err(crate::StapError::InvalidParameter(format!(
            "{k} atoms cannot be separated by a resolution cell on this grid"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = vec![c(0.0, 0.0); dict.num_columns()];
    let mut support: Vec<usize> = Vec::new();
    while support.len() < k {
        let kd = rng.random_range(0..grid.num_doppler);
        let ks = rng.random_range(0..grid.num_spatial);
        // At least one resolution cell (two grid steps) from every other
        // atom in both Doppler and angle.
        let separated = support.iter().all(|&q| {
            let (qd, qs) = (q / grid.num_spatial, q % grid.num_spatial);
            let dd = circular_gap(qd, kd, grid.num_doppler);
            let ds = circular_gap(qs, ks, grid.num_spatial);
            dd.min(ds) >= 2
        });
        if separated {
            let q = grid.column_index(kd, ks);
            let amp = rng.random_range(1.0..3.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            truth[q] = C64::from_polar(amp, phase);
            support.push(q);
        }
    }
    let x = Snapshot::new(dict.apply(&truth)?, m, n)?;
    let report = solve_jie_adm(&[x], &dict, &SolverParams::default())?;
    let est = &report.profiles[0].0;
    let floor = 0.1 * support.iter().map(|&q| truth[q].norm()).fold(f64::INFINITY, f64::min);
    let mut found: Vec<usize> = (0..est.len()).filter(|&q| est[q].norm() > floor).collect();
    found.sort_unstable();
    support.sort_unstable();
    Ok(RecoveryOutcome {
        support_exact: found == support,
        relative_error: rel_diff(est, &truth),
        iterations: report.iterations,
    })
}

fn circular_gap(a: usize, b: usize, count: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(count - d)
}

pub fn noiseless_recovery_check(problems: usize, seed: u64) -> CheckOutcome {
    const NAME: &str = "noiseless on-grid recovery";
    let mut worst = 0.0f64;
    let mut max_iter = 0;
    for p in 0..problems {
        match noiseless_recovery(3, seed.wrapping_add(p as u64)) {
            Ok(o) => {
                if !o.support_exact {
                    return CheckOutcome::new(NAME, false, format!("problem {p}: support mismatch"));
                }
                worst = worst.max(o.relative_error);
                max_iter = max_iter.max(o.iterations);
            }
            Err(e) => return CheckOutcome::failed(NAME, e),
        }
    }
    CheckOutcome::new(
        NAME,
        worst <= 1e-2 && max_iter <= 500,
        format!("{problems} problems, max relative error {worst:.2e}, max iterations {max_iter}"),
    )
}

/// Scaling every profile by one positive scalar never changes a decision.
pub fn detector_scale_invariance(cases: usize, seed: u64) -> CheckOutcome {
    const NAME: &str = "median CFAR decisions are scale invariant";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = AngleDopplerGrid::new(6, 6, 3.0, 3.0).expect("valid");
    let cols = grid.num_columns();
    let mut flips = 0;
    let mut decisions = 0;
    for _ in 0..cases {
        let num_secondary = rng.random_range(1..=10);
        let density = rng.random_range(0.02..0.6);
        let profile = |rng: &mut ChaCha8Rng| {
            Profile(
                (0..cols)
                    .map(|_| {
                        if rng.random_bool(density) {
                            C64::from_polar(10f64.powf(rng.random_range(-2.0..2.0)), rng.random_range(0.0..6.3))
                        } else {
                            c(0.0, 0.0)
                        }
                    })
                    .collect(),
            )
        };
        let cut = profile(&mut rng);
        let secondary: Vec<Profile> = (0..num_secondary).map(|_| profile(&mut rng)).collect();
        let scale = 10f64.powf(rng.random_range(-6.0..6.0));
        let scaled = |p: &Profile| Profile(p.0.iter().map(|z| z * scale).collect());
        let cut_s = scaled(&cut);
        let sec_s: Vec<Profile> = secondary.iter().map(scaled).collect();
        let xi = rng.random_range(-10.0..20.0);
        let fs = rng.random_range(-0.5..0.5);
        for fd in grid.doppler_values() {
            let theta = |p: &Profile| test_statistic(&extract_window(p, &grid, fd, fs));
            let before = median_cfar(theta(&cut), &secondary.iter().map(theta).collect::<Vec<_>>(), xi);
            let after = median_cfar(theta(&cut_s), &sec_s.iter().map(theta).collect::<Vec<_>>(), xi);
            decisions += 1;
            if before != after {
                flips += 1;
            }
        }
    }
    CheckOutcome::new(NAME, flips == 0, format!("{decisions} decisions, {flips} changed under scaling"))
}

/// Every window entry lies strictly inside the open resolution cell.
pub fn window_containment(cases: usize, seed: u64) -> CheckOutcome {
    const NAME: &str = "test windows stay inside the open resolution cell";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..cases {
        let m = rng.random_range(2..=10);
        let n = rng.random_range(2..=10);
        let rho = [2.0, 3.0, 4.0, 5.0][rng.random_range(0..4)];
        let grid = AngleDopplerGrid::new(m, n, rho, rho).expect("valid");
        // Half the centres land on grid points, where edges are exact ties.
        let (fd, fs) = if rng.random_bool(0.5) {
            (
                grid.doppler_value(rng.random_range(0..grid.num_doppler)),
                grid.spatial_value(rng.random_range(0..grid.num_spatial)),
            )
        } else {
            (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))
        };
        for q in window_columns(&grid, fd, fs) {
            let (gd, gs) = grid.frequencies(q);
            if (gd - fd).abs() >= 0.5 / n as f64 || (gs - fs).abs() >= 0.5 / m as f64 {
                bad += 1;
            }
        }
    }
    CheckOutcome::new(NAME, bad == 0, format!("{cases} windows, {bad} entries outside"))
}

/// Space-time steering vectors equal the explicit Kronecker product.
pub fn kronecker_steering(cases: usize, seed: u64) -> CheckOutcome {
    const NAME: &str = "space-time steering is the Kronecker product";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let m = rng.random_range(1..=12);
        let n = rng.random_range(1..=12);
        let fd = rng.random_range(-0.5..0.5);
        let fs = rng.random_range(-0.5..0.5);
        let v = space_time_steering(fd, fs, n, m);
        let (vd, vs) = (temporal_steering(fd, n), spatial_steering(fs, m));
        for (k, z) in v.iter().enumerate() {
            worst = worst.max((z - vd[k / m] * vs[k % m]).norm());
        }
    }
    CheckOutcome::new(NAME, worst <= 1e-12, format!("{cases} vectors, max deviation {worst:.1e}"))
}

/// `⟨Φa, y⟩ = ⟨a, Φᴴy⟩`, factored apply against the dense matrix, and
/// `λ_max(ΦΦᴴ) = N_d N_s`.
pub fn dictionary_operators(cases: usize, seed: u64) -> CheckOutcome {
    const NAME: &str = "factored dictionary matches its dense form and adjoint";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut worst_norm = 0.0f64;
    for _ in 0..cases {
        let m = rng.random_range(2..=5);
        let n = rng.random_range(2..=5);
        let rho = [2.0, 3.0][rng.random_range(0..2)];
        let dict = SteeringDictionary::new(AngleDopplerGrid::new(m, n, rho, rho).expect("valid"));
        let (rows, cols) = (dict.num_rows(), dict.num_columns());
        let a = rvec(&mut rng, cols);
        let y = rvec(&mut rng, rows);
        let pa = dict.apply(&a).expect("sized");
        let py = dict.adjoint(&y).expect("sized");
        let lhs: C64 = pa.iter().zip(&y).map(|(u, v)| u * v.conj()).sum();
        let rhs: C64 = a.iter().zip(&py).map(|(u, v)| u * v.conj()).sum();
        worst = worst.max((lhs - rhs).norm() / lhs.norm().max(1.0));
        let dense = dict.to_dense().expect("small");
        let da: Vec<C64> = (0..rows)
            .map(|r| (0..cols).map(|q| dense[r * cols + q] * a[q]).sum())
            .collect();
        worst = worst.max(rel_diff(&pa, &da));
        let lam = dict.gram_spectral_norm(50);
        worst_norm = worst_norm.max((lam - cols as f64).abs() / cols as f64);
    }
    CheckOutcome::new(
        NAME,
        worst <= 1e-12 && worst_norm <= 1e-9,
        format!("{cases} dictionaries, max operator deviation {worst:.1e}, max λ_max deviation {worst_norm:.1e}"),
    )
}

/// The clutter covariance is Hermitian and positive semidefinite.
pub fn covariance_psd() -> CheckOutcome {
    const NAME: &str = "clutter covariance is Hermitian PSD";
    let radar = RadarConfig::desk_scale().with_dimensions(4, 4);
    let errors = crate::scene::GainPhaseError::none(4);
    match clutter_covariance(&radar, &errors) {
        Ok(r) => {
            let defect = r.hermitian_defect();
            let eig = r.eigenvalues();
            let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            CheckOutcome::new(
                NAME,
                defect <= 1e-9 * r.frobenius_norm() && min >= -1e-9 * max,
                format!("Hermitian defect {defect:.1e}, eigenvalues in [{min:.2e}, {max:.2e}]"),
            )
        }
        Err(e) => CheckOutcome::failed(NAME, e),
    }
}

/// The default detector configuration is valid.
fn detector_defaults() -> CheckOutcome {
    const NAME: &str = "default detector configuration validates";
    match DetectorConfig::default().validate() {
        Ok(()) => CheckOutcome::new(NAME, true, "ok".into()),
        Err(e) => CheckOutcome::failed(NAME, e),
    }
}

/// Every fast check, as run by the CLI `selftest` command.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    vec![
        kronecker_steering(200, seed),
        dictionary_operators(20, seed + 1),
        covariance_psd(),
        shrinkage_formula(500, seed + 2),
        oracle_equivalence(100, seed + 3),
        single_snapshot_reduction(10, 50, seed + 4),
        noiseless_recovery_check(3, seed + 5),
        detector_defaults(),
        detector_scale_invariance(200, seed + 6),
        window_containment(500, seed + 7),
    ]
}
