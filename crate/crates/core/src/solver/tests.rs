use super::*;
use crate::dictionary::AngleDopplerGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn rvec(rng: &mut ChaCha8Rng, len: usize) -> Vec<C64> {
    (0..len)
        .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

fn rbatch(rng: &mut ChaCha8Rng, m: usize, n: usize, l: usize) -> Vec<Snapshot> {
    (0..l)
        .map(|_| Snapshot::new(rvec(rng, m * n), m, n).unwrap())
        .collect()
}

fn dict(m: usize, n: usize, rho: f64) -> SteeringDictionary {
    SteeringDictionary::new(AngleDopplerGrid::new(m, n, rho, rho).unwrap())
}

fn params(d: &SteeringDictionary) -> ResolvedParams {
    SolverParams::default().resolve(d).unwrap()
}

fn random_state(rng: &mut ChaCha8Rng, d: &SteeringDictionary, l: usize) -> SolverState {
    let m = d.grid().num_elements;
    SolverState {
        profiles: (0..l).map(|_| rvec(rng, d.num_columns())).collect(),
        residuals: (0..l).map(|_| rvec(rng, d.num_rows())).collect(),
        multipliers: (0..l).map(|_| rvec(rng, d.num_rows())).collect(),
        t: rvec(rng, m),
        iteration: 0,
    }
}

struct Dense {
    phi: Vec<C64>,
    rows: usize,
    cols: usize,
}

impl Dense {
    fn new(d: &SteeringDictionary) -> Self {
        Self {
            phi: d.to_dense().unwrap(),
            rows: d.num_rows(),
            cols: d.num_columns(),
        }
    }

    fn mul(&self, a: &[C64]) -> Vec<C64> {
        (0..self.rows)
            .map(|r| (0..self.cols).map(|q| self.phi[r * self.cols + q] * a[q]).sum())
            .collect()
    }

    fn mul_h(&self, y: &[C64]) -> Vec<C64> {
        (0..self.cols)
            .map(|q| (0..self.rows).map(|r| self.phi[r * self.cols + q].conj() * y[r]).sum())
            .collect()
    }
}

fn tx_dense(t: &[C64], x: &Snapshot) -> Vec<C64> {
    let m = t.len();
    x.as_slice()
        .iter()
        .enumerate()
        .map(|(k, v)| t[k % m] * v)
        .collect()
}

fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn shrinkage_examples() {
    let v = [c(3.0, 4.0), c(0.0, 0.0), c(-1.0, 0.5)];
    assert_eq!(soft_threshold(&v, 0.0), v.to_vec());
    let out = soft_threshold(&[c(3.0, 4.0)], 2.5);
    assert!((out[0] - c(1.5, 2.0)).norm() < 1e-15);
    let small = soft_threshold(&[c(0.3, 0.4), c(0.0, 0.0), c(0.5, 0.0)], 0.5);
    assert!(small.iter().all(|z| *z == c(0.0, 0.0)));
}

#[test]
fn params_validation() {
    let mut p = SolverParams::default();
    assert!(p.validate().is_ok());
    p.zeta = 1.0;
    assert!(p.validate().is_err());
    let p = SolverParams {
        varsigma: Some(c(0.0, 0.0)),
        ..SolverParams::default()
    };
    assert!(p.validate().is_err());
    let p = SolverParams {
        rho: -1.0,
        ..SolverParams::default()
    };
    assert!(p.validate().is_err());
}

#[test]
fn default_step_and_scale() {
    let d = dict(4, 3, 2.0);
    let p = params(&d);
    assert!((p.tau - 0.99 / 48.0).abs() < 1e-12);
    assert_eq!(p.varsigma, c(4.0, 0.0));
}

#[test]
fn residual_vanishes_at_exact_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = dict(2, 3, 2.0);
    let p = params(&d);
    let alpha = rvec(&mut rng, d.num_columns());
    let y = d.apply(&alpha).unwrap();
    let x = Snapshot::new(y, 2, 3).unwrap();
    let state = SolverState {
        profiles: vec![alpha],
        residuals: vec![vec![c(0.0, 0.0); 6]],
        multipliers: vec![vec![c(0.0, 0.0); 6]],
        t: vec![c(1.0, 0.0); 2],
        iteration: 0,
    };
    let g = update_r(&state, &d, &[x], &p).unwrap();
    assert!(g[0].iter().all(|z| z.norm() < 1e-12));
}

#[test]
fn residual_gain_limit() {
    let d = dict(2, 2, 2.0);
    let mut p = params(&d);
    p.rho = 1e9;
    p.beta = 1e3;
    assert!((p.residual_gain() - 1.0).abs() < 1e-11);
}

#[test]
fn residual_update_is_stationary() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = dict(3, 2, 2.0);
    let dense = Dense::new(&d);
    let mut p = params(&d);
    p.rho = 0.3;
    p.beta = 0.7;
    let batch = rbatch(&mut rng, 3, 2, 2);
    let state = random_state(&mut rng, &d, 2);
    let g = update_r(&state, &d, &batch, &p).unwrap();
    for l in 0..2 {
        let pa = dense.mul(&state.profiles[l]);
        let tx = tx_dense(&state.t, &batch[l]);
        // ∂L/∂r* ∝ r/ρ − λ + β(Φα + r − Tx)
        let grad: Vec<C64> = (0..6)
            .map(|i| g[l][i] / p.rho - state.multipliers[l][i] + (pa[i] + g[l][i] - tx[i]) * p.beta)
            .collect();
        assert!(grad.iter().all(|z| z.norm() < 1e-10), "{grad:?}");
    }
}

#[test]
fn alpha_update_zero_data_fixed_point() {
    let d = dict(2, 2, 2.0);
    let p = params(&d);
    let x = Snapshot::zeros(2, 2);
    let state = SolverState::initial(&d, 1, vec![c(1.0, 0.0); 2]);
    let next = update_alpha(&state, &d, &[x], &p).unwrap();
    assert!(next[0].iter().all(|z| *z == c(0.0, 0.0)));
}

#[test]
fn alpha_update_matches_dense_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = dict(2, 2, 2.0);
    let dense = Dense::new(&d);
    let mut p = params(&d);
    p.beta = 0.5;
    let batch = rbatch(&mut rng, 2, 2, 1);
    let state = random_state(&mut rng, &d, 1);
    let next = update_alpha(&state, &d, &batch, &p).unwrap();
    let pa = dense.mul(&state.profiles[0]);
    let tx = tx_dense(&state.t, &batch[0]);
    let w: Vec<C64> = (0..4)
        .map(|i| pa[i] + state.residuals[0][i] - tx[i] - state.multipliers[0][i] / p.beta)
        .collect();
    let g = dense.mul_h(&w);
    let kappa = p.tau / p.beta;
    let expected: Vec<C64> = state.profiles[0]
        .iter()
        .zip(&g)
        .map(|(a, gv)| {
            let v = a - gv * p.tau;
            let mag = v.norm();
            if mag > kappa {
                v * ((mag - kappa) / mag)
            } else {
                c(0.0, 0.0)
            }
        })
        .collect();
    assert!(max_abs_diff(&next[0], &expected) < 1e-12);
}

#[test]
fn t_update_recovers_exact_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = rbatch(&mut rng, 4, 3, 2);
    let mut t0 = rvec(&mut rng, 4);
    let s: C64 = t0.iter().sum();
    let varsigma = c(4.0, -1.0);
    // Rescale so Σ t0 = ς.
    t0.iter_mut().for_each(|v| *v *= varsigma / s);
    let z: Vec<Vec<C64>> = batch.iter().map(|x| tx_dense(&t0, x)).collect();
    let t = fit_inverse_errors(&batch, &z, varsigma).unwrap();
    assert!(max_abs_diff(&t, &t0) < 1e-12);
}

#[test]
fn t_update_satisfies_constraint_and_stationarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = dict(3, 2, 2.0);
    let p = params(&d);
    for _ in 0..20 {
        let batch = rbatch(&mut rng, 3, 2, 3);
        let state = random_state(&mut rng, &d, 3);
        let t = update_t(&state, &d, &batch, &p).unwrap();
        let sum: C64 = t.iter().sum();
        assert!((sum - p.varsigma).norm() <= 1e-9 * p.varsigma.norm());
        // Gradient Σ Q_lᴴ(Q_l t − z_l) must be parallel to 1_M.
        let dense = Dense::new(&d);
        let mut grad = vec![c(0.0, 0.0); 3];
        for l in 0..3 {
            let pa = dense.mul(&state.profiles[l]);
            for k in 0..6 {
                let z = pa[k] + state.residuals[l][k] - state.multipliers[l][k] / p.beta;
                let x = batch[l].as_slice()[k];
                grad[k % 3] += x.conj() * (x * t[k % 3] - z);
            }
        }
        let mean = grad.iter().sum::<C64>() / 3.0;
        let scale: f64 = grad.iter().map(|g| g.norm()).sum::<f64>().max(1.0);
        assert!(grad.iter().all(|g| (g - mean).norm() <= 1e-10 * scale));
    }
}

#[test]
fn t_update_matches_kkt_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (m, n, l) = (3, 2, 2);
    let batch = rbatch(&mut rng, m, n, l);
    let z: Vec<Vec<C64>> = (0..l).map(|_| rvec(&mut rng, m * n)).collect();
    let varsigma = c(3.0, 0.0);
    let closed = fit_inverse_errors(&batch, &z, varsigma).unwrap();
    let oracle = constrained_ls_oracle(&z, &batch, varsigma).unwrap();
    let scale = oracle.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    assert!(max_abs_diff(&closed, &oracle) <= 1e-8 * scale);
}

#[test]
fn oracle_inactive_constraint() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let batch = rbatch(&mut rng, 4, 3, 1);
    let z = vec![rvec(&mut rng, 12)];
    // Unconstrained minimizer: t_m = b_m / a_m.
    let q = crate::dictionary::QOperator::new(&batch[0]);
    let b = q.adjoint(&z[0]).unwrap();
    let a = q.gram_diagonal();
    let free: Vec<C64> = b.iter().zip(&a).map(|(bv, av)| bv / av).collect();
    let varsigma: C64 = free.iter().sum();
    let t = constrained_ls_oracle(&z, &batch, varsigma).unwrap();
    assert!(max_abs_diff(&t, &free) < 1e-10);
    let t2 = fit_inverse_errors(&batch, &z, varsigma).unwrap();
    assert!(max_abs_diff(&t2, &free) < 1e-12);
}

#[test]
fn single_element_is_pinned_by_constraint() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let batch = vec![Snapshot::new(rvec(&mut rng, 4), 1, 4).unwrap()];
    let z = vec![rvec(&mut rng, 4)];
    let varsigma = c(2.5, -0.5);
    let t = constrained_ls_oracle(&z, &batch, varsigma).unwrap();
    assert!((t[0] - varsigma).norm() < 1e-12);
    let t2 = fit_inverse_errors(&batch, &z, varsigma).unwrap();
    assert!((t2[0] - varsigma).norm() < 1e-12);
}

#[test]
fn degenerate_channel_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut x = rvec(&mut rng, 6);
    // Element 1 of 3 silent across both pulses.
    x[1] = c(0.0, 0.0);
    x[4] = c(0.0, 0.0);
    let batch = vec![Snapshot::new(x, 3, 2).unwrap()];
    let z = vec![rvec(&mut rng, 6)];
    assert!(matches!(
        fit_inverse_errors(&batch, &z, c(3.0, 0.0)),
        Err(StapError::DegenerateChannel { element: 1 })
    ));
    let d = dict(3, 2, 2.0);
    assert!(matches!(
        solve_jie_adm(&batch, &d, &SolverParams::default()),
        Err(StapError::DegenerateChannel { element: 1 })
    ));
}

#[test]
fn multiplier_unchanged_when_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let d = dict(2, 2, 2.0);
    let p = params(&d);
    let alpha = rvec(&mut rng, d.num_columns());
    let r = rvec(&mut rng, 4);
    let t = vec![c(1.0, 0.0); 2];
    let pa = d.apply(&alpha).unwrap();
    let x: Vec<C64> = pa.iter().zip(&r).map(|(a, b)| a + b).collect();
    let lambda = rvec(&mut rng, 4);
    let state = SolverState {
        profiles: vec![alpha],
        residuals: vec![r],
        multipliers: vec![lambda.clone()],
        t,
        iteration: 0,
    };
    let next = update_lambda(&state, &d, &[Snapshot::new(x, 2, 2).unwrap()], &p).unwrap();
    assert!(max_abs_diff(&next[0], &lambda) < 1e-12);
}

#[test]
fn multiplier_update_matches_dense_and_zero_penalty() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = dict(2, 3, 2.0);
    let dense = Dense::new(&d);
    let mut p = params(&d);
    let batch = rbatch(&mut rng, 2, 3, 2);
    let state = random_state(&mut rng, &d, 2);
    let next = update_lambda(&state, &d, &batch, &p).unwrap();
    for l in 0..2 {
        let pa = dense.mul(&state.profiles[l]);
        let tx = tx_dense(&state.t, &batch[l]);
        let expected: Vec<C64> = (0..6)
            .map(|i| state.multipliers[l][i] - (pa[i] + state.residuals[l][i] - tx[i]) * p.beta)
            .collect();
        assert!(max_abs_diff(&next[l], &expected) < 1e-12);
    }
    p.beta = 0.0;
    let next = update_lambda(&state, &d, &batch, &p).unwrap();
    assert_eq!(next, state.multipliers);
}

#[test]
fn zero_data_returns_initial_point() {
    let d = dict(3, 3, 2.0);
    let batch = vec![Snapshot::zeros(3, 3), Snapshot::zeros(3, 3)];
    let rep = solve_jie_adm(&batch, &d, &SolverParams::default()).unwrap();
    assert_eq!(rep.iterations, 0);
    assert_eq!(rep.t, vec![c(1.0, 0.0); 3]);
    assert!(rep.profiles.iter().all(|p| p.0.iter().all(|z| *z == c(0.0, 0.0))));
    assert_eq!(rep.termination, Termination::Tolerance);
}

#[test]
fn relative_change_guards() {
    let z = vec![vec![c(0.0, 0.0); 3]];
    let o = vec![vec![c(1.0, 0.0); 3]];
    assert_eq!(relative_change(&z, &z), 0.0);
    assert_eq!(relative_change(&o, &z), f64::INFINITY);
    assert!((relative_change(&z, &o) - 1.0).abs() < 1e-15);
}

#[test]
fn single_snapshot_loop_is_bitwise_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = dict(3, 3, 2.0);
    let p = params(&d);
    let x = Snapshot::new(rvec(&mut rng, 9), 3, 3).unwrap();
    let batch = vec![x.clone()];
    let mut looped = AdmIteration::new(&d, &batch, p, InverseErrorMode::Estimate).unwrap();
    let mut it = single::Iterate {
        alpha: vec![c(0.0, 0.0); d.num_columns()],
        r: vec![c(0.0, 0.0); 9],
        lambda: vec![c(0.0, 0.0); 9],
        t: vec![c(1.0, 0.0); 3],
    };
    for _ in 0..25 {
        looped.step();
        it = single::sweep(&d, &x, &it, &p).unwrap();
        let s = looped.state();
        assert_eq!(s.profiles[0], it.alpha);
        assert_eq!(s.residuals[0], it.r);
        assert_eq!(s.multipliers[0], it.lambda);
        assert_eq!(s.t, it.t);
    }
}

#[test]
fn looped_steps_match_public_updates() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let d = dict(2, 3, 2.0);
    let p = params(&d);
    let batch = rbatch(&mut rng, 2, 3, 2);
    let mut looped = AdmIteration::new(&d, &batch, p, InverseErrorMode::Estimate).unwrap();
    let mut state = looped.state().clone();
    for _ in 0..5 {
        looped.step();
        state.residuals = update_r(&state, &d, &batch, &p).unwrap();
        state.profiles = update_alpha(&state, &d, &batch, &p).unwrap();
        state.t = update_t(&state, &d, &batch, &p).unwrap();
        state.multipliers = update_lambda(&state, &d, &batch, &p).unwrap();
        state.iteration += 1;
        assert_eq!(&state, looped.state());
    }
}

#[test]
fn fixed_t_keeps_t() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let d = dict(3, 3, 2.0);
    let batch = rbatch(&mut rng, 3, 3, 2);
    let t = vec![c(1.0, 0.1), c(0.9, 0.0), c(1.1, -0.2)];
    let params = SolverParams {
        max_iter: 20,
        ..SolverParams::default()
    };
    let rep = solve_adm_fixed_t(&batch, &d, &params, &t).unwrap();
    assert_eq!(rep.t, t);
    assert_eq!(rep.iterations, 20);
    assert_eq!(rep.history.len(), 20);
    assert!(solve_adm_fixed_t(&batch, &d, &params, &[c(0.0, 0.0); 3]).is_err());
}

#[test]
fn report_exports() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let d = dict(2, 2, 2.0);
    let batch = rbatch(&mut rng, 2, 2, 1);
    let params = SolverParams {
        max_iter: 3,
        ..SolverParams::default()
    };
    let rep = solve_jie_adm(&batch, &d, &params).unwrap();
    let json: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
    assert_eq!(json["iterations"], 3);
    assert_eq!(json["termination"], "max_iter");
    assert_eq!(json["relative_change"].as_array().unwrap().len(), 3);
    let mut buf = Vec::new();
    rep.write_errors_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("m,abs_c,arg_c\n1,"));
}

#[test]
fn alignment_removes_common_scale() {
    let truth = vec![c(1.0, 0.1), c(0.9, -0.2), c(1.05, 0.0)];
    let s = c(0.3, -2.0);
    let est: Vec<C64> = truth.iter().map(|v| v / s).collect();
    assert!((align_scale(&est, &truth) - s).norm() < 1e-12);
    assert!(aligned_error(&est, &truth) < 1e-12);
}
