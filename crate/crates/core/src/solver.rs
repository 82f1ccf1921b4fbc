//! Joint estimation of spatio-Doppler profiles and array inverse gain/phase
//! errors with an alternating direction method (JIE-ADM).
//!
//! The solver minimizes, over profiles `α_l`, residuals `r_l` and inverse
//! errors `t` with `Σ t_m = ς`,
//!
//! ```text
//! Σ_l ‖α_l‖₁ + 1/(2ρ) Σ_l ‖r_l‖²  s.t.  Φ α_l + r_l = T x_l,   T = I_N ⊗ diag(t)
//! ```
//!
//! by sweeping, per iteration, the residual update, a linearized shrinkage
//! step for the profiles, the closed-form constrained least-squares update
//! of `t`, and the multiplier update. Fixing `t` gives the plain ADM
//! baseline (`t = 1`) and the known-error baseline (`t = 1/c`).

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::{apply_t, Profile, SteeringDictionary};
use crate::error::{Result, StapError};
use crate::scene::{norm, Snapshot};
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Power-iteration steps used to size the default proximal step.
pub const POWER_ITERATIONS: usize = 50;

/// Tuning of the alternating direction method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverParams {
    /// Weight of the squared residual is `1/(2ρ)`.
    pub rho: f64,
    /// Augmented Lagrangian penalty.
    pub beta: f64,
    /// Proximal step; `None` picks `0.99 / λ_max(ΦᴴΦ)`.
    #[serde(default)]
    pub tau: Option<f64>,
    /// Normalization `Σ t_m = ς`; `None` picks `ς = M`.
    #[serde(default)]
    pub varsigma: Option<C64>,
    /// Relative-change stopping tolerance.
    pub zeta: f64,
    pub max_iter: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            rho: 0.01,
            beta: 0.1,
            tau: None,
            varsigma: None,
            zeta: 1e-4,
            max_iter: 500,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(StapError::InvalidParameter(what));
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if let Some(tau) = self.tau {
            if !(tau.is_finite() && tau > 0.0) {
                return bad(format!("tau must be positive, got {tau}"));
            }
        }
        if let Some(s) = self.varsigma {
            if !(s.norm() > 0.0 && s.is_finite()) {
                return bad(format!("varsigma must be a nonzero finite complex, got {s}"));
            }
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return bad(format!("zeta must lie in (0, 1), got {}", self.zeta));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        Ok(())
    }

    /// Fills in the dictionary-dependent defaults.
    pub fn resolve(&self, dict: &SteeringDictionary) -> Result<ResolvedParams> {
        self.validate()?;
        let tau = match self.tau {
            Some(tau) => tau,
            None => 0.99 / dict.gram_spectral_norm(POWER_ITERATIONS),
        };
        let varsigma = self
            .varsigma
            .unwrap_or(C64::new(dict.grid().num_elements as f64, 0.0));
        Ok(ResolvedParams {
            rho: self.rho,
            beta: self.beta,
            tau,
            varsigma,
            zeta: self.zeta,
            max_iter: self.max_iter,
        })
    }
}

/// [`SolverParams`] with every default made concrete.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParams {
    pub rho: f64,
    pub beta: f64,
    pub tau: f64,
    pub varsigma: C64,
    pub zeta: f64,
    pub max_iter: usize,
}

impl ResolvedParams {
    /// `ρβ / (1 + ρβ)`.
    pub fn residual_gain(&self) -> f64 {
        let rb = self.rho * self.beta;
        rb / (1.0 + rb)
    }

    pub fn threshold(&self) -> f64 {
        self.tau / self.beta
    }
}

/// Iterates of the method. Column `l` of each block belongs to snapshot `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    /// `Υ`: one profile per snapshot.
    pub profiles: Vec<Vec<C64>>,
    /// `Γ`: one residual per snapshot.
    pub residuals: Vec<Vec<C64>>,
    /// `Λ`: one multiplier per snapshot.
    pub multipliers: Vec<Vec<C64>>,
    /// Inverse gain/phase errors.
    pub t: Vec<C64>,
    pub iteration: usize,
}

impl SolverState {
    /// Zero profiles and multipliers, `t = t0`.
    pub fn initial(dict: &SteeringDictionary, num_snapshots: usize, t0: Vec<C64>) -> Self {
        let (rows, cols) = (dict.num_rows(), dict.num_columns());
        Self {
            profiles: vec![vec![ZERO; cols]; num_snapshots],
            residuals: vec![vec![ZERO; rows]; num_snapshots],
            multipliers: vec![vec![ZERO; rows]; num_snapshots],
            t: t0,
            iteration: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Tolerance,
    MaxIter,
}

/// Outcome of one solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub profiles: Vec<Profile>,
    pub t: Vec<C64>,
    /// `c_m = 1 / t_m`.
    pub c: Vec<C64>,
    pub iterations: usize,
    /// Relative profile change after each iteration.
    pub history: Vec<f64>,
    pub termination: Termination,
    /// `‖ΦΥ + Γ − T X‖_F` at the final iterate.
    pub constraint_residual: f64,
    /// `‖T X − ΦΥ‖_F` at the final iterate.
    pub fit_residual: f64,
    pub params: ResolvedParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveSummary {
    pub termination: Termination,
    pub iterations: usize,
    pub relative_change: Vec<f64>,
    pub constraint_residual: f64,
    pub fit_residual: f64,
    pub params: ResolvedParams,
}

impl SolveReport {
    pub fn summary(&self) -> SolveSummary {
        SolveSummary {
            termination: self.termination,
            iterations: self.iterations,
            relative_change: self.history.clone(),
            constraint_residual: self.constraint_residual,
            fit_residual: self.fit_residual,
            params: self.params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }

    /// `m,abs_c,arg_c` rows for the estimated errors.
    pub fn write_errors_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "m,abs_c,arg_c")?;
        for (m, c) in self.c.iter().enumerate() {
            writeln!(out, "{},{},{}", m + 1, c.norm(), c.arg())?;
        }
        Ok(())
    }
}

/// Complex shrinkage: `max(|v| − κ, 0) · v / |v|`, with `0/0 = 0`.
pub fn soft_threshold(v: &[C64], kappa: f64) -> Vec<C64> {
    v.iter().map(|&z| shrink(z, kappa)).collect()
}

#[inline]
pub(crate) fn shrink(z: C64, kappa: f64) -> C64 {
    let mag = z.norm();
    if mag <= kappa || mag == 0.0 {
        ZERO
    } else {
        z * ((mag - kappa) / mag)
    }
}

/// Per-element energy `a_m = Σ_l Σ_n |x_{l,nM+m}|²`.
pub fn element_energy(batch: &[Snapshot]) -> Result<Vec<f64>> {
    let m = batch_elements(batch)?;
    let mut a = vec![0.0; m];
    for x in batch {
        for (k, v) in x.as_slice().iter().enumerate() {
            a[k % m] += v.norm_sqr();
        }
    }
    if let Some(element) = a.iter().position(|&e| e == 0.0) {
        return Err(StapError::DegenerateChannel { element });
    }
    Ok(a)
}

fn batch_elements(batch: &[Snapshot]) -> Result<usize> {
    let first = batch
        .first()
        .ok_or_else(|| StapError::InvalidParameter("snapshot batch is empty".into()))?;
    for x in batch {
        if x.num_elements() != first.num_elements() || x.len() != first.len() {
            return Err(StapError::DimensionMismatch {
                context: "snapshot batch",
                expected: first.len(),
                found: x.len(),
            });
        }
    }
    Ok(first.num_elements())
}

fn check_batch(dict: &SteeringDictionary, batch: &[Snapshot]) -> Result<()> {
    batch_elements(batch)?;
    let g = dict.grid();
    let x = &batch[0];
    if x.num_elements() != g.num_elements || x.num_pulses() != g.num_pulses {
        return Err(StapError::DimensionMismatch {
            context: "snapshot vs dictionary",
            expected: dict.num_rows(),
            found: x.len(),
        });
    }
    Ok(())
}

fn check_state(state: &SolverState, dict: &SteeringDictionary, batch: &[Snapshot]) -> Result<()> {
    check_batch(dict, batch)?;
    let l = batch.len();
    for (context, found) in [
        ("profile count", state.profiles.len()),
        ("residual count", state.residuals.len()),
        ("multiplier count", state.multipliers.len()),
    ] {
        if found != l {
            return Err(StapError::DimensionMismatch {
                context,
                expected: l,
                found,
            });
        }
    }
    if state.t.len() != dict.grid().num_elements {
        return Err(StapError::DimensionMismatch {
            context: "inverse error vector",
            expected: dict.grid().num_elements,
            found: state.t.len(),
        });
    }
    Ok(())
}

// Batch-level primitives shared by the iteration loop and the public
// single-update operations.

fn residual_step(
    multipliers: &[Vec<C64>],
    phi_upsilon: &[Vec<C64>],
    tx: &[Vec<C64>],
    p: &ResolvedParams,
) -> Vec<Vec<C64>> {
    let k = p.residual_gain();
    multipliers
        .iter()
        .zip(phi_upsilon)
        .zip(tx)
        .map(|((lam, pa), tx)| {
            lam.iter()
                .zip(pa)
                .zip(tx)
                .map(|((&l, &a), &x)| (l / p.beta - a + x) * k)
                .collect()
        })
        .collect()
}

fn profile_step(
    dict: &SteeringDictionary,
    profiles: &[Vec<C64>],
    phi_upsilon: &[Vec<C64>],
    residuals: &[Vec<C64>],
    tx: &[Vec<C64>],
    multipliers: &[Vec<C64>],
    p: &ResolvedParams,
) -> Vec<Vec<C64>> {
    let kappa = p.threshold();
    let mut grad = vec![ZERO; dict.num_columns()];
    profiles
        .iter()
        .enumerate()
        .map(|(l, alpha)| {
            let w: Vec<C64> = phi_upsilon[l]
                .iter()
                .zip(&residuals[l])
                .zip(&tx[l])
                .zip(&multipliers[l])
                .map(|(((&a, &r), &x), &lam)| a + r - x - lam / p.beta)
                .collect();
            dict.adjoint_into(&w, &mut grad).expect("conforming buffers");
            alpha
                .iter()
                .zip(&grad)
                .map(|(&a, &g)| shrink(a - g * p.tau, kappa))
                .collect()
        })
        .collect()
}

fn inverse_error_step(
    batch: &[Snapshot],
    z: &[Vec<C64>],
    energy: &[f64],
    varsigma: C64,
) -> Vec<C64> {
    let m = energy.len();
    let mut b = vec![ZERO; m];
    for (x, zl) in batch.iter().zip(z) {
        for (k, (xv, zv)) in x.as_slice().iter().zip(zl).enumerate() {
            b[k % m] += xv.conj() * zv;
        }
    }
    let ratio_sum: C64 = b.iter().zip(energy).map(|(&bm, &am)| bm / am).sum();
    let inv_sum: f64 = energy.iter().map(|am| 1.0 / am).sum();
    let gamma = (varsigma - ratio_sum) / inv_sum;
    b.iter().zip(energy).map(|(&bm, &am)| (bm + gamma) / am).collect()
}

fn multiplier_step(
    multipliers: &[Vec<C64>],
    phi_upsilon: &[Vec<C64>],
    residuals: &[Vec<C64>],
    tx: &[Vec<C64>],
    beta: f64,
) -> Vec<Vec<C64>> {
    multipliers
        .iter()
        .enumerate()
        .map(|(l, lam)| {
            lam.iter()
                .zip(&phi_upsilon[l])
                .zip(&residuals[l])
                .zip(&tx[l])
                .map(|(((&lv, &a), &r), &x)| lv - (a + r - x) * beta)
                .collect()
        })
        .collect()
}

fn apply_columns(dict: &SteeringDictionary, profiles: &[Vec<C64>]) -> Vec<Vec<C64>> {
    profiles
        .iter()
        .map(|a| dict.apply(a).expect("conforming buffers"))
        .collect()
}

fn scaled_batch(t: &[C64], batch: &[Snapshot]) -> Vec<Vec<C64>> {
    batch
        .iter()
        .map(|x| apply_t(t, x).expect("conforming buffers").into_vec())
        .collect()
}

fn update_point(
    phi_upsilon: &[Vec<C64>],
    residuals: &[Vec<C64>],
    multipliers: &[Vec<C64>],
    beta: f64,
) -> Vec<Vec<C64>> {
    phi_upsilon
        .iter()
        .zip(residuals)
        .zip(multipliers)
        .map(|((pa, r), lam)| {
            pa.iter()
                .zip(r)
                .zip(lam)
                .map(|((&a, &rv), &lv)| a + rv - lv / beta)
                .collect()
        })
        .collect()
}

/// Residual update: `Γ ← ρβ/(1+ρβ) (Λ/β − ΦΥ + T X)`.
pub fn update_r(
    state: &SolverState,
    dict: &SteeringDictionary,
    batch: &[Snapshot],
    params: &ResolvedParams,
) -> Result<Vec<Vec<C64>>> {
    check_state(state, dict, batch)?;
    let pu = apply_columns(dict, &state.profiles);
    let tx = scaled_batch(&state.t, batch);
    Ok(residual_step(&state.multipliers, &pu, &tx, params))
}

/// Profile update `Υ ← soft(Υ − τ G, τ/β)` with
/// `G = Φᴴ(ΦΥ + Γ − T X − Λ/β)`; expects `Γ` already advanced.
pub fn update_alpha(
    state: &SolverState,
    dict: &SteeringDictionary,
    batch: &[Snapshot],
    params: &ResolvedParams,
) -> Result<Vec<Vec<C64>>> {
    check_state(state, dict, batch)?;
    let pu = apply_columns(dict, &state.profiles);
    let tx = scaled_batch(&state.t, batch);
    Ok(profile_step(
        dict,
        &state.profiles,
        &pu,
        &state.residuals,
        &tx,
        &state.multipliers,
        params,
    ))
}

/// Closed-form update of `t` given advanced `Υ` and `Γ` and the current
/// `Λ`: least squares fit of `Z = ΦΥ + Γ − Λ/β` by `T X` subject to
/// `Σ t_m = ς`.
pub fn update_t(
    state: &SolverState,
    dict: &SteeringDictionary,
    batch: &[Snapshot],
    params: &ResolvedParams,
) -> Result<Vec<C64>> {
    check_state(state, dict, batch)?;
    let energy = element_energy(batch)?;
    let pu = apply_columns(dict, &state.profiles);
    let z = update_point(&pu, &state.residuals, &state.multipliers, params.beta);
    Ok(inverse_error_step(batch, &z, &energy, params.varsigma))
}

/// Constrained least-squares fit of `t` to an explicit `Z`.
pub fn fit_inverse_errors(batch: &[Snapshot], z: &[Vec<C64>], varsigma: C64) -> Result<Vec<C64>> {
    let energy = element_energy(batch)?;
    if z.len() != batch.len() {
        return Err(StapError::DimensionMismatch {
            context: "Z columns",
            expected: batch.len(),
            found: z.len(),
        });
    }
    for zl in z {
        if zl.len() != batch[0].len() {
            return Err(StapError::DimensionMismatch {
                context: "Z column length",
                expected: batch[0].len(),
                found: zl.len(),
            });
        }
    }
    Ok(inverse_error_step(batch, z, &energy, varsigma))
}

/// Multiplier update `Λ ← Λ − β(ΦΥ + Γ − T X)` with everything advanced.
pub fn update_lambda(
    state: &SolverState,
    dict: &SteeringDictionary,
    batch: &[Snapshot],
    params: &ResolvedParams,
) -> Result<Vec<Vec<C64>>> {
    check_state(state, dict, batch)?;
    let pu = apply_columns(dict, &state.profiles);
    let tx = scaled_batch(&state.t, batch);
    Ok(multiplier_step(
        &state.multipliers,
        &pu,
        &state.residuals,
        &tx,
        params.beta,
    ))
}

/// `Σ_l ‖a_l − b_l‖ / Σ_l ‖b_l‖`, with `0/0 = 0` and `x/0 = ∞`.
pub fn relative_change(before: &[Vec<C64>], after: &[Vec<C64>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in before.iter().zip(after) {
        num += a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        den += norm(b);
    }
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// How `t` evolves during a solve.
#[derive(Debug, Clone, PartialEq)]
pub enum InverseErrorMode {
    /// Estimated jointly, starting from all ones.
    Estimate,
    /// Held at the given vector.
    Fixed(Vec<C64>),
}

/// The iteration loop, with `ΦΥ` and `T X` carried between steps.
pub struct AdmIteration<'a> {
    dict: &'a SteeringDictionary,
    batch: &'a [Snapshot],
    params: ResolvedParams,
    estimate_t: bool,
    energy: Vec<f64>,
    state: SolverState,
    phi_upsilon: Vec<Vec<C64>>,
    tx: Vec<Vec<C64>>,
}

impl<'a> AdmIteration<'a> {
    pub fn new(
        dict: &'a SteeringDictionary,
        batch: &'a [Snapshot],
        params: ResolvedParams,
        mode: InverseErrorMode,
    ) -> Result<Self> {
        check_batch(dict, batch)?;
        let m = dict.grid().num_elements;
        let (t0, estimate_t) = match mode {
            InverseErrorMode::Estimate => (vec![C64::new(1.0, 0.0); m], true),
            InverseErrorMode::Fixed(t) => {
                if t.len() != m {
                    return Err(StapError::DimensionMismatch {
                        context: "fixed inverse error vector",
                        expected: m,
                        found: t.len(),
                    });
                }
                if t.iter().any(|v| v.norm() == 0.0) {
                    return Err(StapError::InvalidParameter(
                        "fixed inverse error vector has a zero entry".into(),
                    ));
                }
                (t, false)
            }
        };
        let energy = if estimate_t {
            element_energy(batch)?
        } else {
            Vec::new()
        };
        let state = SolverState::initial(dict, batch.len(), t0);
        let phi_upsilon = vec![vec![ZERO; dict.num_rows()]; batch.len()];
        let tx = scaled_batch(&state.t, batch);
        Ok(Self {
            dict,
            batch,
            params,
            estimate_t,
            energy,
            state,
            phi_upsilon,
            tx,
        })
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    /// One sweep of the six updates; returns the relative profile change.
    pub fn step(&mut self) -> f64 {
        let p = &self.params;
        let s = &mut self.state;
        s.residuals = residual_step(&s.multipliers, &self.phi_upsilon, &self.tx, p);
        let next = profile_step(
            self.dict,
            &s.profiles,
            &self.phi_upsilon,
            &s.residuals,
            &self.tx,
            &s.multipliers,
            p,
        );
        let change = relative_change(&s.profiles, &next);
        s.profiles = next;
        self.phi_upsilon = apply_columns(self.dict, &s.profiles);
        if self.estimate_t {
            let z = update_point(&self.phi_upsilon, &s.residuals, &s.multipliers, p.beta);
            s.t = inverse_error_step(self.batch, &z, &self.energy, p.varsigma);
            self.tx = scaled_batch(&s.t, self.batch);
        }
        s.multipliers = multiplier_step(
            &s.multipliers,
            &self.phi_upsilon,
            &s.residuals,
            &self.tx,
            p.beta,
        );
        s.iteration += 1;
        change
    }

    /// Runs to tolerance or the iteration cap.
    pub fn run(mut self) -> SolveReport {
        let mut history = Vec::new();
        let mut termination = Termination::MaxIter;
        while self.state.iteration < self.params.max_iter {
            let change = self.step();
            history.push(change);
            // An all-zero iterate on nonzero data is not a fixed point: the
            // multipliers keep accumulating the unexplained data.
            let at_zero = self.state.profiles.iter().all(|a| a.iter().all(|z| z.norm_sqr() == 0.0));
            if change <= self.params.zeta && !at_zero {
                termination = Termination::Tolerance;
                break;
            }
        }
        self.finish(history, termination)
    }

    fn finish(self, history: Vec<f64>, termination: Termination) -> SolveReport {
        let mut constraint = 0.0;
        let mut fit = 0.0;
        for l in 0..self.batch.len() {
            for ((a, r), x) in self.phi_upsilon[l]
                .iter()
                .zip(&self.state.residuals[l])
                .zip(&self.tx[l])
            {
                constraint += (a + r - x).norm_sqr();
                fit += (x - a).norm_sqr();
            }
        }
        let c = self.state.t.iter().map(|t| t.inv()).collect();
        SolveReport {
            profiles: self.state.profiles.into_iter().map(Profile).collect(),
            t: self.state.t,
            c,
            iterations: self.state.iteration,
            history,
            termination,
            constraint_residual: constraint.sqrt(),
            fit_residual: fit.sqrt(),
            params: self.params,
        }
    }
}

fn zero_data_report(
    dict: &SteeringDictionary,
    batch: &[Snapshot],
    params: ResolvedParams,
    t0: Vec<C64>,
) -> SolveReport {
    let c = t0.iter().map(|t| t.inv()).collect();
    SolveReport {
        profiles: vec![Profile::zeros(dict.num_columns()); batch.len()],
        t: t0,
        c,
        iterations: 0,
        history: Vec::new(),
        termination: Termination::Tolerance,
        constraint_residual: 0.0,
        fit_residual: 0.0,
        params,
    }
}

fn is_zero_data(batch: &[Snapshot]) -> bool {
    batch.iter().all(|x| x.norm() == 0.0)
}

/// Joint estimation of profiles and inverse gain/phase errors.
pub fn solve_jie_adm(
    batch: &[Snapshot],
    dict: &SteeringDictionary,
    params: &SolverParams,
) -> Result<SolveReport> {
    let resolved = params.resolve(dict)?;
    solve_resolved(batch, dict, resolved, InverseErrorMode::Estimate)
}

/// The same iteration with `t` held at `t_fixed`.
pub fn solve_adm_fixed_t(
    batch: &[Snapshot],
    dict: &SteeringDictionary,
    params: &SolverParams,
    t_fixed: &[C64],
) -> Result<SolveReport> {
    let resolved = params.resolve(dict)?;
    solve_resolved(batch, dict, resolved, InverseErrorMode::Fixed(t_fixed.to_vec()))
}

/// Solve with already-resolved parameters.
pub fn solve_resolved(
    batch: &[Snapshot],
    dict: &SteeringDictionary,
    params: ResolvedParams,
    mode: InverseErrorMode,
) -> Result<SolveReport> {
    check_batch(dict, batch)?;
    if is_zero_data(batch) {
        let t0 = match mode {
            InverseErrorMode::Estimate => vec![C64::new(1.0, 0.0); dict.grid().num_elements],
            InverseErrorMode::Fixed(t) => t,
        };
        return Ok(zero_data_report(dict, batch, params, t0));
    }
    Ok(AdmIteration::new(dict, batch, params, mode)?.run())
}

/// Reference solution of `min Σ_l ‖z_l − Q_l t‖²  s.t.  Σ t_m = ς` from the
/// dense KKT system, with every `Q_l = diag(x_l)(1_N ⊗ I_M)` formed
/// explicitly.
pub fn constrained_ls_oracle(z: &[Vec<C64>], batch: &[Snapshot], varsigma: C64) -> Result<Vec<C64>> {
    let m = batch_elements(batch)?;
    if z.len() != batch.len() {
        return Err(StapError::DimensionMismatch {
            context: "oracle Z columns",
            expected: batch.len(),
            found: z.len(),
        });
    }
    let mut gram = DMatrix::<C64>::zeros(m, m);
    let mut rhs = DVector::<C64>::zeros(m);
    for (x, zl) in batch.iter().zip(z) {
        let rows = x.len();
        if zl.len() != rows {
            return Err(StapError::DimensionMismatch {
                context: "oracle Z column length",
                expected: rows,
                found: zl.len(),
            });
        }
        let mut q = DMatrix::<C64>::zeros(rows, m);
        for k in 0..rows {
            q[(k, k % m)] = x.as_slice()[k];
        }
        let qh = q.adjoint();
        gram += &qh * &q;
        rhs += &qh * DVector::from_column_slice(zl);
    }
    let mut kkt = DMatrix::<C64>::zeros(m + 1, m + 1);
    kkt.view_mut((0, 0), (m, m)).copy_from(&gram);
    for i in 0..m {
        kkt[(i, m)] = C64::new(-1.0, 0.0);
        kkt[(m, i)] = C64::new(1.0, 0.0);
    }
    let mut b = DVector::<C64>::zeros(m + 1);
    b.rows_mut(0, m).copy_from(&rhs);
    b[m] = varsigma;
    let sol = kkt
        .lu()
        .solve(&b)
        .ok_or_else(|| StapError::SingularSystem("constrained least-squares KKT matrix".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(StapError::SingularSystem(
            "constrained least-squares KKT solve produced non-finite values".into(),
        ));
    }
    Ok(sol.rows(0, m).iter().copied().collect())
}

/// Complex scalar `s` minimizing `‖s · estimate − truth‖`.
pub fn align_scale(estimate: &[C64], truth: &[C64]) -> C64 {
    let num: C64 = estimate.iter().zip(truth).map(|(e, t)| e.conj() * t).sum();
    let den: f64 = estimate.iter().map(|e| e.norm_sqr()).sum();
    if den == 0.0 {
        ZERO
    } else {
        num / den
    }
}

/// `‖s · estimate − truth‖ / ‖truth‖` after optimal scalar alignment.
pub fn aligned_error(estimate: &[C64], truth: &[C64]) -> f64 {
    let s = align_scale(estimate, truth);
    let num: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (s * e - t).norm_sqr())
        .sum();
    (num / truth.iter().map(|t| t.norm_sqr()).sum::<f64>()).sqrt()
}

/// Literal single-snapshot form of each update, recomputing every product
/// from scratch. Used to check that the batched loop reduces to it at
/// `L = 1`.
pub mod single {
    use super::*;

    fn phi(dict: &SteeringDictionary, alpha: &[C64]) -> Result<Vec<C64>> {
        dict.apply(alpha)
    }

    pub fn update_r(
        dict: &SteeringDictionary,
        x: &Snapshot,
        alpha: &[C64],
        lambda: &[C64],
        t: &[C64],
        p: &ResolvedParams,
    ) -> Result<Vec<C64>> {
        let pa = phi(dict, alpha)?;
        let tx = apply_t(t, x)?.into_vec();
        let k = p.residual_gain();
        Ok((0..x.len())
            .map(|i| (lambda[i] / p.beta - pa[i] + tx[i]) * k)
            .collect())
    }

    pub fn update_alpha(
        dict: &SteeringDictionary,
        x: &Snapshot,
        alpha: &[C64],
        r: &[C64],
        lambda: &[C64],
        t: &[C64],
        p: &ResolvedParams,
    ) -> Result<Vec<C64>> {
        let pa = phi(dict, alpha)?;
        let tx = apply_t(t, x)?.into_vec();
        let w: Vec<C64> = (0..x.len())
            .map(|i| pa[i] + r[i] - tx[i] - lambda[i] / p.beta)
            .collect();
        let g = dict.adjoint(&w)?;
        let kappa = p.threshold();
        Ok(alpha
            .iter()
            .zip(&g)
            .map(|(&a, &gv)| shrink(a - gv * p.tau, kappa))
            .collect())
    }

    pub fn update_t(
        dict: &SteeringDictionary,
        x: &Snapshot,
        alpha_next: &[C64],
        r: &[C64],
        lambda: &[C64],
        p: &ResolvedParams,
    ) -> Result<Vec<C64>> {
        let pa = phi(dict, alpha_next)?;
        let m = x.num_elements();
        let mut a = vec![0.0; m];
        let mut b = vec![ZERO; m];
        for (k, xv) in x.as_slice().iter().enumerate() {
            let z = pa[k] + r[k] - lambda[k] / p.beta;
            a[k % m] += xv.norm_sqr();
            b[k % m] += xv.conj() * z;
        }
        if let Some(element) = a.iter().position(|&e| e == 0.0) {
            return Err(StapError::DegenerateChannel { element });
        }
        let ratio_sum: C64 = (0..m).map(|i| b[i] / a[i]).sum();
        let inv_sum: f64 = a.iter().map(|v| 1.0 / v).sum();
        let gamma = (p.varsigma - ratio_sum) / inv_sum;
        Ok((0..m).map(|i| (b[i] + gamma) / a[i]).collect())
    }

    pub fn update_lambda(
        dict: &SteeringDictionary,
        x: &Snapshot,
        alpha_next: &[C64],
        r: &[C64],
        lambda: &[C64],
        t_next: &[C64],
        p: &ResolvedParams,
    ) -> Result<Vec<C64>> {
        let pa = phi(dict, alpha_next)?;
        let tx = apply_t(t_next, x)?.into_vec();
        Ok((0..x.len())
            .map(|i| lambda[i] - (pa[i] + r[i] - tx[i]) * p.beta)
            .collect())
    }

    /// Iterate of one snapshot's problem.
    #[derive(Debug, Clone, PartialEq)]
    pub struct Iterate {
        pub alpha: Vec<C64>,
        pub r: Vec<C64>,
        pub lambda: Vec<C64>,
        pub t: Vec<C64>,
    }

    /// One full sweep, in the order residual, profile, `t`, multiplier.
    pub fn sweep(
        dict: &SteeringDictionary,
        x: &Snapshot,
        it: &Iterate,
        p: &ResolvedParams,
    ) -> Result<Iterate> {
        let r = update_r(dict, x, &it.alpha, &it.lambda, &it.t, p)?;
        let alpha = update_alpha(dict, x, &it.alpha, &r, &it.lambda, &it.t, p)?;
        let t = update_t(dict, x, &alpha, &r, &it.lambda, p)?;
        let lambda = update_lambda(dict, x, &alpha, &r, &it.lambda, &t, p)?;
        Ok(Iterate {
            alpha,
            r,
            lambda,
            t,
        })
    }
}

#[cfg(test)]
mod tests;
