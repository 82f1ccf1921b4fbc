//! Synthetic airborne radar returns: steering vectors, clutter ridge,
//! point targets, array gain/phase errors and thermal noise.
//!
//! Space-time samples are stored pulse-major: sample `n * M + m` holds
//! pulse `n` at element `m` (both 0-based), i.e. the layout of
//! `v_d ⊗ v_s`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StapError};
use crate::C64;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Parameters of the simulated side-looking airborne radar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarConfig {
    pub num_elements: usize,
    pub num_pulses: usize,
    /// Meters.
    pub carrier_wavelength: f64,
    /// Meters.
    pub element_spacing: f64,
    /// Hertz.
    pub prf: f64,
    /// Meters per second.
    pub platform_velocity: f64,
    /// Meters.
    pub platform_height: f64,
    /// Clutter-to-noise ratio per patch, per element, per pulse.
    pub cnr_db: f64,
    /// Thermal noise power per element and pulse (linear).
    pub noise_power: f64,
    pub num_clutter_patches: usize,
}

impl RadarConfig {
    /// The L-band side-looking system: 1.24 GHz carrier, 1984 Hz PRF,
    /// 100 m/s platform at 3000 m, 10 elements, 10 pulses, 361 patches at
    /// 30 dB CNR, unit noise.
    pub fn l_band_reference() -> Self {
        let wavelength = SPEED_OF_LIGHT / 1.24e9;
        Self {
            num_elements: 10,
            num_pulses: 10,
            carrier_wavelength: wavelength,
            element_spacing: wavelength / 2.0,
            prf: 1984.0,
            platform_velocity: 100.0,
            platform_height: 3000.0,
            cnr_db: 30.0,
            noise_power: 1.0,
            num_clutter_patches: 361,
        }
    }

    /// Reference system scaled down to `M = N = 8` for Monte Carlo work.
    pub fn desk_scale() -> Self {
        Self {
            num_elements: 8,
            num_pulses: 8,
            ..Self::l_band_reference()
        }
    }

    /// Same physical system with a different array/CPI size.
    pub fn with_dimensions(&self, num_elements: usize, num_pulses: usize) -> Self {
        Self {
            num_elements,
            num_pulses,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_elements < 2 {
            return Err(StapError::InvalidConfig(format!(
                "num_elements must be at least 2, got {}",
                self.num_elements
            )));
        }
        if self.num_pulses < 2 {
            return Err(StapError::InvalidConfig(format!(
                "num_pulses must be at least 2, got {}",
                self.num_pulses
            )));
        }
        if self.num_clutter_patches < 1 {
            return Err(StapError::InvalidConfig(
                "num_clutter_patches must be at least 1".into(),
            ));
        }
        let positive = [
            ("carrier_wavelength", self.carrier_wavelength),
            ("element_spacing", self.element_spacing),
            ("prf", self.prf),
            ("platform_velocity", self.platform_velocity),
            ("platform_height", self.platform_height),
            ("noise_power", self.noise_power),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(StapError::InvalidConfig(format!(
                    "{name} must be finite and strictly positive, got {value}"
                )));
            }
        }
        if !self.cnr_db.is_finite() {
            return Err(StapError::InvalidConfig(format!(
                "cnr_db must be finite, got {}",
                self.cnr_db
            )));
        }
        Ok(())
    }

    /// Length of one space-time snapshot, `N * M`.
    pub fn snapshot_len(&self) -> usize {
        self.num_elements * self.num_pulses
    }

    /// Clutter power per patch, `σ_n² · 10^(CNR/10)`.
    pub fn clutter_patch_power(&self) -> f64 {
        self.noise_power * db_to_power(self.cnr_db)
    }

    /// Ratio of normalized Doppler to normalized spatial frequency along the
    /// clutter ridge, `4 v_p / (λ_c · prf)` at half-wavelength spacing.
    pub fn clutter_ridge_slope(&self) -> f64 {
        2.0 * self.platform_velocity / (self.prf * self.element_spacing)
    }

    /// Normalized (Doppler, spatial) frequencies of a scatterer at azimuth
    /// `theta` (radians from broadside), wrapped to `[-0.5, 0.5)`.
    pub fn frequencies_at(&self, theta: f64) -> (f64, f64) {
        let s = theta.sin();
        let fs = self.element_spacing / self.carrier_wavelength * s;
        let fd = 2.0 * self.platform_velocity * s / (self.carrier_wavelength * self.prf);
        (wrap_frequency(fd), wrap_frequency(fs))
    }

    /// Patch azimuths, uniform over `[-π/2, π/2]`; a single patch sits at
    /// broadside.
    pub fn patch_angles(&self) -> Vec<f64> {
        let nc = self.num_clutter_patches;
        if nc == 1 {
            return vec![0.0];
        }
        let step = PI / (nc - 1) as f64;
        (0..nc).map(|k| -PI / 2.0 + k as f64 * step).collect()
    }

    /// (Doppler, spatial) frequencies of every clutter patch.
    pub fn clutter_patches(&self) -> Vec<(f64, f64)> {
        self.patch_angles()
            .into_iter()
            .map(|theta| self.frequencies_at(theta))
            .collect()
    }
}

/// Wraps a normalized frequency into `[-0.5, 0.5)`.
pub fn wrap_frequency(f: f64) -> f64 {
    let w = f - (f + 0.5).floor();
    if w >= 0.5 {
        w - 1.0
    } else {
        w
    }
}

pub fn db_to_power(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Multiplicative per-element gain/phase errors `c_m = (1 + ε_m) e^{jφ_m}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainPhaseError {
    pub c: Vec<C64>,
    pub eps_max: f64,
    pub phi_max: f64,
}

impl GainPhaseError {
    /// Error-free array.
    pub fn none(num_elements: usize) -> Self {
        Self {
            c: vec![C64::new(1.0, 0.0); num_elements],
            eps_max: 0.0,
            phi_max: 0.0,
        }
    }

    /// Draws `ε_m ~ U[-ε_max, ε_max]` and `φ_m ~ U[-φ_max, φ_max]`
    /// independently per element.
    pub fn draw<R: Rng + ?Sized>(
        num_elements: usize,
        eps_max: f64,
        phi_max: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&eps_max) {
            return Err(StapError::InvalidParameter(format!(
                "eps_max must lie in [0, 1) so that no element gain vanishes, got {eps_max}"
            )));
        }
        if !(phi_max >= 0.0 && phi_max.is_finite()) {
            return Err(StapError::InvalidParameter(format!(
                "phi_max must be finite and nonnegative, got {phi_max}"
            )));
        }
        let c = (0..num_elements)
            .map(|_| {
                let eps = symmetric_uniform(rng, eps_max);
                let phi = symmetric_uniform(rng, phi_max);
                C64::from_polar(1.0 + eps, phi)
            })
            .collect();
        Ok(Self {
            c,
            eps_max,
            phi_max,
        })
    }

    pub fn num_elements(&self) -> usize {
        self.c.len()
    }

    /// The inverse errors `t_m = 1 / c_m`.
    pub fn inverse(&self) -> Vec<C64> {
        self.c.iter().map(|c| c.inv()).collect()
    }
}

fn symmetric_uniform<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    if half_width == 0.0 {
        // Still consume a draw so the stream layout does not depend on the bound.
        let _: f64 = rng.random();
        0.0
    } else {
        rng.random_range(-half_width..=half_width)
    }
}

/// A point scatterer to inject into the cell under test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub normalized_doppler: f64,
    pub normalized_spatial: f64,
    /// Per element, per pulse.
    pub snr_db: f64,
}

impl TargetSpec {
    pub fn boresight(normalized_doppler: f64, snr_db: f64) -> Self {
        Self {
            normalized_doppler,
            normalized_spatial: 0.0,
            snr_db,
        }
    }
}

/// One range bin's space-time measurement, pulse-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    samples: Vec<C64>,
    num_elements: usize,
    num_pulses: usize,
}

impl Snapshot {
    pub fn new(samples: Vec<C64>, num_elements: usize, num_pulses: usize) -> Result<Self> {
        if samples.len() != num_elements * num_pulses {
            return Err(StapError::DimensionMismatch {
                context: "snapshot",
                expected: num_elements * num_pulses,
                found: samples.len(),
            });
        }
        Ok(Self {
            samples,
            num_elements,
            num_pulses,
        })
    }

    pub fn zeros(num_elements: usize, num_pulses: usize) -> Self {
        Self {
            samples: vec![C64::new(0.0, 0.0); num_elements * num_pulses],
            num_elements,
            num_pulses,
        }
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn num_pulses(&self) -> usize {
        self.num_pulses
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.samples
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.samples
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.samples
    }

    /// Sample at 0-based pulse `n` and element `m`.
    pub fn at(&self, pulse: usize, element: usize) -> C64 {
        self.samples[pulse * self.num_elements + element]
    }

    pub fn norm(&self) -> f64 {
        norm(&self.samples)
    }
}

/// Several snapshots sharing the same array/CPI geometry (and the same
/// gain/phase errors).
pub type SnapshotBatch = Vec<Snapshot>;

pub(crate) fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `[1, e^{j2πf}, …, e^{j2π(len-1)f}]`.
fn steering(f: f64, len: usize) -> Vec<C64> {
    (0..len)
        .map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 * f))
        .collect()
}

/// Spatial steering vector of an `M`-element uniform linear array.
pub fn spatial_steering(fs: f64, num_elements: usize) -> Vec<C64> {
    steering(fs, num_elements)
}

/// Temporal steering vector over `N` pulses.
pub fn temporal_steering(fd: f64, num_pulses: usize) -> Vec<C64> {
    steering(fd, num_pulses)
}

/// `v_d(fd) ⊗ v_s(fs)`.
pub fn space_time_steering(fd: f64, fs: f64, num_pulses: usize, num_elements: usize) -> Vec<C64> {
    let vd = temporal_steering(fd, num_pulses);
    let vs = spatial_steering(fs, num_elements);
    vd.iter()
        .flat_map(|d| vs.iter().map(move |s| d * s))
        .collect()
}

/// Applies `C = I_N ⊗ diag(c)` to a pulse-major space-time vector in place.
pub fn apply_gain_phase(c: &[C64], x: &mut [C64]) {
    let m = c.len();
    for (k, v) in x.iter_mut().enumerate() {
        *v *= c[k % m];
    }
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(s * re, s * im)
}

fn check_errors(cfg: &RadarConfig, c: &GainPhaseError) -> Result<()> {
    cfg.validate()?;
    if c.num_elements() != cfg.num_elements {
        return Err(StapError::DimensionMismatch {
            context: "gain/phase error vector",
            expected: cfg.num_elements,
            found: c.num_elements(),
        });
    }
    Ok(())
}

/// Clutter return `C Σ_k α_k v(f_d,k, f_s,k)` with independent complex
/// Gaussian patch amplitudes.
pub fn synthesize_clutter<R: Rng + ?Sized>(
    cfg: &RadarConfig,
    c: &GainPhaseError,
    rng: &mut R,
) -> Result<Snapshot> {
    check_errors(cfg, c)?;
    let (m, n) = (cfg.num_elements, cfg.num_pulses);
    let power = cfg.clutter_patch_power();
    let mut x = vec![C64::new(0.0, 0.0); m * n];
    for (fd, fs) in cfg.clutter_patches() {
        let amp = complex_gaussian(rng, power);
        let vd = temporal_steering(fd, n);
        let vs = spatial_steering(fs, m);
        for (p, d) in vd.iter().enumerate() {
            let ad = amp * d;
            for (e, s) in vs.iter().enumerate() {
                x[p * m + e] += ad * s;
            }
        }
    }
    apply_gain_phase(&c.c, &mut x);
    Snapshot::new(x, m, n)
}

/// Hermitian `NM × NM` covariance, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    dim: usize,
    entries: Vec<C64>,
}

impl CovarianceMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![C64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.entries[row * self.dim + col]
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    /// Adds `weight · v vᴴ`.
    pub fn add_outer(&mut self, weight: f64, v: &[C64]) {
        for (i, vi) in v.iter().enumerate() {
            let wi = vi * weight;
            let row = &mut self.entries[i * self.dim..(i + 1) * self.dim];
            for (r, vj) in row.iter_mut().zip(v) {
                *r += wi * vj.conj();
            }
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.entries)
    }

    /// Largest `|R_ij - conj(R_ji)|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in i..self.dim {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    pub fn to_dmatrix(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.entries)
    }

    /// Eigenvalues in ascending order (Hermitian part).
    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = self.to_dmatrix();
        let herm = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        let mut ev: Vec<f64> = herm.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

/// `R_c = C (Σ_k σ_c² v_k v_kᴴ) Cᴴ`.
pub fn clutter_covariance(cfg: &RadarConfig, c: &GainPhaseError) -> Result<CovarianceMatrix> {
    check_errors(cfg, c)?;
    let (m, n) = (cfg.num_elements, cfg.num_pulses);
    let power = cfg.clutter_patch_power();
    let mut r = CovarianceMatrix::zeros(m * n);
    for (fd, fs) in cfg.clutter_patches() {
        let mut v = space_time_steering(fd, fs, n, m);
        apply_gain_phase(&c.c, &mut v);
        r.add_outer(power, &v);
    }
    Ok(r)
}

/// Full return `Σ_t α_t C v_t + x_c + n` for one range bin. An empty target
/// list yields a target-free (H₀) snapshot. Thermal noise is added after
/// the array errors.
pub fn synthesize_snapshot<R: Rng + ?Sized>(
    cfg: &RadarConfig,
    c: &GainPhaseError,
    targets: &[TargetSpec],
    rng: &mut R,
) -> Result<Snapshot> {
    check_errors(cfg, c)?;
    let (m, n) = (cfg.num_elements, cfg.num_pulses);
    let mut target_sum = vec![C64::new(0.0, 0.0); m * n];
    for t in targets {
        let amplitude = (cfg.noise_power * db_to_power(t.snr_db)).sqrt();
        let phase = rng.random_range(0.0..2.0 * PI);
        let alpha = C64::from_polar(amplitude, phase);
        let v = space_time_steering(t.normalized_doppler, t.normalized_spatial, n, m);
        for (acc, vi) in target_sum.iter_mut().zip(v) {
            *acc += alpha * vi;
        }
    }
    apply_gain_phase(&c.c, &mut target_sum);

    let mut x = synthesize_clutter(cfg, c, rng)?.into_vec();
    for (xi, ti) in x.iter_mut().zip(&target_sum) {
        *xi += ti + complex_gaussian(rng, cfg.noise_power);
    }
    Snapshot::new(x, m, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_vec_close(a: &[C64], b: &[C64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).norm() <= tol, "{x} vs {y}");
        }
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn spatial_steering_values() {
        assert_vec_close(&spatial_steering(0.0, 4), &[c(1.0, 0.0); 4], 1e-15);
        assert_vec_close(&spatial_steering(0.25, 2), &[c(1.0, 0.0), c(0.0, 1.0)], 1e-15);
        assert_vec_close(
            &spatial_steering(0.5, 3),
            &[c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)],
            1e-15,
        );
    }

    #[test]
    fn temporal_steering_values() {
        assert_vec_close(&temporal_steering(0.0, 3), &[c(1.0, 0.0); 3], 1e-15);
        assert_vec_close(&temporal_steering(-0.25, 2), &[c(1.0, 0.0), c(0.0, -1.0)], 1e-15);
        assert_vec_close(&temporal_steering(0.5, 2), &[c(1.0, 0.0), c(-1.0, 0.0)], 1e-15);
    }

    #[test]
    fn space_time_steering_values() {
        assert_vec_close(&space_time_steering(0.0, 0.0, 3, 2), &[c(1.0, 0.0); 6], 1e-15);
        assert_vec_close(
            &space_time_steering(0.5, 0.0, 2, 2),
            &[c(1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0)],
            1e-15,
        );
    }

    #[test]
    fn wrap_frequency_range() {
        assert_abs_diff_eq!(wrap_frequency(0.5), -0.5);
        assert_abs_diff_eq!(wrap_frequency(0.7), -0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_frequency(-0.6), 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_frequency(0.2), 0.2);
    }

    #[test]
    fn reference_ridge_slope() {
        let cfg = RadarConfig::l_band_reference();
        let slope = cfg.clutter_ridge_slope();
        assert!((slope - 0.833).abs() < 1e-3, "slope {slope}");
        // Same slope through the frequency mapping.
        let (fd, fs) = cfg.frequencies_at(0.3);
        assert_abs_diff_eq!(fd / fs, slope, epsilon = 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = RadarConfig::desk_scale();
        assert!(cfg.validate().is_ok());
        cfg.num_elements = 1;
        assert!(matches!(cfg.validate(), Err(StapError::InvalidConfig(_))));
        let mut cfg = RadarConfig::desk_scale();
        cfg.prf = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RadarConfig::desk_scale();
        cfg.num_clutter_patches = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_field_names() {
        let cfg = RadarConfig::l_band_reference();
        let v = serde_json::to_value(&cfg).unwrap();
        for key in [
            "num_elements",
            "num_pulses",
            "carrier_wavelength",
            "element_spacing",
            "prf",
            "platform_velocity",
            "platform_height",
            "cnr_db",
            "noise_power",
            "num_clutter_patches",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: RadarConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, cfg);
        let bad = r#"{"num_elements":2}"#;
        assert!(serde_json::from_str::<RadarConfig>(bad).is_err());
    }

    #[test]
    fn gp_errors_zero_bounds_give_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = GainPhaseError::draw(5, 0.0, 0.0, &mut rng).unwrap();
        assert_vec_close(&e.c, &[c(1.0, 0.0); 5], 0.0);
    }

    #[test]
    fn gp_errors_deterministic_and_bounded() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            GainPhaseError::draw(16, 0.1, 0.1 * PI, &mut rng).unwrap()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
        for cm in draw(3).c {
            assert!((0.9..=1.1).contains(&cm.norm()));
            assert!(cm.arg().abs() <= 0.1 * PI + 1e-15);
        }
    }

    #[test]
    fn gp_errors_reject_unit_gain_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(GainPhaseError::draw(4, 1.0, 0.0, &mut rng).is_err());
        assert!(GainPhaseError::draw(4, 0.5, -0.1, &mut rng).is_err());
    }

    #[test]
    fn single_boresight_patch_is_constant() {
        let mut cfg = RadarConfig::desk_scale();
        cfg.num_clutter_patches = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = synthesize_clutter(&cfg, &GainPhaseError::none(8), &mut rng).unwrap();
        let first = x.as_slice()[0];
        assert!(first.norm() > 0.0);
        for v in x.as_slice() {
            assert!((v - first).norm() < 1e-9 * first.norm());
        }
    }

    #[test]
    fn single_patch_covariance_is_rank_one() {
        let mut cfg = RadarConfig::desk_scale().with_dimensions(3, 2);
        cfg.num_clutter_patches = 1;
        cfg.cnr_db = 0.0;
        let r = clutter_covariance(&cfg, &GainPhaseError::none(3)).unwrap();
        // Boresight patch: v = ones, so R = 1 1ᴴ.
        for z in r.entries() {
            assert!((z - c(1.0, 0.0)).norm() < 1e-12);
        }
        let ev = r.eigenvalues();
        assert!((ev[5] - 6.0).abs() < 1e-9);
        assert!(ev[..5].iter().all(|e| e.abs() < 1e-9));
    }

    #[test]
    fn covariance_trace_identity() {
        let cfg = RadarConfig::desk_scale().with_dimensions(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = GainPhaseError::draw(4, 0.2, 0.2 * PI, &mut rng).unwrap();
        let r = clutter_covariance(&cfg, &e).unwrap();
        let expected: f64 = cfg
            .clutter_patches()
            .iter()
            .map(|&(fd, fs)| {
                let mut v = space_time_steering(fd, fs, 3, 4);
                apply_gain_phase(&e.c, &mut v);
                cfg.clutter_patch_power() * norm(&v).powi(2)
            })
            .sum();
        assert!((r.trace().re - expected).abs() <= 1e-10 * expected);
        assert!(r.trace().im.abs() <= 1e-10 * expected);
        assert!(r.hermitian_defect() <= 1e-12 * expected);
    }

    #[test]
    fn error_free_covariance_matches_identity_errors() {
        let cfg = RadarConfig::desk_scale().with_dimensions(3, 3);
        let a = clutter_covariance(&cfg, &GainPhaseError::none(3)).unwrap();
        let b = clutter_covariance(
            &cfg,
            &GainPhaseError {
                c: vec![c(1.0, 0.0); 3],
                eps_max: 0.0,
                phi_max: 0.0,
            },
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn snapshot_rejects_wrong_length() {
        assert!(Snapshot::new(vec![c(0.0, 0.0); 5], 2, 3).is_err());
        let s = Snapshot::new((0..6).map(|k| c(k as f64, 0.0)).collect(), 2, 3).unwrap();
        assert_eq!(s.at(2, 1), c(5.0, 0.0));
    }

    #[test]
    fn gp_error_dimension_checked() {
        let cfg = RadarConfig::desk_scale();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(synthesize_clutter(&cfg, &GainPhaseError::none(3), &mut rng).is_err());
    }
}
