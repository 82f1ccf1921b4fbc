//! Discretized spatio-Doppler grid and the over-complete space-time
//! steering dictionary `Φ`.
//!
//! `Φ` is never stored densely by the solver. Column `q = kd * N_s + ks`
//! equals `v_d(f_d[kd]) ⊗ v_s(f_s[ks])`, so `Φ α` reshaped to `N × M` is
//! `V_d A V_sᵀ` with `A` the `N_d × N_s` profile image. Both products are
//! evaluated in that factored form.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StapError};
use crate::scene::{space_time_steering, spatial_steering, temporal_steering, Snapshot};
use crate::C64;

/// Largest column count for which [`SteeringDictionary::to_dense`] will
/// materialize `Φ`.
pub const DENSE_COLUMN_LIMIT: usize = 4096;

/// Uniform grid over `[-0.5, 0.5)²` in (Doppler, spatial) frequency,
/// enumerated Doppler-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleDopplerGrid {
    pub num_elements: usize,
    pub num_pulses: usize,
    pub oversample_spatial: f64,
    pub oversample_doppler: f64,
    pub num_spatial: usize,
    pub num_doppler: usize,
    pub spatial_spacing: f64,
    pub doppler_spacing: f64,
}

fn integer_count(factor: f64, base: usize, name: &str) -> Result<usize> {
    if !(factor.is_finite() && factor > 1.0) {
        return Err(StapError::InvalidParameter(format!(
            "{name} oversampling must exceed 1, got {factor}"
        )));
    }
    let count = factor * base as f64;
    let rounded = count.round();
    if (count - rounded).abs() > 1e-9 * count.max(1.0) {
        return Err(StapError::InvalidParameter(format!(
            "{name} oversampling {factor} times {base} is not an integer grid count"
        )));
    }
    Ok(rounded as usize)
}

impl AngleDopplerGrid {
    pub fn new(
        num_elements: usize,
        num_pulses: usize,
        oversample_spatial: f64,
        oversample_doppler: f64,
    ) -> Result<Self> {
        if num_elements == 0 || num_pulses == 0 {
            return Err(StapError::InvalidParameter(
                "grid needs at least one element and one pulse".into(),
            ));
        }
        let num_spatial = integer_count(oversample_spatial, num_elements, "spatial")?;
        let num_doppler = integer_count(oversample_doppler, num_pulses, "Doppler")?;
        Ok(Self {
            num_elements,
            num_pulses,
            oversample_spatial,
            oversample_doppler,
            num_spatial,
            num_doppler,
            spatial_spacing: 1.0 / num_spatial as f64,
            doppler_spacing: 1.0 / num_doppler as f64,
        })
    }

    pub fn num_columns(&self) -> usize {
        self.num_spatial * self.num_doppler
    }

    pub fn snapshot_len(&self) -> usize {
        self.num_elements * self.num_pulses
    }

    pub fn doppler_value(&self, kd: usize) -> f64 {
        -0.5 + kd as f64 / self.num_doppler as f64
    }

    pub fn spatial_value(&self, ks: usize) -> f64 {
        -0.5 + ks as f64 / self.num_spatial as f64
    }

    pub fn doppler_values(&self) -> Vec<f64> {
        (0..self.num_doppler).map(|k| self.doppler_value(k)).collect()
    }

    pub fn spatial_values(&self) -> Vec<f64> {
        (0..self.num_spatial).map(|k| self.spatial_value(k)).collect()
    }

    pub fn column_index(&self, kd: usize, ks: usize) -> usize {
        kd * self.num_spatial + ks
    }

    /// (Doppler, spatial) frequency of column `q`.
    pub fn frequencies(&self, q: usize) -> (f64, f64) {
        (
            self.doppler_value(q / self.num_spatial),
            self.spatial_value(q % self.num_spatial),
        )
    }

    /// Index of the grid Doppler value closest to `fd` (circular distance).
    pub fn nearest_doppler_index(&self, fd: f64) -> usize {
        nearest_index(fd, self.num_doppler)
    }

    pub fn nearest_spatial_index(&self, fs: f64) -> usize {
        nearest_index(fs, self.num_spatial)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn nearest_index(f: f64, count: usize) -> usize {
    let pos = ((f + 0.5) * count as f64).round() as i64;
    pos.rem_euclid(count as i64) as usize
}

/// Spatio-Doppler profile: one complex amplitude per grid point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Profile(pub Vec<C64>);

impl Profile {
    pub fn zeros(len: usize) -> Self {
        Self(vec![C64::new(0.0, 0.0); len])
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.0.iter().map(|z| z.norm()).collect()
    }

    /// Writes `f_d,f_s,magnitude` rows in grid order.
    pub fn write_csv<W: Write>(&self, grid: &AngleDopplerGrid, mut out: W) -> std::io::Result<()> {
        writeln!(out, "f_d,f_s,magnitude")?;
        for (q, z) in self.0.iter().enumerate() {
            let (fd, fs) = grid.frequencies(q);
            writeln!(out, "{fd},{fs},{}", z.norm())?;
        }
        Ok(())
    }
}

/// `Φ` held in factored form: temporal factor `V_d` (`N × N_d`) and spatial
/// factor `V_s` (`M × N_s`).
#[derive(Debug, Clone)]
pub struct SteeringDictionary {
    grid: AngleDopplerGrid,
    /// Row-major `N × N_d`.
    temporal: Vec<C64>,
    /// Row-major `M × N_s`.
    spatial: Vec<C64>,
    spatial_conj: Vec<C64>,
}

impl SteeringDictionary {
    pub fn new(grid: AngleDopplerGrid) -> Self {
        let (m, n) = (grid.num_elements, grid.num_pulses);
        let (ns, nd) = (grid.num_spatial, grid.num_doppler);
        let mut temporal = vec![C64::new(0.0, 0.0); n * nd];
        for kd in 0..nd {
            for (p, v) in temporal_steering(grid.doppler_value(kd), n).into_iter().enumerate() {
                temporal[p * nd + kd] = v;
            }
        }
        let mut spatial = vec![C64::new(0.0, 0.0); m * ns];
        for ks in 0..ns {
            for (e, v) in spatial_steering(grid.spatial_value(ks), m).into_iter().enumerate() {
                spatial[e * ns + ks] = v;
            }
        }
        let spatial_conj = spatial.iter().map(|z| z.conj()).collect();
        Self {
            grid,
            temporal,
            spatial,
            spatial_conj,
        }
    }

    pub fn grid(&self) -> &AngleDopplerGrid {
        &self.grid
    }

    pub fn num_rows(&self) -> usize {
        self.grid.snapshot_len()
    }

    pub fn num_columns(&self) -> usize {
        self.grid.num_columns()
    }

    /// Column `q` of `Φ`.
    pub fn column(&self, q: usize) -> Vec<C64> {
        let (fd, fs) = self.grid.frequencies(q);
        space_time_steering(fd, fs, self.grid.num_pulses, self.grid.num_elements)
    }

    /// Row-major dense `Φ`; refused above [`DENSE_COLUMN_LIMIT`] columns.
    pub fn to_dense(&self) -> Result<Vec<C64>> {
        let cols = self.num_columns();
        if cols > DENSE_COLUMN_LIMIT {
            return Err(StapError::InvalidParameter(format!(
                "refusing to materialize a dictionary with {cols} columns (limit {DENSE_COLUMN_LIMIT})"
            )));
        }
        let rows = self.num_rows();
        let mut dense = vec![C64::new(0.0, 0.0); rows * cols];
        for q in 0..cols {
            for (r, v) in self.column(q).into_iter().enumerate() {
                dense[r * cols + q] = v;
            }
        }
        Ok(dense)
    }

    /// `out = Φ α`.
    pub fn apply_into(&self, alpha: &[C64], out: &mut [C64]) -> Result<()> {
        check_len("dictionary apply (profile)", self.num_columns(), alpha.len())?;
        check_len("dictionary apply (output)", self.num_rows(), out.len())?;
        let (m, n) = (self.grid.num_elements, self.grid.num_pulses);
        let (ns, nd) = (self.grid.num_spatial, self.grid.num_doppler);
        // B = A V_sᵀ, N_d × M
        let mut b = vec![C64::new(0.0, 0.0); nd * m];
        for kd in 0..nd {
            let a_row = &alpha[kd * ns..(kd + 1) * ns];
            if a_row.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
                continue;
            }
            for e in 0..m {
                let s_row = &self.spatial[e * ns..(e + 1) * ns];
                b[kd * m + e] = a_row.iter().zip(s_row).map(|(a, s)| a * s).sum();
            }
        }
        // Y = V_d B, N × M
        out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for p in 0..n {
            let y_row = &mut out[p * m..(p + 1) * m];
            for kd in 0..nd {
                let d = self.temporal[p * nd + kd];
                for (y, bv) in y_row.iter_mut().zip(&b[kd * m..(kd + 1) * m]) {
                    *y += d * bv;
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, alpha: &[C64]) -> Result<Vec<C64>> {
        let mut out = vec![C64::new(0.0, 0.0); self.num_rows()];
        self.apply_into(alpha, &mut out)?;
        Ok(out)
    }

    /// `out = Φᴴ y`.
    pub fn adjoint_into(&self, y: &[C64], out: &mut [C64]) -> Result<()> {
        check_len("dictionary adjoint (input)", self.num_rows(), y.len())?;
        check_len("dictionary adjoint (output)", self.num_columns(), out.len())?;
        let (m, n) = (self.grid.num_elements, self.grid.num_pulses);
        let (ns, nd) = (self.grid.num_spatial, self.grid.num_doppler);
        // C = V_dᴴ Y, N_d × M
        let mut cm = vec![C64::new(0.0, 0.0); nd * m];
        for p in 0..n {
            let y_row = &y[p * m..(p + 1) * m];
            for kd in 0..nd {
                let d = self.temporal[p * nd + kd].conj();
                for (c, yv) in cm[kd * m..(kd + 1) * m].iter_mut().zip(y_row) {
                    *c += d * yv;
                }
            }
        }
        // A = C conj(V_s), N_d × N_s
        out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for kd in 0..nd {
            let a_row = &mut out[kd * ns..(kd + 1) * ns];
            for e in 0..m {
                let cv = cm[kd * m + e];
                let s_row = &self.spatial_conj[e * ns..(e + 1) * ns];
                for (a, s) in a_row.iter_mut().zip(s_row) {
                    *a += cv * s;
                }
            }
        }
        Ok(())
    }

    pub fn adjoint(&self, y: &[C64]) -> Result<Vec<C64>> {
        let mut out = vec![C64::new(0.0, 0.0); self.num_columns()];
        self.adjoint_into(y, &mut out)?;
        Ok(out)
    }

    /// Largest eigenvalue of `ΦᴴΦ` by power iteration from a fixed start.
    pub fn gram_spectral_norm(&self, iterations: usize) -> f64 {
        let cols = self.num_columns();
        // Deterministic, non-degenerate start vector.
        let mut v: Vec<C64> = (0..cols)
            .map(|q| C64::from_polar(1.0 + (q % 7) as f64 * 0.1, 0.37 * q as f64))
            .collect();
        let mut estimate = 0.0;
        let mut y = vec![C64::new(0.0, 0.0); self.num_rows()];
        let mut w = vec![C64::new(0.0, 0.0); cols];
        for _ in 0..iterations.max(1) {
            let nv = crate::scene::norm(&v);
            if nv == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|z| *z /= nv);
            self.apply_into(&v, &mut y).expect("conforming buffers");
            self.adjoint_into(&y, &mut w).expect("conforming buffers");
            estimate = v.iter().zip(&w).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
            std::mem::swap(&mut v, &mut w);
        }
        estimate
    }
}

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(StapError::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

/// `T x` with `T = I_N ⊗ diag(t)`.
pub fn apply_t(t: &[C64], x: &Snapshot) -> Result<Snapshot> {
    check_len("inverse error vector", x.num_elements(), t.len())?;
    let m = t.len();
    let out = x
        .as_slice()
        .iter()
        .enumerate()
        .map(|(k, v)| t[k % m] * v)
        .collect();
    Snapshot::new(out, x.num_elements(), x.num_pulses())
}

/// `Q = diag(x)(1_N ⊗ I_M)`, the map `t ↦ T x` viewed as linear in `t`.
#[derive(Debug, Clone, Copy)]
pub struct QOperator<'a> {
    x: &'a Snapshot,
}

impl<'a> QOperator<'a> {
    pub fn new(x: &'a Snapshot) -> Self {
        Self { x }
    }

    pub fn apply(&self, t: &[C64]) -> Result<Vec<C64>> {
        Ok(apply_t(t, self.x)?.into_vec())
    }

    /// `Qᴴ z`: entry `m` is `Σ_n conj(x_{nM+m}) z_{nM+m}`.
    pub fn adjoint(&self, z: &[C64]) -> Result<Vec<C64>> {
        check_len("Q adjoint", self.x.len(), z.len())?;
        let m = self.x.num_elements();
        let mut out = vec![C64::new(0.0, 0.0); m];
        for (k, (xv, zv)) in self.x.as_slice().iter().zip(z).enumerate() {
            out[k % m] += xv.conj() * zv;
        }
        Ok(out)
    }

    /// Diagonal of `QᴴQ`: entry `m` is `Σ_n |x_{nM+m}|²`.
    pub fn gram_diagonal(&self) -> Vec<f64> {
        let m = self.x.num_elements();
        let mut out = vec![0.0; m];
        for (k, xv) in self.x.as_slice().iter().enumerate() {
            out[k % m] += xv.norm_sqr();
        }
        out
    }
}
