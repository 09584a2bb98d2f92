//! Error metrics, conservation audits, spectra, density estimates and the
//! dissipation-difference eigenvalue check.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{check_len, Error, Result};
use crate::pde::Trajectory;

/// `sqrt(‖ū − ū_ref‖²_Ω / |Ω|)`.
pub fn nrmse(ubar: &[f64], reference: &[f64], mass: &[f64]) -> Result<f64> {
    check_len(reference.len(), ubar.len())?;
    check_len(mass.len(), ubar.len())?;
    let length: f64 = mass.iter().sum();
    let err: f64 = ubar.iter().zip(reference).zip(mass).map(|((a, b), m)| m * (a - b).powi(2)).sum();
    Ok((err / length).sqrt())
}

/// `(1/T) Σᵢ dt̄ · series[i]`, all samples included.
pub fn integrated_nrmse(series: &[f64], dt: f64, t_end: f64) -> Result<f64> {
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(Error::InvalidArgument("time step and horizon must be positive".into()));
    }
    Ok(series.iter().map(|v| dt * v).sum::<f64>() / t_end)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub times: Vec<f64>,
    pub nrmse: Vec<f64>,
    pub integrated_nrmse: f64,
    /// `P_h(t) − P_h(0)`.
    pub momentum_drift: Vec<f64>,
    /// Drift of the model energy (`E_s` with SGS variables).
    pub energy_drift: Vec<f64>,
    /// Drift of the resolved energy `Ē_h`.
    pub resolved_energy_drift: Vec<f64>,
    pub stable: bool,
    pub wall_time_ratio: Option<f64>,
}

fn weighted_energy(a: &[f64], mass: &[f64]) -> f64 {
    let n = mass.len();
    0.5 * a.iter().enumerate().map(|(i, v)| mass[i % n] * v * v).sum::<f64>()
}

/// Compare a coarse run to the filtered reference saved at the same times.
///
/// `mass` is the coarse mass `Ω`; states longer than `mass` carry SGS
/// variables after the resolved block.
pub fn energy_report(run: &Trajectory, reference: &Trajectory, mass: &[f64], dt: f64, t_end: f64) -> Result<RunReport> {
    let cells = mass.len();
    let mut rep = RunReport { stable: run.is_stable(), ..Default::default() };
    let first = run.states.first().ok_or_else(|| Error::InsufficientData("empty trajectory".into()))?;
    let p0: f64 = first[..cells].iter().zip(mass).map(|(u, m)| u * m).sum();
    let e0 = weighted_energy(first, mass);
    let r0 = weighted_energy(&first[..cells], mass);
    for (k, (t, a)) in run.times.iter().zip(&run.states).enumerate() {
        rep.times.push(*t);
        let ubar = &a[..cells];
        if let Some(r) = reference.states.get(k) {
            rep.nrmse.push(nrmse(ubar, &r[..cells], mass)?);
        }
        rep.momentum_drift.push(ubar.iter().zip(mass).map(|(u, m)| u * m).sum::<f64>() - p0);
        rep.energy_drift.push(weighted_energy(a, mass) - e0);
        rep.resolved_energy_drift.push(weighted_energy(ubar, mass) - r0);
    }
    rep.integrated_nrmse = integrated_nrmse(&rep.nrmse, dt, t_end)?;
    if !rep.stable {
        rep.integrated_nrmse = f64::INFINITY;
    }
    Ok(rep)
}

/// `E(k)` for `k = 0..=I/2` of a periodic coarse field with spacing `h`,
/// normalized so that `Σ_k E(k) = ½ h Σ ū²`.
pub fn energy_spectrum(ubar: &[f64], h: f64) -> Result<Vec<f64>> {
    let n = ubar.len();
    if n == 0 {
        return Err(Error::InsufficientData("empty field".into()));
    }
    let mut buf: Vec<Complex64> = ubar.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let c = h / (2.0 * n as f64);
    Ok((0..=n / 2)
        .map(|k| {
            let mirror = (n - k) % n;
            if k == 0 || k == mirror {
                c * buf[k].norm_sqr()
            } else {
                c * (buf[k].norm_sqr() + buf[mirror].norm_sqr())
            }
        })
        .collect())
}

/// Spectrum averaged over saved states whose time lies in `[t0, t1]`.
pub fn averaged_spectrum(traj: &Trajectory, cells: usize, h: f64, t0: f64, t1: f64) -> Result<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for (t, a) in traj.times.iter().zip(&traj.states) {
        if *t < t0 - 1e-12 || *t > t1 + 1e-12 {
            continue;
        }
        let e = energy_spectrum(&a[..cells], h)?;
        match acc.as_mut() {
            Some(s) => s.iter_mut().zip(&e).for_each(|(x, y)| *x += y),
            None => acc = Some(e),
        }
        count += 1;
    }
    let mut s = acc.ok_or_else(|| Error::InsufficientData("no saved state in the averaging window".into()))?;
    s.iter_mut().for_each(|v| *v /= count as f64);
    Ok(s)
}

/// Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKde {
    pub samples: Vec<f64>,
    pub bandwidth: f64,
}

/// Silverman's rule `0.9 · min(σ, IQR/1.34) · n^(−1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let x = p * (n - 1.0);
        let lo = x.floor() as usize;
        let hi = x.ceil() as usize;
        sorted[lo] + (x - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let iqr = (q(0.75) - q(0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        _ => 1e-3 * mean.abs().max(1.0),
    };
    0.9 * spread * n.powf(-0.2)
}

pub fn gaussian_kde(samples: &[f64], bandwidth: Option<f64>) -> Result<GaussianKde> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData("a density estimate needs at least two samples".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "kde samples" });
    }
    let bandwidth = bandwidth.unwrap_or_else(|| silverman_bandwidth(samples));
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {bandwidth}")));
    }
    Ok(GaussianKde { samples: samples.to_vec(), bandwidth })
}

impl GaussianKde {
    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / (self.samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
        norm * self.samples.iter().map(|s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum::<f64>()
    }
}

/// Ordered eigenvalues of the dissipation-difference operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DissipationEigen {
    /// All eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

impl DissipationEigen {
    pub fn lambda1(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Largest eigenvalue after the null mode.
    pub fn lambda2(&self) -> f64 {
        self.eigenvalues[1]
    }
}

/// Column `b` (a fine index in coarse cell 0) of
/// `D_Δ = h²D − (1/J) Wᵀ (H² D̄) W` on a periodic grid.
fn dissipation_difference_column(cells: usize, ratio: usize, b: usize) -> Vec<f64> {
    let n = cells * ratio;
    let mut col = vec![0.0; n];
    col[b] -= 2.0;
    col[(b + 1) % n] += 1.0;
    col[(b + n - 1) % n] += 1.0;
    // W e_b = e_0 / J; H² D̄ of that; Wᵀ spreads y_p / J over cell p
    let mut y = vec![0.0; cells];
    y[0] -= 2.0;
    y[1] += 1.0;
    y[cells - 1] += 1.0;
    let scale = (ratio * ratio) as f64;
    for (f, c) in col.iter_mut().enumerate() {
        *c -= y[f / ratio] / (scale * ratio as f64);
    }
    col
}

/// Dense `D_Δ` for checks at small sizes.
pub fn dissipation_difference_dense(cells: usize, ratio: usize) -> Result<DMatrix<f64>> {
    if cells < 2 || ratio < 2 {
        return Err(Error::InvalidGrid("need I ≥ 2 and J ≥ 2".into()));
    }
    let n = cells * ratio;
    let mut m = DMatrix::zeros(n, n);
    for q in 0..cells {
        for b in 0..ratio {
            let col = dissipation_difference_column(cells, ratio, b);
            for f in 0..n {
                m[((f + q * ratio) % n, q * ratio + b)] = col[f];
            }
        }
    }
    Ok(m)
}

/// Eigenvalues of `D_Δ` by block-Fourier decomposition: the operator commutes
/// with shifts by one coarse cell, so each coarse wavenumber contributes a
/// Hermitian `J × J` block.
pub fn dissipation_eigen_check(cells: usize, ratio: usize) -> Result<DissipationEigen> {
    if cells < 2 || ratio < 2 {
        return Err(Error::InvalidGrid("need I ≥ 2 and J ≥ 2".into()));
    }
    let cols: Vec<Vec<f64>> = (0..ratio).map(|b| dissipation_difference_column(cells, ratio, b)).collect();
    let mut eig = Vec::with_capacity(cells * ratio);
    for m in 0..cells {
        let block = DMatrix::<Complex64>::from_fn(ratio, ratio, |a, b| {
            (0..cells)
                .map(|d| {
                    let phase = -2.0 * std::f64::consts::PI * (m * d) as f64 / cells as f64;
                    Complex64::from_polar(cols[b][d * ratio + a], phase)
                })
                .sum()
        });
        let herm = (&block + block.adjoint()) * Complex64::new(0.5, 0.0);
        eig.extend(SymmetricEigen::new(herm).eigenvalues.iter().copied());
    }
    eig.sort_by(|a, b| b.total_cmp(a));
    Ok(DissipationEigen { eigenvalues: eig })
}
