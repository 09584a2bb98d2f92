//! Structure-preserving finite-difference right-hand sides for Burgers' and
//! KdV, and classic RK4 time stepping.
//!
//! The `*_valid` kernels act on a vector that already carries ghost cells and
//! return only the cells whose full stencil is available.

pub use crate::boundary::{BcSpec, Inflow};
use crate::boundary::{FieldKind, PadPlan};
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Equation {
    /// `u_t = −½ (u²)_x + ν u_xx`
    Burgers { nu: f64 },
    /// `u_t = −ε/2 (u²)_x − μ u_xxx`
    Kdv { epsilon: f64, mu: f64 },
}

impl Equation {
    pub fn burgers() -> Self {
        Equation::Burgers { nu: 0.01 }
    }

    pub fn kdv() -> Self {
        Equation::Kdv { epsilon: 6.0, mu: 1.0 }
    }

    /// Half-width of the spatial stencil.
    pub fn stencil_radius(&self) -> usize {
        match self {
            Equation::Burgers { .. } => 1,
            Equation::Kdv { .. } => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Equation::Burgers { .. } => "burgers",
            Equation::Kdv { .. } => "kdv",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Equation::Burgers { nu } if !(nu >= 0.0) => {
                Err(Error::InvalidArgument(format!("viscosity must be non-negative, got {nu}")))
            }
            Equation::Kdv { epsilon, mu } if !epsilon.is_finite() || !mu.is_finite() => {
                Err(Error::InvalidArgument("KdV coefficients must be finite".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeConfig {
    pub equation: Equation,
    /// Steady forcing on the same grid as the state.
    pub forcing: Option<Vec<f64>>,
}

impl PdeConfig {
    pub fn new(equation: Equation) -> Self {
        Self { equation, forcing: None }
    }

    pub fn with_forcing(mut self, forcing: Vec<f64>) -> Self {
        self.forcing = Some(forcing);
        self
    }
}

/// Weight of `C(u)u` in the semi-discrete systems. The stencil of
/// [`convection_valid`] is consistent with `−∂(u²)/∂x`, while both equations
/// carry `−½ ∂(u²)/∂x`.
pub const CONVECTION_SCALE: f64 = 0.5;

/// Skew-symmetric convection on a padded vector (one ghost per side consumed).
pub fn convection_valid(ext: &[f64], h: f64) -> Vec<f64> {
    let c = 1.0 / (3.0 * h);
    ext.windows(3)
        .map(|w| {
            let (l, m, r) = (w[0], w[1], w[2]);
            -c * (r * r - l * l) - c * m * (r - l)
        })
        .collect()
}

/// `−Qᵀ diag(ν) Q u` on a padded vector; `nu_faces[f]` sits between padded
/// cells `f` and `f + 1`.
pub fn diffusion_valid(ext: &[f64], nu_faces: &[f64], h: f64) -> Vec<f64> {
    let inv_h2 = 1.0 / (h * h);
    ext.windows(3)
        .zip(nu_faces.windows(2))
        .map(|(w, nu)| inv_h2 * (nu[1] * (w[2] - w[1]) + nu[0] * (w[0] - w[1])))
        .collect()
}

/// `−μ u_xxx` with the skew-symmetric five-point stencil (two ghosts per side).
pub fn dispersion_valid(ext: &[f64], mu: f64, h: f64) -> Vec<f64> {
    let c = -mu / (2.0 * h * h * h);
    ext.windows(5).map(|w| c * (-w[0] + 2.0 * w[1] - 2.0 * w[3] + w[4])).collect()
}

fn pad(u: &[f64], bc: &BcSpec, t: f64, depth: usize) -> Result<Vec<f64>> {
    if u.len() < 3 {
        return Err(Error::InvalidArgument(format!("stencils need at least 3 cells, got {}", u.len())));
    }
    PadPlan::new(bc, FieldKind::Velocity, t, u.len(), depth)?.apply(u)
}

pub fn convection_rhs(u: &[f64], h: f64, bc: &BcSpec, t: f64) -> Result<Vec<f64>> {
    Ok(convection_valid(&pad(u, bc, t, 1)?, h))
}

pub fn diffusion_rhs(u: &[f64], nu: f64, h: f64, bc: &BcSpec, t: f64) -> Result<Vec<f64>> {
    if !(nu >= 0.0) {
        return Err(Error::InvalidArgument(format!("viscosity must be non-negative, got {nu}")));
    }
    diffusion_rhs_variable(u, &vec![nu; u.len() + 1], h, bc, t)
}

/// Diffusion with a face-centred viscosity field (`u.len() + 1` faces,
/// face `f` on the left of cell `f`).
pub fn diffusion_rhs_variable(u: &[f64], nu_faces: &[f64], h: f64, bc: &BcSpec, t: f64) -> Result<Vec<f64>> {
    check_len(u.len() + 1, nu_faces.len())?;
    if nu_faces.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument("viscosity must be non-negative".into()));
    }
    Ok(diffusion_valid(&pad(u, bc, t, 1)?, nu_faces, h))
}

pub fn dispersion_rhs(u: &[f64], mu: f64, h: f64, bc: &BcSpec) -> Result<Vec<f64>> {
    if !bc.is_periodic() {
        return Err(Error::UnsupportedBoundary(
            "the KdV dispersion stencil is only implemented for periodic domains".into(),
        ));
    }
    if u.len() < 5 {
        return Err(Error::InvalidArgument("dispersion needs at least 5 cells".into()));
    }
    Ok(dispersion_valid(&pad(u, bc, 0.0, 2)?, mu, h))
}

/// Full semi-discrete right-hand side including the steady forcing.
pub fn full_rhs(cfg: &PdeConfig, u: &[f64], h: f64, bc: &BcSpec, t: f64) -> Result<Vec<f64>> {
    cfg.equation.validate()?;
    let mut out = match cfg.equation {
        Equation::Burgers { nu } => {
            let ext = pad(u, bc, t, 1)?;
            let conv = convection_valid(&ext, h);
            let nu_faces = vec![nu; u.len() + 1];
            let diff = diffusion_valid(&ext, &nu_faces, h);
            conv.iter().zip(&diff).map(|(a, b)| CONVECTION_SCALE * a + b).collect::<Vec<_>>()
        }
        Equation::Kdv { epsilon, mu } => {
            if !bc.is_periodic() {
                return Err(Error::UnsupportedBoundary("KdV is only supported on periodic domains".into()));
            }
            let ext = pad(u, bc, t, 2)?;
            let conv = convection_valid(&ext[1..ext.len() - 1], h);
            let disp = dispersion_valid(&ext, mu, h);
            conv.iter().zip(&disp).map(|(c, d)| CONVECTION_SCALE * epsilon * c + d).collect()
        }
    };
    if let Some(f) = &cfg.forcing {
        check_len(u.len(), f.len())?;
        for (o, fv) in out.iter_mut().zip(f) {
            *o += fv;
        }
    }
    Ok(out)
}

/// One classic four-stage Runge–Kutta step.
pub fn rk4_step<F>(mut rhs: F, state: &[f64], t: f64, dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], f64) -> Result<Vec<f64>>,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let axpy = |x: &[f64], a: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect() };
    let finite = |k: &[f64]| k.iter().all(|v| v.is_finite());

    let k1 = rhs(state, t)?;
    if !finite(&k1) {
        return Err(Error::Diverged { time: t });
    }
    let k2 = rhs(&axpy(state, 0.5 * dt, &k1), t + 0.5 * dt)?;
    if !finite(&k2) {
        return Err(Error::Diverged { time: t });
    }
    let k3 = rhs(&axpy(state, 0.5 * dt, &k2), t + 0.5 * dt)?;
    if !finite(&k3) {
        return Err(Error::Diverged { time: t });
    }
    let k4 = rhs(&axpy(state, dt, &k3), t + dt)?;
    if !finite(&k4) {
        return Err(Error::Diverged { time: t });
    }
    let next: Vec<f64> =
        (0..state.len()).map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
    if !finite(&next) {
        return Err(Error::Diverged { time: t + dt });
    }
    Ok(next)
}

/// Saved states of a time integration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Time of the first step that produced a non-finite value.
    pub diverged_at: Option<f64>,
}

impl Trajectory {
    pub fn is_stable(&self) -> bool {
        self.diverged_at.is_none()
    }
}

/// Number of `dt` steps needed to cover `span`, rejecting spans that are not
/// an integer multiple of `dt`.
pub fn step_count(span: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(span >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid span {span} / step {dt}")));
    }
    let n = (span / dt).round();
    if (n * dt - span).abs() > 1e-9 * span.max(dt) {
        return Err(Error::InvalidArgument(format!("{span} is not an integer multiple of the time step {dt}")));
    }
    Ok(n as usize)
}

/// Integrate `rhs` with RK4 from `u0`, saving every `save_every` time units.
/// Divergence ends the run early and is reported in the trajectory.
pub fn integrate<F>(mut rhs: F, u0: &[f64], dt: f64, t_end: f64, save_every: f64) -> Result<Trajectory>
where
    F: FnMut(&[f64], f64) -> Result<Vec<f64>>,
{
    if !(t_end > 0.0) {
        return Err(Error::InvalidArgument("end time must be positive".into()));
    }
    let steps = step_count(t_end, dt)?;
    let stride = step_count(save_every, dt)?.max(1);
    let mut traj = Trajectory { times: vec![0.0], states: vec![u0.to_vec()], diverged_at: None };
    let mut u = u0.to_vec();
    for n in 0..steps {
        let t = n as f64 * dt;
        match rk4_step(&mut rhs, &u, t, dt) {
            Ok(next) => u = next,
            Err(Error::Diverged { .. }) => {
                traj.diverged_at = Some(t + dt);
                return Ok(traj);
            }
            Err(e) => return Err(e),
        }
        if (n + 1) % stride == 0 {
            traj.times.push((n + 1) as f64 * dt);
            traj.states.push(u.clone());
        }
    }
    Ok(traj)
}

/// Reference (fine-grid) simulation.
pub fn simulate(
    cfg: &PdeConfig,
    bc: &BcSpec,
    u0: &[f64],
    h: f64,
    dt: f64,
    t_end: f64,
    save_every: f64,
) -> Result<Trajectory> {
    cfg.equation.validate()?;
    integrate(|u, t| full_rhs(cfg, u, h, bc, t), u0, dt, t_end, save_every)
}

/// Discrete energy `½ h Σ u²`.
pub fn energy(u: &[f64], h: f64) -> f64 {
    0.5 * h * u.iter().map(|v| v * v).sum::<f64>()
}

/// Discrete momentum `h Σ u`.
pub fn momentum(u: &[f64], h: f64) -> f64 {
    h * u.iter().sum::<f64>()
}
