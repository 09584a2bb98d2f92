//! Ghost-cell padding for periodic and inflow/outflow boundaries.
//!
//! Every padding is an affine gather: ghost value = `offset + coef · x[src]`.
//! The same [`PadPlan`] drives the plain solvers and the differentiable
//! closure evaluation, so both see identical ghost values.

use crate::datagen::FourierCondition;
use crate::error::{Error, Result};

/// Time-dependent Dirichlet inflow value `α(t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Inflow {
    Constant(f64),
    Fourier(FourierCondition),
}

impl Inflow {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Inflow::Constant(v) => *v,
            Inflow::Fourier(fc) => fc.eval(t),
        }
    }
}

/// Boundary condition of a simulation.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum BcSpec {
    #[default]
    Periodic,
    /// Dirichlet inflow on the left, symmetric outflow on the right.
    InflowOutflow { inflow: Inflow },
}

impl BcSpec {
    pub fn is_periodic(&self) -> bool {
        matches!(self, BcSpec::Periodic)
    }

    pub fn name(&self) -> &'static str {
        match self {
            BcSpec::Periodic => "periodic",
            BcSpec::InflowOutflow { .. } => "inflow-outflow",
        }
    }
}

/// Which family of variables a padding applies to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldKind {
    /// Velocity (fine `u` or filtered `ū`).
    Velocity,
    /// SGS variables `s`, reflected through `ρ = J tᵀ P t`.
    Sgs { rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Side {
    Wrap,
    Reflect { coef: f64, offset: f64 },
}

/// Affine gather producing a vector padded by `depth` ghost cells per side.
#[derive(Debug, Clone, PartialEq)]
pub struct PadPlan {
    pub len: usize,
    pub depth: usize,
    pub index: Vec<usize>,
    pub coef: Vec<f64>,
    pub offset: Vec<f64>,
}

impl PadPlan {
    fn build(len: usize, depth: usize, left: Side, right: Side) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidArgument("cannot pad an empty vector".into()));
        }
        let reflects = matches!(left, Side::Reflect { .. }) || matches!(right, Side::Reflect { .. });
        if reflects && depth > len {
            return Err(Error::InvalidArgument(format!("ghost depth {depth} exceeds the {len} interior cells")));
        }
        let total = len + 2 * depth;
        let mut index = Vec::with_capacity(total);
        let mut coef = Vec::with_capacity(total);
        let mut offset = Vec::with_capacity(total);
        // left ghosts, outermost first: position p holds ghost number i = depth - p
        for p in 0..depth {
            let i = depth - p;
            match left {
                Side::Wrap => {
                    index.push((len * (i / len + 1) - i) % len);
                    coef.push(1.0);
                    offset.push(0.0);
                }
                Side::Reflect { coef: c, offset: o } => {
                    index.push(i - 1);
                    coef.push(c);
                    offset.push(o);
                }
            }
        }
        for n in 0..len {
            index.push(n);
            coef.push(1.0);
            offset.push(0.0);
        }
        for i in 1..=depth {
            match right {
                Side::Wrap => {
                    index.push((i - 1) % len);
                    coef.push(1.0);
                    offset.push(0.0);
                }
                Side::Reflect { coef: c, offset: o } => {
                    index.push(len - i);
                    coef.push(c);
                    offset.push(o);
                }
            }
        }
        Ok(Self { len, depth, index, coef, offset })
    }

    pub fn periodic(len: usize, depth: usize) -> Result<Self> {
        Self::build(len, depth, Side::Wrap, Side::Wrap)
    }

    /// Padding for a field under `bc`, with the inflow value taken at time `t`.
    pub fn new(bc: &BcSpec, field: FieldKind, t: f64, len: usize, depth: usize) -> Result<Self> {
        match bc {
            BcSpec::Periodic => Self::periodic(len, depth),
            BcSpec::InflowOutflow { inflow } => {
                let (left, right) = match field {
                    FieldKind::Velocity => (
                        Side::Reflect { coef: -1.0, offset: 2.0 * inflow.value(t) },
                        Side::Reflect { coef: 1.0, offset: 0.0 },
                    ),
                    FieldKind::Sgs { rho } => {
                        (Side::Reflect { coef: -rho, offset: 0.0 }, Side::Reflect { coef: rho, offset: 0.0 })
                    }
                };
                Self::build(len, depth, left, right)
            }
        }
    }

    pub fn padded_len(&self) -> usize {
        self.index.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_len(self.len, x.len())?;
        Ok(self.index.iter().zip(&self.coef).zip(&self.offset).map(|((&i, &c), &o)| o + c * x[i]).collect())
    }
}

pub fn periodic_pad(x: &[f64], depth: usize) -> Result<Vec<f64>> {
    PadPlan::periodic(x.len(), depth)?.apply(x)
}

/// Fine-grid ghosts: `u₋ᵢ₊₁ = 2α − uᵢ` on the left, mirrored on the right.
pub fn fine_ghosts(u: &[f64], alpha: f64, depth: usize) -> Result<Vec<f64>> {
    let bc = BcSpec::InflowOutflow { inflow: Inflow::Constant(alpha) };
    PadPlan::new(&bc, FieldKind::Velocity, 0.0, u.len(), depth)?.apply(u)
}

/// Coarse-grid ghosts; the same construction applied to `ū`.
pub fn coarse_ghosts(ubar: &[f64], alpha: f64, depth: usize) -> Result<Vec<f64>> {
    fine_ghosts(ubar, alpha, depth)
}

/// SGS-variable ghosts: `s₋ᵢ₊₁ = −ρ sᵢ`, `s_{I+i} = ρ s_{I−i+1}`.
pub fn sgs_ghosts(s: &[f64], rho: f64, depth: usize) -> Result<Vec<f64>> {
    let bc = BcSpec::InflowOutflow { inflow: Inflow::Constant(0.0) };
    PadPlan::new(&bc, FieldKind::Sgs { rho }, 0.0, s.len(), depth)?.apply(s)
}

/// Reflection scalar `ρ = J tᵀ P t` with `P` the index reversal.
pub fn reflection_coefficient(t: &[f64]) -> f64 {
    let j = t.len() as f64;
    j * t.iter().zip(t.iter().rev()).map(|(a, b)| a * b).sum::<f64>()
}

/// Ghost depth needed by a closure: CNN receptive radius plus stencil half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GhostSpec {
    pub depth: usize,
    pub rho: f64,
}

impl GhostSpec {
    pub fn new(kernel_sizes: &[usize], stencil_half_width: usize, t: &[f64]) -> Self {
        let depth = kernel_sizes.iter().map(|k| (k - 1) / 2).sum::<usize>() + stencil_half_width;
        Self { depth, rho: reflection_coefficient(t) }
    }
}
