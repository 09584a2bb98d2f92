//! Coarse simulations with a closure model and the matching filtered
//! reference trajectories.

use crate::closure::{ClosureModel, CoarseContext};
use crate::compression::StateTransform;
use crate::datagen::SimulationCondition;
use crate::error::{check_len, Error, Result};
use crate::pde::{integrate, step_count, Trajectory};

/// Initialization of the SGS variables at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SgsInit {
    /// `s(0) = T u(0)`.
    #[default]
    Projected,
    /// `s(0) = 0`.
    Zero,
}

impl SgsInit {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "true" | "projected" => Ok(SgsInit::Projected),
            "zero" | "false" => Ok(SgsInit::Zero),
            _ => Err(Error::InvalidArgument(format!("unknown SGS initialization {s:?}"))),
        }
    }
}

/// Model state for the reference field `u0`.
pub fn initial_state(transform: &StateTransform, u0: &[f64], init: SgsInit) -> Result<Vec<f64>> {
    let mut a = transform.to_state(u0)?;
    if init == SgsInit::Zero {
        let i = transform.coarse_cells();
        a[i..].iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(a)
}

/// Coarse boundary data for a reference condition.
pub fn coarse_context(transform: &StateTransform, condition: &SimulationCondition) -> Result<CoarseContext> {
    let forcing = match &condition.forcing {
        Some(f) => Some(transform.transform_rhs(f)?),
        None => None,
    };
    Ok(CoarseContext { bc: condition.bc.clone(), forcing })
}

/// Integrate the model with RK4 from `a0`.
pub fn rollout<M: ClosureModel + ?Sized>(
    model: &M,
    a0: &[f64],
    ctx: &CoarseContext,
    dt: f64,
    t_end: f64,
    save_every: f64,
) -> Result<Trajectory> {
    check_len(model.state_len(), a0.len())?;
    integrate(
        |a, t| match model.rhs(a, t, ctx) {
            Err(Error::NonFinite { .. }) => Err(Error::Diverged { time: t }),
            other => other,
        },
        a0,
        dt,
        t_end,
        save_every,
    )
}

/// Filter (and compress) every `stride`-th state of a reference trajectory.
pub fn coarse_reference(transform: &StateTransform, reference: &Trajectory, stride: usize) -> Result<Trajectory> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let mut out = Trajectory { diverged_at: reference.diverged_at, ..Default::default() };
    for (t, u) in reference.times.iter().zip(&reference.states).step_by(stride) {
        out.times.push(*t);
        out.states.push(transform.to_state(u)?);
    }
    Ok(out)
}

/// Saved-state stride that turns a reference save interval into `save_every`.
pub fn save_stride(reference_save: f64, save_every: f64) -> Result<usize> {
    step_count(save_every, reference_save)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closure::NoClosure;
    use crate::pde::{rk4_step, Equation};

    #[test]
    fn rollout_matches_manual_rk4() {
        let m = NoClosure::new(Equation::burgers(), 8, 0.5);
        let ctx = CoarseContext::periodic();
        let a0: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let traj = rollout(&m, &a0, &ctx, 0.01, 0.03, 0.01).unwrap();
        let mut a = a0.clone();
        for n in 0..3 {
            a = rk4_step(|x, t| m.rhs(x, t, &ctx), &a, n as f64 * 0.01, 0.01).unwrap();
        }
        assert_eq!(traj.states.len(), 4);
        assert_eq!(traj.states[3], a);
        assert!(traj.is_stable());
    }

    #[test]
    fn divergence_is_reported() {
        let m = NoClosure::new(Equation::burgers(), 8, 0.5);
        let a0 = vec![1e200, -1e200, 1e200, -1e200, 1e200, -1e200, 1e200, -1e200];
        let traj = rollout(&m, &a0, &CoarseContext::periodic(), 0.1, 1.0, 0.1).unwrap();
        assert!(!traj.is_stable());
        assert_eq!(traj.states.len(), 1);
    }

    #[test]
    fn sgs_initialization() {
        let st = StateTransform::filter_only(0.0, 1.0, 12, 4).unwrap();
        let u: Vec<f64> = (0..12).map(|i| i as f64).collect();
        assert_eq!(initial_state(&st, &u, SgsInit::Zero).unwrap(), st.to_state(&u).unwrap());
        let snaps: Vec<Vec<f64>> = (0..5).map(|k| (0..12).map(|i| ((i * (k + 2)) as f64).cos()).collect()).collect();
        let refs: Vec<&[f64]> = snaps.iter().map(|v| v.as_slice()).collect();
        let st = StateTransform::fit(0.0, 1.0, 12, 4, &refs).unwrap();
        let a = initial_state(&st, &u, SgsInit::Zero).unwrap();
        assert!(a[4..].iter().all(|&v| v == 0.0));
        assert_eq!(a[..4], st.to_state(&u).unwrap()[..4]);
        assert_eq!(SgsInit::parse("true").unwrap(), SgsInit::Projected);
        assert_eq!(SgsInit::parse("zero").unwrap(), SgsInit::Zero);
        assert!(SgsInit::parse("maybe").is_err());
    }

    #[test]
    fn reference_is_subsampled() {
        let st = StateTransform::filter_only(0.0, 1.0, 4, 2).unwrap();
        let reference = Trajectory {
            times: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            states: (0..5).map(|k| vec![k as f64; 4]).collect(),
            diverged_at: None,
        };
        let c = coarse_reference(&st, &reference, 2).unwrap();
        assert_eq!(c.times, vec![0.0, 1.0, 2.0]);
        assert_eq!(c.states[2], vec![4.0, 4.0]);
        assert_eq!(save_stride(0.005, 0.01).unwrap(), 2);
        assert!(save_stride(0.005, 0.0125).is_err());
    }
}
