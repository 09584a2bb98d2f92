//! Derivative fitting, trajectory fitting and Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::closure::{ClosureModel, CoarseContext, Smagorinsky, SpClosure};
use crate::compression::{CompressionOperator, StateTransform};
use crate::datagen::{SnapshotDataset, SnapshotRef};
use crate::error::{check_len, Error, Result};
use crate::nn::Architecture;
use crate::pde::{full_rhs, step_count, Equation};
use crate::rollout::coarse_context;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs_derivative: usize,
    pub epochs_trajectory: usize,
    /// Coarse steps per trajectory-fitting rollout.
    pub traj_steps: usize,
    /// Coarse time step.
    pub dt: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn burgers() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 20,
            epochs_derivative: 100,
            epochs_trajectory: 20,
            traj_steps: 5,
            dt: 0.01,
            seed: 0,
        }
    }

    pub fn kdv() -> Self {
        Self { traj_steps: 20, dt: 5e-3, ..Self::burgers() }
    }

    pub fn for_equation(equation: Equation) -> Self {
        match equation {
            Equation::Burgers { .. } => Self::burgers(),
            Equation::Kdv { .. } => Self::kdv(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.eps, self.dt].iter().all(|v| *v > 0.0);
        let betas = [self.beta1, self.beta2].iter().all(|b| (0.0..1.0).contains(b));
        if !positive || !betas || self.batch_size == 0 || self.traj_steps == 0 {
            return Err(Error::InvalidArgument(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }
}

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

/// One bias-corrected Adam update of `theta`.
pub fn adam_step(theta: &mut [f64], grad: &[f64], st: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    check_len(theta.len(), grad.len())?;
    check_len(theta.len(), st.m.len())?;
    st.step += 1;
    let c1 = 1.0 - cfg.beta1.powi(st.step as i32);
    let c2 = 1.0 - cfg.beta2.powi(st.step as i32);
    for i in 0..theta.len() {
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * grad[i];
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        theta[i] -= cfg.lr * (st.m[i] / c1) / ((st.v[i] / c2).sqrt() + cfg.eps);
    }
    Ok(())
}

/// One training snapshot mapped to the model state.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Index into [`PreparedData::contexts`].
    pub context: usize,
    pub time: f64,
    /// `T u`
    pub state: Vec<f64>,
    /// `T f_h(u)` including forcing.
    pub derivative: Vec<f64>,
    /// `T u(t + i·dt̄)` for `i = 1, 2, …` as far as the reference reaches.
    pub targets: Vec<Vec<f64>>,
}

/// Snapshots of a dataset in model coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub contexts: Vec<CoarseContext>,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub dt: f64,
    pub traj_steps: usize,
}

impl PreparedData {
    /// Samples with a complete reference window for trajectory fitting.
    pub fn trajectory_ready<'a>(&self, samples: &'a [Sample]) -> Vec<&'a Sample> {
        samples.iter().filter(|s| s.targets.len() >= self.traj_steps).collect()
    }
}

fn prepare_sample(
    dataset: &SnapshotDataset,
    transform: &StateTransform,
    r: SnapshotRef,
    stride: usize,
    traj_steps: usize,
) -> Result<Sample> {
    let setup = &dataset.setup;
    let cond = dataset.condition(r);
    let u = dataset.state(r);
    let t = dataset.time(r);
    let du = full_rhs(&cond.pde_config(setup.equation), u, setup.spacing(), &cond.bc, t)?;
    let targets = (1..=traj_steps)
        .map_while(|i| dataset.future(r, i * stride))
        .map(|v| transform.to_state(v))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sample {
        context: r.trajectory,
        time: t,
        state: transform.to_state(u)?,
        derivative: transform.transform_rhs(&du)?,
        targets,
    })
}

/// Map the train/validation snapshots through `transform`.
pub fn prepare(
    dataset: &SnapshotDataset,
    transform: &StateTransform,
    dt: f64,
    traj_steps: usize,
) -> Result<PreparedData> {
    step_count(dt, dataset.setup.dt)?;
    let stride = step_count(dt, dataset.setup.save_every)?;
    if stride == 0 {
        return Err(Error::InvalidArgument("coarse step is shorter than the save interval".into()));
    }
    let contexts =
        dataset.runs.iter().map(|run| coarse_context(transform, &run.condition)).collect::<Result<Vec<_>>>()?;
    let map = |refs: &[SnapshotRef]| -> Result<Vec<Sample>> {
        refs.iter().map(|&r| prepare_sample(dataset, transform, r, stride, traj_steps)).collect()
    };
    Ok(PreparedData { contexts, train: map(&dataset.train)?, validation: map(&dataset.validation)?, dt, traj_steps })
}

/// One RK4 step recorded on the tape.
pub fn rk4_on_tape<M: ClosureModel + ?Sized>(
    model: &M,
    tape: &mut Tape,
    theta: Var,
    a: Var,
    t: f64,
    dt: f64,
    ctx: &CoarseContext,
) -> Result<Var> {
    let k1 = model.rhs_on_tape(tape, theta, a, t, ctx)?;
    let a2 = tape.axpy(a, 0.5 * dt, k1)?;
    let k2 = model.rhs_on_tape(tape, theta, a2, t + 0.5 * dt, ctx)?;
    let a3 = tape.axpy(a, 0.5 * dt, k2)?;
    let k3 = model.rhs_on_tape(tape, theta, a3, t + 0.5 * dt, ctx)?;
    let a4 = tape.axpy(a, dt, k3)?;
    let k4 = model.rhs_on_tape(tape, theta, a4, t + dt, ctx)?;
    let s = tape.axpy(k1, 2.0, k2)?;
    let s = tape.axpy(s, 2.0, k3)?;
    let s = tape.add(s, k4)?;
    tape.axpy(a, dt / 6.0, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Derivative,
    Trajectory,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Derivative => "derivative",
            Phase::Trajectory => "trajectory",
        }
    }
}

/// Squared error of one sample, recorded on `tape`.
fn sample_loss<M: ClosureModel + ?Sized>(
    model: &M,
    tape: &mut Tape,
    theta: Var,
    sample: &Sample,
    ctx: &CoarseContext,
    phase: Phase,
    steps: usize,
    dt: f64,
) -> Result<Var> {
    let a0 = tape.leaf(sample.state.clone());
    match phase {
        Phase::Derivative => {
            let g = model.rhs_on_tape(tape, theta, a0, sample.time, ctx)?;
            let neg: Vec<f64> = sample.derivative.iter().map(|v| -v).collect();
            let r = tape.add_const(g, neg)?;
            Ok(tape.sum_squares(r))
        }
        Phase::Trajectory => {
            if sample.targets.len() < steps {
                return Err(Error::InsufficientData("reference window too short".into()));
            }
            let mut a = a0;
            let mut terms = Vec::with_capacity(steps);
            for (i, target) in sample.targets[..steps].iter().enumerate() {
                a = rk4_on_tape(model, tape, theta, a, sample.time + i as f64 * dt, dt, ctx)?;
                let neg: Vec<f64> = target.iter().map(|v| -v).collect();
                let r = tape.add_const(a, neg)?;
                terms.push(tape.sum_squares(r));
            }
            let all = tape.concat(&terms);
            Ok(tape.sum(all))
        }
    }
}

/// Mean loss over `samples` and, if requested, its gradient.
///
/// Derivative phase: `(1/p) Σ ‖G(Tu) − T f_h(u)‖²`. Trajectory phase:
/// `(1/(p n)) Σ Σᵢ ‖Sⁱ(Tu) − T u(t + i dt̄)‖²`.
pub fn loss_and_grad<M: ClosureModel + ?Sized>(
    model: &M,
    samples: &[&Sample],
    contexts: &[CoarseContext],
    phase: Phase,
    steps: usize,
    dt: f64,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let norm = match phase {
        Phase::Derivative => samples.len() as f64,
        Phase::Trajectory => (samples.len() * steps) as f64,
    };
    let n = model.params().len();
    let mut total = 0.0;
    let mut grad = with_grad.then(|| vec![0.0; n]);
    for s in samples {
        let mut tape = Tape::new();
        let theta = tape.leaf(model.params().values.clone());
        let ctx =
            contexts.get(s.context).ok_or_else(|| Error::InvalidArgument(format!("unknown context {}", s.context)))?;
        let loss = sample_loss(model, &mut tape, theta, s, ctx, phase, steps, dt)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "loss" });
        }
        total += value;
        if let Some(g) = grad.as_mut() {
            let gs = tape.grad(loss, theta)?;
            g.iter_mut().zip(&gs).for_each(|(a, b)| *a += b);
        }
    }
    if let Some(g) = grad.as_mut() {
        g.iter_mut().for_each(|v| *v /= norm);
    }
    Ok((total / norm, grad))
}

pub fn derivative_loss<M: ClosureModel + ?Sized>(
    model: &M,
    samples: &[&Sample],
    contexts: &[CoarseContext],
) -> Result<f64> {
    Ok(loss_and_grad(model, samples, contexts, Phase::Derivative, 0, 0.0, false)?.0)
}

pub fn trajectory_loss<M: ClosureModel + ?Sized>(
    model: &M,
    samples: &[&Sample],
    contexts: &[CoarseContext],
    steps: usize,
    dt: f64,
) -> Result<f64> {
    Ok(loss_and_grad(model, samples, contexts, Phase::Trajectory, steps, dt, false)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub train: f64,
    pub validation: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainOutcome {
    pub losses: Vec<LossRecord>,
    /// Lowest validation loss of the phase whose parameters were kept.
    pub best_validation: Option<f64>,
    /// Reason training stopped early, if it did.
    pub aborted: Option<String>,
}

/// Derivative fitting followed by trajectory fitting. Within each phase the
/// parameters with the lowest validation loss are kept.
pub fn train<M: ClosureModel + ?Sized>(model: &mut M, data: &PreparedData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::InsufficientData("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = TrainOutcome::default();
    let phases = [(Phase::Derivative, cfg.epochs_derivative), (Phase::Trajectory, cfg.epochs_trajectory)];
    for (phase, epochs) in phases {
        if epochs == 0 {
            continue;
        }
        let (train_set, val_set): (Vec<&Sample>, Vec<&Sample>) = match phase {
            Phase::Derivative => (data.train.iter().collect(), data.validation.iter().collect()),
            Phase::Trajectory => (data.trajectory_ready(&data.train), data.trajectory_ready(&data.validation)),
        };
        if train_set.is_empty() {
            return Err(Error::InsufficientData(format!("no samples for {} fitting", phase.name())));
        }
        let steps = cfg.traj_steps;
        let mut adam = AdamState::new(model.params().len());
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        for epoch in 1..=epochs {
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&Sample> = chunk.iter().map(|&i| train_set[i]).collect();
                let step = loss_and_grad(&*model, &batch, &data.contexts, phase, steps, cfg.dt, true);
                let (loss, grad) = match step {
                    Ok(v) => v,
                    Err(e @ Error::NonFinite { .. }) => {
                        out.aborted = Some(format!("{} epoch {epoch}: {e}", phase.name()));
                        break;
                    }
                    Err(e) => return Err(e),
                };
                sum += loss * batch.len() as f64;
                adam_step(&mut model.params_mut().values, &grad.unwrap_or_default(), &mut adam, cfg)?;
            }
            if out.aborted.is_some() {
                break;
            }
            let val = if val_set.is_empty() {
                f64::NAN
            } else {
                match loss_and_grad(&*model, &val_set, &data.contexts, phase, steps, cfg.dt, false) {
                    Ok((v, _)) => v,
                    Err(Error::NonFinite { .. }) => f64::INFINITY,
                    Err(e) => return Err(e),
                }
            };
            out.losses.push(LossRecord { epoch, phase, train: sum / train_set.len() as f64, validation: val });
            let better = match &best {
                None => true,
                Some((b, _)) => val < *b,
            };
            if better && !val.is_nan() {
                best = Some((val, model.params().values.clone()));
            }
        }
        if let Some((v, theta)) = best {
            model.params_mut().values = theta;
            out.best_validation = Some(v);
        }
        if out.aborted.is_some() {
            break;
        }
    }
    Ok(out)
}

/// Grid search of `C_s` over `[0, 2]` in steps of 0.01 on the derivative loss.
pub fn fit_smagorinsky(model: &mut Smagorinsky, samples: &[&Sample], contexts: &[CoarseContext]) -> Result<f64> {
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=200 {
        let cs = k as f64 * 0.01;
        model.params.values[0] = cs;
        let loss = derivative_loss(model, samples, contexts)?;
        if loss < best.0 {
            best = (loss, cs);
        }
    }
    model.params.values[0] = best.1;
    Ok(best.1)
}

/// `sqrt(Σ ‖G(Tu) − T f_h(u)‖² / Σ ‖T f_h(u)‖²)` over `samples`.
pub fn rhs_nrmse<M: ClosureModel + ?Sized>(model: &M, samples: &[&Sample], contexts: &[CoarseContext]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for s in samples {
        let g = model.rhs(&s.state, s.time, &contexts[s.context])?;
        num += g.iter().zip(&s.derivative).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        den += s.derivative.iter().map(|v| v * v).sum::<f64>();
    }
    if den == 0.0 {
        return Err(Error::InsufficientData("reference derivative is identically zero".into()));
    }
    Ok((num / den).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub hidden_layers: usize,
    pub channels: usize,
    pub val_nrmse: f64,
}

/// Train a structure-preserving closure for every (hidden layers, channels)
/// pair with derivative fitting only and report the validation RHS error.
pub fn hyperparameter_sweep(
    equation: Equation,
    cells: usize,
    spacing: f64,
    compression: &CompressionOperator,
    data: &PreparedData,
    cfg: &TrainConfig,
    layers: &[usize],
    channels: &[usize],
) -> Result<Vec<SweepRow>> {
    let dissipative = matches!(equation, Equation::Burgers { .. });
    let outputs = if dissipative { 4 } else { 2 };
    let cfg = TrainConfig { epochs_trajectory: 0, ..cfg.clone() };
    let val: Vec<&Sample> = data.validation.iter().collect();
    let mut rows = Vec::new();
    for &l in layers {
        for &c in channels {
            let arch = Architecture::uniform(3, l, c, outputs, 5)?;
            let mut m = SpClosure::new(
                equation,
                cells,
                spacing,
                arch,
                SpClosure::default_half_width(equation),
                dissipative,
                compression.clone(),
                cfg.seed,
            )?;
            train(&mut m, data, &cfg)?;
            rows.push(SweepRow { hidden_layers: l, channels: c, val_nrmse: rhs_nrmse(&m, &val, &data.contexts)? });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closure::NoClosure;
    use crate::datagen::{build_dataset, BcKind, DnsSetup};
    use crate::rollout::rollout;
    use rand::Rng;

    fn tiny_setup() -> DnsSetup {
        DnsSetup { cells: 8, dt: 0.01, t_end: 0.5, save_every: 0.01, ..DnsSetup::burgers(BcKind::Periodic) }
    }

    fn tiny() -> (SnapshotDataset, StateTransform, SpClosure) {
        let setup = tiny_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ds = build_dataset(&setup, 2, 0.4, 0.7, &mut rng).unwrap();
        let st = StateTransform::fit(0.0, setup.domain_end, 8, 4, &ds.train_states()).unwrap();
        let arch = Architecture::uniform(3, 1, 2, 4, 3).unwrap();
        let m = SpClosure::new(
            Equation::burgers(),
            4,
            st.fp.grid.coarse_spacing,
            arch,
            1,
            true,
            st.comp.clone().unwrap(),
            3,
        )
        .unwrap();
        (ds, st, m)
    }

    #[test]
    fn adam_matches_formula() {
        let cfg = TrainConfig::burgers();
        let mut st = AdamState::new(2);
        let mut theta = vec![1.0, -2.0];
        adam_step(&mut theta, &[0.0, 0.0], &mut st, &cfg).unwrap();
        assert_eq!(theta, vec![1.0, -2.0]);

        let mut st = AdamState::new(1);
        let mut theta = vec![0.5];
        let g = 0.3;
        adam_step(&mut theta, &[g], &mut st, &cfg).unwrap();
        let expected = 0.5 - 1e-3 * g / (g.abs() + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-15);
        // second step by direct substitution
        let m = 0.9 * 0.1 * g + 0.1 * g;
        let v = 0.999 * 0.001 * g * g + 0.001 * g * g;
        let upd = 1e-3 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        adam_step(&mut theta, &[g], &mut st, &cfg).unwrap();
        assert!((theta[0] - (expected - upd)).abs() < 1e-15);
    }

    #[test]
    fn derivative_loss_is_mean_of_squared_residuals() {
        let (ds, st, m) = tiny();
        let data = prepare(&ds, &st, 0.01, 5).unwrap();
        let samples: Vec<&Sample> = data.train.iter().take(3).collect();
        let brute: f64 = samples
            .iter()
            .map(|s| {
                let g = m.rhs(&s.state, s.time, &data.contexts[s.context]).unwrap();
                g.iter().zip(&s.derivative).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / 3.0;
        let l = derivative_loss(&m, &samples, &data.contexts).unwrap();
        assert!((l - brute).abs() <= 1e-12 * brute);
        assert!(l > 0.0);

        // exact fit gives zero
        let mut exact = samples[0].clone();
        exact.derivative = m.rhs(&exact.state, exact.time, &data.contexts[exact.context]).unwrap();
        assert_eq!(derivative_loss(&m, &[&exact], &data.contexts).unwrap(), 0.0);
    }

    #[test]
    fn one_step_trajectory_loss_matches_manual_rk4() {
        let (ds, st, m) = tiny();
        let data = prepare(&ds, &st, 0.01, 5).unwrap();
        let s = data.trajectory_ready(&data.train)[0];
        let traj = rollout(&m, &s.state, &data.contexts[s.context], 0.01, 0.01, 0.01).unwrap();
        let manual: f64 = traj.states[1].iter().zip(&s.targets[0]).map(|(a, b)| (a - b).powi(2)).sum();
        let l = trajectory_loss(&m, &[s], &data.contexts, 1, 0.01).unwrap();
        assert!((l - manual).abs() <= 1e-12 * manual);
    }

    #[test]
    fn trajectory_targets_use_the_save_stride() {
        let setup = DnsSetup { save_every: 0.005, dt: 0.0025, ..tiny_setup() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ds = build_dataset(&setup, 1, 0.3, 0.7, &mut rng).unwrap();
        let st = StateTransform::filter_only(0.0, setup.domain_end, 8, 4).unwrap();
        let data = prepare(&ds, &st, 0.01, 5).unwrap();
        let r = ds.train[0];
        let s = &data.train[0];
        if let Some(u) = ds.future(r, 2) {
            assert_eq!(s.targets[0], st.to_state(u).unwrap());
        }
        assert!(prepare(&ds, &st, 0.0075, 5).is_err());
        for s in &data.train {
            assert!(s.targets.len() <= 5);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (ds, st, mut m) = tiny();
        let data = prepare(&ds, &st, 0.01, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        m.params.values.iter_mut().for_each(|v| *v += 0.1 * rng.gen_range(-1.0..1.0));
        let samples = data.trajectory_ready(&data.train);
        let batch = &samples[..2];
        for (phase, steps) in [(Phase::Derivative, 0), (Phase::Trajectory, 5)] {
            let (_, g) = loss_and_grad(&m, batch, &data.contexts, phase, steps, 0.01, true).unwrap();
            let g = g.unwrap();
            for i in 0..m.params.len() {
                let h = 1e-6 * m.params.values[i].abs().max(1.0);
                let mut p = m.clone();
                p.params.values[i] += h;
                let lp = loss_and_grad(&p, batch, &data.contexts, phase, steps, 0.01, false).unwrap().0;
                p.params.values[i] -= 2.0 * h;
                let lm = loss_and_grad(&p, batch, &data.contexts, phase, steps, 0.01, false).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                let err = (g[i] - fd).abs() / fd.abs().max(1e-3);
                assert!(err < 1e-5, "{phase:?} param {i}: {} vs {fd}", g[i]);
            }
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (ds, st, m0) = tiny();
        let data = prepare(&ds, &st, 0.01, 5).unwrap();
        let cfg = TrainConfig { epochs_derivative: 20, epochs_trajectory: 2, lr: 1e-2, ..TrainConfig::burgers() };
        let train_set: Vec<&Sample> = data.train.iter().collect();
        let initial = derivative_loss(&m0, &train_set, &data.contexts).unwrap();

        let mut a = m0.clone();
        let out_a = train(&mut a, &data, &cfg).unwrap();
        let mut b = m0.clone();
        let out_b = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(out_a, out_b);
        assert_eq!(a.params, b.params);
        assert_eq!(out_a.losses.len(), 22);
        assert!(out_a.aborted.is_none());

        let cfg_d = TrainConfig { epochs_trajectory: 0, ..cfg.clone() };
        let mut c = m0.clone();
        train(&mut c, &data, &cfg_d).unwrap();
        assert!(derivative_loss(&c, &train_set, &data.contexts).unwrap() < initial);

        let cfg0 = TrainConfig { epochs_derivative: 0, epochs_trajectory: 0, ..cfg };
        let mut d = m0.clone();
        let out = train(&mut d, &data, &cfg0).unwrap();
        assert!(out.losses.is_empty());
        assert_eq!(d.params, m0.params);
    }

    #[test]
    fn smagorinsky_fit_and_sweep_shape() {
        let (ds, st, m) = tiny();
        let fst = StateTransform::filter_only(0.0, tiny_setup().domain_end, 8, 4).unwrap();
        let data = prepare(&ds, &fst, 0.01, 5).unwrap();
        let mut smag = Smagorinsky::new(Equation::burgers(), 4, fst.fp.grid.coarse_spacing, 0.0).unwrap();
        let train_set: Vec<&Sample> = data.train.iter().collect();
        let cs = fit_smagorinsky(&mut smag, &train_set, &data.contexts).unwrap();
        assert!((0.0..=2.0).contains(&cs));
        let nc = NoClosure::new(Equation::burgers(), 4, fst.fp.grid.coarse_spacing);
        assert!(
            derivative_loss(&smag, &train_set, &data.contexts).unwrap()
                <= derivative_loss(&nc, &train_set, &data.contexts).unwrap() + 1e-15
        );

        let sp_data = prepare(&ds, &st, 0.01, 5).unwrap();
        let cfg = TrainConfig { epochs_derivative: 1, ..TrainConfig::burgers() };
        let rows = hyperparameter_sweep(
            Equation::burgers(),
            4,
            m.op.spacing,
            &m.compression,
            &sp_data,
            &cfg,
            &[0, 1, 2],
            &[2, 3, 4],
        )
        .unwrap();
        assert_eq!(rows.len(), 9);
        assert!(rows.iter().all(|r| r.val_nrmse.is_finite() && r.val_nrmse >= 0.0));
    }
}
