//! Random simulation conditions and reference dataset generation.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::boundary::{BcSpec, Inflow};
use crate::error::{Error, Result};
use crate::grid::cell_centers;
use crate::pde::{simulate, Equation, PdeConfig, Trajectory};

/// Random Fourier series
/// `ξ(y) = α₁ + α₂/√M Σ_{i=2}^{M} C_{i1} sin(2πiy/α₃) + C_{i2} cos(2πiy/α₃)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierCondition {
    pub offset: f64,
    pub amplitude: f64,
    pub period: f64,
    pub modes: usize,
    /// Row `i - 1` holds `(C_{i1}, C_{i2})`; the first row is sampled but unused.
    pub coeffs: Vec<[f64; 2]>,
}

impl FourierCondition {
    pub fn constant(value: f64) -> Self {
        Self { offset: value, amplitude: 0.0, period: 1.0, modes: 2, coeffs: vec![[0.0; 2]; 2] }
    }

    pub fn eval(&self, y: f64) -> f64 {
        if self.amplitude == 0.0 {
            return self.offset;
        }
        let w = 2.0 * std::f64::consts::PI * y / self.period;
        let sum: f64 = (2..=self.modes)
            .map(|i| {
                let [a, b] = self.coeffs[i - 1];
                let arg = i as f64 * w;
                a * arg.sin() + b * arg.cos()
            })
            .sum();
        self.offset + self.amplitude / (self.modes as f64).sqrt() * sum
    }

    pub fn eval_many(&self, ys: &[f64]) -> Vec<f64> {
        ys.iter().map(|&y| self.eval(y)).collect()
    }
}

/// Draw `M ~ U{2..8}` and coefficients `±U[½, 1]`.
pub fn sample_condition<R: Rng + ?Sized>(
    offset: f64,
    amplitude: f64,
    period: f64,
    rng: &mut R,
) -> Result<FourierCondition> {
    if !(period > 0.0) {
        return Err(Error::InvalidArgument(format!("period must be positive, got {period}")));
    }
    let modes = rng.gen_range(2..=8);
    let coeffs = (0..modes)
        .map(|_| {
            let mut pair = [0.0; 2];
            for c in &mut pair {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                *c = sign * rng.gen_range(0.5..=1.0);
            }
            pair
        })
        .collect();
    Ok(FourierCondition { offset, amplitude, period, modes, coeffs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcKind {
    Periodic,
    InflowOutflow,
    /// First half of the trajectories periodic, second half inflow/outflow.
    Mixed,
}

impl BcKind {
    pub fn name(&self) -> &'static str {
        match self {
            BcKind::Periodic => "periodic",
            BcKind::InflowOutflow => "inflow-outflow",
            BcKind::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(BcKind::Periodic),
            "inflow-outflow" | "io" => Ok(BcKind::InflowOutflow),
            "mixed" => Ok(BcKind::Mixed),
            _ => Err(Error::InvalidArgument(format!("unknown boundary kind {s:?}"))),
        }
    }
}

/// Reference simulation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DnsSetup {
    pub equation: Equation,
    pub bc: BcKind,
    pub domain_start: f64,
    pub domain_end: f64,
    pub cells: usize,
    pub dt: f64,
    pub t_end: f64,
    pub save_every: f64,
}

impl DnsSetup {
    pub fn burgers(bc: BcKind) -> Self {
        Self {
            equation: Equation::burgers(),
            bc,
            domain_start: 0.0,
            domain_end: 2.0 * std::f64::consts::PI,
            cells: 1000,
            dt: 2.5e-3,
            t_end: 10.0,
            save_every: 5e-3,
        }
    }

    pub fn kdv() -> Self {
        Self {
            equation: Equation::kdv(),
            bc: BcKind::Periodic,
            domain_start: 0.0,
            domain_end: 32.0,
            cells: 600,
            dt: 1e-4,
            t_end: 10.0,
            save_every: 5e-3,
        }
    }

    pub fn length(&self) -> f64 {
        self.domain_end - self.domain_start
    }

    pub fn spacing(&self) -> f64 {
        self.length() / self.cells as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        cell_centers(self.domain_start, self.spacing(), self.cells)
    }

    pub fn validate(&self) -> Result<()> {
        self.equation.validate()?;
        if self.cells < 5 || !(self.length() > 0.0) {
            return Err(Error::InvalidGrid("reference grid needs at least 5 cells".into()));
        }
        if matches!(self.equation, Equation::Kdv { .. }) && self.bc != BcKind::Periodic {
            return Err(Error::UnsupportedBoundary("KdV data is periodic only".into()));
        }
        crate::pde::step_count(self.t_end, self.dt)?;
        crate::pde::step_count(self.save_every, self.dt)?;
        Ok(())
    }
}

/// A fully specified reference simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationCondition {
    pub bc: BcSpec,
    /// Fourier series of the initial condition (periodic runs).
    pub initial: Option<FourierCondition>,
    /// Fourier series of the steady forcing (inflow/outflow runs).
    pub forcing_series: Option<FourierCondition>,
    pub u0: Vec<f64>,
    pub forcing: Option<Vec<f64>>,
}

impl SimulationCondition {
    pub fn pde_config(&self, equation: Equation) -> PdeConfig {
        PdeConfig { equation, forcing: self.forcing.clone() }
    }
}

/// Sample the condition of one reference run of the requested boundary kind.
pub fn sample_simulation<R: Rng + ?Sized>(
    setup: &DnsSetup,
    periodic: bool,
    rng: &mut R,
) -> Result<SimulationCondition> {
    let x = setup.centers();
    let len = setup.length();
    match setup.equation {
        Equation::Kdv { .. } => {
            let ic = sample_condition(0.0, 0.6, len, rng)?;
            Ok(SimulationCondition {
                bc: BcSpec::Periodic,
                u0: ic.eval_many(&x),
                initial: Some(ic),
                forcing_series: None,
                forcing: None,
            })
        }
        Equation::Burgers { .. } if periodic => {
            let ic = sample_condition(2.0, 1.0, len, rng)?;
            Ok(SimulationCondition {
                bc: BcSpec::Periodic,
                u0: ic.eval_many(&x),
                initial: Some(ic),
                forcing_series: None,
                forcing: None,
            })
        }
        Equation::Burgers { .. } => {
            let inflow = sample_condition(2.0, 1.0, 2.0 * std::f64::consts::PI, rng)?;
            let forcing = sample_condition(0.0, 0.5, len, rng)?;
            let start = inflow.eval(0.0);
            Ok(SimulationCondition {
                bc: BcSpec::InflowOutflow { inflow: Inflow::Fourier(inflow) },
                u0: vec![start; setup.cells],
                initial: None,
                forcing: Some(forcing.eval_many(&x)),
                forcing_series: Some(forcing),
            })
        }
    }
}

/// One reference run and its saved states.
#[derive(Debug, Clone, PartialEq)]
pub struct DnsRun {
    pub condition: SimulationCondition,
    pub trajectory: Trajectory,
}

pub fn run_dns(setup: &DnsSetup, condition: &SimulationCondition) -> Result<DnsRun> {
    setup.validate()?;
    let cfg = condition.pde_config(setup.equation);
    let trajectory =
        simulate(&cfg, &condition.bc, &condition.u0, setup.spacing(), setup.dt, setup.t_end, setup.save_every)?;
    Ok(DnsRun { condition: condition.clone(), trajectory })
}

/// Position of a stored snapshot: trajectory index and saved-state index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SnapshotRef {
    pub trajectory: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub attempt: usize,
    pub time: f64,
}

/// Reference trajectories plus the subsampled train/validation snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotDataset {
    pub setup: DnsSetup,
    pub runs: Vec<DnsRun>,
    pub train: Vec<SnapshotRef>,
    pub validation: Vec<SnapshotRef>,
    pub diverged: Vec<DivergenceReport>,
}

impl SnapshotDataset {
    pub fn state(&self, r: SnapshotRef) -> &[f64] {
        &self.runs[r.trajectory].trajectory.states[r.index]
    }

    pub fn time(&self, r: SnapshotRef) -> f64 {
        self.runs[r.trajectory].trajectory.times[r.index]
    }

    pub fn condition(&self, r: SnapshotRef) -> &SimulationCondition {
        &self.runs[r.trajectory].condition
    }

    /// Saved state `offset` saves after `r`, if the trajectory reaches it.
    pub fn future(&self, r: SnapshotRef, offset: usize) -> Option<&[f64]> {
        self.runs[r.trajectory].trajectory.states.get(r.index + offset).map(|v| v.as_slice())
    }

    pub fn train_states(&self) -> Vec<&[f64]> {
        self.train.iter().map(|&r| self.state(r)).collect()
    }

    pub fn validation_states(&self) -> Vec<&[f64]> {
        self.validation.iter().map(|&r| self.state(r)).collect()
    }

    /// Select snapshots from complete trajectories and split them.
    pub fn split<R: Rng + ?Sized>(&mut self, fraction: f64, train_fraction: f64, rng: &mut R) -> Result<()> {
        if !(fraction > 0.0 && fraction <= 1.0) || !(train_fraction > 0.0 && train_fraction <= 1.0) {
            return Err(Error::InvalidArgument("fractions must lie in (0, 1]".into()));
        }
        let mut pool: Vec<SnapshotRef> = self
            .runs
            .iter()
            .enumerate()
            .filter(|(_, run)| run.trajectory.is_stable())
            .flat_map(|(k, run)| {
                (0..run.trajectory.states.len()).map(move |index| SnapshotRef { trajectory: k, index })
            })
            .collect();
        if pool.is_empty() {
            return Err(Error::InsufficientData("no stable trajectory to sample from".into()));
        }
        let count = ((pool.len() as f64 * fraction).round() as usize).clamp(1, pool.len());
        pool.shuffle(rng);
        pool.truncate(count);
        let n_train = ((count as f64 * train_fraction).round() as usize).clamp(1, count);
        let mut validation = pool.split_off(n_train);
        pool.sort();
        validation.sort();
        self.train = pool;
        self.validation = validation;
        Ok(())
    }
}

/// Run `count` reference simulations and subsample their saved states.
pub fn build_dataset<R: Rng + ?Sized>(
    setup: &DnsSetup,
    count: usize,
    fraction: f64,
    train_fraction: f64,
    rng: &mut R,
) -> Result<SnapshotDataset> {
    setup.validate()?;
    if count == 0 {
        return Err(Error::InvalidArgument("need at least one trajectory".into()));
    }
    let n_periodic = match setup.bc {
        BcKind::Periodic => count,
        BcKind::InflowOutflow => 0,
        BcKind::Mixed => count.div_ceil(2),
    };
    let mut runs = Vec::with_capacity(count);
    let mut diverged = Vec::new();
    for attempt in 0..count {
        let cond = sample_simulation(setup, attempt < n_periodic, rng)?;
        let run = run_dns(setup, &cond)?;
        if let Some(time) = run.trajectory.diverged_at {
            diverged.push(DivergenceReport { attempt, time });
        }
        runs.push(run);
    }
    let mut ds = SnapshotDataset { setup: setup.clone(), runs, train: Vec::new(), validation: Vec::new(), diverged };
    ds.split(fraction, train_fraction, rng)?;
    Ok(ds)
}
