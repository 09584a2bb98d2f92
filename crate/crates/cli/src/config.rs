//! Flat `key = value` run configuration with command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use spclosure_core::{BcKind, DnsSetup, Equation, ModelKind, TrainConfig};

/// Every accepted key with its default (empty = unset) and meaning.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("equation", "burgers", "burgers | kdv"),
    ("bc", "periodic", "periodic | inflow-outflow | mixed (Burgers only)"),
    ("nu", "0.01", "Burgers viscosity"),
    ("epsilon", "6", "KdV convection coefficient"),
    ("mu", "1", "KdV dispersion coefficient"),
    ("fine_cells", "", "reference resolution N (default 1000 Burgers, 600 KdV)"),
    ("dns_dt", "", "reference time step (default 2.5e-3 Burgers, 1e-4 KdV)"),
    ("dns_save_every", "", "reference save interval (default 5e-3)"),
    ("t_end", "10", "simulation horizon"),
    ("trajectories", "", "reference runs (default 50, 100 for mixed Burgers and KdV)"),
    ("fraction", "0.1", "fraction of saved states kept as snapshots"),
    ("train_fraction", "0.7", "training share of the snapshots"),
    ("model", "sp", "sp | cnn | smagorinsky | nc | dns"),
    ("dof", "60", "degrees of freedom (2I for sp, I otherwise)"),
    ("cells", "", "coarse cells I (overrides dof)"),
    ("dt", "", "coarse time step (default 0.01 Burgers, 5e-3 KdV)"),
    ("save_every", "", "coarse save interval (default dt)"),
    ("traj_steps", "", "trajectory-fitting steps (default 5 Burgers, 20 KdV)"),
    ("epochs_derivative", "100", "derivative-fitting epochs"),
    ("epochs_trajectory", "20", "trajectory-fitting epochs"),
    ("lr", "1e-3", "Adam learning rate"),
    ("batch_size", "20", "mini-batch size"),
    ("hidden_layers", "2", "hidden CNN layers"),
    ("channels", "", "hidden channels (default 20 Burgers, 30 KdV; 20 for cnn)"),
    ("kernel", "", "CNN kernel size (default 5 sp, 7 cnn)"),
    ("half_width", "", "stencil half-width B (default 1 Burgers, 2 KdV)"),
    ("include_dissipation", "", "dissipative term (default true Burgers, false KdV)"),
    ("s_init", "true", "true | zero: SGS state at t = 0"),
    ("condition", "", "index of a dataset run to simulate"),
    ("condition_seed", "0", "seed of a freshly sampled condition"),
    ("spectrum_t0", "3", "start of the spectrum averaging window"),
    ("spectrum_t1", "7", "end of the spectrum averaging window"),
    ("sweep_layers", "0,1,2", "hidden layer counts of the sweep"),
    ("sweep_channels", "10,20,30", "channel counts of the sweep"),
    ("suites", "filter,eigen,conservation", "verify suites"),
    ("seed", "0", "random seed"),
    ("out", ".", "output directory"),
    ("dataset", "", "dataset file (default <out>/dataset.spnc)"),
    ("compression", "", "compression file (default <out>/compression.spnc)"),
    ("checkpoint", "", "checkpoint file (default <out>/checkpoint.spnc)"),
    ("run", "", "simulation file (default <out>/run.spnc)"),
    ("reference", "", "reference simulation file for evaluate/spectrum"),
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
            c.set(k.trim(), v.trim()).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.iter().any(|(k, _, _)| *k == key) {
            bail!("unknown configuration key {key:?}");
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Explicit value or default; `None` when neither is set.
    pub fn raw(&self, key: &str) -> Option<&str> {
        if let Some(v) = self.values.get(key) {
            return Some(v.as_str()).filter(|v| !v.is_empty());
        }
        KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, d, _)| *d).filter(|d| !d.is_empty())
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key).map(|v| v.parse::<T>().map_err(|e| anyhow!("{key} = {v:?}: {e}"))).transpose()
    }

    pub fn get_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| anyhow!("configuration key {key:?} is required"))
    }

    pub fn list(&self, key: &str) -> Result<Vec<usize>> {
        self.raw(key)
            .unwrap_or("")
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse().map_err(|e| anyhow!("{key}: {e}")))
            .collect()
    }

    /// All effective values, for echoing into output metadata.
    pub fn effective(&self) -> BTreeMap<String, String> {
        KEYS.iter().filter_map(|(k, _, _)| self.raw(k).map(|v| (format!("config.{k}"), v.to_string()))).collect()
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out").unwrap_or("."))
    }

    pub fn path(&self, key: &str, default_name: &str) -> PathBuf {
        match self.raw(key) {
            Some(p) => PathBuf::from(p),
            None => self.out_dir().join(default_name),
        }
    }

    pub fn equation(&self) -> Result<Equation> {
        let eq = match self.raw("equation").unwrap_or("burgers") {
            "burgers" => Equation::Burgers { nu: self.require("nu")? },
            "kdv" => Equation::Kdv { epsilon: self.require("epsilon")?, mu: self.require("mu")? },
            other => bail!("unknown equation {other:?}"),
        };
        eq.validate()?;
        Ok(eq)
    }

    pub fn is_burgers(&self) -> Result<bool> {
        Ok(matches!(self.equation()?, Equation::Burgers { .. }))
    }

    pub fn bc_kind(&self) -> Result<BcKind> {
        let kind = BcKind::parse(self.raw("bc").unwrap_or("periodic"))?;
        if !self.is_burgers()? && kind != BcKind::Periodic {
            bail!("KdV runs are periodic only");
        }
        Ok(kind)
    }

    pub fn model(&self) -> Result<Option<ModelKind>> {
        match self.raw("model").unwrap_or("sp") {
            "dns" => Ok(None),
            other => Ok(Some(ModelKind::parse(other)?)),
        }
    }

    pub fn dns_setup(&self) -> Result<DnsSetup> {
        let eq = self.equation()?;
        let base = match eq {
            Equation::Burgers { .. } => DnsSetup::burgers(self.bc_kind()?),
            Equation::Kdv { .. } => DnsSetup::kdv(),
        };
        let setup = DnsSetup {
            equation: eq,
            cells: self.get_or("fine_cells", base.cells)?,
            dt: self.get_or("dns_dt", base.dt)?,
            t_end: self.get_or("t_end", base.t_end)?,
            save_every: self.get_or("dns_save_every", base.save_every)?,
            ..base
        };
        setup.validate()?;
        Ok(setup)
    }

    pub fn trajectories(&self) -> Result<usize> {
        let default = match (self.is_burgers()?, self.bc_kind()?) {
            (true, BcKind::Mixed) | (false, _) => 100,
            _ => 50,
        };
        self.get_or("trajectories", default)
    }

    /// Coarse cells from `cells` or `dof` for the configured model.
    pub fn coarse_cells(&self) -> Result<usize> {
        if let Some(c) = self.get("cells")? {
            return Ok(c);
        }
        let dof: usize = self.require("dof")?;
        Ok(match self.model()? {
            Some(ModelKind::StructurePreserving) => {
                if !dof.is_multiple_of(2) {
                    bail!("structure-preserving runs need an even DOF, got {dof}");
                }
                dof / 2
            }
            _ => dof,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let base = TrainConfig::for_equation(self.equation()?);
        let cfg = TrainConfig {
            lr: self.get_or("lr", base.lr)?,
            batch_size: self.get_or("batch_size", base.batch_size)?,
            epochs_derivative: self.get_or("epochs_derivative", base.epochs_derivative)?,
            epochs_trajectory: self.get_or("epochs_trajectory", base.epochs_trajectory)?,
            traj_steps: self.get_or("traj_steps", base.traj_steps)?,
            dt: self.get_or("dt", base.dt)?,
            seed: self.get_or("seed", base.seed)?,
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
