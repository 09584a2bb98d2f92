//! Container encodings of datasets, compressions, checkpoints and runs.

use anyhow::{anyhow, bail, ensure, Result};
use spclosure_core::autodiff::ParameterSet;
use spclosure_core::datagen::{DivergenceReport, DnsRun};
use spclosure_core::*;

use crate::container::ArrayContainer;

fn put_equation(c: &mut ArrayContainer, eq: Equation) {
    match eq {
        Equation::Burgers { nu } => {
            c.set_meta("equation", "burgers");
            c.set_meta("nu", nu);
        }
        Equation::Kdv { epsilon, mu } => {
            c.set_meta("equation", "kdv");
            c.set_meta("epsilon", epsilon);
            c.set_meta("mu", mu);
        }
    }
}

pub fn get_equation(c: &ArrayContainer) -> Result<Equation> {
    Ok(match c.meta("equation")? {
        "burgers" => Equation::Burgers { nu: c.meta_parse("nu")? },
        "kdv" => Equation::Kdv { epsilon: c.meta_parse("epsilon")?, mu: c.meta_parse("mu")? },
        other => bail!("unknown equation {other:?}"),
    })
}

fn expect_kind(c: &ArrayContainer, kind: &str) -> Result<()> {
    let found = c.meta("kind")?;
    ensure!(found == kind, "expected a {kind} file, found {found}");
    Ok(())
}

fn encode_fourier(f: &FourierCondition) -> Vec<f64> {
    let mut v = vec![f.offset, f.amplitude, f.period, f.modes as f64];
    v.extend(f.coeffs.iter().flatten());
    v
}

fn decode_fourier(v: &[f64]) -> Result<FourierCondition> {
    ensure!(v.len() >= 4 && (v.len() - 4).is_multiple_of(2), "malformed Fourier condition");
    Ok(FourierCondition {
        offset: v[0],
        amplitude: v[1],
        period: v[2],
        modes: v[3] as usize,
        coeffs: v[4..].chunks(2).map(|c| [c[0], c[1]]).collect(),
    })
}

/// Store a simulation condition under `prefix`.
pub fn put_condition(c: &mut ArrayContainer, prefix: &str, cond: &SimulationCondition) -> Result<()> {
    match &cond.bc {
        BcSpec::Periodic => c.set_meta(format!("{prefix}.bc"), "periodic"),
        BcSpec::InflowOutflow { inflow } => {
            c.set_meta(format!("{prefix}.bc"), "inflow-outflow");
            match inflow {
                Inflow::Constant(v) => c.set_meta(format!("{prefix}.inflow_constant"), v),
                Inflow::Fourier(f) => c.push_vec(format!("{prefix}.inflow"), encode_fourier(f))?,
            }
        }
    }
    c.push_vec(format!("{prefix}.u0"), cond.u0.clone())?;
    if let Some(f) = &cond.forcing {
        c.push_vec(format!("{prefix}.forcing"), f.clone())?;
    }
    if let Some(f) = &cond.initial {
        c.push_vec(format!("{prefix}.initial"), encode_fourier(f))?;
    }
    if let Some(f) = &cond.forcing_series {
        c.push_vec(format!("{prefix}.forcing_series"), encode_fourier(f))?;
    }
    Ok(())
}

pub fn get_condition(c: &ArrayContainer, prefix: &str) -> Result<SimulationCondition> {
    let bc = match c.meta(&format!("{prefix}.bc"))? {
        "periodic" => BcSpec::Periodic,
        "inflow-outflow" => {
            let inflow = match c.get(&format!("{prefix}.inflow")) {
                Some(e) => Inflow::Fourier(decode_fourier(&e.data)?),
                None => Inflow::Constant(c.meta_parse(&format!("{prefix}.inflow_constant"))?),
            };
            BcSpec::InflowOutflow { inflow }
        }
        other => bail!("unknown boundary {other:?}"),
    };
    let opt = |name: &str| c.get(&format!("{prefix}.{name}")).map(|e| e.data.clone());
    Ok(SimulationCondition {
        bc,
        initial: opt("initial").map(|v| decode_fourier(&v)).transpose()?,
        forcing_series: opt("forcing_series").map(|v| decode_fourier(&v)).transpose()?,
        u0: c.vec(&format!("{prefix}.u0"))?.to_vec(),
        forcing: opt("forcing"),
    })
}

fn put_setup(c: &mut ArrayContainer, s: &DnsSetup) {
    put_equation(c, s.equation);
    c.set_meta("bc_kind", s.bc.name());
    c.set_meta("domain_start", s.domain_start);
    c.set_meta("domain_end", s.domain_end);
    c.set_meta("fine_cells", s.cells);
    c.set_meta("dns_dt", s.dt);
    c.set_meta("t_end", s.t_end);
    c.set_meta("dns_save_every", s.save_every);
}

fn get_setup(c: &ArrayContainer) -> Result<DnsSetup> {
    Ok(DnsSetup {
        equation: get_equation(c)?,
        bc: BcKind::parse(c.meta("bc_kind")?)?,
        domain_start: c.meta_parse("domain_start")?,
        domain_end: c.meta_parse("domain_end")?,
        cells: c.meta_parse("fine_cells")?,
        dt: c.meta_parse("dns_dt")?,
        t_end: c.meta_parse("t_end")?,
        save_every: c.meta_parse("dns_save_every")?,
    })
}

fn put_trajectory(c: &mut ArrayContainer, prefix: &str, t: &Trajectory) -> Result<()> {
    c.push_vec(format!("{prefix}.times"), t.times.clone())?;
    c.push_rows(format!("{prefix}.states"), &t.states)?;
    if let Some(d) = t.diverged_at {
        c.set_meta(format!("{prefix}.diverged_at"), d);
    }
    Ok(())
}

fn get_trajectory(c: &ArrayContainer, prefix: &str) -> Result<Trajectory> {
    let key = format!("{prefix}.diverged_at");
    Ok(Trajectory {
        times: c.vec(&format!("{prefix}.times"))?.to_vec(),
        states: c.rows(&format!("{prefix}.states"))?,
        diverged_at: if c.metadata.contains_key(&key) { Some(c.meta_parse(&key)?) } else { None },
    })
}

fn refs_rows(refs: &[SnapshotRef]) -> Vec<Vec<f64>> {
    refs.iter().map(|r| vec![r.trajectory as f64, r.index as f64]).collect()
}

fn rows_refs(rows: Vec<Vec<f64>>) -> Result<Vec<SnapshotRef>> {
    rows.into_iter()
        .map(|r| {
            ensure!(r.len() == 2, "malformed snapshot reference");
            Ok(SnapshotRef { trajectory: r[0] as usize, index: r[1] as usize })
        })
        .collect()
}

pub fn dataset_to_container(ds: &SnapshotDataset) -> Result<ArrayContainer> {
    let mut c = ArrayContainer::new();
    c.set_meta("kind", "dataset");
    put_setup(&mut c, &ds.setup);
    c.set_meta("runs", ds.runs.len());
    for (k, run) in ds.runs.iter().enumerate() {
        let p = format!("run{k}");
        put_condition(&mut c, &p, &run.condition)?;
        put_trajectory(&mut c, &p, &run.trajectory)?;
    }
    c.push("train", vec![ds.train.len() as u64, 2], refs_rows(&ds.train).concat())?;
    c.push("validation", vec![ds.validation.len() as u64, 2], refs_rows(&ds.validation).concat())?;
    let div: Vec<f64> = ds.diverged.iter().flat_map(|d| [d.attempt as f64, d.time]).collect();
    c.push("diverged", vec![ds.diverged.len() as u64, 2], div)?;
    Ok(c)
}

pub fn dataset_from_container(c: &ArrayContainer) -> Result<SnapshotDataset> {
    expect_kind(c, "dataset")?;
    let setup = get_setup(c)?;
    let n: usize = c.meta_parse("runs")?;
    let runs = (0..n)
        .map(|k| {
            let p = format!("run{k}");
            Ok(DnsRun { condition: get_condition(c, &p)?, trajectory: get_trajectory(c, &p)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let diverged =
        c.rows("diverged")?.into_iter().map(|r| DivergenceReport { attempt: r[0] as usize, time: r[1] }).collect();
    let ds = SnapshotDataset {
        setup,
        runs,
        train: rows_refs(c.rows("train")?)?,
        validation: rows_refs(c.rows("validation")?)?,
        diverged,
    };
    for r in ds.train.iter().chain(&ds.validation) {
        ensure!(
            ds.runs.get(r.trajectory).is_some_and(|run| r.index < run.trajectory.states.len()),
            "snapshot reference out of range"
        );
    }
    Ok(ds)
}

/// Grid and compression description shared by compressions, checkpoints and runs.
fn put_transform(c: &mut ArrayContainer, st: &StateTransform) -> Result<()> {
    let g = &st.fp.grid;
    c.set_meta("domain_start", g.domain_start);
    c.set_meta("domain_end", g.domain_end);
    c.set_meta("input_cells", st.input_len());
    c.set_meta("coarse_cells", g.coarse_cells);
    c.set_meta("ratio", g.ratio);
    if let Some(comp) = &st.comp {
        c.push_vec("t", comp.t.clone())?;
        c.push_vec("t_hat", comp.t_hat.clone())?;
    }
    Ok(())
}

pub fn get_transform(c: &ArrayContainer) -> Result<StateTransform> {
    let mut st = StateTransform::filter_only(
        c.meta_parse("domain_start")?,
        c.meta_parse("domain_end")?,
        c.meta_parse("input_cells")?,
        c.meta_parse("coarse_cells")?,
    )?;
    let ratio: usize = c.meta_parse("ratio")?;
    ensure!(st.fp.grid.ratio == ratio, "stored ratio {ratio} does not match the grid");
    if let (Some(t), Some(t_hat)) = (c.get("t"), c.get("t_hat")) {
        ensure!(t.data.len() == ratio, "compression vector has the wrong length");
        st.comp = Some(CompressionOperator { t: t.data.clone(), t_hat: t_hat.data.clone() });
    }
    Ok(st)
}

pub fn compression_to_container(
    eq: Equation,
    st: &StateTransform,
    train_loss: f64,
    val_loss: f64,
) -> Result<ArrayContainer> {
    ensure!(st.comp.is_some(), "transform has no compression");
    let mut c = ArrayContainer::new();
    c.set_meta("kind", "compression");
    put_equation(&mut c, eq);
    put_transform(&mut c, st)?;
    c.set_meta("train_loss", train_loss);
    c.set_meta("validation_loss", val_loss);
    Ok(c)
}

pub fn compression_from_container(c: &ArrayContainer) -> Result<StateTransform> {
    expect_kind(c, "compression")?;
    let st = get_transform(c)?;
    ensure!(st.comp.is_some(), "compression file without compression vector");
    Ok(st)
}

/// Any of the coarse models.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Sp(SpClosure),
    Cnn(VanillaCnn),
    Smagorinsky(Smagorinsky),
    Nc(NoClosure),
}

impl AnyModel {
    pub fn as_dyn(&self) -> &dyn ClosureModel {
        match self {
            AnyModel::Sp(m) => m,
            AnyModel::Cnn(m) => m,
            AnyModel::Smagorinsky(m) => m,
            AnyModel::Nc(m) => m,
        }
    }

    pub fn as_dyn_mut(&mut self) -> &mut dyn ClosureModel {
        match self {
            AnyModel::Sp(m) => m,
            AnyModel::Cnn(m) => m,
            AnyModel::Smagorinsky(m) => m,
            AnyModel::Nc(m) => m,
        }
    }
}

/// Trained model plus the transform that defines its state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub transform: StateTransform,
    pub model: AnyModel,
}

/// Identity a checkpoint must match before it is used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expectation {
    pub equation: Equation,
    pub coarse_cells: usize,
    pub ratio: Option<usize>,
    pub half_width: Option<usize>,
}

impl Checkpoint {
    pub fn to_container(&self) -> Result<ArrayContainer> {
        let mut c = ArrayContainer::new();
        c.set_meta("kind", "checkpoint");
        let m = self.model.as_dyn();
        c.set_meta("model", m.kind().name());
        put_equation(&mut c, m.operator().equation);
        put_transform(&mut c, &self.transform)?;
        match &self.model {
            AnyModel::Sp(sp) => {
                c.set_meta("half_width", sp.half_width);
                c.set_meta("include_dissipation", sp.include_dissipation);
                c.set_meta("zero_sum_constraint", sp.zero_sum_constraint);
                c.set_meta("channels", join(&sp.arch.channels));
                c.set_meta("kernel", sp.arch.kernel);
            }
            AnyModel::Cnn(cnn) => {
                c.set_meta("channels", join(&cnn.arch.channels));
                c.set_meta("kernel", cnn.arch.kernel);
            }
            _ => {}
        }
        c.push_vec("theta", m.params().values.clone())?;
        Ok(c)
    }

    pub fn from_container(c: &ArrayContainer) -> Result<Self> {
        expect_kind(c, "checkpoint")?;
        let eq = get_equation(c)?;
        let transform = get_transform(c)?;
        let cells = transform.coarse_cells();
        let h = transform.fp.grid.coarse_spacing;
        let kind = ModelKind::parse(c.meta("model")?)?;
        let arch = || -> Result<Architecture> {
            let channels = c
                .meta("channels")?
                .split(',')
                .map(|s| s.parse().map_err(|e| anyhow!("channels: {e}")))
                .collect::<Result<Vec<usize>>>()?;
            Ok(Architecture::new(channels, c.meta_parse("kernel")?)?)
        };
        let mut model = match kind {
            ModelKind::StructurePreserving => {
                let comp = transform.comp.clone().ok_or_else(|| anyhow!("checkpoint lacks the compression vector"))?;
                let mut sp = SpClosure::new(
                    eq,
                    cells,
                    h,
                    arch()?,
                    c.meta_parse("half_width")?,
                    c.meta_parse("include_dissipation")?,
                    comp,
                    0,
                )?;
                sp.zero_sum_constraint = c.meta_parse("zero_sum_constraint")?;
                AnyModel::Sp(sp)
            }
            ModelKind::VanillaCnn => AnyModel::Cnn(VanillaCnn::new(eq, cells, h, arch()?, 0)?),
            ModelKind::Smagorinsky => AnyModel::Smagorinsky(Smagorinsky::new(eq, cells, h, 0.0)?),
            ModelKind::NoClosure => AnyModel::Nc(NoClosure::new(eq, cells, h)),
        };
        let theta = c.vec("theta")?;
        let params: &mut ParameterSet = model.as_dyn_mut().params_mut();
        ensure!(
            theta.len() == params.len(),
            "checkpoint holds {} parameters, the architecture needs {}",
            theta.len(),
            params.len()
        );
        params.values = theta.to_vec();
        Ok(Self { transform, model })
    }

    /// Refuse to proceed when the checkpoint does not match `expect`.
    pub fn check(&self, expect: &Expectation) -> Result<()> {
        let m = self.model.as_dyn();
        let eq = m.operator().equation;
        ensure!(eq == expect.equation, "checkpoint equation {eq:?} does not match {:?}", expect.equation);
        ensure!(
            m.coarse_cells() == expect.coarse_cells,
            "checkpoint has I = {}, expected {}",
            m.coarse_cells(),
            expect.coarse_cells
        );
        if let Some(j) = expect.ratio {
            ensure!(
                self.transform.fp.grid.ratio == j,
                "checkpoint has J = {}, expected {j}",
                self.transform.fp.grid.ratio
            );
        }
        if let (Some(b), AnyModel::Sp(sp)) = (expect.half_width, &self.model) {
            ensure!(sp.half_width == b, "checkpoint has B = {}, expected {b}", sp.half_width);
        }
        Ok(())
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// A saved simulation: either a coarse model run or a reference run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    /// `"dns"` or a model name.
    pub model: String,
    pub equation: Equation,
    /// Present for coarse runs.
    pub transform: Option<StateTransform>,
    /// Reference grid for `dns` runs: (start, end, cells).
    pub domain: (f64, f64, usize),
    pub condition: SimulationCondition,
    pub trajectory: Trajectory,
    pub dt: f64,
    pub save_every: f64,
    pub wall_time: f64,
}

impl RunFile {
    pub fn to_container(&self) -> Result<ArrayContainer> {
        let mut c = ArrayContainer::new();
        c.set_meta("kind", "run");
        c.set_meta("model", &self.model);
        put_equation(&mut c, self.equation);
        c.set_meta("dt", self.dt);
        c.set_meta("save_every", self.save_every);
        c.set_meta("wall_time", self.wall_time);
        c.set_meta("run.domain_start", self.domain.0);
        c.set_meta("run.domain_end", self.domain.1);
        c.set_meta("run.cells", self.domain.2);
        if let Some(st) = &self.transform {
            put_transform(&mut c, st)?;
        }
        put_condition(&mut c, "condition", &self.condition)?;
        put_trajectory(&mut c, "run", &self.trajectory)?;
        Ok(c)
    }

    pub fn from_container(c: &ArrayContainer) -> Result<Self> {
        expect_kind(c, "run")?;
        let model = c.meta("model")?.to_string();
        Ok(Self {
            transform: if model == "dns" { None } else { Some(get_transform(c)?) },
            model,
            equation: get_equation(c)?,
            domain: (c.meta_parse("run.domain_start")?, c.meta_parse("run.domain_end")?, c.meta_parse("run.cells")?),
            condition: get_condition(c, "condition")?,
            trajectory: get_trajectory(c, "run")?,
            dt: c.meta_parse("dt")?,
            save_every: c.meta_parse("save_every")?,
            wall_time: c.meta_parse("wall_time")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use spclosure_core::datagen::build_dataset;

    fn small_dataset(bc: BcKind) -> SnapshotDataset {
        let setup = DnsSetup { cells: 20, dt: 0.01, t_end: 0.1, save_every: 0.02, ..DnsSetup::burgers(bc) };
        build_dataset(&setup, 2, 0.5, 0.7, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        for bc in [BcKind::Periodic, BcKind::Mixed] {
            let ds = small_dataset(bc);
            let c = dataset_to_container(&ds).unwrap();
            let back = dataset_from_container(&ArrayContainer::from_bytes(&c.to_bytes()).unwrap()).unwrap();
            assert_eq!(back, ds);
        }
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let ds = small_dataset(BcKind::Periodic);
        let st = StateTransform::fit(0.0, ds.setup.domain_end, 20, 5, &ds.train_states()).unwrap();
        let arch = Architecture::uniform(3, 1, 4, 4, 3).unwrap();
        let sp = SpClosure::new(
            Equation::burgers(),
            5,
            st.fp.grid.coarse_spacing,
            arch,
            1,
            true,
            st.comp.clone().unwrap(),
            4,
        )
        .unwrap();
        let ck = Checkpoint { transform: st, model: AnyModel::Sp(sp) };
        let back = Checkpoint::from_container(&ck.to_container().unwrap()).unwrap();
        assert_eq!(back, ck);
        let ok = Expectation { equation: Equation::burgers(), coarse_cells: 5, ratio: Some(4), half_width: Some(1) };
        back.check(&ok).unwrap();
        assert!(back.check(&Expectation { coarse_cells: 6, ..ok }).is_err());
        assert!(back.check(&Expectation { ratio: Some(2), ..ok }).is_err());
        assert!(back.check(&Expectation { half_width: Some(2), ..ok }).is_err());
        assert!(back.check(&Expectation { equation: Equation::kdv(), ..ok }).is_err());

        let mut bad = ck.to_container().unwrap();
        bad.set_meta("kernel", 5);
        assert!(Checkpoint::from_container(&bad).is_err());
    }

    #[test]
    fn run_round_trip() {
        let ds = small_dataset(BcKind::InflowOutflow);
        let run = RunFile {
            model: "dns".into(),
            equation: ds.setup.equation,
            transform: None,
            domain: (0.0, ds.setup.domain_end, 20),
            condition: ds.runs[0].condition.clone(),
            trajectory: ds.runs[0].trajectory.clone(),
            dt: ds.setup.dt,
            save_every: ds.setup.save_every,
            wall_time: 0.5,
        };
        let back = RunFile::from_container(&run.to_container().unwrap()).unwrap();
        assert_eq!(back, run);
        assert!(dataset_from_container(&run.to_container().unwrap()).is_err());
    }
}
