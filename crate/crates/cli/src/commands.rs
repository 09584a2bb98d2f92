//! Pipeline stages. Each reads its inputs from the configuration and writes
//! its outputs under the configured paths.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spclosure_core::closure::sp_momentum_residual;
use spclosure_core::compression::compression_loss;
use spclosure_core::datagen::{build_dataset, run_dns, sample_simulation};
use spclosure_core::grid::inner_product;
use spclosure_core::metrics::{averaged_spectrum, dissipation_eigen_check, energy_report};
use spclosure_core::rollout::{coarse_context, coarse_reference, initial_state, rollout, save_stride};
use spclosure_core::training::{fit_smagorinsky, hyperparameter_sweep, prepare, train, Sample};
use spclosure_core::*;

use crate::config::RunConfig;
use crate::container::{write_atomic, ArrayContainer};
use crate::store::*;

fn save(c: &mut ArrayContainer, cfg: &RunConfig, path: &Path) -> Result<()> {
    c.metadata.extend(cfg.effective());
    c.write(path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn save_text(cfg: &RunConfig, name: &str, text: &str) -> Result<()> {
    let path = cfg.out_dir().join(name);
    write_atomic(&path, text.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Configuration echo next to plain-text outputs.
fn save_config_echo(cfg: &RunConfig, command: &str) -> Result<()> {
    let mut text = String::new();
    for (k, v) in cfg.effective() {
        writeln!(text, "{} = {v}", k.trim_start_matches("config."))?;
    }
    save_text(cfg, &format!("{command}.config"), &text)
}

fn seed(cfg: &RunConfig) -> Result<u64> {
    cfg.get_or("seed", 0)
}

fn load_dataset(cfg: &RunConfig) -> Result<SnapshotDataset> {
    let path = cfg.path("dataset", "dataset.spnc");
    dataset_from_container(&ArrayContainer::read(&path)?).with_context(|| format!("loading {}", path.display()))
}

fn load_compression(cfg: &RunConfig, dataset: &SnapshotDataset, cells: usize) -> Result<StateTransform> {
    let path = cfg.path("compression", "compression.spnc");
    let c = ArrayContainer::read(&path)?;
    let st = compression_from_container(&c).with_context(|| format!("loading {}", path.display()))?;
    ensure!(get_equation(&c)? == dataset.setup.equation, "compression was fitted for another equation");
    ensure!(st.coarse_cells() == cells, "compression has I = {}, expected {cells}", st.coarse_cells());
    ensure!(
        st.input_len() == dataset.setup.cells,
        "compression expects {} reference cells, dataset has {}",
        st.input_len(),
        dataset.setup.cells
    );
    Ok(st)
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    let path = cfg.path("checkpoint", "checkpoint.spnc");
    let ck = Checkpoint::from_container(&ArrayContainer::read(&path)?)
        .with_context(|| format!("loading {}", path.display()))?;
    ck.check(&Expectation {
        equation: cfg.equation()?,
        coarse_cells: cfg.coarse_cells()?,
        ratio: None,
        half_width: cfg.get("half_width")?,
    })
    .with_context(|| format!("checkpoint {} does not match the configuration", path.display()))?;
    Ok(ck)
}

fn load_run(path: &Path) -> Result<RunFile> {
    RunFile::from_container(&ArrayContainer::read(path)?).with_context(|| format!("loading {}", path.display()))
}

pub fn datagen(cfg: &RunConfig) -> Result<()> {
    let setup = cfg.dns_setup()?;
    let count = cfg.trajectories()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed(cfg)?);
    let ds = build_dataset(&setup, count, cfg.require("fraction")?, cfg.require("train_fraction")?, &mut rng)?;
    println!(
        "{} trajectories, {} train / {} validation snapshots, {} diverged attempts",
        ds.runs.len(),
        ds.train.len(),
        ds.validation.len(),
        ds.diverged.len()
    );
    save(&mut dataset_to_container(&ds)?, cfg, &cfg.path("dataset", "dataset.spnc"))
}

pub fn compress(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let s = &ds.setup;
    let cells = match (cfg.get::<usize>("cells")?, cfg.model()?) {
        (Some(c), _) => c,
        (None, Some(ModelKind::StructurePreserving)) => cfg.coarse_cells()?,
        (None, _) => bail!("compression needs model = sp or an explicit cells value"),
    };
    let st = StateTransform::fit(s.domain_start, s.domain_end, s.cells, cells, &ds.train_states())?;
    let comp = st.comp.as_ref().expect("fit sets the compression");
    let loss = |states: Vec<&[f64]>| -> Result<f64> {
        if states.is_empty() {
            return Ok(f64::NAN);
        }
        let remapped = states.iter().map(|u| st.remap(u)).collect::<spclosure_core::Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = remapped.iter().map(|v| v.as_slice()).collect();
        Ok(compression_loss(comp, &refs, &st.fp)?)
    };
    let (train_loss, val_loss) = (loss(ds.train_states())?, loss(ds.validation_states())?);
    println!("I = {cells}, J = {}: train loss {train_loss:.4e}, validation loss {val_loss:.4e}", st.fp.grid.ratio);
    save(
        &mut compression_to_container(s.equation, &st, train_loss, val_loss)?,
        cfg,
        &cfg.path("compression", "compression.spnc"),
    )
}

fn sp_architecture(cfg: &RunConfig, eq: Equation, dissipation: bool) -> Result<Architecture> {
    let default = SpClosure::default_architecture(eq);
    Ok(Architecture::uniform(
        3,
        cfg.require("hidden_layers")?,
        cfg.get_or("channels", default.channels[1])?,
        if dissipation { 4 } else { 2 },
        cfg.get_or("kernel", default.kernel)?,
    )?)
}

pub fn train_model(cfg: &RunConfig) -> Result<()> {
    let kind = cfg.model()?.context("model = dns cannot be trained")?;
    let ds = load_dataset(cfg)?;
    let eq = ds.setup.equation;
    ensure!(eq == cfg.equation()?, "dataset equation differs from the configuration");
    let cells = cfg.coarse_cells()?;
    let s = &ds.setup;
    let transform = match kind {
        ModelKind::StructurePreserving => load_compression(cfg, &ds, cells)?,
        _ => StateTransform::filter_only(s.domain_start, s.domain_end, s.cells, cells)?,
    };
    let tc = TrainConfig { seed: seed(cfg)?, ..cfg.train_config()? };
    let data = prepare(&ds, &transform, tc.dt, tc.traj_steps)?;
    let h = transform.fp.grid.coarse_spacing;
    let seed = tc.seed;
    let mut losses = String::from("epoch,phase,train,val\n");
    let model = match kind {
        ModelKind::StructurePreserving => {
            let dissipation = cfg.get_or("include_dissipation", matches!(eq, Equation::Burgers { .. }))?;
            let arch = sp_architecture(cfg, eq, dissipation)?;
            let b = cfg.get_or("half_width", SpClosure::default_half_width(eq))?;
            let comp = transform.comp.clone().expect("compression transform");
            let mut m = SpClosure::new(eq, cells, h, arch, b, dissipation, comp, seed)?;
            run_training(&mut m, &data, &tc, &mut losses)?;
            AnyModel::Sp(m)
        }
        ModelKind::VanillaCnn => {
            let default = VanillaCnn::default_architecture();
            let arch = Architecture::uniform(
                2,
                cfg.require("hidden_layers")?,
                cfg.get_or("channels", default.channels[1])?,
                1,
                cfg.get_or("kernel", default.kernel)?,
            )?;
            let mut m = VanillaCnn::new(eq, cells, h, arch, seed)?;
            run_training(&mut m, &data, &tc, &mut losses)?;
            AnyModel::Cnn(m)
        }
        ModelKind::Smagorinsky => {
            let mut m = Smagorinsky::new(eq, cells, h, 0.0)?;
            let samples: Vec<&Sample> = data.train.iter().collect();
            let cs = fit_smagorinsky(&mut m, &samples, &data.contexts)?;
            println!("fitted C_s = {cs:.2}");
            AnyModel::Smagorinsky(m)
        }
        ModelKind::NoClosure => AnyModel::Nc(NoClosure::new(eq, cells, h)),
    };
    if matches!(kind, ModelKind::StructurePreserving | ModelKind::VanillaCnn) {
        save_text(cfg, "losses.csv", &losses)?;
    }
    let ck = Checkpoint { transform, model };
    save(&mut ck.to_container()?, cfg, &cfg.path("checkpoint", "checkpoint.spnc"))
}

fn run_training<M: ClosureModel>(m: &mut M, data: &PreparedData, tc: &TrainConfig, csv: &mut String) -> Result<()> {
    let out = train(m, data, tc)?;
    for r in &out.losses {
        writeln!(csv, "{},{},{:e},{:e}", r.epoch, r.phase.name(), r.train, r.validation)?;
    }
    if let Some(reason) = &out.aborted {
        eprintln!("warning: training stopped early: {reason}");
    }
    if let Some(best) = out.best_validation {
        println!("best validation loss {best:.4e}");
    }
    Ok(())
}

/// Condition to simulate: a dataset run or a freshly sampled one.
fn pick_condition(cfg: &RunConfig, setup: &DnsSetup) -> Result<SimulationCondition> {
    if let Some(k) = cfg.get::<usize>("condition")? {
        let ds = load_dataset(cfg)?;
        let run = ds.runs.get(k).with_context(|| format!("dataset has no run {k}"))?;
        ensure!(run.condition.u0.len() == setup.cells, "dataset resolution differs from the configuration");
        return Ok(run.condition.clone());
    }
    let cseed: u64 = cfg.require("condition_seed")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cseed);
    let periodic = match setup.bc {
        BcKind::Periodic => true,
        BcKind::InflowOutflow => false,
        BcKind::Mixed => rng.gen_bool(0.5),
    };
    Ok(sample_simulation(setup, periodic, &mut rng)?)
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let setup = cfg.dns_setup()?;
    let cond = pick_condition(cfg, &setup)?;
    let t_end = setup.t_end;
    let out = cfg.path("run", "run.spnc");
    let run = match cfg.model()? {
        None => {
            let start = Instant::now();
            let r = run_dns(&setup, &cond)?;
            RunFile {
                model: "dns".into(),
                equation: setup.equation,
                transform: None,
                domain: (setup.domain_start, setup.domain_end, setup.cells),
                condition: cond,
                trajectory: r.trajectory,
                dt: setup.dt,
                save_every: setup.save_every,
                wall_time: start.elapsed().as_secs_f64(),
            }
        }
        Some(kind) => {
            let ck = load_checkpoint(cfg)?;
            let m = ck.model.as_dyn();
            ensure!(
                m.kind() == kind,
                "checkpoint holds a {} model, configuration asks for {}",
                m.kind().name(),
                kind.name()
            );
            ensure!(
                ck.transform.input_len() == setup.cells,
                "checkpoint expects {} reference cells",
                ck.transform.input_len()
            );
            let init = SgsInit::parse(cfg.raw("s_init").unwrap_or("true"))?;
            let tc = cfg.train_config()?;
            let save_every = cfg.get_or("save_every", tc.dt)?;
            let a0 = initial_state(&ck.transform, &cond.u0, init)?;
            let ctx = coarse_context(&ck.transform, &cond)?;
            let start = Instant::now();
            let traj = rollout(m, &a0, &ctx, tc.dt, t_end, save_every)?;
            let wall_time = start.elapsed().as_secs_f64();
            if let Some(t) = traj.diverged_at {
                eprintln!("warning: simulation diverged at t = {t}");
            }
            RunFile {
                model: kind.name().into(),
                equation: setup.equation,
                domain: (setup.domain_start, setup.domain_end, setup.cells),
                transform: Some(ck.transform),
                condition: cond,
                trajectory: traj,
                dt: tc.dt,
                save_every,
                wall_time,
            }
        }
    };
    println!("{} saved states, wall time {:.3}s", run.trajectory.states.len(), run.wall_time);
    let mut c = run.to_container()?;
    c.set_meta("s_init", cfg.raw("s_init").unwrap_or("true"));
    save(&mut c, cfg, &out)
}

fn load_pair(cfg: &RunConfig) -> Result<(RunFile, RunFile)> {
    let run = load_run(&cfg.path("run", "run.spnc"))?;
    let reference = load_run(&cfg.path("reference", "reference.spnc"))?;
    ensure!(reference.model == "dns", "the reference must be a dns run");
    ensure!(run.equation == reference.equation, "run and reference solve different equations");
    ensure!(run.condition == reference.condition, "run and reference use different conditions");
    Ok((run, reference))
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let (run, reference) = load_pair(cfg)?;
    let transform = run.transform.as_ref().context("evaluate needs a coarse run")?;
    let stride = save_stride(reference.save_every, run.save_every)?;
    let coarse = coarse_reference(transform, &reference.trajectory, stride)?;
    let mass = &transform.fp.grid.coarse_mass;
    let t_end = *run.trajectory.times.last().context("empty run")?;
    let mut rep = energy_report(&run.trajectory, &coarse, mass, run.save_every, t_end.max(run.save_every))?;
    rep.wall_time_ratio = Some(run.wall_time / reference.wall_time);
    let mut csv = String::from("time,nrmse,dP,dE\n");
    for (k, t) in rep.times.iter().enumerate() {
        let e = rep.nrmse.get(k).copied().unwrap_or(f64::NAN);
        writeln!(csv, "{t},{e:e},{:e},{:e}", rep.momentum_drift[k], rep.energy_drift[k])?;
    }
    save_text(cfg, "metrics.csv", &csv)?;
    let summary = format!(
        "integrated_nrmse,{:e}\nstable,{}\nwall_time_ratio,{:e}\n",
        rep.integrated_nrmse,
        rep.stable,
        rep.wall_time_ratio.unwrap_or(f64::NAN)
    );
    save_text(cfg, "summary.csv", &summary)?;
    save_config_echo(cfg, "evaluate")?;
    println!(
        "I-NRMSE {:.4e}, stable {}, wall-time ratio {:.3e}",
        rep.integrated_nrmse,
        rep.stable,
        rep.wall_time_ratio.unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn spectrum(cfg: &RunConfig) -> Result<()> {
    let run = load_run(&cfg.path("run", "run.spnc"))?;
    let (t0, t1): (f64, f64) = (cfg.require("spectrum_t0")?, cfg.require("spectrum_t1")?);
    let (cells, h) = match &run.transform {
        Some(st) => (st.coarse_cells(), st.fp.grid.coarse_spacing),
        None => (run.domain.2, (run.domain.1 - run.domain.0) / run.domain.2 as f64),
    };
    let model = averaged_spectrum(&run.trajectory, cells, h, t0, t1)?;
    let reference = match (&run.transform, cfg.raw("reference")) {
        (Some(st), Some(_)) => {
            let (_, r) = load_pair(cfg)?;
            let filtered = coarse_reference(st, &r.trajectory, 1)?;
            Some(averaged_spectrum(&filtered, cells, h, t0, t1)?)
        }
        _ => None,
    };
    let mut csv = String::from(if reference.is_some() { "k,energy,reference\n" } else { "k,energy\n" });
    for (k, e) in model.iter().enumerate() {
        match &reference {
            Some(r) => writeln!(csv, "{k},{e:e},{:e}", r[k])?,
            None => writeln!(csv, "{k},{e:e}")?,
        }
    }
    save_text(cfg, "spectrum.csv", &csv)?;
    save_config_echo(cfg, "spectrum")
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Worst relative error of the filter identities over random grids.
pub fn verify_filter(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (i, j) = (rng.gen_range(2..40), rng.gen_range(2..16));
        let fp = FilterPair::new(GridPair::new(0.0, rng.gen_range(0.5..10.0), i, j)?);
        let g = &fp.grid;
        let (u, v) = (random_vec(&mut rng, i * j), random_vec(&mut rng, i * j));
        let (ub, vb) = (fp.filter(&u)?, fp.filter(&v)?);
        let (ru, rv) = (fp.reconstruct(&ub)?, fp.reconstruct(&vb)?);
        worst = worst.max(rel(inner_product(&ru, &rv, &g.fine_mass)?, inner_product(&ub, &vb, &g.coarse_mass)?));
        let up = fp.sgs_content(&u)?;
        let scale = inner_product(&u, &u, &g.fine_mass)?;
        worst = worst.max(inner_product(&ru, &up, &g.fine_mass)?.abs() / scale);
        let parts = inner_product(&ub, &ub, &g.coarse_mass)? + inner_product(&up, &up, &g.fine_mass)?;
        worst = worst.max(rel(scale, parts));
        let (ones_f, ones_c) = (vec![1.0; i * j], vec![1.0; i]);
        worst = worst.max(rel(inner_product(&ones_f, &u, &g.fine_mass)?, inner_product(&ones_c, &ub, &g.coarse_mass)?));
    }
    Ok(worst)
}

/// Largest `|λ₁|` and `λ₂` of the dissipation difference over a grid sweep.
pub fn verify_eigen(cells: &[usize], ratios: &[usize]) -> Result<(f64, f64)> {
    let (mut l1, mut l2) = (0.0f64, f64::NEG_INFINITY);
    for &i in cells {
        for &j in ratios {
            let e = dissipation_eigen_check(i, j)?;
            l1 = l1.max(e.lambda1().abs());
            l2 = l2.max(e.lambda2());
        }
    }
    Ok((l1, l2))
}

/// Worst skew-energy ratio, largest dissipative contribution and worst
/// momentum residual of randomly parameterized closures.
pub fn verify_conservation(cases: usize, seed: u64) -> Result<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut skew, mut diss, mut mom) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for case in 0..cases {
        let eq = if case % 2 == 0 { Equation::Burgers { nu: 0.0 } } else { Equation::kdv() };
        let i = rng.gen_range(12..30);
        let j = rng.gen_range(2..8);
        let comp = CompressionOperator::from_direction(&random_vec(&mut rng, j))?;
        let m = SpClosure::for_equation(eq, i, rng.gen_range(0.05..1.0), comp, rng.gen())?;
        let a = random_vec(&mut rng, 2 * i);
        let parts = m.parts(&a, 0.0, &BcSpec::Periodic)?;
        let h = m.op.spacing;
        let scale = dot(&a, &a).sqrt();
        skew =
            skew.max((h * dot(&a, &parts.skew)).abs() / (h * scale * dot(&parts.skew, &parts.skew).sqrt()).max(1e-300));
        if let Some(d) = &parts.dissipation {
            diss = diss.max(-h * dot(&a, d));
        }
        mom = mom.max(sp_momentum_residual(&m, &a)?.abs() / scale);
    }
    Ok((skew, diss, mom))
}

pub fn verify(cfg: &RunConfig) -> Result<()> {
    let suites: Vec<String> = cfg.raw("suites").unwrap_or("").split(',').map(|s| s.trim().to_string()).collect();
    let seed = seed(cfg)?;
    let mut failed = Vec::new();
    let mut report = |name: &str, pass: bool, detail: String| {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed.push(name.to_string());
        }
    };
    for suite in &suites {
        match suite.as_str() {
            "filter" => {
                let w = verify_filter(100, seed)?;
                report("filter", w < 1e-12, format!("max relative error {w:.2e}"));
            }
            "eigen" => {
                let (l1, l2) = verify_eigen(&[10, 20, 50, 100], &[2, 5, 10, 20])?;
                report("eigen", l1 < 1e-10 && l2 < 0.0, format!("max |λ1| {l1:.2e}, max λ2 {l2:.3e}"));
            }
            "conservation" => {
                let (s, d, m) = verify_conservation(40, seed)?;
                report(
                    "conservation",
                    s < 1e-11 && d <= 0.0 && m < 1e-12,
                    format!("skew {s:.2e}, dissipative {d:.2e}, momentum {m:.2e}"),
                );
            }
            "" => {}
            other => bail!("unknown verify suite {other:?}"),
        }
    }
    ensure!(failed.is_empty(), "verification failed: {}", failed.join(", "));
    Ok(())
}

pub fn tune(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let eq = ds.setup.equation;
    let cells = cfg.coarse_cells()?;
    let transform = load_compression(cfg, &ds, cells)?;
    let tc = TrainConfig { seed: seed(cfg)?, ..cfg.train_config()? };
    let data = prepare(&ds, &transform, tc.dt, tc.traj_steps)?;
    let rows = hyperparameter_sweep(
        eq,
        cells,
        transform.fp.grid.coarse_spacing,
        transform.comp.as_ref().expect("compression transform"),
        &data,
        &tc,
        &cfg.list("sweep_layers")?,
        &cfg.list("sweep_channels")?,
    )?;
    let mut csv = String::from("layers,channels,val_nrmse\n");
    for r in &rows {
        writeln!(csv, "{},{},{:e}", r.hidden_layers, r.channels, r.val_nrmse)?;
    }
    save_text(cfg, "sweep.csv", &csv)?;
    save_config_echo(cfg, "tune")
}
