use criterion::{black_box, criterion_group, criterion_main, Criterion};
use spclosure_core::pde::{full_rhs, rk4_step};
use spclosure_core::training::{loss_and_grad, Phase, Sample};
use spclosure_core::*;

fn wave(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let x = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64;
            x.sin() + 0.3 * (3.0 * x).cos()
        })
        .collect()
}

fn sp_model(eq: Equation, cells: usize, ratio: usize) -> SpClosure {
    let direction: Vec<f64> = (0..ratio).map(|j| (j as f64 - 0.5 * ratio as f64).sin()).collect();
    let comp = CompressionOperator::from_direction(&direction).unwrap();
    SpClosure::for_equation(eq, cells, 1.0 / cells as f64, comp, 7).unwrap()
}

fn dns_step(c: &mut Criterion) {
    for (eq, n, dt) in [(Equation::burgers(), 1000, 2.5e-3), (Equation::kdv(), 600, 1e-4)] {
        let cfg = PdeConfig { equation: eq, forcing: None };
        let u = wave(n);
        let h = 1.0 / n as f64;
        c.bench_function(&format!("dns_rk4_step/{}/{n}", eq.name()), |b| {
            b.iter(|| rk4_step(|v, t| full_rhs(&cfg, v, h, &BcSpec::Periodic, t), black_box(&u), 0.0, dt).unwrap())
        });
    }
}

fn sp_rhs(c: &mut Criterion) {
    for (eq, cells, ratio) in [(Equation::burgers(), 30, 34), (Equation::kdv(), 20, 30)] {
        let m = sp_model(eq, cells, ratio);
        let a = wave(2 * cells);
        let ctx = CoarseContext::periodic();
        c.bench_function(&format!("sp_rhs/{}/{cells}", eq.name()), |b| {
            b.iter(|| m.rhs(black_box(&a), 0.0, &ctx).unwrap())
        });
    }
}

fn sp_gradient(c: &mut Criterion) {
    let cells = 30;
    let m = sp_model(Equation::burgers(), cells, 34);
    let contexts = vec![CoarseContext::periodic()];
    let samples: Vec<Sample> = (0..20)
        .map(|k| {
            let state: Vec<f64> = wave(2 * cells).iter().map(|v| v * (1.0 + 0.01 * k as f64)).collect();
            Sample {
                context: 0,
                time: 0.0,
                derivative: state.iter().map(|v| -v).collect(),
                targets: vec![state.clone(); 5],
                state,
            }
        })
        .collect();
    let batch: Vec<&Sample> = samples.iter().collect();
    c.bench_function("sp_gradient/derivative/batch20", |b| {
        b.iter(|| loss_and_grad(&m, black_box(&batch), &contexts, Phase::Derivative, 1, 0.01, true).unwrap())
    });
    c.bench_function("sp_gradient/trajectory5/batch20", |b| {
        b.iter(|| loss_and_grad(&m, black_box(&batch), &contexts, Phase::Trajectory, 5, 0.01, true).unwrap())
    });
}

criterion_group!(benches, dns_step, sp_rhs, sp_gradient);
criterion_main!(benches);
