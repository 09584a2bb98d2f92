//! Coarse-grid closure models.
//!
//! Every model records its right-hand side on a [`Tape`] in valid mode: the
//! state is padded once with ghost cells deep enough for the whole nonlinear
//! stencil, and each operator consumes its own halo. Under periodic
//! boundaries the gathers are index wraps, so the learned operators are exact
//! circulants and the energy/momentum identities hold to rounding.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{GatherMap, ParamLayout, ParameterSet, Tape, Var};
use crate::boundary::{BcSpec, FieldKind, PadPlan};
use crate::compression::CompressionOperator;
use crate::error::{check_len, Error, Result};
use crate::nn::Architecture;
use crate::pde::{full_rhs, Equation, PdeConfig, CONVECTION_SCALE};

/// Boundary data shared by all coarse models during a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoarseContext {
    pub bc: BcSpec,
    /// Steady forcing already mapped to the model state (`T F` or `W F`).
    pub forcing: Option<Vec<f64>>,
}

impl CoarseContext {
    pub fn periodic() -> Self {
        Self::default()
    }
}

/// Coarse discretization `f_H` of the equation (without forcing).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseOperator {
    pub equation: Equation,
    pub spacing: f64,
}

impl CoarseOperator {
    pub fn radius(&self) -> usize {
        self.equation.stencil_radius()
    }

    /// `f_H` on a padded vector; consumes `radius()` cells per side.
    pub fn valid_on_tape(&self, tape: &mut Tape, ext: Var) -> Result<Var> {
        let h = self.spacing;
        match self.equation {
            Equation::Burgers { nu } => {
                let conv = tape.convection(ext, h)?;
                let conv = tape.scale(conv, CONVECTION_SCALE);
                let c = nu / (h * h);
                let diff = tape.stencil(ext, vec![c, -2.0 * c, c])?;
                tape.add(conv, diff)
            }
            Equation::Kdv { epsilon, mu } => {
                let n = tape.len_of(ext);
                let inner = tape.slice(ext, 1..n - 1)?;
                let conv = tape.convection(inner, h)?;
                let conv = tape.scale(conv, CONVECTION_SCALE * epsilon);
                let c = -mu / (2.0 * h * h * h);
                let disp = tape.stencil(ext, vec![-c, 2.0 * c, 0.0, -2.0 * c, c])?;
                tape.add(conv, disp)
            }
        }
    }

    pub fn apply(&self, ubar: &[f64], bc: &BcSpec, t: f64) -> Result<Vec<f64>> {
        full_rhs(&PdeConfig::new(self.equation), ubar, self.spacing, bc, t)
    }
}

fn pad_on_tape(tape: &mut Tape, x: Var, plan: &PadPlan) -> Result<Var> {
    tape.gather(x, Rc::new(GatherMap::from(plan)))
}

/// Keep the central `len + 2·keep` entries of each of `channels` channels
/// currently padded by `halo` per side.
fn crop(tape: &mut Tape, x: Var, channels: usize, halo: usize, keep: usize) -> Result<Var> {
    let total = tape.len_of(x) / channels;
    if keep == halo {
        return Ok(x);
    }
    let len = total - 2 * halo;
    let parts = (0..channels)
        .map(|c| {
            let start = c * total + halo - keep;
            tape.slice(x, start..start + len + 2 * keep)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(if parts.len() == 1 { parts[0] } else { tape.concat(&parts) })
}

fn add_forcing(tape: &mut Tape, rhs: Var, ctx: &CoarseContext) -> Result<Var> {
    match &ctx.forcing {
        Some(f) => tape.add_const(rhs, f.clone()),
        None => Ok(rhs),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    NoClosure,
    Smagorinsky,
    VanillaCnn,
    StructurePreserving,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::NoClosure => "nc",
            ModelKind::Smagorinsky => "smagorinsky",
            ModelKind::VanillaCnn => "cnn",
            ModelKind::StructurePreserving => "sp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nc" => Ok(ModelKind::NoClosure),
            "smagorinsky" | "smag" => Ok(ModelKind::Smagorinsky),
            "cnn" => Ok(ModelKind::VanillaCnn),
            "sp" => Ok(ModelKind::StructurePreserving),
            _ => Err(Error::InvalidArgument(format!("unknown model {s:?}"))),
        }
    }
}

/// Common interface of the coarse models.
pub trait ClosureModel {
    fn kind(&self) -> ModelKind;
    fn operator(&self) -> CoarseOperator;
    fn coarse_cells(&self) -> usize;
    fn params(&self) -> &ParameterSet;
    fn params_mut(&mut self) -> &mut ParameterSet;

    /// Length of the model state (`2I` with SGS variables, `I` otherwise).
    fn state_len(&self) -> usize {
        self.coarse_cells()
    }

    /// Record the right-hand side for `state` at time `t`.
    fn rhs_on_tape(&self, tape: &mut Tape, theta: Var, state: Var, t: f64, ctx: &CoarseContext) -> Result<Var>;

    fn rhs(&self, state: &[f64], t: f64, ctx: &CoarseContext) -> Result<Vec<f64>> {
        check_len(self.state_len(), state.len())?;
        let mut tape = Tape::new();
        let theta = tape.leaf(self.params().values.clone());
        let s = tape.leaf(state.to_vec());
        let out = self.rhs_on_tape(&mut tape, theta, s, t, ctx)?;
        let v = tape.value(out).to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: "closure rhs" });
        }
        Ok(v)
    }
}

/// Plain coarse discretization without closure.
#[derive(Debug, Clone, PartialEq)]
pub struct NoClosure {
    pub op: CoarseOperator,
    pub cells: usize,
    pub params: ParameterSet,
}

impl NoClosure {
    pub fn new(equation: Equation, cells: usize, spacing: f64) -> Self {
        Self { op: CoarseOperator { equation, spacing }, cells, params: ParameterSet::zeros(ParamLayout::default()) }
    }
}

impl ClosureModel for NoClosure {
    fn kind(&self) -> ModelKind {
        ModelKind::NoClosure
    }
    fn operator(&self) -> CoarseOperator {
        self.op
    }
    fn coarse_cells(&self) -> usize {
        self.cells
    }
    fn params(&self) -> &ParameterSet {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    fn rhs_on_tape(&self, tape: &mut Tape, _theta: Var, state: Var, t: f64, ctx: &CoarseContext) -> Result<Var> {
        check_len(self.cells, tape.len_of(state))?;
        let plan = PadPlan::new(&ctx.bc, FieldKind::Velocity, t, self.cells, self.op.radius())?;
        let ext = pad_on_tape(tape, state, &plan)?;
        let f = self.op.valid_on_tape(tape, ext)?;
        add_forcing(tape, f, ctx)
    }
}

/// Eddy-viscosity model `−Q̄ᵀ diag((H C_s)² |Q̄ū|) Q̄ ū`.
#[derive(Debug, Clone, PartialEq)]
pub struct Smagorinsky {
    pub op: CoarseOperator,
    pub cells: usize,
    /// Single parameter `C_s`.
    pub params: ParameterSet,
}

impl Smagorinsky {
    pub fn new(equation: Equation, cells: usize, spacing: f64, cs: f64) -> Result<Self> {
        if !(cs >= 0.0) {
            return Err(Error::InvalidArgument(format!("C_s must be non-negative, got {cs}")));
        }
        let mut layout = ParamLayout::default();
        layout.push("cs", vec![1]);
        Ok(Self { op: CoarseOperator { equation, spacing }, cells, params: ParameterSet { values: vec![cs], layout } })
    }

    pub fn cs(&self) -> f64 {
        self.params.values[0]
    }

    /// Face viscosities `ν_{i+½}` for `i = 0..I` on a periodic grid.
    pub fn eddy_viscosity(&self, ubar: &[f64]) -> Vec<f64> {
        let n = ubar.len();
        let h = self.op.spacing;
        let c = (h * self.cs()).powi(2);
        (0..n).map(|i| c * ((ubar[(i + 1) % n] - ubar[i]) / h).abs()).collect()
    }
}

impl ClosureModel for Smagorinsky {
    fn kind(&self) -> ModelKind {
        ModelKind::Smagorinsky
    }
    fn operator(&self) -> CoarseOperator {
        self.op
    }
    fn coarse_cells(&self) -> usize {
        self.cells
    }
    fn params(&self) -> &ParameterSet {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    fn rhs_on_tape(&self, tape: &mut Tape, theta: Var, state: Var, t: f64, ctx: &CoarseContext) -> Result<Var> {
        let n = self.cells;
        check_len(n, tape.len_of(state))?;
        let r = self.op.radius();
        let depth = r.max(1);
        let plan = PadPlan::new(&ctx.bc, FieldKind::Velocity, t, n, depth)?;
        let ext = pad_on_tape(tape, state, &plan)?;
        let core = crop(tape, ext, 1, depth, r)?;
        let f = self.op.valid_on_tape(tape, core)?;

        let h = self.op.spacing;
        // faces −½ … I−½ + 1: forward differences of the one-cell halo
        let halo1 = crop(tape, ext, 1, depth, 1)?;
        let grad = tape.stencil(halo1, vec![-1.0 / h, 1.0 / h])?;
        let mag = tape.abs(grad);
        let cs = tape.gather(theta, Rc::new(GatherMap::select(1, vec![0; n + 1])))?;
        let cs2 = tape.square(cs);
        let nu = tape.mul(cs2, mag)?;
        let nu = tape.scale(nu, h * h);
        let flux = tape.mul(nu, grad)?;
        let closure = tape.stencil(flux, vec![-1.0 / h, 1.0 / h])?;
        let out = tape.add(f, closure)?;
        add_forcing(tape, out, ctx)
    }
}

/// `f_H(ū) + Q̄ · CNN(ū, f_H(ū))`.
#[derive(Debug, Clone, PartialEq)]
pub struct VanillaCnn {
    pub op: CoarseOperator,
    pub cells: usize,
    pub arch: Architecture,
    pub params: ParameterSet,
}

impl VanillaCnn {
    pub fn new(equation: Equation, cells: usize, spacing: f64, arch: Architecture, seed: u64) -> Result<Self> {
        if arch.inputs() != 2 || arch.outputs() != 1 {
            return Err(Error::InvalidArgument("the vanilla closure maps 2 channels to 1".into()));
        }
        let layout = arch.layout("cnn.");
        let mut params = ParameterSet::zeros(layout);
        arch.init_glorot_into(&mut params.values, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self { op: CoarseOperator { equation, spacing }, cells, arch, params })
    }

    /// Reference architecture: two hidden layers of 20 channels, kernel 7.
    pub fn default_architecture() -> Architecture {
        Architecture::uniform(2, 2, 20, 1, 7).expect("valid architecture")
    }

    fn halo(&self) -> usize {
        self.arch.receptive_radius() + self.op.radius() + 1
    }
}

impl ClosureModel for VanillaCnn {
    fn kind(&self) -> ModelKind {
        ModelKind::VanillaCnn
    }
    fn operator(&self) -> CoarseOperator {
        self.op
    }
    fn coarse_cells(&self) -> usize {
        self.cells
    }
    fn params(&self) -> &ParameterSet {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    fn rhs_on_tape(&self, tape: &mut Tape, theta: Var, state: Var, t: f64, ctx: &CoarseContext) -> Result<Var> {
        let n = self.cells;
        check_len(n, tape.len_of(state))?;
        let p = self.halo();
        let r = self.op.radius();
        let plan = PadPlan::new(&ctx.bc, FieldKind::Velocity, t, n, p)?;
        let ext = pad_on_tape(tape, state, &plan)?;
        let f_ext = self.op.valid_on_tape(tape, ext)?;
        let u_c = crop(tape, ext, 1, p, p - r)?;
        let input = tape.concat(&[u_c, f_ext]);
        let out = self.arch.forward_tape(tape, theta, 0, input)?;
        // `out` covers cells −1 … I; Q̄v at cell i is (v_{i+1} − v_i)/H
        let h = self.op.spacing;
        let q = tape.stencil(out, vec![-1.0 / h, 1.0 / h])?;
        let closure = tape.slice(q, 1..n + 1)?;
        let f = crop(tape, f_ext, 1, p - r, 0)?;
        let rhs = tape.add(f, closure)?;
        add_forcing(tape, rhs, ctx)
    }
}

/// Weight-transposition map for a 2×2-channel stencil with `k` taps:
/// `Wᵀ[o][c][j] = W[c][o][k−1−j]`.
fn transpose_map(k: usize) -> GatherMap {
    let mut index = Vec::with_capacity(4 * k);
    for o in 0..2 {
        for c in 0..2 {
            for j in 0..k {
                index.push((c * 2 + o) * k + (k - 1 - j));
            }
        }
    }
    GatherMap::select(4 * k, index)
}

/// Zero-sum projection `b̄ = b − mean(b)` of a stencil.
pub fn constrained_weights(b: &[f64]) -> Vec<f64> {
    let mean = b.iter().sum::<f64>() / b.len() as f64;
    b.iter().map(|v| v - mean).collect()
}

/// Periodic convolution `(b̄ ∗ f)_i = Σ_j b̄_j f_{i+j−B}`.
pub fn constrained_stencil_apply(b: &[f64], f: &[f64], constrained: bool) -> Result<Vec<f64>> {
    if b.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("stencil length must be odd, got {}", b.len())));
    }
    let w = if constrained { constrained_weights(b) } else { b.to_vec() };
    let half = b.len() / 2;
    let ext = crate::boundary::periodic_pad(f, half)?;
    Ok(ext.windows(w.len()).map(|win| win.iter().zip(&w).map(|(a, c)| a * c).sum()).collect())
}

/// Intermediate fields of one structure-preserving evaluation.
#[derive(Debug, Clone, Copy)]
pub struct SpVars {
    /// `f_H(ū)` on the interior.
    pub f_h: Var,
    /// `Ω₂⁻¹(𝓑₂ᵀ k 𝓑₃ − 𝓑₃ᵀ k 𝓑₂) a`
    pub skew: Var,
    /// `Ω₂⁻¹ 𝓑₁ᵀ q² 𝓑₁ a` (subtracted in the right-hand side).
    pub dissipation: Option<Var>,
    /// `q ⊙ 𝓑₁ a` on the interior, whose squared norm is the dissipation rate.
    pub q_b1: Option<Var>,
}

/// Energy- and momentum-conserving closure on the extended state `[ū; s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpClosure {
    pub op: CoarseOperator,
    pub cells: usize,
    pub arch: Architecture,
    /// Stencil half-width `B` of the 𝓑 operators.
    pub half_width: usize,
    pub include_dissipation: bool,
    pub compression: CompressionOperator,
    /// Mean-subtract the 𝓑¹¹, 𝓑²¹ stencils (switching this off breaks momentum conservation).
    pub zero_sum_constraint: bool,
    pub params: ParameterSet,
}

impl SpClosure {
    /// Burgers: CNN (ū, s, f_H) → (q₁, q₂, k₁, k₂), `B = 1`; KdV: → (k₁, k₂), `B = 2`.
    pub fn default_architecture(equation: Equation) -> Architecture {
        match equation {
            Equation::Burgers { .. } => Architecture::uniform(3, 2, 20, 4, 5),
            Equation::Kdv { .. } => Architecture::uniform(3, 2, 30, 2, 5),
        }
        .expect("valid architecture")
    }

    pub fn default_half_width(equation: Equation) -> usize {
        match equation {
            Equation::Burgers { .. } => 1,
            Equation::Kdv { .. } => 2,
        }
    }

    pub fn new(
        equation: Equation,
        cells: usize,
        spacing: f64,
        arch: Architecture,
        half_width: usize,
        include_dissipation: bool,
        compression: CompressionOperator,
        seed: u64,
    ) -> Result<Self> {
        let expected_out = if include_dissipation { 4 } else { 2 };
        if arch.inputs() != 3 || arch.outputs() != expected_out {
            return Err(Error::InvalidArgument(format!(
                "structure-preserving CNN must map 3 channels to {expected_out}"
            )));
        }
        if half_width == 0 {
            return Err(Error::InvalidArgument("stencil half-width must be positive".into()));
        }
        let layout = Self::build_layout(&arch, half_width, include_dissipation);
        let mut params = ParameterSet::zeros(layout);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_cnn = arch.param_count();
        arch.init_glorot_into(&mut params.values[..n_cnn], &mut rng)?;
        let stencils = Architecture::new(vec![2, 2], 2 * half_width + 1)?;
        for chunk in params.values[n_cnn..].chunks_mut(4 * (2 * half_width + 1)) {
            let mut tmp = vec![0.0; stencils.param_count()];
            stencils.init_glorot_into(&mut tmp, &mut rng)?;
            chunk.copy_from_slice(&tmp[..chunk.len()]);
        }
        Ok(Self {
            op: CoarseOperator { equation, spacing },
            cells,
            arch,
            half_width,
            include_dissipation,
            compression,
            zero_sum_constraint: true,
            params,
        })
    }

    /// Reference configuration for an equation.
    pub fn for_equation(
        equation: Equation,
        cells: usize,
        spacing: f64,
        compression: CompressionOperator,
        seed: u64,
    ) -> Result<Self> {
        let dissipative = matches!(equation, Equation::Burgers { .. });
        Self::new(
            equation,
            cells,
            spacing,
            Self::default_architecture(equation),
            Self::default_half_width(equation),
            dissipative,
            compression,
            seed,
        )
    }

    fn build_layout(arch: &Architecture, half_width: usize, dissipation: bool) -> ParamLayout {
        let mut layout = arch.layout("cnn.");
        let k = 2 * half_width + 1;
        if dissipation {
            layout.push("b1", vec![2, 2, k]);
        }
        layout.push("b2", vec![2, 2, k]);
        layout.push("b3", vec![2, 2, k]);
        layout
    }

    /// Ghost depth needed by one evaluation.
    pub fn halo(&self) -> usize {
        let b = self.half_width;
        (b + self.arch.receptive_radius() + self.op.radius()).max(2 * b)
    }

    pub fn rho(&self) -> f64 {
        self.compression.rho()
    }

    fn stencil_weights(&self, tape: &mut Tape, theta: Var, name: &str) -> Result<(Var, Var)> {
        let k = 2 * self.half_width + 1;
        let range = self
            .params
            .layout
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter block {name}")))?
            .range
            .clone();
        let raw = tape.slice(theta, range)?;
        let w = if self.zero_sum_constraint { tape.center(raw, k, vec![true, false, true, false])? } else { raw };
        let wt = tape.gather(w, Rc::new(transpose_map(k)))?;
        Ok((w, wt))
    }

    /// Record all parts of the right-hand side.
    pub fn record(&self, tape: &mut Tape, theta: Var, state: Var, t: f64, bc: &BcSpec) -> Result<SpVars> {
        let n = self.cells;
        check_len(2 * n, tape.len_of(state))?;
        let p = self.halo();
        let r = self.op.radius();
        let b = self.half_width;
        let k = 2 * b + 1;
        let h = self.op.spacing;

        let ubar = tape.slice(state, 0..n)?;
        let s = tape.slice(state, n..2 * n)?;
        let u_ext = pad_on_tape(tape, ubar, &PadPlan::new(bc, FieldKind::Velocity, t, n, p)?)?;
        let s_ext = pad_on_tape(tape, s, &PadPlan::new(bc, FieldKind::Sgs { rho: self.rho() }, t, n, p)?)?;

        let f_ext = self.op.valid_on_tape(tape, u_ext)?;
        let u_c = crop(tape, u_ext, 1, p, p - r)?;
        let s_c = crop(tape, s_ext, 1, p, p - r)?;
        let input = tape.concat(&[u_c, s_c, f_ext]);
        let out = self.arch.forward_tape(tape, theta, 0, input)?;
        let out_halo = p - r - self.arch.receptive_radius();
        let fields = crop(tape, out, self.arch.outputs(), out_halo, b)?;
        let field_len = n + 2 * b;
        let (q, kf) = if self.include_dissipation {
            (Some(tape.slice(fields, 0..2 * field_len)?), tape.slice(fields, 2 * field_len..4 * field_len)?)
        } else {
            (None, fields)
        };

        let u2 = crop(tape, u_ext, 1, p, 2 * b)?;
        let s2 = crop(tape, s_ext, 1, p, 2 * b)?;
        let a_ext = tape.concat(&[u2, s2]);

        let (w2, w2t) = self.stencil_weights(tape, theta, "b2")?;
        let (w3, w3t) = self.stencil_weights(tape, theta, "b3")?;
        let y2 = tape.conv(a_ext, w2, None, 2, 2, k)?;
        let y3 = tape.conv(a_ext, w3, None, 2, 2, k)?;
        let ky3 = tape.mul(kf, y3)?;
        let ky2 = tape.mul(kf, y2)?;
        let left = tape.conv(ky3, w2t, None, 2, 2, k)?;
        let right = tape.conv(ky2, w3t, None, 2, 2, k)?;
        let skew = tape.sub(left, right)?;
        let skew = tape.scale(skew, 1.0 / h);

        let (dissipation, q_b1) = match q {
            Some(q) => {
                let (w1, w1t) = self.stencil_weights(tape, theta, "b1")?;
                let y1 = tape.conv(a_ext, w1, None, 2, 2, k)?;
                let qy = tape.mul(q, y1)?;
                let qqy = tape.mul(q, qy)?;
                let d = tape.conv(qqy, w1t, None, 2, 2, k)?;
                let interior = crop(tape, qy, 2, b, 0)?;
                (Some(tape.scale(d, 1.0 / h)), Some(interior))
            }
            None => (None, None),
        };
        let f_h = crop(tape, f_ext, 1, p - r, 0)?;
        Ok(SpVars { f_h, skew, dissipation, q_b1 })
    }

    /// Closure part of the right-hand side (everything except `[f_H; 0]` and forcing).
    pub fn closure_term(&self, state: &[f64], t: f64, bc: &BcSpec) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let theta = tape.leaf(self.params.values.clone());
        let s = tape.leaf(state.to_vec());
        let v = self.record(&mut tape, theta, s, t, bc)?;
        let mut c = tape.value(v.skew).to_vec();
        if let Some(d) = v.dissipation {
            c.iter_mut().zip(tape.value(d)).for_each(|(x, y)| *x -= y);
        }
        Ok(c)
    }

    /// Skew and dissipative parts plus `‖𝒬a‖²`.
    pub fn parts(&self, state: &[f64], t: f64, bc: &BcSpec) -> Result<SpParts> {
        let mut tape = Tape::new();
        let theta = tape.leaf(self.params.values.clone());
        let s = tape.leaf(state.to_vec());
        let v = self.record(&mut tape, theta, s, t, bc)?;
        Ok(SpParts {
            f_h: tape.value(v.f_h).to_vec(),
            skew: tape.value(v.skew).to_vec(),
            dissipation: v.dissipation.map(|d| tape.value(d).to_vec()),
            dissipation_rate: v.q_b1.map(|q| tape.value(q).iter().map(|x| x * x).sum()).unwrap_or(0.0),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpParts {
    pub f_h: Vec<f64>,
    pub skew: Vec<f64>,
    pub dissipation: Option<Vec<f64>>,
    pub dissipation_rate: f64,
}

impl ClosureModel for SpClosure {
    fn kind(&self) -> ModelKind {
        ModelKind::StructurePreserving
    }
    fn operator(&self) -> CoarseOperator {
        self.op
    }
    fn coarse_cells(&self) -> usize {
        self.cells
    }
    fn state_len(&self) -> usize {
        2 * self.cells
    }
    fn params(&self) -> &ParameterSet {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    fn rhs_on_tape(&self, tape: &mut Tape, theta: Var, state: Var, t: f64, ctx: &CoarseContext) -> Result<Var> {
        let v = self.record(tape, theta, state, t, &ctx.bc)?;
        let zeros = tape.leaf(vec![0.0; self.cells]);
        let base = tape.concat(&[v.f_h, zeros]);
        let mut rhs = tape.add(base, v.skew)?;
        if let Some(d) = v.dissipation {
            rhs = tape.sub(rhs, d)?;
        }
        add_forcing(tape, rhs, ctx)
    }
}

/// Momentum `(1_Ω, 0)ᵀ Ω₂ c` of the closure part `c` of the right-hand side.
pub fn sp_momentum_residual(model: &SpClosure, state: &[f64]) -> Result<f64> {
    let c = model.closure_term(state, 0.0, &BcSpec::Periodic)?;
    Ok(model.op.spacing * c[..model.cells].iter().sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::Inflow;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    fn rv(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn comp(j: usize, rng: &mut ChaCha8Rng) -> CompressionOperator {
        CompressionOperator::from_direction(&rv(rng, j, 1.0)).unwrap()
    }

    fn burgers_sp(seed: u64, nu: f64, cells: usize) -> SpClosure {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = SpClosure::for_equation(Equation::Burgers { nu }, cells, 0.2, comp(5, &mut rng), seed).unwrap();
        // O(1) closure fields
        m.params.values.iter_mut().for_each(|v| *v += 0.05 * rng.gen_range(-1.0..1.0));
        m
    }

    fn kdv_sp(seed: u64, cells: usize) -> SpClosure {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SpClosure::for_equation(Equation::kdv(), cells, 0.8, comp(4, &mut rng), seed).unwrap()
    }

    #[test]
    fn reference_parameter_counts() {
        assert_eq!(burgers_sp(1, 0.01, 20).params.len(), 2780);
        assert_eq!(kdv_sp(1, 20).params.len(), 5352);
        let v = VanillaCnn::new(Equation::burgers(), 20, 0.3, VanillaCnn::default_architecture(), 1).unwrap();
        assert_eq!(v.params.len(), 3261);
    }

    #[test]
    fn constrained_stencil_examples() {
        assert_eq!(constrained_weights(&[1.0, 2.0, 3.0]), vec![-1.0, 0.0, 1.0]);
        let out = constrained_stencil_apply(&[1.0, 2.0, 3.0], &[0.7; 6], true).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-15));
        assert!(constrained_stencil_apply(&[1.0, 2.0], &[0.7; 6], true).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = rv(&mut rng, 5, 1.0);
        let f = rv(&mut rng, 9, 1.0);
        for constrained in [true, false] {
            let w = if constrained { constrained_weights(&b) } else { b.clone() };
            let circ =
                DMatrix::from_fn(9, 9, |i, j| (0..5).filter(|&m| (i + 9 + m - 2) % 9 == j).map(|m| w[m]).sum::<f64>());
            let dense = circ * DVector::from_vec(f.clone());
            let fast = constrained_stencil_apply(&b, &f, constrained).unwrap();
            for (x, y) in fast.iter().zip(dense.iter()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_cnn_output_leaves_coarse_rhs() {
        let mut m = burgers_sp(3, 0.01, 12);
        let n_cnn = m.arch.param_count();
        let last = m.params.layout.get("cnn.conv2.weight").unwrap().range.start;
        m.params.values[last..n_cnn].iter_mut().for_each(|v| *v = 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rv(&mut rng, 24, 1.0);
        let rhs = m.rhs(&a, 0.0, &CoarseContext::periodic()).unwrap();
        let f = m.op.apply(&a[..12], &BcSpec::Periodic, 0.0).unwrap();
        for i in 0..12 {
            assert!((rhs[i] - f[i]).abs() < 1e-12);
            assert_eq!(rhs[12 + i], 0.0);
        }
    }

    #[test]
    fn skew_part_carries_no_energy() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            for m in [kdv_sp(seed, 16), burgers_sp(seed, 0.0, 16)] {
                let a = rv(&mut rng, 32, 1.0);
                let parts = m.parts(&a, 0.0, &BcSpec::Periodic).unwrap();
                let h = m.op.spacing;
                let e = h * dot(&a, &parts.skew);
                let scale = h * dot(&a, &a).sqrt() * dot(&parts.skew, &parts.skew).sqrt();
                assert!(e.abs() <= 1e-12 * scale, "relative {}", e / scale);
            }
        }
    }

    #[test]
    fn energy_law_and_dissipation() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let m = burgers_sp(seed, 0.0, 16);
            let a = rv(&mut rng, 32, 1.0);
            let rhs = m.rhs(&a, 0.0, &CoarseContext::periodic()).unwrap();
            let h = m.op.spacing;
            let lhs = h * dot(&a, &rhs);
            let parts = m.parts(&a, 0.0, &BcSpec::Periodic).unwrap();
            let law = h * dot(&a[..16], &parts.f_h) - parts.dissipation_rate;
            assert!((lhs - law).abs() <= 1e-11 * (lhs.abs() + parts.dissipation_rate));
            assert!(lhs <= 1e-12 * parts.dissipation_rate);
            let d = parts.dissipation.unwrap();
            assert!((h * dot(&a, &d) - parts.dissipation_rate).abs() <= 1e-11 * parts.dissipation_rate);
        }
    }

    #[test]
    fn momentum_is_conserved_only_with_the_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = burgers_sp(7, 0.01, 16);
        let a = rv(&mut rng, 32, 1.0);
        let norm = dot(&a, &a).sqrt();
        assert!(sp_momentum_residual(&m, &a).unwrap().abs() < 1e-12 * norm);
        assert_eq!(sp_momentum_residual(&m, &vec![0.0; 32]).unwrap(), 0.0);
        let k = kdv_sp(7, 16);
        assert!(sp_momentum_residual(&k, &a).unwrap().abs() < 1e-12 * norm);
        m.zero_sum_constraint = false;
        assert!(sp_momentum_residual(&m, &a).unwrap().abs() > 1e-6 * norm);
    }

    #[test]
    fn closures_are_translation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 14;
        let shift = |v: &[f64], blocks: usize| -> Vec<f64> {
            v.chunks(v.len() / blocks).flat_map(|c| (0..c.len()).map(move |i| c[(i + c.len() - 3) % c.len()])).collect()
        };
        let ctx = CoarseContext::periodic();
        let sp = burgers_sp(8, 0.01, n);
        let a = rv(&mut rng, 2 * n, 1.0);
        assert_eq!(sp.rhs(&shift(&a, 2), 0.0, &ctx).unwrap(), shift(&sp.rhs(&a, 0.0, &ctx).unwrap(), 2));
        let cnn = VanillaCnn::new(Equation::burgers(), n, 0.3, VanillaCnn::default_architecture(), 2).unwrap();
        let u = rv(&mut rng, n, 1.0);
        assert_eq!(cnn.rhs(&shift(&u, 1), 0.0, &ctx).unwrap(), shift(&cnn.rhs(&u, 0.0, &ctx).unwrap(), 1));
        let smag = Smagorinsky::new(Equation::burgers(), n, 0.3, 0.4).unwrap();
        assert_eq!(smag.rhs(&shift(&u, 1), 0.0, &ctx).unwrap(), shift(&smag.rhs(&u, 0.0, &ctx).unwrap(), 1));
    }

    #[test]
    fn sp_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let arch = Architecture::uniform(3, 1, 1, 4, 3).unwrap();
        let m = SpClosure::new(Equation::burgers(), 4, 0.5, arch, 1, true, comp(2, &mut rng), 9).unwrap();
        let a = rv(&mut rng, 8, 1.0);
        let mut tape = Tape::new();
        let theta = tape.leaf(m.params.values.iter().map(|v| v + 0.2).collect());
        let state = tape.leaf(a);
        let ctx = CoarseContext::periodic();
        let rhs = m.rhs_on_tape(&mut tape, theta, state, 0.0, &ctx).unwrap();
        let loss = tape.sum_squares(rhs);
        crate::autodiff::tests::fd_check(&mut tape, theta, loss, 1e-6, 1e-5);
        crate::autodiff::tests::fd_check(&mut tape, state, loss, 1e-6, 1e-5);
    }

    #[test]
    fn inflow_outflow_evaluation_is_finite_and_uses_ghosts() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = burgers_sp(10, 0.01, 12);
        let a = rv(&mut rng, 24, 1.0);
        let ctx = |v: f64| CoarseContext { bc: BcSpec::InflowOutflow { inflow: Inflow::Constant(v) }, forcing: None };
        let r0 = m.rhs(&a, 0.0, &ctx(0.0)).unwrap();
        let r1 = m.rhs(&a, 0.0, &ctx(1.0)).unwrap();
        assert!(r0.iter().all(|v| v.is_finite()));
        assert_ne!(r0[0], r1[0]);
        // inflow only influences cells within the ghost reach
        assert!((r0[11] - r1[11]).abs() < 1e-14);
    }

    #[test]
    fn vanilla_closure_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 15;
        let h = 0.3;
        let mut m = VanillaCnn::new(Equation::burgers(), n, h, VanillaCnn::default_architecture(), 3).unwrap();
        let u = rv(&mut rng, n, 1.0);
        let ctx = CoarseContext::periodic();
        let f = m.op.apply(&u, &BcSpec::Periodic, 0.0).unwrap();
        let rhs = m.rhs(&u, 0.0, &ctx).unwrap();
        let closure: Vec<f64> = rhs.iter().zip(&f).map(|(a, b)| a - b).collect();
        assert!((h * closure.iter().sum::<f64>()).abs() < 1e-12);

        // dense oracle: Q̄ applied to the circular CNN output
        let net = crate::nn::ConvNet {
            arch: m.arch.clone(),
            params: ParameterSet { values: m.params.values.clone(), layout: m.arch.layout("") },
        };
        let mut input = u.clone();
        input.extend(&f);
        let v = net.forward(&input, crate::nn::Padding::Circular).unwrap();
        let q = DMatrix::from_fn(n, n, |i, j| {
            if j == (i + 1) % n {
                1.0 / h
            } else if j == i {
                -1.0 / h
            } else {
                0.0
            }
        });
        let dense = q * DVector::from_vec(v);
        for (a, b) in closure.iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-12);
        }

        m.params.values.iter_mut().for_each(|p| *p = 0.0);
        for (a, b) in m.rhs(&u, 0.0, &ctx).unwrap().iter().zip(&f) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn smagorinsky_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 20;
        let h = 0.3;
        let ctx = CoarseContext::periodic();
        let m = Smagorinsky::new(Equation::burgers(), n, h, 0.7).unwrap();
        let nc = NoClosure::new(Equation::burgers(), n, h);
        let c = vec![1.3; n];
        let r = m.rhs(&c, 0.0, &ctx).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-14));
        assert!(m.eddy_viscosity(&c).iter().all(|&v| v == 0.0));
        for _ in 0..10 {
            let u = rv(&mut rng, n, 1.0);
            let closure: Vec<f64> =
                m.rhs(&u, 0.0, &ctx).unwrap().iter().zip(nc.rhs(&u, 0.0, &ctx).unwrap()).map(|(a, b)| a - b).collect();
            assert!(h * dot(&u, &closure) <= 1e-14);
            // flux-difference oracle
            let nu = m.eddy_viscosity(&u);
            for i in 0..n {
                let w = |k: usize| nu[k] * (u[(k + 1) % n] - u[k]) / h;
                let expected = (w(i) - w((i + n - 1) % n)) / h;
                assert!((closure[i] - expected).abs() < 1e-12);
            }
        }
        let zero = Smagorinsky::new(Equation::burgers(), n, h, 0.0).unwrap();
        let u = rv(&mut rng, n, 1.0);
        assert_eq!(zero.rhs(&u, 0.0, &ctx).unwrap(), nc.rhs(&u, 0.0, &ctx).unwrap());
        assert!(Smagorinsky::new(Equation::burgers(), n, h, -0.1).is_err());
    }

    #[test]
    fn no_closure_matches_reference_discretization() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 25;
        let ctx = CoarseContext::periodic();
        for eq in [Equation::burgers(), Equation::kdv()] {
            let m = NoClosure::new(eq, n, 0.4);
            let u = rv(&mut rng, n, 1.0);
            let a = m.rhs(&u, 0.0, &ctx).unwrap();
            let b = full_rhs(&PdeConfig::new(eq), &u, 0.4, &BcSpec::Periodic, 0.0).unwrap();
            let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-12 * scale);
            }
            if let Equation::Kdv { .. } = eq {
                assert!(dot(&u, &a).abs() < 1e-12 * scale * dot(&u, &u).sqrt());
            }
        }
        let m = NoClosure::new(Equation::burgers(), n, 0.4);
        assert!(m.rhs(&vec![2.0; n], 0.0, &ctx).unwrap().iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn forcing_is_added() {
        let m = NoClosure::new(Equation::burgers(), 6, 0.4);
        let ctx = CoarseContext { bc: BcSpec::Periodic, forcing: Some(vec![0.5; 6]) };
        let r = m.rhs(&[1.0; 6], 0.0, &ctx).unwrap();
        assert!(r.iter().all(|v| (v - 0.5).abs() < 1e-14));
    }
}
