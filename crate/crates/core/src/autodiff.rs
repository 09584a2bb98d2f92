//! Reverse-mode automatic differentiation on a vector-valued tape.
//!
//! Each node stores a whole vector and one coarse-grained primitive
//! (convolution, stencil, gather, ...). Forward values are computed when an
//! operation is recorded; [`Tape::replay`] recomputes them after leaves change.

use std::ops::Range;
use std::rc::Rc;

use crate::error::{check_len, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Affine gather `out[k] = offset[k] + coef[k] · src[index[k]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatherMap {
    pub source_len: usize,
    pub index: Vec<usize>,
    pub coef: Vec<f64>,
    pub offset: Vec<f64>,
}

impl GatherMap {
    /// Pure permutation / selection with unit coefficients.
    pub fn select(source_len: usize, index: Vec<usize>) -> Self {
        let n = index.len();
        Self { source_len, index, coef: vec![1.0; n], offset: vec![0.0; n] }
    }
}

impl From<&crate::boundary::PadPlan> for GatherMap {
    fn from(p: &crate::boundary::PadPlan) -> Self {
        Self { source_len: p.len, index: p.index.clone(), coef: p.coef.clone(), offset: p.offset.clone() }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MulConst(usize, Rc<Vec<f64>>),
    AddConst(usize, Rc<Vec<f64>>),
    Square(usize),
    Relu(usize),
    Abs(usize),
    Slice { a: usize, start: usize, len: usize },
    Concat(Vec<usize>),
    Gather { a: usize, map: Rc<GatherMap> },
    Conv { input: usize, weight: usize, bias: Option<usize>, cin: usize, cout: usize, k: usize },
    Stencil { a: usize, weights: Rc<Vec<f64>> },
    Convection { a: usize, h: f64 },
    Center { a: usize, seg_len: usize, mask: Rc<Vec<bool>> },
    Sum(usize),
    SumSquares(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MulConst(..) => "mul_const",
            Op::AddConst(..) => "add_const",
            Op::Square(_) => "square",
            Op::Relu(_) => "relu",
            Op::Abs(_) => "abs",
            Op::Slice { .. } => "slice",
            Op::Concat(_) => "concat",
            Op::Gather { .. } => "gather",
            Op::Conv { .. } => "conv",
            Op::Stencil { .. } => "stencil",
            Op::Convection { .. } => "convection",
            Op::Center { .. } => "center",
            Op::Sum(_) => "sum",
            Op::SumSquares(_) => "sum_squares",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Recorded computation graph.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

pub(crate) fn conv_forward(x: &[f64], w: &[f64], b: Option<&[f64]>, cin: usize, cout: usize, k: usize) -> Vec<f64> {
    let len = x.len() / cin;
    let out_len = len + 1 - k;
    let mut out = vec![0.0; cout * out_len];
    for o in 0..cout {
        let row = &mut out[o * out_len..(o + 1) * out_len];
        if let Some(b) = b {
            row.iter_mut().for_each(|v| *v = b[o]);
        }
        for c in 0..cin {
            let xin = &x[c * len..(c + 1) * len];
            let wk = &w[(o * cin + c) * k..(o * cin + c + 1) * k];
            for (j, &wj) in wk.iter().enumerate() {
                for (r, xv) in row.iter_mut().zip(&xin[j..j + out_len]) {
                    *r += wj * xv;
                }
            }
        }
    }
    out
}

fn stencil_forward(x: &[f64], w: &[f64]) -> Vec<f64> {
    x.windows(w.len()).map(|win| win.iter().zip(w).map(|(a, b)| a * b).sum()).collect()
}

fn convection_forward(x: &[f64], h: f64) -> Vec<f64> {
    crate::pde::convection_valid(x, h)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn eval(&self, op: &Op) -> Vec<f64> {
        let val = |i: usize| self.nodes[i].value.as_slice();
        match op {
            Op::Leaf => unreachable!("leaves carry their own values"),
            Op::Add(a, b) => zip_map(val(*a), val(*b), |x, y| x + y),
            Op::Sub(a, b) => zip_map(val(*a), val(*b), |x, y| x - y),
            Op::Mul(a, b) => zip_map(val(*a), val(*b), |x, y| x * y),
            Op::Scale(a, c) => val(*a).iter().map(|x| c * x).collect(),
            Op::MulConst(a, c) => zip_map(val(*a), c, |x, y| x * y),
            Op::AddConst(a, c) => zip_map(val(*a), c, |x, y| x + y),
            Op::Square(a) => val(*a).iter().map(|x| x * x).collect(),
            Op::Relu(a) => val(*a).iter().map(|x| x.max(0.0)).collect(),
            Op::Abs(a) => val(*a).iter().map(|x| x.abs()).collect(),
            Op::Slice { a, start, len } => val(*a)[*start..start + len].to_vec(),
            Op::Concat(parts) => parts.iter().flat_map(|&p| val(p).iter().copied()).collect(),
            Op::Gather { a, map } => {
                let x = val(*a);
                map.index.iter().zip(&map.coef).zip(&map.offset).map(|((&i, &c), &o)| o + c * x[i]).collect()
            }
            Op::Conv { input, weight, bias, cin, cout, k } => {
                conv_forward(val(*input), val(*weight), bias.map(val), *cin, *cout, *k)
            }
            Op::Stencil { a, weights } => stencil_forward(val(*a), weights),
            Op::Convection { a, h } => convection_forward(val(*a), *h),
            Op::Center { a, seg_len, mask } => {
                let mut out = val(*a).to_vec();
                for (seg, &on) in out.chunks_mut(*seg_len).zip(mask.iter()) {
                    if on {
                        let mean = seg.iter().sum::<f64>() / seg.len() as f64;
                        seg.iter_mut().for_each(|v| *v -= mean);
                    }
                }
                out
            }
            Op::Sum(a) => vec![val(*a).iter().sum()],
            Op::SumSquares(a) => vec![val(*a).iter().map(|x| x * x).sum()],
        }
    }

    fn push(&mut self, op: Op) -> Var {
        let value = self.eval(&op);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn same_len(&self, a: Var, b: Var) -> Result<()> {
        check_len(self.len_of(a), self.len_of(b))
    }

    /// Input or constant vector.
    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Overwrite a leaf value; call [`Tape::replay`] afterwards.
    pub fn set_leaf(&mut self, v: Var, value: Vec<f64>) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::InvalidArgument("only leaves can be overwritten".into()));
        }
        check_len(node.value.len(), value.len())?;
        node.value = value;
        Ok(())
    }

    /// Recompute every non-leaf node in recording order.
    pub fn replay(&mut self) {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            self.nodes[i].value = self.eval(&op);
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b)?;
        Ok(self.push(Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b)?;
        Ok(self.push(Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b)?;
        Ok(self.push(Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.push(Op::Scale(a.0, c))
    }

    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        check_len(self.len_of(a), c.len())?;
        Ok(self.push(Op::MulConst(a.0, Rc::new(c))))
    }

    pub fn add_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        check_len(self.len_of(a), c.len())?;
        Ok(self.push(Op::AddConst(a.0, Rc::new(c))))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.push(Op::Square(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.push(Op::Relu(a.0))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.push(Op::Abs(a.0))
    }

    pub fn slice(&mut self, a: Var, range: Range<usize>) -> Result<Var> {
        if range.end > self.len_of(a) || range.start > range.end {
            return Err(Error::InvalidArgument(format!("slice {range:?} out of bounds for length {}", self.len_of(a))));
        }
        Ok(self.push(Op::Slice { a: a.0, start: range.start, len: range.end - range.start }))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        self.push(Op::Concat(parts.iter().map(|v| v.0).collect()))
    }

    pub fn gather(&mut self, a: Var, map: Rc<GatherMap>) -> Result<Var> {
        check_len(map.source_len, self.len_of(a))?;
        Ok(self.push(Op::Gather { a: a.0, map }))
    }

    /// Valid-mode multichannel convolution. `input` holds `cin` channels
    /// back to back, `weight` is laid out `[cout][cin][k]`.
    pub fn conv(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        cin: usize,
        cout: usize,
        k: usize,
    ) -> Result<Var> {
        let n = self.len_of(input);
        if cin == 0 || cout == 0 || k == 0 || !n.is_multiple_of(cin) || n / cin < k {
            return Err(Error::InvalidArgument(format!(
                "convolution of {n} values with {cin} channels and kernel {k}"
            )));
        }
        check_len(cout * cin * k, self.len_of(weight))?;
        if let Some(b) = bias {
            check_len(cout, self.len_of(b))?;
        }
        Ok(self.push(Op::Conv { input: input.0, weight: weight.0, bias: bias.map(|b| b.0), cin, cout, k }))
    }

    /// Valid-mode correlation with constant weights.
    pub fn stencil(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        if weights.is_empty() || weights.len() > self.len_of(a) {
            return Err(Error::InvalidArgument("stencil wider than its input".into()));
        }
        Ok(self.push(Op::Stencil { a: a.0, weights: Rc::new(weights) }))
    }

    /// Skew-symmetric convection stencil in valid mode.
    pub fn convection(&mut self, a: Var, h: f64) -> Result<Var> {
        if self.len_of(a) < 3 {
            return Err(Error::InvalidArgument("convection needs three values".into()));
        }
        Ok(self.push(Op::Convection { a: a.0, h }))
    }

    /// Subtract the mean of every segment of length `seg_len` flagged in `mask`.
    pub fn center(&mut self, a: Var, seg_len: usize, mask: Vec<bool>) -> Result<Var> {
        check_len(self.len_of(a), seg_len * mask.len())?;
        Ok(self.push(Op::Center { a: a.0, seg_len, mask: Rc::new(mask) }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.push(Op::Sum(a.0))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        self.push(Op::SumSquares(a.0))
    }

    /// `a + c·b`
    pub fn axpy(&mut self, a: Var, c: f64, b: Var) -> Result<Var> {
        let cb = self.scale(b, c);
        self.add(a, cb)
    }

    /// Adjoints of the scalar `output` with respect to every node.
    fn backward(&self, output: Var) -> Result<Vec<Vec<f64>>> {
        if self.len_of(output) != 1 {
            return Err(Error::InvalidArgument("gradients need a scalar output".into()));
        }
        for node in &self.nodes[..=output.0] {
            if node.value.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: node.op.name() });
            }
        }
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); output.0 + 1];
        adj[output.0] = vec![1.0];
        for i in (0..=output.0).rev() {
            if adj[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut adj[i]);
            self.propagate(i, &g, &mut adj);
            adj[i] = g;
        }
        Ok(adj)
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Vec<f64>]) {
        let val = |j: usize| self.nodes[j].value.as_slice();
        fn acc(adj: &mut [Vec<f64>], j: usize, len: usize) -> &mut Vec<f64> {
            if adj[j].is_empty() {
                adj[j] = vec![0.0; len];
            }
            &mut adj[j]
        }
        let len = |j: usize| self.nodes[j].value.len();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(adj, *a, g.len()).iter_mut().zip(g).for_each(|(d, x)| *d += x);
                acc(adj, *b, g.len()).iter_mut().zip(g).for_each(|(d, x)| *d += x);
            }
            Op::Sub(a, b) => {
                acc(adj, *a, g.len()).iter_mut().zip(g).for_each(|(d, x)| *d += x);
                acc(adj, *b, g.len()).iter_mut().zip(g).for_each(|(d, x)| *d -= x);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).to_vec(), val(*b).to_vec());
                acc(adj, *a, g.len()).iter_mut().zip(g).zip(&vb).for_each(|((d, x), y)| *d += x * y);
                acc(adj, *b, g.len()).iter_mut().zip(g).zip(&va).for_each(|((d, x), y)| *d += x * y);
            }
            Op::Scale(a, c) => {
                acc(adj, *a, g.len()).iter_mut().zip(g).for_each(|(d, x)| *d += c * x);
            }
            Op::MulConst(a, c) => {
                acc(adj, *a, g.len()).iter_mut().zip(g).zip(c.iter()).for_each(|((d, x), y)| *d += x * y);
            }
            Op::AddConst(a, _) => {
                acc(adj, *a, g.len()).iter_mut().zip(g).for_each(|(d, x)| *d += x);
            }
            Op::Square(a) => {
                let va = val(*a);
                let d = acc(adj, *a, g.len());
                for k in 0..g.len() {
                    d[k] += 2.0 * va[k] * g[k];
                }
            }
            Op::Relu(a) => {
                let va = val(*a);
                let d = acc(adj, *a, g.len());
                for k in 0..g.len() {
                    if va[k] > 0.0 {
                        d[k] += g[k];
                    }
                }
            }
            Op::Abs(a) => {
                let va = val(*a);
                let d = acc(adj, *a, g.len());
                for k in 0..g.len() {
                    d[k] += va[k].signum() * g[k] * (va[k] != 0.0) as u8 as f64;
                }
            }
            Op::Slice { a, start, len: n } => {
                let total = len(*a);
                let d = acc(adj, *a, total);
                for k in 0..*n {
                    d[start + k] += g[k];
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = len(p);
                    let d = acc(adj, p, n);
                    for k in 0..n {
                        d[k] += g[off + k];
                    }
                    off += n;
                }
            }
            Op::Gather { a, map } => {
                let d = acc(adj, *a, map.source_len);
                for k in 0..g.len() {
                    d[map.index[k]] += map.coef[k] * g[k];
                }
            }
            Op::Conv { input, weight, bias, cin, cout, k } => {
                let (cin, cout, k) = (*cin, *cout, *k);
                let x = val(*input);
                let w = val(*weight);
                let n = x.len() / cin;
                let out_len = n + 1 - k;
                let mut dx = vec![0.0; x.len()];
                let mut dw = vec![0.0; w.len()];
                for o in 0..cout {
                    let go = &g[o * out_len..(o + 1) * out_len];
                    for c in 0..cin {
                        let base = (o * cin + c) * k;
                        let xin = &x[c * n..(c + 1) * n];
                        let dxin = &mut dx[c * n..(c + 1) * n];
                        for j in 0..k {
                            let wj = w[base + j];
                            let mut s = 0.0;
                            for (t, &gv) in go.iter().enumerate() {
                                s += xin[t + j] * gv;
                                dxin[t + j] += wj * gv;
                            }
                            dw[base + j] += s;
                        }
                    }
                }
                acc(adj, *input, x.len()).iter_mut().zip(&dx).for_each(|(d, v)| *d += v);
                acc(adj, *weight, w.len()).iter_mut().zip(&dw).for_each(|(d, v)| *d += v);
                if let Some(b) = bias {
                    let db = acc(adj, *b, cout);
                    for o in 0..cout {
                        db[o] += g[o * out_len..(o + 1) * out_len].iter().sum::<f64>();
                    }
                }
            }
            Op::Stencil { a, weights } => {
                let d = acc(adj, *a, len(*a));
                for (t, &gv) in g.iter().enumerate() {
                    for (j, w) in weights.iter().enumerate() {
                        d[t + j] += w * gv;
                    }
                }
            }
            Op::Convection { a, h } => {
                let c = 1.0 / (3.0 * h);
                let x = val(*a).to_vec();
                let d = acc(adj, *a, x.len());
                for (t, &gv) in g.iter().enumerate() {
                    let (l, m, r) = (x[t], x[t + 1], x[t + 2]);
                    d[t] += gv * (2.0 * c * l + c * m);
                    d[t + 1] += gv * (-c * (r - l));
                    d[t + 2] += gv * (-2.0 * c * r - c * m);
                }
            }
            Op::Center { a, seg_len, mask } => {
                let d = acc(adj, *a, g.len());
                for ((dseg, gseg), &on) in d.chunks_mut(*seg_len).zip(g.chunks(*seg_len)).zip(mask.iter()) {
                    let mean = if on { gseg.iter().sum::<f64>() / gseg.len() as f64 } else { 0.0 };
                    for (dv, gv) in dseg.iter_mut().zip(gseg) {
                        *dv += gv - mean;
                    }
                }
            }
            Op::Sum(a) => {
                let n = len(*a);
                acc(adj, *a, n).iter_mut().for_each(|d| *d += g[0]);
            }
            Op::SumSquares(a) => {
                let va = val(*a);
                let d = acc(adj, *a, va.len());
                for k in 0..va.len() {
                    d[k] += 2.0 * va[k] * g[0];
                }
            }
        }
    }

    /// `∂output/∂wrt`; zero when the output does not depend on `wrt`.
    pub fn grad(&self, output: Var, wrt: Var) -> Result<Vec<f64>> {
        Ok(self.grads(output, &[wrt])?.pop().unwrap())
    }

    pub fn grads(&self, output: Var, wrt: &[Var]) -> Result<Vec<Vec<f64>>> {
        let adj = self.backward(output)?;
        Ok(wrt
            .iter()
            .map(|v| match adj.get(v.0) {
                Some(a) if !a.is_empty() => a.clone(),
                _ => vec![0.0; self.len_of(*v)],
            })
            .collect())
    }
}

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
}

impl ParamLayout {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Range<usize> {
        let start = self.len();
        let range = start..start + shape.iter().product::<usize>();
        self.entries.push(ParamEntry { name: name.into(), shape, range: range.clone() });
        range
    }

    pub fn len(&self) -> usize {
        self.entries.last().map_or(0, |e| e.range.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// All trainable scalars as one flat vector plus their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl ParameterSet {
    pub fn zeros(layout: ParamLayout) -> Self {
        Self { values: vec![0.0; layout.len()], layout }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|e| &self.values[e.range.clone()])
    }

    /// Split the flat vector into its named tensors.
    pub fn unpack(&self) -> Vec<(String, Vec<f64>)> {
        self.layout.entries.iter().map(|e| (e.name.clone(), self.values[e.range.clone()].to_vec())).collect()
    }

    /// Inverse of [`ParameterSet::unpack`].
    pub fn pack(layout: ParamLayout, tensors: &[(String, Vec<f64>)]) -> Result<Self> {
        check_len(layout.entries.len(), tensors.len())?;
        let mut values = vec![0.0; layout.len()];
        for (e, (name, t)) in layout.entries.iter().zip(tensors) {
            if &e.name != name {
                return Err(Error::InvalidArgument(format!("expected tensor {}, got {name}", e.name)));
            }
            check_len(e.range.len(), t.len())?;
            values[e.range.clone()].copy_from_slice(t);
        }
        Ok(Self { values, layout })
    }
}
