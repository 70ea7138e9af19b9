//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so every node's inputs have
//! smaller indices and a single reverse sweep visits them in a valid
//! topological order.

use std::sync::Arc;

use rand::{Rng, RngCore};

use super::tensor::{gemm, Scalar, Tensor};
use super::GradError;
use crate::lidar_prep::{IpFamily, IpParams};

type Result<T> = std::result::Result<T, GradError>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Element-wise preprocessing layer description: the scan occupies `width`
/// consecutive columns, and column `j` uses the bounds of beam `j % m`.
#[derive(Debug, Clone, PartialEq)]
pub struct IpLayer {
    pub family: IpFamily,
    pub raw_index: Vec<usize>,
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
}

impl IpLayer {
    pub fn new(params: &IpParams, y_min: Vec<f64>, y_max: Vec<f64>) -> Self {
        assert_eq!(y_min.len(), y_max.len());
        let raw_index = (0..y_min.len())
            .map(|i| if params.raw.is_empty() { 0 } else { params.raw_index(i) })
            .collect();
        Self {
            family: params.family,
            raw_index,
            y_min,
            y_max,
        }
    }

    pub fn beams(&self) -> usize {
        self.y_min.len()
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    ScaleCols(Var, Arc<Vec<T>>),
    Mask(Var, Vec<T>),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softplus(Var),
    Min(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    Reshape(Var),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
    },
    Ip {
        x: Var,
        zeta: Option<Var>,
        layer: Arc<IpLayer>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn shape_err(op: &'static str, detail: String) -> GradError {
    GradError::Shape { op, detail }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf; gradients are tracked when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Gradient accumulated by the last [`backward`](Self::backward), if any
    /// reached this node.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.shape[0], t.cols())
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let xv = &self.nodes[x.0].value;
        let value = Tensor {
            shape: xv.shape.clone(),
            data: xv.data.iter().map(|&a| f(a)).collect(),
        };
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape != bv.shape {
            return Err(shape_err(name, format!("{:?} vs {:?}", av.shape, bv.shape)));
        }
        let value = Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect(),
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims2(a);
        let bs = self.shape(b).to_vec();
        if bs.len() != 2 || bs[0] != k {
            return Err(shape_err("matmul", format!("[{n}, {k}] x {bs:?}")));
        }
        let m = bs[1];
        let mut out = vec![T::zero(); n * m];
        gemm(
            n,
            k,
            m,
            &self.nodes[a.0].value.data,
            false,
            &self.nodes[b.0].value.data,
            false,
            &mut out,
            T::zero(),
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, m], out), Op::MatMul(a, b), rg))
    }

    /// Adds a length-`m` row vector to every row of `[n, m]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = self.dims2(x);
        if self.nodes[b.0].value.len() != m {
            return Err(shape_err("add_bias", format!("bias {:?} for width {m}", self.shape(b))));
        }
        let bias = &self.nodes[b.0].value.data;
        let xv = &self.nodes[x.0].value;
        let mut data = xv.data.clone();
        for r in 0..n {
            for (o, &bb) in data[r * m..(r + 1) * m].iter_mut().zip(bias) {
                *o += bb;
            }
        }
        let shape = xv.shape.clone();
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data), Op::AddBias(x, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("min", a, b, Op::Min(a, b), |x, y| if x <= y { x } else { y })
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::Scale(x, c), |a| a * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::AddScalar(x), |a| a + c)
    }

    /// Multiplies column `j` of `[n, m]` by `c[j]`.
    pub fn scale_cols(&mut self, x: Var, c: Vec<T>) -> Result<Var> {
        let (n, m) = self.dims2(x);
        if c.len() != m {
            return Err(shape_err("scale_cols", format!("{} factors for width {m}", c.len())));
        }
        let xv = &self.nodes[x.0].value;
        let mut data = xv.data.clone();
        for r in 0..n {
            for (o, &f) in data[r * m..(r + 1) * m].iter_mut().zip(&c) {
                *o *= f;
            }
        }
        let shape = xv.shape.clone();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data), Op::ScaleCols(x, Arc::new(c)), rg))
    }

    /// Multiplies by a fixed mask of the same size.
    pub fn mask(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if mask.len() != xv.len() {
            return Err(shape_err(
                "mask",
                format!("{} mask entries for {:?}", mask.len(), xv.shape),
            ));
        }
        let value = Tensor {
            shape: xv.shape.clone(),
            data: xv.data.iter().zip(&mask).map(|(&a, &m)| a * m).collect(),
        };
        let rg = self.rg(x);
        Ok(self.push(value, Op::Mask(x, mask), rg))
    }

    /// Inverted dropout: zeroes each entry with probability `rate` and scales
    /// survivors by `1 / (1 - rate)`. Identity when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut dyn RngCore) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(shape_err("dropout", format!("rate {rate} outside [0, 1)")));
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let n = self.nodes[x.0].value.len();
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        self.mask(x, mask)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |a| a.tanh())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |a| if a > T::zero() { a } else { T::zero() })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.unary(
            x,
            Op::LeakyRelu(x, slope),
            |a| if a > T::zero() { a } else { a * slope },
        )
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), |a| a.exp())
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), |a| a.ln())
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |a| a * a)
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus(x), |a| {
            let zero = T::zero();
            a.max(zero) + (-a.abs()).exp().ln_1p()
        })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.dims2(parts[0]).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pm) = self.dims2(p);
            if pn != n {
                return Err(shape_err("concat_cols", format!("row count {pn} vs {n}")));
            }
            widths.push(pm);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.nodes[p.0].value.data[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![n, total], data), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..end` of a 2-D view.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, m) = self.dims2(x);
        if start > end || end > m {
            return Err(shape_err("slice_cols", format!("{start}..{end} of width {m}")));
        }
        let w = end - start;
        let src = &self.nodes[x.0].value.data;
        let mut data = Vec::with_capacity(n * w);
        for r in 0..n {
            data.extend_from_slice(&src[r * m + start..r * m + end]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, w], data), Op::SliceCols(x, start, end), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if shape.iter().product::<usize>() != xv.len() {
            return Err(shape_err("reshape", format!("{:?} -> {shape:?}", xv.shape)));
        }
        let data = xv.data.clone();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data), Op::Reshape(x), rg))
    }

    /// Row sums: `[n, m] -> [n, 1]`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let (n, m) = self.dims2(x);
        let src = &self.nodes[x.0].value.data;
        let data = (0..n).map(|r| src[r * m..(r + 1) * m].iter().copied().sum()).collect();
        let rg = self.rg(x);
        self.push(Tensor::new(vec![n, 1], data), Op::SumRows(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data.iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let s: T = xv.data.iter().copied().sum();
        let m = s / T::lit(xv.len() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// Valid (unpadded) 1-D cross-correlation.
    ///
    /// `x: [B, C_in, L]`, `w: [C_out, C_in, K]`, `b: [C_out]` gives
    /// `[B, C_out, (L - K) / stride + 1]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] || stride == 0 {
            return Err(shape_err(
                "conv1d",
                format!("input {xs:?}, kernel {ws:?}, stride {stride}"),
            ));
        }
        let (batch, c_in, l_in) = (xs[0], xs[1], xs[2]);
        let (c_out, k) = (ws[0], ws[2]);
        if l_in < k {
            return Err(shape_err("conv1d", format!("length {l_in} shorter than kernel {k}")));
        }
        if self.nodes[b.0].value.len() != c_out {
            return Err(shape_err(
                "conv1d",
                format!("bias {:?} for {c_out} channels", self.shape(b)),
            ));
        }
        let l_out = (l_in - k) / stride + 1;
        let xd = &self.nodes[x.0].value.data;
        let wd = &self.nodes[w.0].value.data;
        let bd = &self.nodes[b.0].value.data;
        let mut out = vec![T::zero(); batch * c_out * l_out];
        let mut cols = vec![T::zero(); c_in * k * l_out];
        for bi in 0..batch {
            im2col(
                &xd[bi * c_in * l_in..(bi + 1) * c_in * l_in],
                c_in,
                l_in,
                k,
                stride,
                l_out,
                &mut cols,
            );
            let o = &mut out[bi * c_out * l_out..(bi + 1) * c_out * l_out];
            for (co, row) in o.chunks_exact_mut(l_out).enumerate() {
                row.fill(bd[co]);
            }
            gemm(c_out, c_in * k, l_out, wd, false, &cols, false, o, T::one());
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![batch, c_out, l_out], out),
            Op::Conv1d { x, w, b, stride },
            rg,
        ))
    }

    /// Applies an IP family to a `[n, width]` block of pooled distances,
    /// with trainable raw parameters `zeta` when the family has one.
    pub fn ip_transform(&mut self, x: Var, zeta: Option<Var>, layer: Arc<IpLayer>) -> Result<Var> {
        let (n, width) = self.dims2(x);
        let m = layer.beams();
        if m == 0 || width % m != 0 {
            return Err(shape_err("ip_transform", format!("width {width} for {m} beams")));
        }
        if layer.family.is_trainable() != zeta.is_some() {
            return Err(shape_err(
                "ip_transform",
                format!("parameter presence mismatch for {}", layer.family),
            ));
        }
        let zv: Vec<f64> = zeta.map(|z| self.nodes[z.0].value.to_f64()).unwrap_or_default();
        if let Some(&hi) = layer.raw_index.iter().max() {
            if zeta.is_some() && hi >= zv.len() {
                return Err(shape_err(
                    "ip_transform",
                    format!("raw index {hi} but {} raw values", zv.len()),
                ));
            }
        }
        let xd = &self.nodes[x.0].value.data;
        let mut data = Vec::with_capacity(n * width);
        for r in 0..n {
            for c in 0..width {
                let beam = c % m;
                let z = zv.get(layer.raw_index[beam]).copied().unwrap_or(0.0);
                let y = xd[r * width + c].as_f64();
                data.push(T::lit(layer.family.apply(y, layer.y_min[beam], layer.y_max[beam], z)));
            }
        }
        let rg = self.rg(x) || zeta.is_some_and(|z| self.rg(z));
        Ok(self.push(Tensor::new(vec![n, width], data), Op::Ip { x, zeta, layer }, rg))
    }

    /// Sign pattern of every piecewise-linear switch in the graph (ReLU,
    /// leaky ReLU and min inputs). Finite differences are only valid between
    /// points that share the same pattern.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) | Op::LeakyRelu(x, _) => {
                    sig.extend(self.nodes[x.0].value.data.iter().map(|&a| a > T::zero()));
                }
                Op::Min(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value.data, &self.nodes[b.0].value.data);
                    sig.extend(av.iter().zip(bv).map(|(x, y)| x <= y));
                }
                _ => {}
            }
        }
        sig
    }

    /// Reverse sweep from a scalar output. Gradients accumulate into every
    /// node that requires them; call on a fresh graph for each loss.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        let shape = self.shape(out).to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(GradError::NonScalar(shape));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[out.0].requires_grad {
            return Ok(());
        }
        self.nodes[out.0].grad = Some(vec![T::one()]);

        for i in (0..=out.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let Some(g) = node.grad.as_deref() else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            backprop_node(before, node, g);
        }
        Ok(())
    }
}

fn im2col<T: Scalar>(x: &[T], c_in: usize, l_in: usize, k: usize, stride: usize, l_out: usize, cols: &mut [T]) {
    for c in 0..c_in {
        for kk in 0..k {
            let row = &mut cols[(c * k + kk) * l_out..(c * k + kk + 1) * l_out];
            for (t, v) in row.iter_mut().enumerate() {
                *v = x[c * l_in + t * stride + kk];
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], c_in: usize, l_in: usize, k: usize, stride: usize, l_out: usize, dx: &mut [T]) {
    for c in 0..c_in {
        for kk in 0..k {
            let row = &cols[(c * k + kk) * l_out..(c * k + kk + 1) * l_out];
            for (t, &v) in row.iter().enumerate() {
                dx[c * l_in + t * stride + kk] += v;
            }
        }
    }
}

fn elementwise_back<T: Scalar>(nodes: &mut [Node<T>], x: Var, g: &[T], f: impl Fn(usize, T) -> T) {
    let xn = &mut nodes[x.0];
    if !xn.requires_grad {
        return;
    }
    let len = xn.value.len();
    let dst = accumulate(&mut xn.grad, len);
    if g.len() == len {
        for (i, (d, &gi)) in dst.iter_mut().zip(g).enumerate() {
            *d += f(i, gi);
        }
    } else {
        // reductions: the closure reads the upstream gradient itself
        for (i, d) in dst.iter_mut().enumerate() {
            *d += f(i, T::zero());
        }
    }
}

/// Pushes `g` (the gradient of `node`) into the node's inputs.
fn backprop_node<T: Scalar>(nodes: &mut [Node<T>], node: &Node<T>, g: &[T]) {
    let y = &node.value.data;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (n, k) = (nodes[a.0].value.shape[0], nodes[a.0].value.cols());
            let m = nodes[b.0].value.shape[1];
            if nodes[a.0].requires_grad {
                let bdata = std::mem::take(&mut nodes[b.0].value.data);
                let dst = accumulate(&mut nodes[a.0].grad, n * k);
                gemm(n, m, k, g, false, &bdata, true, dst, T::one());
                nodes[b.0].value.data = bdata;
            }
            if nodes[b.0].requires_grad {
                let adata = std::mem::take(&mut nodes[a.0].value.data);
                let dst = accumulate(&mut nodes[b.0].grad, k * m);
                gemm(k, n, m, &adata, true, g, false, dst, T::one());
                nodes[a.0].value.data = adata;
            }
        }
        Op::AddBias(x, b) => {
            elementwise_back(nodes, *x, g, |_, gi| gi);
            let bn = &mut nodes[b.0];
            if bn.requires_grad {
                let m = bn.value.len();
                let dst = accumulate(&mut bn.grad, m);
                for row in g.chunks_exact(m) {
                    for (d, &gi) in dst.iter_mut().zip(row) {
                        *d += gi;
                    }
                }
            }
        }
        Op::Add(a, b) => {
            elementwise_back(nodes, *a, g, |_, gi| gi);
            elementwise_back(nodes, *b, g, |_, gi| gi);
        }
        Op::Sub(a, b) => {
            elementwise_back(nodes, *a, g, |_, gi| gi);
            elementwise_back(nodes, *b, g, |_, gi| -gi);
        }
        Op::Mul(a, b) => {
            if nodes[a.0].requires_grad {
                let bv = nodes[b.0].value.data.clone();
                elementwise_back(nodes, *a, g, |i, gi| gi * bv[i]);
            }
            if nodes[b.0].requires_grad {
                let av = nodes[a.0].value.data.clone();
                elementwise_back(nodes, *b, g, |i, gi| gi * av[i]);
            }
        }
        Op::Min(a, b) => {
            let (av, bv) = (nodes[a.0].value.data.clone(), nodes[b.0].value.data.clone());
            elementwise_back(nodes, *a, g, |i, gi| if av[i] <= bv[i] { gi } else { T::zero() });
            elementwise_back(nodes, *b, g, |i, gi| if av[i] <= bv[i] { T::zero() } else { gi });
        }
        Op::Scale(x, c) => elementwise_back(nodes, *x, g, |_, gi| gi * *c),
        Op::AddScalar(x) | Op::Reshape(x) => elementwise_back(nodes, *x, g, |_, gi| gi),
        Op::ScaleCols(x, c) => {
            let m = c.len();
            elementwise_back(nodes, *x, g, |i, gi| gi * c[i % m]);
        }
        Op::Mask(x, mask) => elementwise_back(nodes, *x, g, |i, gi| gi * mask[i]),
        Op::Tanh(x) => elementwise_back(nodes, *x, g, |i, gi| gi * (T::one() - y[i] * y[i])),
        Op::Exp(x) => elementwise_back(nodes, *x, g, |i, gi| gi * y[i]),
        Op::Relu(x) => {
            let xv = nodes[x.0].value.data.clone();
            elementwise_back(nodes, *x, g, |i, gi| if xv[i] > T::zero() { gi } else { T::zero() });
        }
        Op::LeakyRelu(x, s) => {
            let xv = nodes[x.0].value.data.clone();
            elementwise_back(nodes, *x, g, |i, gi| if xv[i] > T::zero() { gi } else { gi * *s });
        }
        Op::Log(x) => {
            let xv = nodes[x.0].value.data.clone();
            elementwise_back(nodes, *x, g, |i, gi| gi / xv[i]);
        }
        Op::Square(x) => {
            let xv = nodes[x.0].value.data.clone();
            let two = T::lit(2.0);
            elementwise_back(nodes, *x, g, |i, gi| gi * two * xv[i]);
        }
        Op::Softplus(x) => {
            let xv = nodes[x.0].value.data.clone();
            elementwise_back(nodes, *x, g, |i, gi| {
                let a = xv[i];
                let sig = if a >= T::zero() {
                    T::one() / (T::one() + (-a).exp())
                } else {
                    let e = a.exp();
                    e / (T::one() + e)
                };
                gi * sig
            });
        }
        Op::ConcatCols(parts) => {
            let n = node.value.shape[0];
            let total = node.value.shape[1];
            let mut offset = 0;
            for p in parts {
                let w = nodes[p.0].value.cols();
                let pn = &mut nodes[p.0];
                if pn.requires_grad {
                    let dst = accumulate(&mut pn.grad, n * w);
                    for r in 0..n {
                        for c in 0..w {
                            dst[r * w + c] += g[r * total + offset + c];
                        }
                    }
                }
                offset += w;
            }
        }
        Op::SliceCols(x, start, end) => {
            let xn = &mut nodes[x.0];
            if xn.requires_grad {
                let (n, m) = (xn.value.shape[0], xn.value.cols());
                let w = end - start;
                let dst = accumulate(&mut xn.grad, n * m);
                for r in 0..n {
                    for c in 0..w {
                        dst[r * m + start + c] += g[r * w + c];
                    }
                }
            }
        }
        Op::SumRows(x) => {
            let m = nodes[x.0].value.cols();
            elementwise_back(nodes, *x, g, |i, _| g[i / m]);
        }
        Op::Sum(x) => elementwise_back(nodes, *x, g, |_, _| g[0]),
        Op::Mean(x) => {
            let n = T::lit(nodes[x.0].value.len() as f64);
            elementwise_back(nodes, *x, g, |_, _| g[0] / n);
        }
        Op::Conv1d { x, w, b, stride } => {
            let xs = nodes[x.0].value.shape.clone();
            let ws = nodes[w.0].value.shape.clone();
            let (batch, c_in, l_in) = (xs[0], xs[1], xs[2]);
            let (c_out, k) = (ws[0], ws[2]);
            let l_out = node.value.shape[2];
            let ck = c_in * k;
            let mut cols = vec![T::zero(); ck * l_out];
            let mut dcols = vec![T::zero(); ck * l_out];
            let xdata = std::mem::take(&mut nodes[x.0].value.data);
            let wdata = std::mem::take(&mut nodes[w.0].value.data);
            for bi in 0..batch {
                let gb = &g[bi * c_out * l_out..(bi + 1) * c_out * l_out];
                if nodes[b.0].requires_grad {
                    let db = accumulate(&mut nodes[b.0].grad, c_out);
                    for (co, row) in gb.chunks_exact(l_out).enumerate() {
                        db[co] += row.iter().copied().sum();
                    }
                }
                if nodes[w.0].requires_grad {
                    im2col(
                        &xdata[bi * c_in * l_in..(bi + 1) * c_in * l_in],
                        c_in,
                        l_in,
                        k,
                        *stride,
                        l_out,
                        &mut cols,
                    );
                    let dw = accumulate(&mut nodes[w.0].grad, c_out * ck);
                    gemm(c_out, l_out, ck, gb, false, &cols, true, dw, T::one());
                }
                if nodes[x.0].requires_grad {
                    gemm(ck, c_out, l_out, &wdata, true, gb, false, &mut dcols, T::zero());
                    let dx = accumulate(&mut nodes[x.0].grad, batch * c_in * l_in);
                    col2im_add(
                        &dcols,
                        c_in,
                        l_in,
                        k,
                        *stride,
                        l_out,
                        &mut dx[bi * c_in * l_in..(bi + 1) * c_in * l_in],
                    );
                }
            }
            nodes[x.0].value.data = xdata;
            nodes[w.0].value.data = wdata;
        }
        Op::Ip { x, zeta, layer } => {
            let m = layer.beams();
            let width = nodes[x.0].value.cols();
            let n = nodes[x.0].value.shape[0];
            let zv: Vec<f64> = zeta.map(|z| nodes[z.0].value.to_f64()).unwrap_or_default();
            let xv = nodes[x.0].value.to_f64();
            let zeta_of = |beam: usize| zv.get(layer.raw_index[beam]).copied().unwrap_or(0.0);
            if nodes[x.0].requires_grad {
                elementwise_back(nodes, *x, g, |i, gi| {
                    let beam = (i % width) % m;
                    let d = layer
                        .family
                        .d_input(xv[i], layer.y_min[beam], layer.y_max[beam], zeta_of(beam));
                    gi * T::lit(d)
                });
            }
            if let Some(z) = zeta {
                let zn = &mut nodes[z.0];
                if zn.requires_grad {
                    let len = zn.value.len();
                    let mut acc = vec![0.0f64; len];
                    for r in 0..n {
                        for c in 0..width {
                            let beam = c % m;
                            let i = r * width + c;
                            let d = layer
                                .family
                                .d_raw(xv[i], layer.y_min[beam], layer.y_max[beam], zeta_of(beam));
                            acc[layer.raw_index[beam]] += g[i].as_f64() * d;
                        }
                    }
                    let dst = accumulate(&mut zn.grad, len);
                    for (d, a) in dst.iter_mut().zip(acc) {
                        *d += T::lit(a);
                    }
                }
            }
        }
    }
}
