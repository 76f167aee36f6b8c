use super::kernels::{self, ConvDims};
use super::{same_shape, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    AddScalar(Var),
    Gelu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Conv3x3 {
        x: Var,
        kernel: Var,
        bias: Var,
        dims: ConvDims,
    },
    Sum(Var),
    Mean(Var),
    MseMean(Var, Var),
    BceMap {
        p: Var,
        g: Var,
        eps: T,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Concat(Vec<Var>),
    Reshape(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run computation graph with reverse-mode differentiation.
///
/// Every operation appends a node holding its value; [`Graph::backward`]
/// walks the nodes in reverse creation order. Gradients accumulate across
/// calls until [`Graph::zero_grad`].
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.044_715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

fn gelu<T: Real>(x: T) -> T {
    let c = T::of(SQRT_2_OVER_PI);
    let u = c * (x + T::of(GELU_C) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::of(SQRT_2_OVER_PI);
    let u = c * (x + T::of(GELU_C) * x * x * x);
    let th = u.tanh();
    let du = c * (T::one() + T::of(3.0 * GELU_C) * x * x);
    T::of(0.5) * (T::one() + th) + T::of(0.5) * x * (T::one() - th * th) * du
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn bce<T: Real>(p: T, g: T, eps: T) -> T {
    let pc = p.max(eps).min(T::one() - eps);
    -(g * pc.ln() + (T::one() - g) * (T::one() - pc).ln())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
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
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].as_ref().map(|g| {
            Tensor::new(self.nodes[v.0].value.shape(), g.clone()).expect("grad shape")
        })
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    // ---- linear algebra -------------------------------------------------

    /// `[m×k]·[k×n]`, or batched `[B×m×k]·[B×k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (batch, m, k, n, out_shape) = match (sa.as_slice(), sb.as_slice()) {
            (&[m, k], &[k2, n]) if k == k2 => (1, m, k, n, vec![m, n]),
            (&[ba, m, k], &[bb, k2, n]) if ba == bb && k == k2 => (ba, m, k, n, vec![ba, m, n]),
            _ => {
                return Err(Error::dim(format!(
                    "matmul: incompatible shapes {sa:?} and {sb:?}"
                )))
            }
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            kernels::matmul_acc(
                &av[bi * m * k..(bi + 1) * m * k],
                &bv[bi * k * n..(bi + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    /// `x[..., c, h, w]` convolved with `kernel[c_out, c, 3, 3]` plus `bias[c_out]`,
    /// zero padding of one pixel, stride one.
    pub fn conv3x3(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(kernel).to_vec();
        let sb = self.shape(bias).to_vec();
        if sx.len() < 3 {
            return Err(Error::dim(format!("conv3x3: input must be [..., c, h, w], got {sx:?}")));
        }
        let nd = sx.len();
        let (c_in, h, w) = (sx[nd - 3], sx[nd - 2], sx[nd - 1]);
        let batch: usize = sx[..nd - 3].iter().product();
        if sk.len() != 4 || sk[1] != c_in || sk[2] != 3 || sk[3] != 3 {
            return Err(Error::dim(format!(
                "conv3x3: kernel {sk:?} does not match {c_in} input channels"
            )));
        }
        let c_out = sk[0];
        if sb != [c_out] {
            return Err(Error::dim(format!("conv3x3: bias {sb:?} for {c_out} output channels")));
        }
        let dims = ConvDims {
            batch,
            c_in,
            c_out,
            h,
            w,
        };
        let out = kernels::conv3x3_forward(
            self.value(x).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            dims,
        );
        let mut out_shape = sx[..nd - 3].to_vec();
        out_shape.extend_from_slice(&[c_out, h, w]);
        let rg = self.rg(x) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::Conv3x3 {
                x,
                kernel,
                bias,
                dims,
            },
            rg,
        ))
    }

    // ---- elementwise ----------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), f)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Adds `bias[d]` to every last-axis vector of `x[..., d]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(bias) != [d] {
            return Err(Error::dim(format!(
                "add_bias: bias {:?} for last axis {d}",
                self.shape(bias)
            )));
        }
        let bv = self.value(bias).data().to_vec();
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv[i % d])
            .collect();
        let out = Tensor::new(xv.shape(), data)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddBias { x, bias }, rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(out, Op::Scale { x, c }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        let rg = self.rg(x);
        self.push(out, Op::AddScalar(x), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let d = xv.last_dim();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(d) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s = s + *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        let out = Tensor::new(xv.shape(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Softmax(x), rg)
    }

    /// Layer normalization over the last axis followed by `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if xv.ndim() == 0 || d == 0 {
            return Err(Error::dim("layer_norm: empty last axis"));
        }
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim(format!(
                "layer_norm: affine params {:?}/{:?} for last axis {d}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let dn = T::of(d as f64);
        let rows = xv.numel() / d;
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.numel()];
        for (r, row) in xv.data().chunks(d).enumerate() {
            let mut mean = T::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean / dn;
            let mut var = T::zero();
            for &v in row {
                var = var + (v - mean) * (v - mean);
            }
            var = var / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let xh = (row[j] - mean) * rs;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * gv[j] + bv[j];
            }
        }
        let out = Tensor::new(xv.shape(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    // ---- reductions and losses ------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let s = self.value(x).mean();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean of squared differences over all elements.
    pub fn mse_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        same_shape(av.shape(), bv.shape())?;
        let mut acc = T::zero();
        for (&x, &y) in av.data().iter().zip(bv.data()) {
            acc = acc + (x - y) * (x - y);
        }
        let v = acc / T::of(av.numel() as f64);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(v), Op::MseMean(a, b), rg))
    }

    /// Per-element binary cross-entropy with `p` clamped to `[eps, 1 - eps]`.
    pub fn bce_map(&mut self, p: Var, g: Var, eps: T) -> Result<Var> {
        let out = self.value(p).zip_map(self.value(g), |pv, gv| bce(pv, gv, eps))?;
        let rg = self.rg(p) || self.rg(g);
        Ok(self.push(out, Op::BceMap { p, g, eps }, rg))
    }

    // ---- data movement ---------------------------------------------------

    /// `out.flat[i] = x.flat[index[i]]`; repeated indices accumulate in backward.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.numel();
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::dim(format!("gather: index {bad} out of {n}")));
        }
        let data = index.iter().map(|&i| xv.data()[i]).collect();
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Gather { x, index }, rg))
    }

    /// Axis permutation.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let nd = shape.len();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::dim(format!("permute: {axes:?} is not a permutation of {nd} axes")));
        }
        let mut strides = vec![1usize; nd];
        for i in (0..nd.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * shape[i + 1];
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let out_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
        let total: usize = shape.iter().product();
        let mut index = Vec::with_capacity(total);
        let mut counter = vec![0usize; nd];
        for _ in 0..total {
            index.push(counter.iter().zip(&out_strides).map(|(c, s)| c * s).sum());
            for ax in (0..nd).rev() {
                counter[ax] += 1;
                if counter[ax] < out_shape[ax] {
                    break;
                }
                counter[ax] = 0;
            }
        }
        self.gather(x, index, &out_shape)
    }

    /// Slice `i` along the first axis.
    pub fn select(&mut self, x: Var, i: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || i >= shape[0] {
            return Err(Error::dim(format!("select: index {i} for shape {shape:?}")));
        }
        let inner: usize = shape[1..].iter().product();
        let out_shape = if shape.len() == 1 { vec![] } else { shape[1..].to_vec() };
        self.gather(x, (i * inner..(i + 1) * inner).collect(), &out_shape)
    }

    /// Rows `rows[j]` of a matrix `x[n×d]`, in the given order.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::dim(format!("gather_rows: expected a matrix, got {shape:?}")));
        }
        let d = shape[1];
        if let Some(&bad) = rows.iter().find(|&&r| r >= shape[0]) {
            return Err(Error::dim(format!("gather_rows: row {bad} of {}", shape[0])));
        }
        let index = rows.iter().flat_map(|&r| r * d..(r + 1) * d).collect();
        self.gather(x, index, &[rows.len(), d])
    }

    /// Concatenation along the first axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let inner = self.shape(*first)[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != inner.len() + 1 || s[1..] != inner[..] {
                return Err(Error::dim(format!("concat: {s:?} does not match [_, {inner:?}]")));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&inner);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(&shape, data)?, Op::Concat(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse-mode sweep from a one-element `root`, adding into the stored
    /// gradients of every node that depends on a parameter.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let n = root.0 + 1;
        let mut adj: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        adj[root.0] = Some(vec![T::one()]);

        for id in (0..n).rev() {
            let Some(gout) = adj[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id, &gout, &mut adj);
            match &mut self.grads[id] {
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&gout) {
                        *a = *a + *g;
                    }
                }
                slot @ None => *slot = Some(gout),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, gout: &[T], adj: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let val = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
            } => {
                let (batch, m, k, n) = (*batch, *m, *k, *n);
                if self.rg(*a) {
                    let bv = self.value(*b).data();
                    let da = slot(adj, *a, batch * m * k);
                    for bi in 0..batch {
                        kernels::matmul_nt_acc(
                            &gout[bi * m * n..(bi + 1) * m * n],
                            &bv[bi * k * n..(bi + 1) * k * n],
                            &mut da[bi * m * k..(bi + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                }
                if self.rg(*b) {
                    let av = self.value(*a).data();
                    let db = slot(adj, *b, batch * k * n);
                    for bi in 0..batch {
                        kernels::matmul_tn_acc(
                            &av[bi * m * k..(bi + 1) * m * k],
                            &gout[bi * m * n..(bi + 1) * m * n],
                            &mut db[bi * k * n..(bi + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(adj, *a, gout, |g, _| g);
                self.accumulate(adj, *b, gout, |g, _| g);
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, *a, gout, |g, _| g);
                self.accumulate(adj, *b, gout, |g, _| -g);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accumulate(adj, *a, gout, |g, i| g * bv[i]);
                self.accumulate(adj, *b, gout, |g, i| g * av[i]);
            }
            Op::Div(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accumulate(adj, *a, gout, |g, i| g / bv[i]);
                self.accumulate(adj, *b, gout, |g, i| -g * av[i] / (bv[i] * bv[i]));
            }
            Op::AddBias { x, bias } => {
                self.accumulate(adj, *x, gout, |g, _| g);
                if self.rg(*bias) {
                    let d = self.value(*bias).numel();
                    let db = slot(adj, *bias, d);
                    for (i, &g) in gout.iter().enumerate() {
                        db[i % d] = db[i % d] + g;
                    }
                }
            }
            Op::Scale { x, c } => {
                let c = *c;
                self.accumulate(adj, *x, gout, |g, _| g * c);
            }
            Op::AddScalar(x) => self.accumulate(adj, *x, gout, |g, _| g),
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.accumulate(adj, *x, gout, |g, i| g * gelu_grad(xv[i]));
            }
            Op::Sigmoid(x) => {
                self.accumulate(adj, *x, gout, |g, i| g * val[i] * (T::one() - val[i]));
            }
            Op::Softmax(x) => {
                if self.rg(*x) {
                    let d = node.value.last_dim();
                    let dx = slot(adj, *x, val.len());
                    for (r, (yrow, grow)) in val.chunks(d).zip(gout.chunks(d)).enumerate() {
                        let mut dot = T::zero();
                        for (&y, &g) in yrow.iter().zip(grow) {
                            dot = dot + y * g;
                        }
                        for j in 0..d {
                            let i = r * d + j;
                            dx[i] = dx[i] + yrow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = node.value.last_dim();
                let gv = self.value(*gamma).data();
                if self.rg(*gamma) {
                    let dg = slot(adj, *gamma, d);
                    for (i, &g) in gout.iter().enumerate() {
                        dg[i % d] = dg[i % d] + g * xhat[i];
                    }
                }
                if self.rg(*beta) {
                    let db = slot(adj, *beta, d);
                    for (i, &g) in gout.iter().enumerate() {
                        db[i % d] = db[i % d] + g;
                    }
                }
                if self.rg(*x) {
                    let dn = T::of(d as f64);
                    let dx = slot(adj, *x, gout.len());
                    for (r, grow) in gout.chunks(d).enumerate() {
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mut mean_g = T::zero();
                        let mut mean_gx = T::zero();
                        for j in 0..d {
                            let gh = grow[j] * gv[j];
                            mean_g = mean_g + gh;
                            mean_gx = mean_gx + gh * xh[j];
                        }
                        mean_g = mean_g / dn;
                        mean_gx = mean_gx / dn;
                        for j in 0..d {
                            let gh = grow[j] * gv[j];
                            let i = r * d + j;
                            dx[i] = dx[i] + rstd[r] * (gh - mean_g - xh[j] * mean_gx);
                        }
                    }
                }
            }
            Op::Conv3x3 {
                x,
                kernel,
                bias,
                dims,
            } => {
                let xv = self.value(*x).data();
                let kv = self.value(*kernel).data();
                let (nx, nk, nb) = (xv.len(), kv.len(), dims.c_out);
                // three disjoint adjoint slots; take them out to borrow simultaneously
                let mut dx = self.rg(*x).then(|| take_slot(adj, *x, nx));
                let mut dk = self.rg(*kernel).then(|| take_slot(adj, *kernel, nk));
                let mut db = self.rg(*bias).then(|| take_slot(adj, *bias, nb));
                kernels::conv3x3_backward(
                    xv,
                    kv,
                    gout,
                    *dims,
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (v, buf) in [(*x, dx), (*kernel, dk), (*bias, db)] {
                    if let Some(buf) = buf {
                        adj[v.0] = Some(buf);
                    }
                }
            }
            Op::Sum(x) => {
                let g = gout[0];
                self.accumulate(adj, *x, &[], |_, _| g);
            }
            Op::Mean(x) => {
                let g = gout[0] / T::of(self.value(*x).numel() as f64);
                self.accumulate(adj, *x, &[], |_, _| g);
            }
            Op::MseMean(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let c = gout[0] * T::of(2.0) / T::of(av.len() as f64);
                self.accumulate(adj, *a, &[], |_, i| c * (av[i] - bv[i]));
                self.accumulate(adj, *b, &[], |_, i| -c * (av[i] - bv[i]));
            }
            Op::BceMap { p, g, eps } => {
                let eps = *eps;
                let pv = self.value(*p).data();
                let gv = self.value(*g).data();
                let one = T::one();
                self.accumulate(adj, *p, gout, |go, i| {
                    if pv[i] < eps || pv[i] > one - eps {
                        T::zero()
                    } else {
                        go * (-gv[i] / pv[i] + (one - gv[i]) / (one - pv[i]))
                    }
                });
                self.accumulate(adj, *g, gout, |go, i| {
                    let pc = pv[i].max(eps).min(one - eps);
                    go * ((one - pc).ln() - pc.ln())
                });
            }
            Op::Gather { x, index } => {
                if self.rg(*x) {
                    let n = self.value(*x).numel();
                    let dx = slot(adj, *x, n);
                    for (&src, &g) in index.iter().zip(gout) {
                        dx[src] = dx[src] + g;
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if self.rg(p) {
                        let dp = slot(adj, p, len);
                        for (d, &g) in dp.iter_mut().zip(&gout[off..off + len]) {
                            *d = *d + g;
                        }
                    }
                    off += len;
                }
            }
            Op::Reshape(x) => self.accumulate(adj, *x, gout, |g, _| g),
        }
    }

    /// `adj[v][i] += f(gout[i], i)`; with an empty `gout`, `f` receives zero
    /// and must broadcast a scalar upstream gradient itself.
    fn accumulate(&self, adj: &mut [Option<Vec<T>>], v: Var, gout: &[T], f: impl Fn(T, usize) -> T) {
        if !self.rg(v) {
            return;
        }
        let n = self.value(v).numel();
        let buf = slot(adj, v, n);
        if gout.is_empty() {
            for (i, d) in buf.iter_mut().enumerate() {
                *d = *d + f(T::zero(), i);
            }
        } else {
            for (i, (d, &g)) in buf.iter_mut().zip(gout).enumerate() {
                *d = *d + f(g, i);
            }
        }
    }
}

fn slot<T: Real>(adj: &mut [Option<Vec<T>>], v: Var, n: usize) -> &mut Vec<T> {
    adj[v.0].get_or_insert_with(|| vec![T::zero(); n])
}

fn take_slot<T: Real>(adj: &mut [Option<Vec<T>>], v: Var, n: usize) -> Vec<T> {
    adj[v.0].take().unwrap_or_else(|| vec![T::zero(); n])
}
