//! Reverse-mode automatic differentiation over batch-first tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Loss functions
//! living outside the tape hand their analytic gradients back through
//! [`Tape::backward`] as seeds on the nodes they consumed.

use super::conv::{conv3d_backward, conv3d_forward, gemm, ConvGeometry};
use super::params::ParamStore;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    /// `[N, C, T, H, W] -> [N, C]`
    SpatioTemporal,
    /// `[N, C, T, H, W] -> [N, C, H, W]`
    Temporal,
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Variable,
    Param { group: usize, offset: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv3d { x: Var, w: Var, b: Var, geom: ConvGeometry },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    Reshape(Var),
    MeanPool { x: Var, kind: PoolKind },
    Upsample { x: Var, factors: [usize; 3] },
    SwapLast(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient retained on a leaf (`variable` or `param`) after `backward`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A leaf whose gradient is retained.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Variable, true)
    }

    /// Binds a named parameter. `group = None` binds it as a constant (no
    /// gradient flows into it).
    pub fn param(&mut self, store: &ParamStore, name: &str, group: Option<usize>) -> Var {
        let spec = store
            .spec(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        let value = Tensor::new(
            spec.shape.clone(),
            store.data()[spec.offset..spec.offset + spec.len()].to_vec(),
        );
        match group {
            Some(group) => self.push(
                value,
                Op::Param {
                    group,
                    offset: spec.offset,
                },
                true,
            ),
            None => self.push(value, Op::Constant, false),
        }
    }

    /// `y = x W^T + b` with `x: [N, in]` (trailing axes flattened), `W: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let n = xv.batch();
        let d_in = xv.row_len();
        let d_out = wv.shape[0];
        assert_eq!(wv.shape[1], d_in, "linear input width mismatch");
        let mut out = vec![0.0; n * d_out];
        if let Some(b) = b {
            let bv = &self.nodes[b.0].value.data;
            for row in out.chunks_mut(d_out) {
                row.copy_from_slice(bv);
            }
        }
        gemm(n, d_in, d_out, &xv.data, false, &wv.data, true, 1.0, &mut out);
        let rg = self.rg(x) || self.rg(w) || b.map_or(false, |b| self.rg(b));
        self.push(Tensor::new(vec![n, d_out], out), Op::Linear { x, w, b }, rg)
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Var {
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.row_len(), geom.in_len(), "conv input shape mismatch");
        let n = xv.batch();
        let out = conv3d_forward(
            &geom,
            &xv.data,
            &self.nodes[w.0].value.data,
            &self.nodes[b.0].value.data,
        );
        let [t, h, wd] = geom.output();
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(
            Tensor::new(vec![n, geom.out_channels, t, h, wd], out),
            Op::Conv3d { x, w, b, geom },
            rg,
        )
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xv = &self.nodes[x.0].value;
        let out = Tensor::new(xv.shape.clone(), xv.data.iter().map(|&v| f(v)).collect());
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, |v| scale * v + shift, Op::Affine { x, scale })
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(av.len(), bv.len(), "elementwise operand length mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape.clone(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let xv = &self.nodes[x.0].value;
        let out = Tensor::new(shape, xv.data.clone());
        let rg = self.rg(x);
        self.push(out, Op::Reshape(x), rg)
    }

    pub fn mean_pool(&mut self, x: Var, kind: PoolKind) -> Var {
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.shape.len(), 5, "mean_pool expects [N, C, T, H, W]");
        let (n, c, t, h, w) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3], xv.shape[4]);
        let out = match kind {
            PoolKind::SpatioTemporal => {
                let cell = t * h * w;
                let data = xv
                    .data
                    .chunks(cell)
                    .map(|ch| ch.iter().sum::<f64>() / cell as f64)
                    .collect();
                Tensor::new(vec![n, c], data)
            }
            PoolKind::Temporal => {
                let plane = h * w;
                let mut data = vec![0.0; n * c * plane];
                for nc in 0..n * c {
                    let src = &xv.data[nc * t * plane..(nc + 1) * t * plane];
                    let dst = &mut data[nc * plane..(nc + 1) * plane];
                    for ts in src.chunks(plane) {
                        for (d, s) in dst.iter_mut().zip(ts) {
                            *d += s;
                        }
                    }
                    for d in dst.iter_mut() {
                        *d /= t as f64;
                    }
                }
                Tensor::new(vec![n, c, h, w], data)
            }
        };
        let rg = self.rg(x);
        self.push(out, Op::MeanPool { x, kind }, rg)
    }

    /// Nearest-neighbour upsampling of `[N, C, T, H, W]` by integer factors.
    pub fn upsample(&mut self, x: Var, factors: [usize; 3]) -> Var {
        let xv = &self.nodes[x.0].value;
        let (n, c, t, h, w) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3], xv.shape[4]);
        let (ft, fh, fw) = (factors[0], factors[1], factors[2]);
        let (to, ho, wo) = (t * ft, h * fh, w * fw);
        let mut data = vec![0.0; n * c * to * ho * wo];
        for nc in 0..n * c {
            let src = &xv.data[nc * t * h * w..(nc + 1) * t * h * w];
            let dst = &mut data[nc * to * ho * wo..(nc + 1) * to * ho * wo];
            for a in 0..to {
                for b in 0..ho {
                    for cc in 0..wo {
                        dst[(a * ho + b) * wo + cc] = src[((a / ft) * h + b / fh) * w + cc / fw];
                    }
                }
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor::new(vec![n, c, to, ho, wo], data),
            Op::Upsample { x, factors },
            rg,
        )
    }

    /// `[N, A, rest...] -> [N, prod(rest), A]`, e.g. channels-first feature maps
    /// to per-cell rows.
    pub fn swap_last(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let n = xv.shape[0];
        let a = xv.shape[1];
        let b: usize = xv.shape[2..].iter().product();
        let mut data = vec![0.0; xv.len()];
        for s in 0..n {
            let src = &xv.data[s * a * b..(s + 1) * a * b];
            let dst = &mut data[s * a * b..(s + 1) * a * b];
            for i in 0..a {
                for j in 0..b {
                    dst[j * a + i] = src[i * b + j];
                }
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::new(vec![n, b, a], data), Op::SwapLast(x), rg)
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contribution) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    /// Back-propagates the given output gradients through the recorded graph.
    pub fn backward(&mut self, seeds: &[(Var, &[f64])]) {
        self.grads = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            assert_eq!(
                self.nodes[v.0].value.len(),
                g.len(),
                "seed gradient length mismatch"
            );
            self.accumulate(*v, g.to_vec());
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Constant => {}
                Op::Variable | Op::Param { .. } => {
                    self.grads[i] = Some(g);
                }
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let n = xv.batch();
                    let d_in = xv.row_len();
                    let d_out = wv.shape[0];
                    let gx = if self.rg(x) {
                        let mut gx = vec![0.0; n * d_in];
                        gemm(n, d_out, d_in, &g, false, &wv.data, false, 0.0, &mut gx);
                        Some(gx)
                    } else {
                        None
                    };
                    let gw = if self.rg(w) {
                        let mut gw = vec![0.0; d_out * d_in];
                        gemm(d_out, n, d_in, &g, true, &xv.data, false, 0.0, &mut gw);
                        Some(gw)
                    } else {
                        None
                    };
                    if let Some(b) = b {
                        if self.rg(b) {
                            let mut gb = vec![0.0; d_out];
                            for row in g.chunks(d_out) {
                                for (a, r) in gb.iter_mut().zip(row) {
                                    *a += r;
                                }
                            }
                            self.accumulate(b, gb);
                        }
                    }
                    if let Some(gx) = gx {
                        self.accumulate(x, gx);
                    }
                    if let Some(gw) = gw {
                        self.accumulate(w, gw);
                    }
                }
                Op::Conv3d { x, w, b, geom } => {
                    let mut gw = self.rg(w).then(|| vec![0.0; geom.weight_len()]);
                    let mut gb = self.rg(b).then(|| vec![0.0; geom.out_channels]);
                    let gx = conv3d_backward(
                        &geom,
                        &self.nodes[x.0].value.data,
                        &self.nodes[w.0].value.data,
                        &g,
                        gw.as_deref_mut(),
                        gb.as_deref_mut(),
                        self.rg(x),
                    );
                    if let Some(gx) = gx {
                        self.accumulate(x, gx);
                    }
                    if let Some(gw) = gw {
                        self.accumulate(w, gw);
                    }
                    if let Some(gb) = gb {
                        self.accumulate(b, gb);
                    }
                }
                Op::Relu(x) => {
                    let y = &self.nodes[i].value.data;
                    let c = g
                        .iter()
                        .zip(y)
                        .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.accumulate(x, c);
                }
                Op::Sigmoid(x) => {
                    let y = &self.nodes[i].value.data;
                    let c = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                    self.accumulate(x, c);
                }
                Op::Tanh(x) => {
                    let y = &self.nodes[i].value.data;
                    let c = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                    self.accumulate(x, c);
                }
                Op::Softplus(x) => {
                    let xv = &self.nodes[x.0].value.data;
                    let c = g.iter().zip(xv).map(|(g, x)| g * sigmoid(*x)).collect();
                    self.accumulate(x, c);
                }
                Op::Exp(x) => {
                    let y = &self.nodes[i].value.data;
                    let c = g.iter().zip(y).map(|(g, y)| g * y).collect();
                    self.accumulate(x, c);
                }
                Op::Add(a, b) => {
                    if self.rg(b) {
                        self.accumulate(b, g.clone());
                    }
                    self.accumulate(a, g);
                }
                Op::Sub(a, b) => {
                    if self.rg(b) {
                        self.accumulate(b, g.iter().map(|v| -v).collect());
                    }
                    self.accumulate(a, g);
                }
                Op::Mul(a, b) => {
                    if self.rg(a) {
                        let bv = &self.nodes[b.0].value.data;
                        let c = g.iter().zip(bv).map(|(g, y)| g * y).collect();
                        self.accumulate(a, c);
                    }
                    if self.rg(b) {
                        let av = &self.nodes[a.0].value.data;
                        let c = g.iter().zip(av).map(|(g, x)| g * x).collect();
                        self.accumulate(b, c);
                    }
                }
                Op::Affine { x, scale } => {
                    self.accumulate(x, g.iter().map(|v| v * scale).collect());
                }
                Op::Reshape(x) => self.accumulate(x, g),
                Op::MeanPool { x, kind } => {
                    let shape = self.nodes[x.0].value.shape.clone();
                    let (n, c, t, h, w) = (shape[0], shape[1], shape[2], shape[3], shape[4]);
                    let mut gx = vec![0.0; n * c * t * h * w];
                    match kind {
                        PoolKind::SpatioTemporal => {
                            let cell = t * h * w;
                            for (nc, chunk) in gx.chunks_mut(cell).enumerate() {
                                chunk.fill(g[nc] / cell as f64);
                            }
                        }
                        PoolKind::Temporal => {
                            let plane = h * w;
                            for nc in 0..n * c {
                                let src = &g[nc * plane..(nc + 1) * plane];
                                let dst = &mut gx[nc * t * plane..(nc + 1) * t * plane];
                                for ts in dst.chunks_mut(plane) {
                                    for (d, s) in ts.iter_mut().zip(src) {
                                        *d = s / t as f64;
                                    }
                                }
                            }
                        }
                    }
                    self.accumulate(x, gx);
                }
                Op::Upsample { x, factors } => {
                    let shape = self.nodes[x.0].value.shape.clone();
                    let (n, c, t, h, w) = (shape[0], shape[1], shape[2], shape[3], shape[4]);
                    let (ft, fh, fw) = (factors[0], factors[1], factors[2]);
                    let (to, ho, wo) = (t * ft, h * fh, w * fw);
                    let mut gx = vec![0.0; n * c * t * h * w];
                    for nc in 0..n * c {
                        let src = &g[nc * to * ho * wo..(nc + 1) * to * ho * wo];
                        let dst = &mut gx[nc * t * h * w..(nc + 1) * t * h * w];
                        for a in 0..to {
                            for b in 0..ho {
                                for cc in 0..wo {
                                    dst[((a / ft) * h + b / fh) * w + cc / fw] +=
                                        src[(a * ho + b) * wo + cc];
                                }
                            }
                        }
                    }
                    self.accumulate(x, gx);
                }
                Op::SwapLast(x) => {
                    let shape = self.nodes[x.0].value.shape.clone();
                    let n = shape[0];
                    let a = shape[1];
                    let b: usize = shape[2..].iter().product();
                    let mut gx = vec![0.0; g.len()];
                    for s in 0..n {
                        let src = &g[s * a * b..(s + 1) * a * b];
                        let dst = &mut gx[s * a * b..(s + 1) * a * b];
                        for i in 0..a {
                            for j in 0..b {
                                dst[i * b + j] = src[j * a + i];
                            }
                        }
                    }
                    self.accumulate(x, gx);
                }
            }
        }
    }

    /// Adds the gradients of every parameter bound under `group` into `out`
    /// (a flat buffer with the owning store's layout).
    pub fn param_grads(&self, group: usize, out: &mut [f64]) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param { group: g, offset } = node.op {
                if g != group {
                    continue;
                }
                if let Some(grad) = &self.grads[i] {
                    for (o, v) in out[offset..offset + grad.len()].iter_mut().zip(grad) {
                        *o += v;
                    }
                }
            }
        }
    }
}
