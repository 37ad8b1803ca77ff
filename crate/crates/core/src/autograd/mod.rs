//! Reverse-mode differentiation over the operations used in training.
//!
//! A [`Tape`] is built eagerly: every op computes its value immediately and
//! records what backward needs (operands, saved activations, the corners an
//! interval product selected). [`Tape::backward`] walks the records in
//! reverse exactly once.
//!
//! Interval ops have two outputs, lower and upper. Both are ordinary
//! real-valued slots, so a parameter that feeds both bounds (a radius, say)
//! receives gradient through each.

mod gradcheck;
pub(crate) mod kernels;

use ndarray::{Array2, Zip};

pub use gradcheck::gradcheck;
pub use kernels::{Matrix, PoolGeometry};

use crate::error::{Error, Result};
use crate::interval::{sigmoid, Activation, ConvGeometry};
use crate::nn::param_box::reparam_parts;
use kernels::Corners;

/// Handle to one output slot of a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    node: usize,
    slot: usize,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Elementwise minimum; ties take the first operand.
    Min(Var, Var),
    Activation(Var, Activation),
    Select {
        mask: Array2<bool>,
        on_true: Var,
        on_false: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    IntervalLinear {
        xl: Var,
        xu: Var,
        wl: Var,
        wu: Var,
        bias: Option<(Var, Var)>,
        corners: Corners,
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
        cols: Matrix,
    },
    IntervalConv {
        xl: Var,
        xu: Var,
        wl: Var,
        wu: Var,
        bias: Option<(Var, Var)>,
        geom: ConvGeometry,
        cols_l: Matrix,
        cols_u: Matrix,
        corners: Corners,
    },
    MaxPool {
        x: Var,
        geom: PoolGeometry,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        geom: PoolGeometry,
    },
    /// Outputs `[center, radius]` of the nested-box reparameterization.
    /// Slopes are cached from the forward pass: `center_mu` is
    /// `d center / d mu`, `radius_mu` and `radius_nu` are the partials of
    /// the radius.
    Reparam {
        mu: Var,
        nu: Var,
        center_mu: Matrix,
        radius_mu: Matrix,
        radius_nu: Matrix,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Matrix,
    },
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    values: Vec<Matrix>,
    requires_grad: bool,
}

/// Eagerly evaluated record of primitive applications.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every parameter leaf, indexed
/// by the id passed to [`Tape::param`].
#[derive(Debug, Clone, Default)]
pub struct GradBuffer {
    grads: Vec<Option<Matrix>>,
}

impl GradBuffer {
    pub fn get(&self, param: usize) -> Option<&Matrix> {
        self.grads.get(param).and_then(Option::as_ref)
    }

    pub fn take(&mut self, param: usize) -> Option<Matrix> {
        self.grads.get_mut(param).and_then(Option::take)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(Option::is_none)
    }

    /// Resets every accumulator to zero, keeping shapes.
    pub fn zero(&mut self) {
        for g in self.grads.iter_mut().flatten() {
            g.fill(0.0);
        }
    }

    fn accumulate(&mut self, param: usize, g: &Matrix) {
        if self.grads.len() <= param {
            self.grads.resize(param + 1, None);
        }
        match &mut self.grads[param] {
            Some(acc) => *acc += g,
            slot @ None => *slot = Some(g.clone()),
        }
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.node].values[v.slot]
    }

    /// Scalar value of a `1x1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.node].requires_grad
    }

    fn push(&mut self, op: Op, values: Vec<Matrix>, inputs: &[Var]) -> usize {
        let requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        self.nodes.push(Node {
            op,
            values,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    fn push1(&mut self, op: Op, value: Matrix, inputs: &[Var]) -> Var {
        let node = self.push(op, vec![value], inputs);
        Var { node, slot: 0 }
    }

    fn push2(&mut self, op: Op, a: Matrix, b: Matrix, inputs: &[Var]) -> (Var, Var) {
        let node = self.push(op, vec![a, b], inputs);
        (Var { node, slot: 0 }, Var { node, slot: 1 })
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            values: vec![value],
            requires_grad: false,
        });
        Var {
            node: self.nodes.len() - 1,
            slot: 0,
        }
    }

    /// Leaf whose gradient is reported under `id` in the [`GradBuffer`].
    pub fn param(&mut self, id: usize, value: Matrix) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            values: vec![value],
            requires_grad: true,
        });
        Var {
            node: self.nodes.len() - 1,
            slot: 0,
        }
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (da, db) = (self.value(a).dim(), self.value(b).dim());
        if da != db {
            return Err(Error::shape(op, &[da.0, da.1], &[db.0, db.1]));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let v = self.value(a) + self.value(b);
        Ok(self.push1(Op::Add(a, b), v, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let v = self.value(a) - self.value(b);
        Ok(self.push1(Op::Sub(a, b), v, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let v = self.value(a) * self.value(b);
        Ok(self.push1(Op::Mul(a, b), v, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push1(Op::Scale(a, k), v, &[a])
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("min", a, b)?;
        let mut v = self.value(a).clone();
        Zip::from(&mut v).and(self.value(b)).for_each(|x, &y| {
            if y < *x {
                *x = y;
            }
        });
        Ok(self.push1(Op::Min(a, b), v, &[a, b]))
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        let v = self.value(x).mapv(|z| act.apply(z));
        self.push1(Op::Activation(x, act), v, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    /// Elementwise `mask ? on_true : on_false`.
    pub fn select(&mut self, mask: Array2<bool>, on_true: Var, on_false: Var) -> Result<Var> {
        self.check_same("select", on_true, on_false)?;
        let shape = self.value(on_true).dim();
        if mask.dim() != shape {
            return Err(Error::shape(
                "select mask",
                &[shape.0, shape.1],
                &[mask.nrows(), mask.ncols()],
            ));
        }
        let mut v = self.value(on_false).clone();
        Zip::from(&mut v)
            .and(&mask)
            .and(self.value(on_true))
            .for_each(|o, &m, &t| {
                if m {
                    *o = t;
                }
            });
        Ok(self.push1(
            Op::Select {
                mask,
                on_true,
                on_false,
            },
            v,
            &[on_true, on_false],
        ))
    }

    fn check_bias(&self, op: &'static str, b: Var, out: usize) -> Result<()> {
        let d = self.value(b).dim();
        if d != (1, out) {
            return Err(Error::shape(op, &[1, out], &[d.0, d.1]));
        }
        Ok(())
    }

    /// `x wᵀ + b` with `x: [batch, in]`, `w: [out, in]`, `b: [1, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xd, wd) = (self.value(x).dim(), self.value(w).dim());
        if xd.1 != wd.1 {
            return Err(Error::shape("linear", &[xd.0, wd.1], &[xd.0, xd.1]));
        }
        let mut z = kernels::linear(self.value(x), self.value(w));
        if let Some(b) = b {
            self.check_bias("linear bias", b, wd.0)?;
            kernels::add_bias(&mut z, self.value(b));
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push1(Op::Linear { x, w, b }, z, &inputs))
    }

    /// Exact interval affine map `[xl, xu] [wl, wu]ᵀ + [bl, bu]`.
    pub fn interval_linear(
        &mut self,
        (xl, xu): (Var, Var),
        (wl, wu): (Var, Var),
        bias: Option<(Var, Var)>,
    ) -> Result<(Var, Var)> {
        self.check_same("interval_linear input", xl, xu)?;
        self.check_same("interval_linear weight", wl, wu)?;
        let (xd, wd) = (self.value(xl).dim(), self.value(wl).dim());
        if xd.1 != wd.1 {
            return Err(Error::shape("interval_linear", &[xd.0, wd.1], &[xd.0, xd.1]));
        }
        let (mut lo, mut hi, corners) =
            kernels::interval_linear(self.value(xl), self.value(xu), self.value(wl), self.value(wu), xl == xu);
        if let Some((bl, bu)) = bias {
            self.check_bias("interval_linear bias", bl, wd.0)?;
            self.check_bias("interval_linear bias", bu, wd.0)?;
            kernels::add_bias(&mut lo, self.value(bl));
            kernels::add_bias(&mut hi, self.value(bu));
        }
        let mut inputs = vec![xl, xu, wl, wu];
        if let Some((bl, bu)) = bias {
            inputs.extend([bl, bu]);
        }
        let op = Op::IntervalLinear {
            xl,
            xu,
            wl,
            wu,
            bias,
            corners,
        };
        Ok(self.push2(op, lo, hi, &inputs))
    }

    fn check_conv(&self, x: Var, w: Var, geom: &ConvGeometry) -> Result<()> {
        geom.validate()?;
        let (xd, wd) = (self.value(x).dim(), self.value(w).dim());
        if xd.1 != geom.input_len() {
            return Err(Error::shape("conv input", &[xd.0, geom.input_len()], &[xd.0, xd.1]));
        }
        if wd != (geom.out_channels, geom.patch_len()) {
            return Err(Error::shape(
                "conv kernel",
                &[geom.out_channels, geom.patch_len()],
                &[wd.0, wd.1],
            ));
        }
        Ok(())
    }

    /// Convolution with kernel `w: [out_c, in_c * k * k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeometry) -> Result<Var> {
        self.check_conv(x, w, &geom)?;
        let batch = self.value(x).nrows();
        let cols = kernels::im2col(self.value(x), &geom);
        let mut y = kernels::linear(&cols, self.value(w));
        if let Some(b) = b {
            self.check_bias("conv bias", b, geom.out_channels)?;
            kernels::add_bias(&mut y, self.value(b));
        }
        let out = kernels::positions_to_features(&y, &geom, batch);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push1(Op::Conv { x, w, b, geom, cols }, out, &inputs))
    }

    pub fn interval_conv2d(
        &mut self,
        (xl, xu): (Var, Var),
        (wl, wu): (Var, Var),
        bias: Option<(Var, Var)>,
        geom: ConvGeometry,
    ) -> Result<(Var, Var)> {
        self.check_same("interval_conv2d input", xl, xu)?;
        self.check_same("interval_conv2d kernel", wl, wu)?;
        self.check_conv(xl, wl, &geom)?;
        let batch = self.value(xl).nrows();
        let cols_l = kernels::im2col(self.value(xl), &geom);
        let cols_u = if xl == xu {
            cols_l.clone()
        } else {
            kernels::im2col(self.value(xu), &geom)
        };
        let (mut lo, mut hi, corners) =
            kernels::interval_linear(&cols_l, &cols_u, self.value(wl), self.value(wu), xl == xu);
        if let Some((bl, bu)) = bias {
            self.check_bias("interval_conv2d bias", bl, geom.out_channels)?;
            self.check_bias("interval_conv2d bias", bu, geom.out_channels)?;
            kernels::add_bias(&mut lo, self.value(bl));
            kernels::add_bias(&mut hi, self.value(bu));
        }
        let lo = kernels::positions_to_features(&lo, &geom, batch);
        let hi = kernels::positions_to_features(&hi, &geom, batch);
        let mut inputs = vec![xl, xu, wl, wu];
        if let Some((bl, bu)) = bias {
            inputs.extend([bl, bu]);
        }
        let op = Op::IntervalConv {
            xl,
            xu,
            wl,
            wu,
            bias,
            geom,
            cols_l,
            cols_u,
            corners,
        };
        Ok(self.push2(op, lo, hi, &inputs))
    }

    pub fn max_pool(&mut self, x: Var, geom: PoolGeometry) -> Result<Var> {
        let d = self.value(x).dim();
        if d.1 != geom.input_len() || geom.size == 0 {
            return Err(Error::shape("max_pool", &[d.0, geom.input_len()], &[d.0, d.1]));
        }
        let (y, argmax) = kernels::max_pool(self.value(x), &geom);
        Ok(self.push1(Op::MaxPool { x, geom, argmax }, y, &[x]))
    }

    pub fn avg_pool(&mut self, x: Var, geom: PoolGeometry) -> Result<Var> {
        let d = self.value(x).dim();
        if d.1 != geom.input_len() || geom.size == 0 {
            return Err(Error::shape("avg_pool", &[d.0, geom.input_len()], &[d.0, d.1]));
        }
        let y = kernels::avg_pool(self.value(x), &geom);
        Ok(self.push1(Op::AvgPool { x, geom }, y, &[x]))
    }

    /// Nested-box reparameterization of one parameter tensor. Returns
    /// `(center, radius)` computed from free variables `mu`, `nu` and the
    /// enclosing box `(anchor, radius)`.
    pub fn reparam(&mut self, mu: Var, nu: Var, anchor: &Matrix, radius: &Matrix) -> Result<(Var, Var)> {
        self.check_same("reparam", mu, nu)?;
        let d = self.value(mu).dim();
        if anchor.dim() != d || radius.dim() != d {
            return Err(Error::shape(
                "reparam box",
                &[d.0, d.1],
                &[anchor.nrows(), anchor.ncols()],
            ));
        }
        let n = d.0 * d.1;
        let (m, v) = (self.value(mu), self.value(nu));
        let mut out: [Vec<f64>; 5] = std::array::from_fn(|_| Vec::with_capacity(n));
        for (((&m, &v), &a), &r) in m.iter().zip(v.iter()).zip(anchor.iter()).zip(radius.iter()) {
            let (t, s) = (m.tanh(), sigmoid(v));
            let el = reparam_parts(t, s, a, r);
            // The radius is `s * gap` with `gap = (1 - |t|) r` and
            // `d gap / d center = branch`.
            let center_mu = (1.0 - t * t) * r;
            out[0].push(el.center);
            out[1].push(el.radius);
            out[2].push(center_mu);
            out[3].push(s * f64::from(el.branch) * center_mu);
            out[4].push(s * (1.0 - s) * (1.0 - t.abs()) * r);
        }
        let [center, eps, center_mu, radius_mu, radius_nu] =
            out.map(|o| Matrix::from_shape_vec(d, o).expect("element count matches"));
        let op = Op::Reparam {
            mu,
            nu,
            center_mu,
            radius_mu,
            radius_nu,
        };
        Ok(self.push2(op, center, eps, &[mu, nu]))
    }

    /// Mean cross-entropy of `logits: [batch, classes]` against `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (batch, classes) = self.value(logits).dim();
        if labels.len() != batch || batch == 0 {
            return Err(Error::shape("cross_entropy labels", &[batch], &[labels.len()]));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let (losses, probs) = kernels::softmax_cross_entropy(self.value(logits), labels);
        let mean = losses.iter().sum::<f64>() / batch as f64;
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push1(op, Matrix::from_elem((1, 1), mean), &[logits]))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.sum() / v.len() as f64;
        self.push1(Op::Mean(x), Matrix::from_elem((1, 1), m), &[x])
    }

    /// Gradients of the scalar `root` (scaled by `seed`) with respect to every
    /// parameter leaf.
    pub fn backward(&self, root: Var, seed: f64) -> Result<GradBuffer> {
        if root.node >= self.nodes.len() {
            return Err(Error::UnknownVariable {
                node: root.node,
                len: self.nodes.len(),
            });
        }
        let rd = self.value(root).dim();
        if rd != (1, 1) {
            return Err(Error::NonScalarRoot { rows: rd.0, cols: rd.1 });
        }
        let mut grads: Vec<Vec<Option<Matrix>>> = self.nodes.iter().map(|n| vec![None; n.values.len()]).collect();
        grads[root.node][root.slot] = Some(Matrix::from_elem((1, 1), seed));
        let mut out = GradBuffer::default();

        for idx in (0..=root.node).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || grads[idx].iter().all(Option::is_none) {
                continue;
            }
            let slot_grads = std::mem::take(&mut grads[idx]);
            let mut send = |v: Var, g: Matrix| {
                if self.requires_grad(v) {
                    match &mut grads[v.node][v.slot] {
                        Some(acc) => *acc += &g,
                        slot @ None => *slot = Some(g),
                    }
                }
            };
            let g0 = slot_grads.first().and_then(Option::as_ref);
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    if let Some(g) = g0 {
                        out.accumulate(*id, g);
                    }
                }
                Op::Add(a, b) => {
                    let g = g0.expect("gradient present");
                    send(*a, g.clone());
                    send(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    let g = g0.expect("gradient present");
                    send(*a, g.clone());
                    send(*b, -g);
                }
                Op::Mul(a, b) => {
                    let g = g0.expect("gradient present");
                    send(*a, g * self.value(*b));
                    send(*b, g * self.value(*a));
                }
                Op::Scale(a, k) => send(*a, g0.expect("gradient present") * *k),
                Op::Min(a, b) => {
                    let g = g0.expect("gradient present");
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut ga = g.clone();
                    let mut gb = g.clone();
                    Zip::from(&mut ga)
                        .and(&mut gb)
                        .and(va)
                        .and(vb)
                        .for_each(|ga, gb, &x, &y| {
                            if y < x {
                                *ga = 0.0;
                            } else {
                                *gb = 0.0;
                            }
                        });
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Activation(x, act) => {
                    let mut g = g0.expect("gradient present").clone();
                    Zip::from(&mut g)
                        .and(self.value(*x))
                        .for_each(|g, &z| *g *= act.derivative(z));
                    send(*x, g);
                }
                Op::Select {
                    mask,
                    on_true,
                    on_false,
                } => {
                    let g = g0.expect("gradient present");
                    let mut gt = g.clone();
                    let mut gf = g.clone();
                    Zip::from(&mut gt).and(&mut gf).and(mask).for_each(|t, f, &m| {
                        if m {
                            *f = 0.0;
                        } else {
                            *t = 0.0;
                        }
                    });
                    send(*on_true, gt);
                    send(*on_false, gf);
                }
                Op::Linear { x, w, b } => {
                    let g = g0.expect("gradient present");
                    if self.requires_grad(*x) {
                        send(*x, g.dot(self.value(*w)));
                    }
                    if self.requires_grad(*w) {
                        send(*w, g.t().dot(self.value(*x)));
                    }
                    if let Some(b) = b {
                        send(*b, kernels::column_sums(g));
                    }
                }
                Op::IntervalLinear {
                    xl,
                    xu,
                    wl,
                    wu,
                    bias,
                    corners,
                } => {
                    let (glo, ghi) = bound_grads(&slot_grads);
                    let need_x = self.requires_grad(*xl) || self.requires_grad(*xu);
                    let need_w = self.requires_grad(*wl) || self.requires_grad(*wu);
                    let g = kernels::interval_linear_backward(
                        self.value(*xl),
                        self.value(*xu),
                        self.value(*wl),
                        self.value(*wu),
                        corners,
                        xl == xu,
                        &glo,
                        &ghi,
                        need_x,
                        need_w,
                    );
                    if let Some((bl, bu)) = bias {
                        send(*bl, kernels::column_sums(&glo));
                        send(*bu, kernels::column_sums(&ghi));
                    }
                    if let Some(m) = g.xl {
                        send(*xl, m);
                    }
                    if let Some(m) = g.xu {
                        send(*xu, m);
                    }
                    if let Some(m) = g.wl {
                        send(*wl, m);
                    }
                    if let Some(m) = g.wu {
                        send(*wu, m);
                    }
                }
                Op::Conv { x, w, b, geom, cols } => {
                    let g = kernels::features_to_positions(g0.expect("gradient present"), geom);
                    if self.requires_grad(*x) {
                        let gcols = g.dot(self.value(*w));
                        send(*x, kernels::col2im(&gcols, geom, self.value(*x).nrows()));
                    }
                    if self.requires_grad(*w) {
                        send(*w, g.t().dot(cols));
                    }
                    if let Some(b) = b {
                        send(*b, kernels::column_sums(&g));
                    }
                }
                Op::IntervalConv {
                    xl,
                    xu,
                    wl,
                    wu,
                    bias,
                    geom,
                    cols_l,
                    cols_u,
                    corners,
                } => {
                    let (glo, ghi) = bound_grads(&slot_grads);
                    let glo = kernels::features_to_positions(&glo, geom);
                    let ghi = kernels::features_to_positions(&ghi, geom);
                    let need_x = self.requires_grad(*xl) || self.requires_grad(*xu);
                    let need_w = self.requires_grad(*wl) || self.requires_grad(*wu);
                    let g = kernels::interval_linear_backward(
                        cols_l,
                        cols_u,
                        self.value(*wl),
                        self.value(*wu),
                        corners,
                        xl == xu,
                        &glo,
                        &ghi,
                        need_x,
                        need_w,
                    );
                    if let Some((bl, bu)) = bias {
                        send(*bl, kernels::column_sums(&glo));
                        send(*bu, kernels::column_sums(&ghi));
                    }
                    let batch = self.value(*xl).nrows();
                    if let Some(m) = g.xl {
                        send(*xl, kernels::col2im(&m, geom, batch));
                    }
                    if let Some(m) = g.xu {
                        send(*xu, kernels::col2im(&m, geom, batch));
                    }
                    if let Some(m) = g.wl {
                        send(*wl, m);
                    }
                    if let Some(m) = g.wu {
                        send(*wu, m);
                    }
                }
                Op::MaxPool { x, geom, argmax } => {
                    send(
                        *x,
                        kernels::max_pool_backward(g0.expect("gradient present"), argmax, geom),
                    );
                }
                Op::AvgPool { x, geom } => {
                    send(*x, kernels::avg_pool_backward(g0.expect("gradient present"), geom));
                }
                Op::Reparam {
                    mu,
                    nu,
                    center_mu,
                    radius_mu,
                    radius_nu,
                } => {
                    let (gc, ge) = (slot_grads[0].as_ref(), slot_grads[1].as_ref());
                    if self.requires_grad(*mu) {
                        let gmu = match (gc, ge) {
                            (Some(gc), Some(ge)) => Zip::from(gc)
                                .and(ge)
                                .and(center_mu)
                                .and(radius_mu)
                                .map_collect(|&gc, &ge, &cm, &rm| gc * cm + ge * rm),
                            (Some(gc), None) => gc * center_mu,
                            (None, Some(ge)) => ge * radius_mu,
                            (None, None) => Matrix::zeros(center_mu.dim()),
                        };
                        send(*mu, gmu);
                    }
                    if let (true, Some(ge)) = (self.requires_grad(*nu), ge) {
                        send(*nu, ge * radius_nu);
                    }
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let g = g0.expect("gradient present")[[0, 0]];
                    let batch = labels.len() as f64;
                    let mut d = probs.clone();
                    for (mut row, &y) in d.rows_mut().into_iter().zip(labels) {
                        row[y] -= 1.0;
                    }
                    d *= g / batch;
                    send(*logits, d);
                }
                Op::Mean(x) => {
                    let g = g0.expect("gradient present")[[0, 0]];
                    let v = self.value(*x);
                    send(*x, Matrix::from_elem(v.dim(), g / v.len() as f64));
                }
            }
        }
        Ok(out)
    }
}

fn bound_grads(slot_grads: &[Option<Matrix>]) -> (Matrix, Matrix) {
    let shape = slot_grads
        .iter()
        .flatten()
        .next()
        .map(|g| g.dim())
        .expect("at least one bound has a gradient");
    let lo = slot_grads[0].clone().unwrap_or_else(|| Matrix::zeros(shape));
    let hi = slot_grads[1].clone().unwrap_or_else(|| Matrix::zeros(shape));
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let w = tape.param(0, array![[3.0]]);
        let y = tape.mul(w, w).unwrap();
        let g = tape.backward(y, 1.0).unwrap();
        assert_eq!(g.get(0).unwrap()[[0, 0]], 6.0);
    }

    #[test]
    fn upper_bound_gradient_wrt_radius() {
        // upper of [w - e, w + e] * [2, 2] at w = 1, e = 0.1 is 2 (w + e)
        let mut tape = Tape::new();
        let w = tape.constant(array![[1.0]]);
        let e = tape.param(0, array![[0.1]]);
        let lo = tape.sub(w, e).unwrap();
        let hi = tape.add(w, e).unwrap();
        let x = tape.constant(array![[2.0]]);
        let (_, up) = tape.interval_linear((x, x), (lo, hi), None).unwrap();
        let root = tape.mean(up);
        let g = tape.backward(root, 1.0).unwrap();
        assert!((g.get(0).unwrap()[[0, 0]] - 2.0).abs() < 1e-15);
        assert!((tape.scalar(root) - 2.2).abs() < 1e-15);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let w = tape.param(0, array![[1.0, 2.0]]);
        let y = tape.relu(w);
        assert!(matches!(
            tape.backward(y, 1.0),
            Err(Error::NonScalarRoot { rows: 1, cols: 2 })
        ));
    }

    #[test]
    fn backward_rejects_foreign_variable() {
        let mut other = Tape::new();
        let a = other.param(0, array![[1.0]]);
        let _ = other.param(1, array![[1.0]]);
        let b = other.mean(a);
        let mut tape = Tape::new();
        let _ = tape.param(0, array![[1.0]]);
        assert!(matches!(tape.backward(b, 1.0), Err(Error::UnknownVariable { .. })));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let w = tape.param(0, array![[0.0, 1.0]]);
        let y = tape.relu(w);
        let m = tape.mean(y);
        let g = tape.backward(m, 1.0).unwrap();
        assert_eq!(g.get(0).unwrap(), &array![[0.0, 0.5]]);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut tape = Tape::new();
        let z = tape.constant(array![[0.0, 0.0]]);
        assert!(matches!(
            tape.cross_entropy(z, &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn repeated_backward_is_bit_identical() {
        let mut tape = Tape::new();
        let w = tape.param(0, array![[0.3, -0.7], [1.1, 0.2]]);
        let x = tape.constant(array![[1.0, 2.0], [-0.5, 0.25]]);
        let z = tape.linear(x, w, None).unwrap();
        let a = tape.tanh(z);
        let l = tape.cross_entropy(a, &[0, 1]).unwrap();
        let g1 = tape.backward(l, 1.0).unwrap();
        let g2 = tape.backward(l, 1.0).unwrap();
        let b1: Vec<u64> = g1.get(0).unwrap().iter().map(|v| v.to_bits()).collect();
        let b2: Vec<u64> = g2.get(0).unwrap().iter().map(|v| v.to_bits()).collect();
        assert_eq!(b1, b2);
    }
}
