use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{Architecture, Heads, Plan, Stage};
use super::param_box::ParamBox;
use crate::autograd::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::interval::{Activation, IntervalTensor};

/// Plain (non-interval) output layer owned by a single task.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    /// `[outputs, features]`
    pub w: Matrix,
    /// `[1, outputs]`
    pub b: Matrix,
}

/// A compiled architecture plus any per-task heads. Intervalized parameters
/// live outside, in a [`ParamBox`] or a reparameterized state.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    plan: Plan,
    pub heads: Vec<Head>,
}

/// Bounds after each stage of an interval forward pass, input first.
pub type IntervalTrace = Vec<(Matrix, Matrix)>;

fn uniform_init(rng: &mut ChaCha8Rng, shape: (usize, usize), fan_in: usize) -> Matrix {
    let k = 1.0 / (fan_in as f64).sqrt();
    Matrix::from_shape_fn(shape, |_| rng.random_range(-k..k))
}

impl Network {
    /// Compiles `arch` with zero-initialized heads.
    pub fn new(arch: Architecture) -> Result<Self> {
        let plan = arch.plan()?;
        let heads = match arch.heads {
            Heads::Shared => Vec::new(),
            Heads::PerTask(n) => (0..n)
                .map(|_| Head {
                    w: Matrix::zeros((arch.outputs, plan.features)),
                    b: Matrix::zeros((1, arch.outputs)),
                })
                .collect(),
        };
        Ok(Self { arch, plan, heads })
    }

    /// Compiles `arch` and draws initial centers and heads uniformly from
    /// `±1/sqrt(fan_in)`.
    pub fn initialize(arch: Architecture, seed: u64) -> Result<(Self, Vec<Matrix>)> {
        let mut net = Self::new(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centers = Vec::with_capacity(net.plan.shapes.len());
        for stage in &net.plan.stages {
            let (tensor, fan_in) = match *stage {
                Stage::Dense { tensor, inputs, .. } => (tensor, inputs),
                Stage::Conv { tensor, geom } => (tensor, geom.patch_len()),
                _ => continue,
            };
            centers.push(uniform_init(&mut rng, net.plan.shapes[tensor], fan_in));
            centers.push(uniform_init(&mut rng, net.plan.shapes[tensor + 1], fan_in));
        }
        let features = net.plan.features;
        for head in &mut net.heads {
            head.w = uniform_init(&mut rng, head.w.dim(), features);
            head.b = uniform_init(&mut rng, head.b.dim(), features);
        }
        Ok((net, centers))
    }

    /// Rebuilds a network from stored heads.
    pub fn with_heads(arch: Architecture, heads: Vec<Head>) -> Result<Self> {
        let mut net = Self::new(arch)?;
        if heads.len() != net.heads.len() {
            return Err(Error::shape("heads", &[net.heads.len()], &[heads.len()]));
        }
        for (have, want) in heads.iter().zip(&net.heads) {
            if have.w.dim() != want.w.dim() || have.b.dim() != want.b.dim() {
                return Err(Error::shape(
                    "head",
                    &[want.w.nrows(), want.w.ncols()],
                    &[have.w.nrows(), have.w.ncols()],
                ));
            }
        }
        net.heads = heads;
        Ok(net)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn input_len(&self) -> usize {
        self.arch.input.len()
    }

    pub fn outputs(&self) -> usize {
        self.arch.outputs
    }

    pub fn has_task_heads(&self) -> bool {
        matches!(self.arch.heads, Heads::PerTask(_))
    }

    /// Head index to use for `task`, validated against the head mode.
    pub fn head_index(&self, head: Option<usize>) -> Result<Option<usize>> {
        match self.arch.heads {
            Heads::Shared => Ok(None),
            Heads::PerTask(count) => match head {
                None => Err(Error::MissingHead),
                Some(h) if h >= count => Err(Error::UnknownHead { head: h, count }),
                Some(h) => Ok(Some(h)),
            },
        }
    }

    fn check_params(&self, shapes: impl ExactSizeIterator<Item = (usize, usize)>) -> Result<()> {
        let want = &self.plan.shapes;
        let have: Vec<_> = shapes.collect();
        if &have != want {
            let flat = |s: &[(usize, usize)]| s.iter().flat_map(|&(r, c)| [r, c]).collect::<Vec<_>>();
            return Err(Error::shape("network parameters", &flat(want), &flat(&have)));
        }
        Ok(())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.ncols() != self.input_len() {
            return Err(Error::shape(
                "network input",
                &[x.nrows(), self.input_len()],
                &[x.nrows(), x.ncols()],
            ));
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::NotANumber("network input"));
        }
        Ok(())
    }

    /// Records a plain forward pass at `params` (one var per box tensor).
    pub fn center_on_tape(&self, tape: &mut Tape, params: &[Var], head: Option<(Var, Var)>, x: Var) -> Result<Var> {
        self.check_params(params.iter().map(|&p| tape.value(p).dim()))?;
        let mut h = x;
        for stage in &self.plan.stages {
            h = match *stage {
                Stage::Dense { tensor, .. } => tape.linear(h, params[tensor], Some(params[tensor + 1]))?,
                Stage::Conv { tensor, geom } => tape.conv2d(h, params[tensor], Some(params[tensor + 1]), geom)?,
                Stage::Activation(act) => tape.activation(h, act),
                Stage::MaxPool(g) => tape.max_pool(h, g)?,
                Stage::AvgPool(g) => tape.avg_pool(h, g)?,
            };
        }
        match (self.has_task_heads(), head) {
            (true, Some((w, b))) => tape.linear(h, w, Some(b)),
            (true, None) => Err(Error::MissingHead),
            (false, _) => Ok(h),
        }
    }

    /// Records an interval forward pass over the box given as
    /// `(lower, upper)` vars per tensor, starting from `[xl, xu]`.
    pub fn interval_on_tape(
        &self,
        tape: &mut Tape,
        bounds: &[(Var, Var)],
        head: Option<(Var, Var)>,
        x: (Var, Var),
    ) -> Result<(Var, Var)> {
        self.interval_on_tape_traced(tape, bounds, head, x, None)
    }

    fn interval_on_tape_traced(
        &self,
        tape: &mut Tape,
        bounds: &[(Var, Var)],
        head: Option<(Var, Var)>,
        x: (Var, Var),
        mut trace: Option<&mut Vec<(Var, Var)>>,
    ) -> Result<(Var, Var)> {
        self.check_params(bounds.iter().map(|&(l, _)| tape.value(l).dim()))?;
        let mut h = x;
        if let Some(t) = trace.as_deref_mut() {
            t.push(h);
        }
        for stage in &self.plan.stages {
            h = match *stage {
                Stage::Dense { tensor, .. } => tape.interval_linear(h, bounds[tensor], Some(bounds[tensor + 1]))?,
                Stage::Conv { tensor, geom } => {
                    tape.interval_conv2d(h, bounds[tensor], Some(bounds[tensor + 1]), geom)?
                }
                Stage::Activation(act) => (tape.activation(h.0, act), tape.activation(h.1, act)),
                Stage::MaxPool(g) => (tape.max_pool(h.0, g)?, tape.max_pool(h.1, g)?),
                Stage::AvgPool(g) => (tape.avg_pool(h.0, g)?, tape.avg_pool(h.1, g)?),
            };
            if let Some(t) = trace.as_deref_mut() {
                t.push(h);
            }
        }
        match (self.has_task_heads(), head) {
            (true, Some((w, b))) => {
                let out = tape.interval_linear(h, (w, w), Some((b, b)))?;
                if let Some(t) = trace {
                    t.push(out);
                }
                Ok(out)
            }
            (true, None) => Err(Error::MissingHead),
            (false, _) => Ok(h),
        }
    }

    fn head_consts(&self, tape: &mut Tape, head: Option<usize>) -> Result<Option<(Var, Var)>> {
        Ok(self.head_index(head)?.map(|h| {
            let w = tape.constant(self.heads[h].w.clone());
            let b = tape.constant(self.heads[h].b.clone());
            (w, b)
        }))
    }

    /// Plain forward pass at an arbitrary parameter vector.
    pub fn forward_at(&self, params: &[Matrix], x: &Matrix, head: Option<usize>) -> Result<Matrix> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let head = self.head_consts(&mut tape, head)?;
        let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
        let xv = tape.constant(x.clone());
        let out = self.center_on_tape(&mut tape, &vars, head, xv)?;
        Ok(tape.value(out).clone())
    }

    /// Logits at the box centers; radii are ignored.
    pub fn forward_center(&self, b: &ParamBox, x: &Matrix, head: Option<usize>) -> Result<Matrix> {
        self.forward_at(&b.centers(), x, head)
    }

    /// Logit bounds `[batch, outputs]` for inputs treated as degenerate
    /// intervals.
    pub fn logit_bounds(&self, b: &ParamBox, x: &Matrix, head: Option<usize>) -> Result<(Matrix, Matrix)> {
        let trace = self.interval_trace(b, x, head)?;
        Ok(trace.into_iter().last().expect("trace holds the input"))
    }

    pub fn forward_interval(&self, b: &ParamBox, x: &Matrix, head: Option<usize>) -> Result<IntervalTensor> {
        let (lo, hi) = self.logit_bounds(b, x, head)?;
        IntervalTensor::new(lo.into_dyn(), hi.into_dyn())
    }

    /// Bounds after every stage, including the input and the head.
    pub fn interval_trace(&self, b: &ParamBox, x: &Matrix, head: Option<usize>) -> Result<IntervalTrace> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let head = self.head_consts(&mut tape, head)?;
        let bounds: Vec<(Var, Var)> = b
            .tensors
            .iter()
            .map(|t| (tape.constant(t.lower()), tape.constant(t.upper())))
            .collect();
        let xv = tape.constant(x.clone());
        let mut trace = Vec::new();
        self.interval_on_tape_traced(&mut tape, &bounds, head, (xv, xv), Some(&mut trace))?;
        Ok(trace
            .into_iter()
            .map(|(l, u)| (tape.value(l).clone(), tape.value(u).clone()))
            .collect())
    }

    /// Distance to the nearest point where the interval pass switches
    /// pieces: a ReLU argument at zero, or two corner products of a dense
    /// stage (head included) that tie. Gradients of the bounds are only
    /// trustworthy away from these. Convolution and pooling stages are not
    /// inspected.
    pub fn kink_distance(&self, b: &ParamBox, x: &Matrix, head: Option<usize>) -> Result<f64> {
        let trace = self.interval_trace(b, x, head)?;
        let mut dist = f64::INFINITY;
        for (i, stage) in self.plan.stages.iter().enumerate() {
            let (xl, xu) = &trace[i];
            match *stage {
                Stage::Dense { tensor, .. } => {
                    let t = &b.tensors[tensor];
                    dist = dist.min(corner_gap(xl, xu, &t.lower(), &t.upper()));
                }
                Stage::Activation(Activation::Relu) => {
                    dist = dist.min(xl.iter().chain(xu.iter()).fold(f64::INFINITY, |m, v| m.min(v.abs())));
                }
                _ => {}
            }
        }
        if let Some(h) = self.head_index(head)? {
            let (xl, xu) = &trace[self.plan.stages.len()];
            let w = &self.heads[h].w;
            dist = dist.min(corner_gap(xl, xu, w, w));
        }
        Ok(dist)
    }

    /// Predicted class per row at the given parameters (first maximum wins).
    pub fn predict_at(&self, params: &[Matrix], x: &Matrix, head: Option<usize>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.forward_at(params, x, head)?))
    }
}

/// Smallest gap between the chosen and a competing corner product over
/// every `x[n, j] * w[o, j]`. Pairs whose products agree by construction
/// (equal differing operands, or a shared factor of exactly zero) are not
/// switches and are skipped.
fn corner_gap(xl: &Matrix, xu: &Matrix, wl: &Matrix, wu: &Matrix) -> f64 {
    let mut gap = f64::INFINITY;
    for (xl_row, xu_row) in xl.rows().into_iter().zip(xu.rows()) {
        for (wl_row, wu_row) in wl.rows().into_iter().zip(wu.rows()) {
            for j in 0..xl_row.len() {
                let xs = [xl_row[j], xu_row[j]];
                let ws = [wl_row[j], wu_row[j]];
                let corners = [(0, 0), (0, 1), (1, 0), (1, 1)];
                let value = |(a, b): (usize, usize)| ws[a] * xs[b];
                let lo = corners
                    .iter()
                    .copied()
                    .min_by(|&p, &q| value(p).total_cmp(&value(q)))
                    .unwrap();
                let hi = corners
                    .iter()
                    .copied()
                    .max_by(|&p, &q| value(p).total_cmp(&value(q)))
                    .unwrap();
                for &c in &corners {
                    for best in [lo, hi] {
                        if c == best {
                            continue;
                        }
                        let w_differs = c.0 != best.0 && ws[0] != ws[1];
                        let x_differs = c.1 != best.1 && xs[0] != xs[1];
                        let shared_zero = (c.0 == best.0 && ws[c.0] == 0.0) || (c.1 == best.1 && xs[c.1] == 0.0);
                        if (w_differs || x_differs) && !shared_zero {
                            gap = gap.min((value(c) - value(best)).abs());
                        }
                    }
                }
            }
        }
    }
    gap
}

pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    logits
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
