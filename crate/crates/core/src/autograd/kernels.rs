//! Batched matrix kernels shared by the tape ops.
//!
//! Activations are `[batch, features]` matrices, dense weights are
//! `[out, in]`, biases `[1, out]`. Image features are flattened
//! channel-major (`c, y, x`).

use ndarray::{s, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::interval::{product_corners, ConvGeometry, Corner};

pub type Matrix = Array2<f64>;

/// Endpoint choices made by an interval matrix product.
#[derive(Debug, Clone)]
pub(crate) enum Corners {
    /// Inputs were nonnegative: the lower bound of `w * x` takes `x_l` when
    /// `w_l >= 0` and `x_u` otherwise; the upper bound takes `x_u` when
    /// `w_u >= 0` and `x_l` otherwise. Read off the weight signs.
    Signs,
    /// Per-term corners, indexed `[(b * out + o) * in + i]`.
    Exact { lo: Vec<u8>, hi: Vec<u8> },
}

pub(crate) fn linear(x: &Matrix, w: &Matrix) -> Matrix {
    x.dot(&w.t())
}

pub(crate) fn add_bias(z: &mut Matrix, b: &Matrix) {
    let row = b.row(0);
    for mut r in z.rows_mut() {
        r += &row;
    }
}

pub(crate) fn column_sums(g: &Matrix) -> Matrix {
    g.sum_axis(Axis(0)).insert_axis(Axis(0))
}

fn positive_part(w: &Matrix) -> Matrix {
    w.mapv(|v| if v >= 0.0 { v } else { 0.0 })
}

fn negative_part(w: &Matrix) -> Matrix {
    w.mapv(|v| if v >= 0.0 { 0.0 } else { v })
}

/// Exact interval product `[xl, xu] · [wl, wu]ᵀ` without bias.
///
/// `shared_input` marks `xl` and `xu` as the same tensor (a point input).
pub(crate) fn interval_linear(
    xl: &Matrix,
    xu: &Matrix,
    wl: &Matrix,
    wu: &Matrix,
    shared_input: bool,
) -> (Matrix, Matrix, Corners) {
    if xl.iter().all(|&v| v >= 0.0) {
        if shared_input {
            return (xl.dot(&wl.t()), xl.dot(&wu.t()), Corners::Signs);
        }
        let lo = xl.dot(&positive_part(wl).t()) + xu.dot(&negative_part(wl).t());
        let hi = xu.dot(&positive_part(wu).t()) + xl.dot(&negative_part(wu).t());
        return (lo, hi, Corners::Signs);
    }
    let (batch, inputs) = xl.dim();
    let outputs = wl.nrows();
    let mut lo = Matrix::zeros((batch, outputs));
    let mut hi = Matrix::zeros((batch, outputs));
    let mut clo = vec![0u8; batch * outputs * inputs];
    let mut chi = vec![0u8; batch * outputs * inputs];
    for b in 0..batch {
        for o in 0..outputs {
            let mut sl = 0.0;
            let mut su = 0.0;
            let base = (b * outputs + o) * inputs;
            for i in 0..inputs {
                let (pl, cl, pu, cu) = product_corners(wl[[o, i]], wu[[o, i]], xl[[b, i]], xu[[b, i]]);
                sl += pl;
                su += pu;
                clo[base + i] = cl as u8;
                chi[base + i] = cu as u8;
            }
            lo[[b, o]] = sl;
            hi[[b, o]] = su;
        }
    }
    (lo, hi, Corners::Exact { lo: clo, hi: chi })
}

/// Gradients of an interval product with respect to its four operands.
pub(crate) struct IntervalLinearGrads {
    pub xl: Option<Matrix>,
    pub xu: Option<Matrix>,
    pub wl: Option<Matrix>,
    pub wu: Option<Matrix>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn interval_linear_backward(
    xl: &Matrix,
    xu: &Matrix,
    wl: &Matrix,
    wu: &Matrix,
    corners: &Corners,
    shared_input: bool,
    glo: &Matrix,
    ghi: &Matrix,
    need_x: bool,
    need_w: bool,
) -> IntervalLinearGrads {
    match corners {
        Corners::Signs if shared_input => IntervalLinearGrads {
            xl: need_x.then(|| glo.dot(wl) + ghi.dot(wu)),
            xu: None,
            wl: need_w.then(|| glo.t().dot(xl)),
            wu: need_w.then(|| ghi.t().dot(xl)),
        },
        Corners::Signs => {
            let (xl_g, xu_g) = if need_x {
                let wlp = positive_part(wl);
                let wln = negative_part(wl);
                let wup = positive_part(wu);
                let wun = negative_part(wu);
                (Some(glo.dot(&wlp) + ghi.dot(&wun)), Some(glo.dot(&wln) + ghi.dot(&wup)))
            } else {
                (None, None)
            };
            let (wl_g, wu_g) = if need_w {
                let lo_at_l = glo.t().dot(xl);
                let lo_at_u = glo.t().dot(xu);
                let mut gwl = lo_at_l;
                Zip::from(&mut gwl).and(&lo_at_u).and(wl).for_each(|g, &alt, &w| {
                    if w < 0.0 {
                        *g = alt;
                    }
                });
                let hi_at_u = ghi.t().dot(xu);
                let hi_at_l = ghi.t().dot(xl);
                let mut gwu = hi_at_u;
                Zip::from(&mut gwu).and(&hi_at_l).and(wu).for_each(|g, &alt, &w| {
                    if w < 0.0 {
                        *g = alt;
                    }
                });
                (Some(gwl), Some(gwu))
            } else {
                (None, None)
            };
            IntervalLinearGrads {
                xl: xl_g,
                xu: xu_g,
                wl: wl_g,
                wu: wu_g,
            }
        }
        Corners::Exact { lo, hi } => {
            let (batch, inputs) = xl.dim();
            let outputs = wl.nrows();
            let mut gxl = Matrix::zeros((batch, inputs));
            let mut gxu = Matrix::zeros((batch, inputs));
            let mut gwl = Matrix::zeros((outputs, inputs));
            let mut gwu = Matrix::zeros((outputs, inputs));
            for b in 0..batch {
                for o in 0..outputs {
                    let base = (b * outputs + o) * inputs;
                    for (grad, table) in [(glo[[b, o]], lo), (ghi[[b, o]], hi)] {
                        if grad == 0.0 {
                            continue;
                        }
                        for i in 0..inputs {
                            let (w_up, x_up) = Corner::from_index(table[base + i]).uses_upper();
                            let w = if w_up { wu[[o, i]] } else { wl[[o, i]] };
                            let x = if x_up { xu[[b, i]] } else { xl[[b, i]] };
                            if x_up {
                                gxu[[b, i]] += grad * w;
                            } else {
                                gxl[[b, i]] += grad * w;
                            }
                            if w_up {
                                gwu[[o, i]] += grad * x;
                            } else {
                                gwl[[o, i]] += grad * x;
                            }
                        }
                    }
                }
            }
            if shared_input {
                gxl += &gxu;
            }
            IntervalLinearGrads {
                xl: need_x.then_some(gxl),
                xu: (need_x && !shared_input).then_some(gxu),
                wl: need_w.then_some(gwl),
                wu: need_w.then_some(gwu),
            }
        }
    }
}

/// Unrolls every example's receptive fields into rows of a
/// `[batch * positions, patch]` matrix.
pub(crate) fn im2col(x: &Matrix, g: &ConvGeometry) -> Matrix {
    let batch = x.nrows();
    let (positions, patch) = (g.positions(), g.patch_len());
    let mut cols = Matrix::zeros((batch * positions, patch));
    for b in 0..batch {
        let row = x.row(b);
        for p in 0..positions {
            let mut dst = cols.row_mut(b * positions + p);
            for j in 0..patch {
                if let Some(src) = g.source_index(p, j) {
                    dst[j] = row[src];
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im(cols: &Matrix, g: &ConvGeometry, batch: usize) -> Matrix {
    let (positions, patch) = (g.positions(), g.patch_len());
    let mut x = Matrix::zeros((batch, g.input_len()));
    for b in 0..batch {
        let mut row = x.row_mut(b);
        for p in 0..positions {
            let src = cols.row(b * positions + p);
            for j in 0..patch {
                if let Some(dst) = g.source_index(p, j) {
                    row[dst] += src[j];
                }
            }
        }
    }
    x
}

/// `[batch * positions, out_c]` to channel-major `[batch, out_c * positions]`.
pub(crate) fn positions_to_features(y: &Matrix, g: &ConvGeometry, batch: usize) -> Matrix {
    let positions = g.positions();
    let mut out = Matrix::zeros((batch, g.output_len()));
    for b in 0..batch {
        let block = y.slice(s![b * positions..(b + 1) * positions, ..]);
        for ((p, o), &v) in block.indexed_iter() {
            out[[b, o * positions + p]] = v;
        }
    }
    out
}

pub(crate) fn features_to_positions(y: &Matrix, g: &ConvGeometry) -> Matrix {
    let batch = y.nrows();
    let positions = g.positions();
    let mut out = Matrix::zeros((batch * positions, g.out_channels));
    for b in 0..batch {
        for o in 0..g.out_channels {
            for p in 0..positions {
                out[[b * positions + p, o]] = y[[b, o * positions + p]];
            }
        }
    }
    out
}

/// Non-overlapping square pooling window over a `[c, h, w]` feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolGeometry {
    pub channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub size: usize,
}

impl PoolGeometry {
    pub fn out_height(&self) -> usize {
        self.in_height / self.size
    }

    pub fn out_width(&self) -> usize {
        self.in_width / self.size
    }

    pub fn output_len(&self) -> usize {
        self.channels * self.out_height() * self.out_width()
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.in_height * self.in_width
    }

    /// Flat input indices of output cell `out`, row-major inside the window.
    fn window(&self, out: usize) -> impl Iterator<Item = usize> + '_ {
        let (oh, ow) = (self.out_height(), self.out_width());
        let c = out / (oh * ow);
        let rem = out % (oh * ow);
        let (oy, ox) = (rem / ow, rem % ow);
        (0..self.size * self.size).map(move |k| {
            let y = oy * self.size + k / self.size;
            let x = ox * self.size + k % self.size;
            (c * self.in_height + y) * self.in_width + x
        })
    }
}

/// Max pooling; returns the winning input index per output (first on ties).
pub(crate) fn max_pool(x: &Matrix, g: &PoolGeometry) -> (Matrix, Vec<usize>) {
    let batch = x.nrows();
    let n = g.output_len();
    let mut out = Matrix::zeros((batch, n));
    let mut arg = vec![0usize; batch * n];
    for b in 0..batch {
        let row = x.row(b);
        for o in 0..n {
            let mut best = usize::MAX;
            for i in g.window(o) {
                if best == usize::MAX || row[i] > row[best] {
                    best = i;
                }
            }
            out[[b, o]] = row[best];
            arg[b * n + o] = best;
        }
    }
    (out, arg)
}

pub(crate) fn max_pool_backward(g_out: &Matrix, arg: &[usize], g: &PoolGeometry) -> Matrix {
    let batch = g_out.nrows();
    let n = g.output_len();
    let mut gx = Matrix::zeros((batch, g.input_len()));
    for b in 0..batch {
        for o in 0..n {
            gx[[b, arg[b * n + o]]] += g_out[[b, o]];
        }
    }
    gx
}

pub(crate) fn avg_pool(x: &Matrix, g: &PoolGeometry) -> Matrix {
    let batch = x.nrows();
    let n = g.output_len();
    let scale = 1.0 / (g.size * g.size) as f64;
    let mut out = Matrix::zeros((batch, n));
    for b in 0..batch {
        let row = x.row(b);
        for o in 0..n {
            let mut acc = 0.0;
            for i in g.window(o) {
                acc += row[i];
            }
            out[[b, o]] = acc * scale;
        }
    }
    out
}

pub(crate) fn avg_pool_backward(g_out: &Matrix, g: &PoolGeometry) -> Matrix {
    let batch = g_out.nrows();
    let n = g.output_len();
    let scale = 1.0 / (g.size * g.size) as f64;
    let mut gx = Matrix::zeros((batch, g.input_len()));
    for b in 0..batch {
        for o in 0..n {
            let v = g_out[[b, o]] * scale;
            for i in g.window(o) {
                gx[[b, i]] += v;
            }
        }
    }
    gx
}

/// Per-row `-log softmax(z)[y]` and the softmax itself, via a max-shifted
/// log-sum-exp.
pub(crate) fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> (Vec<f64>, Matrix) {
    let mut probs = logits.clone();
    let mut losses = Vec::with_capacity(labels.len());
    for (mut row, &y) in probs.rows_mut().into_iter().zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter() {
            sum += (v - m).exp();
        }
        let lse = m + sum.ln();
        losses.push(lse - row[y]);
        row.mapv_inplace(|v| (v - lse).exp());
    }
    (losses, probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn fast_and_exact_paths_agree_on_nonnegative_inputs() {
        let xl = array![[0.0, 0.5, 1.0], [0.2, 0.0, 0.3]];
        let xu = array![[0.5, 0.5, 2.0], [0.2, 1.0, 0.3]];
        let wl = array![[-1.0, 0.5, -0.25], [0.1, -0.3, 0.2]];
        let wu = array![[0.5, 0.75, -0.125], [0.4, 0.3, 0.9]];
        let (lo, hi, c) = interval_linear(&xl, &xu, &wl, &wu, false);
        assert!(matches!(c, Corners::Signs));
        // force the exact path by shifting through a negative dummy column
        let pad = |m: &Matrix, v: f64| {
            let mut out = Matrix::from_elem((m.nrows(), m.ncols() + 1), v);
            out.slice_mut(s![.., ..m.ncols()]).assign(m);
            out
        };
        let (elo, ehi, ec) = interval_linear(&pad(&xl, -1.0), &pad(&xu, -1.0), &pad(&wl, 0.0), &pad(&wu, 0.0), false);
        assert!(matches!(ec, Corners::Exact { .. }));
        for (a, b) in lo.iter().zip(elo.iter()).chain(hi.iter().zip(ehi.iter())) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let g = ConvGeometry {
            in_channels: 2,
            in_height: 4,
            in_width: 3,
            out_channels: 1,
            kernel: 2,
            stride: 1,
            padding: 1,
        };
        let x = Matrix::from_shape_fn((2, g.input_len()), |(b, i)| (b * 31 + i * 7) as f64 % 5.0 - 2.0);
        let cols = im2col(&x, &g);
        let c = Matrix::from_shape_fn(cols.dim(), |(r, j)| ((r + 3 * j) % 7) as f64 - 3.0);
        let lhs: f64 = (&cols * &c).sum();
        let rhs: f64 = (&x * &col2im(&c, &g, 2)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn max_pool_picks_first_maximum() {
        let g = PoolGeometry {
            channels: 1,
            in_height: 2,
            in_width: 2,
            size: 2,
        };
        let (y, arg) = max_pool(&array![[1.0, 3.0, 3.0, 0.0]], &g);
        assert_eq!(y[[0, 0]], 3.0);
        assert_eq!(arg, vec![1]);
        assert_eq!(avg_pool(&array![[1.0, 3.0, 3.0, 1.0]], &g)[[0, 0]], 2.0);
    }
}
