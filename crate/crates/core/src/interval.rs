//! Exact interval arithmetic on scalars and dense tensors.
//!
//! Every product is the hull of its four corner products, so dot products,
//! affine maps and convolutions are exact: each output bound is attained by
//! some per-coordinate choice of interval endpoints. Bounds are ordinary
//! `f64` values; no directed rounding is applied.

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed interval `[lower, upper]` with `lower <= upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    lower: f64,
    upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() {
            return Err(Error::NotANumber("interval bound"));
        }
        if lower > upper {
            return Err(Error::InvalidInterval { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    /// The degenerate interval `[x, x]`.
    pub fn point(x: f64) -> Result<Self> {
        Self::new(x, x)
    }

    pub fn from_center_radius(center: f64, radius: f64) -> Result<Self> {
        if radius < 0.0 {
            return Err(Error::InvalidInterval {
                lower: center - radius,
                upper: center + radius,
            });
        }
        Self::new(center - radius, center + radius)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lower <= self.lower && self.upper <= other.upper
    }
}

/// Endpoint pair selected by an interval product, in tie-breaking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Corner {
    LowerLower = 0,
    LowerUpper = 1,
    UpperLower = 2,
    UpperUpper = 3,
}

impl Corner {
    pub const ALL: [Corner; 4] = [
        Corner::LowerLower,
        Corner::LowerUpper,
        Corner::UpperLower,
        Corner::UpperUpper,
    ];

    pub fn from_index(i: u8) -> Corner {
        Corner::ALL[i as usize]
    }

    /// Whether the left / right operand uses its upper endpoint.
    pub fn uses_upper(self) -> (bool, bool) {
        match self {
            Corner::LowerLower => (false, false),
            Corner::LowerUpper => (false, true),
            Corner::UpperLower => (true, false),
            Corner::UpperUpper => (true, true),
        }
    }
}

/// Four corner products of `[al, au] * [bl, bu]` together with the corners
/// attaining the minimum and maximum. Ties go to the first corner in
/// `Corner::ALL` order.
#[inline]
pub fn product_corners(al: f64, au: f64, bl: f64, bu: f64) -> (f64, Corner, f64, Corner) {
    let p = [al * bl, al * bu, au * bl, au * bu];
    let mut lo = 0;
    let mut hi = 0;
    for k in 1..4 {
        if p[k] < p[lo] {
            lo = k;
        }
        if p[k] > p[hi] {
            hi = k;
        }
    }
    (p[lo], Corner::ALL[lo], p[hi], Corner::ALL[hi])
}

pub fn iv_add(a: Interval, b: Interval) -> Interval {
    Interval {
        lower: a.lower + b.lower,
        upper: a.upper + b.upper,
    }
}

pub fn iv_mul(a: Interval, b: Interval) -> Interval {
    let (lower, _, upper, _) = product_corners(a.lower, a.upper, b.lower, b.upper);
    Interval { lower, upper }
}

/// Elementwise hull of two intervals under `max`; monotone in both arguments.
pub fn iv_max(a: Interval, b: Interval) -> Interval {
    Interval {
        lower: a.lower.max(b.lower),
        upper: a.upper.max(b.upper),
    }
}

/// Dense tensor of intervals stored as two arrays of equal shape.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalTensor {
    lower: ArrayD<f64>,
    upper: ArrayD<f64>,
}

impl IntervalTensor {
    pub fn new(lower: ArrayD<f64>, upper: ArrayD<f64>) -> Result<Self> {
        if lower.shape() != upper.shape() {
            return Err(Error::shape("IntervalTensor::new", lower.shape(), upper.shape()));
        }
        for (&l, &u) in lower.iter().zip(upper.iter()) {
            if l.is_nan() || u.is_nan() {
                return Err(Error::NotANumber("interval tensor"));
            }
            if l > u {
                return Err(Error::InvalidInterval { lower: l, upper: u });
            }
        }
        Ok(Self { lower, upper })
    }

    /// Builds a tensor from flat row-major bound vectors.
    pub fn from_vecs(shape: &[usize], lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if lower.len() != n || upper.len() != n {
            return Err(Error::shape(
                "IntervalTensor::from_vecs",
                &[n, n],
                &[lower.len(), upper.len()],
            ));
        }
        let lower = ArrayD::from_shape_vec(IxDyn(shape), lower).expect("length checked");
        let upper = ArrayD::from_shape_vec(IxDyn(shape), upper).expect("length checked");
        Self::new(lower, upper)
    }

    /// Degenerate tensor `[x, x]`.
    pub fn point(x: ArrayD<f64>) -> Result<Self> {
        Self::new(x.clone(), x)
    }

    pub fn from_intervals(shape: &[usize], items: &[Interval]) -> Result<Self> {
        let lower = items.iter().map(Interval::lower).collect();
        let upper = items.iter().map(Interval::upper).collect();
        Self::from_vecs(shape, lower, upper)
    }

    pub fn shape(&self) -> &[usize] {
        self.lower.shape()
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self) -> &ArrayD<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &ArrayD<f64> {
        &self.upper
    }

    pub fn into_bounds(self) -> (ArrayD<f64>, ArrayD<f64>) {
        (self.lower, self.upper)
    }

    /// Interval at a flat row-major position.
    pub fn get(&self, flat: usize) -> Interval {
        let l = self.lower.as_slice_memory_order().map(|s| s[flat]);
        let u = self.upper.as_slice_memory_order().map(|s| s[flat]);
        match (l, u) {
            (Some(lower), Some(upper)) => Interval { lower, upper },
            _ => {
                let lower = *self.lower.iter().nth(flat).expect("index in range");
                let upper = *self.upper.iter().nth(flat).expect("index in range");
                Interval { lower, upper }
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Interval> + '_ {
        self.lower
            .iter()
            .zip(self.upper.iter())
            .map(|(&lower, &upper)| Interval { lower, upper })
    }

    /// Elementwise `self ⊆ other`.
    pub fn is_subset_of(&self, other: &IntervalTensor) -> Result<bool> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "IntervalTensor::is_subset_of",
                other.shape(),
                self.shape(),
            ));
        }
        Ok(self.iter().zip(other.iter()).all(|(a, b)| a.is_subset_of(&b)))
    }

    fn contiguous(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.lower.iter().copied().collect(),
            self.upper.iter().copied().collect(),
        )
    }
}

/// Exact interval dot product of two 1-D tensors. Lower and upper bounds are
/// accumulated as independent left-to-right sums.
pub fn iv_dot(w: &IntervalTensor, x: &IntervalTensor) -> Result<Interval> {
    if w.shape().len() != 1 || x.shape().len() != 1 || w.len() != x.len() {
        return Err(Error::shape("iv_dot", w.shape(), x.shape()));
    }
    let (wl, wu) = w.contiguous();
    let (xl, xu) = x.contiguous();
    Ok(dot_slices(&wl, &wu, &xl, &xu))
}

fn dot_slices(wl: &[f64], wu: &[f64], xl: &[f64], xu: &[f64]) -> Interval {
    let mut lower = 0.0;
    let mut upper = 0.0;
    for i in 0..wl.len() {
        let (lo, _, hi, _) = product_corners(wl[i], wu[i], xl[i], xu[i]);
        lower += lo;
        upper += hi;
    }
    Interval { lower, upper }
}

/// Interval dense layer `W x + b` with `W: [out, in]`, `b: [out]`, `x: [in]`.
pub fn iv_affine(w: &IntervalTensor, b: &IntervalTensor, x: &IntervalTensor) -> Result<IntervalTensor> {
    let &[rows, cols] = w.shape() else {
        return Err(Error::shape("iv_affine weight", &[0, 0], w.shape()));
    };
    if x.shape() != [cols] {
        return Err(Error::shape("iv_affine input", &[cols], x.shape()));
    }
    if b.shape() != [rows] {
        return Err(Error::shape("iv_affine bias", &[rows], b.shape()));
    }
    let (wl, wu) = w.contiguous();
    let (xl, xu) = x.contiguous();
    let (bl, bu) = b.contiguous();
    let mut lower = Vec::with_capacity(rows);
    let mut upper = Vec::with_capacity(rows);
    for r in 0..rows {
        let span = r * cols..(r + 1) * cols;
        let dot = dot_slices(&wl[span.clone()], &wu[span], &xl, &xu);
        let out = iv_add(
            dot,
            Interval {
                lower: bl[r],
                upper: bu[r],
            },
        );
        lower.push(out.lower);
        upper.push(out.upper);
    }
    IntervalTensor::from_vecs(&[rows], lower, upper)
}

/// Geometry of a 2-D convolution over a `[channels, height, width]` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.in_height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.in_width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Number of output spatial positions.
    pub fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Length of one receptive field, ordered `(channel, ky, kx)`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.in_height * self.in_width
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.positions()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.kernel > 0
            && self.stride > 0
            && self.in_channels > 0
            && self.out_channels > 0
            && self.in_height + 2 * self.padding >= self.kernel
            && self.in_width + 2 * self.padding >= self.kernel;
        if ok {
            Ok(())
        } else {
            Err(Error::Architecture(format!("invalid convolution geometry {self:?}")))
        }
    }

    /// Flat input index feeding patch element `j` at output position `p`,
    /// or `None` for zero padding.
    #[inline]
    pub fn source_index(&self, p: usize, j: usize) -> Option<usize> {
        let ow = self.out_width();
        let (oy, ox) = (p / ow, p % ow);
        let kk = self.kernel * self.kernel;
        let (c, rem) = (j / kk, j % kk);
        let (ky, kx) = (rem / self.kernel, rem % self.kernel);
        let y = (oy * self.stride + ky) as isize - self.padding as isize;
        let x = (ox * self.stride + kx) as isize - self.padding as isize;
        if y < 0 || x < 0 || y >= self.in_height as isize || x >= self.in_width as isize {
            None
        } else {
            Some((c * self.in_height + y as usize) * self.in_width + x as usize)
        }
    }
}

/// Interval convolution. `w: [out_c, in_c, k, k]`, `b: [out_c]`,
/// `x: [in_c, h, w]`; output `[out_c, out_h, out_w]`. Padding contributes
/// explicit `[0, 0]` terms so the result equals the unrolled affine map.
pub fn iv_conv2d(
    w: &IntervalTensor,
    b: &IntervalTensor,
    x: &IntervalTensor,
    stride: usize,
    padding: usize,
) -> Result<IntervalTensor> {
    let &[oc, ic, k, k2] = w.shape() else {
        return Err(Error::shape("iv_conv2d kernel", &[0, 0, 0, 0], w.shape()));
    };
    let &[xc, h, wd] = x.shape() else {
        return Err(Error::shape("iv_conv2d input", &[ic, 0, 0], x.shape()));
    };
    if k != k2 || xc != ic {
        return Err(Error::shape("iv_conv2d", &[oc, xc, k, k], w.shape()));
    }
    if b.shape() != [oc] {
        return Err(Error::shape("iv_conv2d bias", &[oc], b.shape()));
    }
    let geom = ConvGeometry {
        in_channels: ic,
        in_height: h,
        in_width: wd,
        out_channels: oc,
        kernel: k,
        stride,
        padding,
    };
    geom.validate()
        .map_err(|_| Error::shape("iv_conv2d geometry", &[ic, k, k], &[xc, h, wd]))?;

    let (wl, wu) = w.contiguous();
    let (xl, xu) = x.contiguous();
    let (bl, bu) = b.contiguous();
    let patch = geom.patch_len();
    let positions = geom.positions();
    let mut pl = vec![0.0; patch];
    let mut pu = vec![0.0; patch];
    let mut lower = vec![0.0; geom.output_len()];
    let mut upper = vec![0.0; geom.output_len()];
    for p in 0..positions {
        for j in 0..patch {
            (pl[j], pu[j]) = match geom.source_index(p, j) {
                Some(s) => (xl[s], xu[s]),
                None => (0.0, 0.0),
            };
        }
        for o in 0..oc {
            let span = o * patch..(o + 1) * patch;
            let dot = dot_slices(&wl[span.clone()], &wu[span], &pl, &pu);
            let out = iv_add(
                dot,
                Interval {
                    lower: bl[o],
                    upper: bu[o],
                },
            );
            lower[o * positions + p] = out.lower;
            upper[o * positions + p] = out.upper;
        }
    }
    IntervalTensor::from_vecs(&[oc, geom.out_height(), geom.out_width()], lower, upper)
}

/// Elementwise nondecreasing activations with closed-form interval images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative as a function of the input; ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pushes an interval tensor through a nondecreasing activation.
pub fn iv_activation(act: Activation, x: &IntervalTensor) -> IntervalTensor {
    IntervalTensor {
        lower: x.lower.mapv(|v| act.apply(v)),
        upper: x.upper.mapv(|v| act.apply(v)),
    }
}

/// Pushes an interval tensor through an arbitrary elementwise map that the
/// caller asserts is nondecreasing. A decreasing map is caught when it
/// inverts a bound.
pub fn iv_monotone<F>(f: F, x: &IntervalTensor) -> Result<IntervalTensor>
where
    F: Fn(f64) -> f64,
{
    IntervalTensor::new(x.lower.mapv(&f), x.upper.mapv(&f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iv(l: f64, u: f64) -> Interval {
        Interval::new(l, u).unwrap()
    }

    fn vec_tensor(items: &[(f64, f64)]) -> IntervalTensor {
        let v: Vec<Interval> = items.iter().map(|&(l, u)| iv(l, u)).collect();
        IntervalTensor::from_intervals(&[v.len()], &v).unwrap()
    }

    fn random_interval(rng: &mut ChaCha8Rng) -> Interval {
        let a: f64 = rng.random_range(-3.0..3.0);
        let b: f64 = rng.random_range(-3.0..3.0);
        iv(a.min(b), a.max(b))
    }

    #[test]
    fn constructor_rejects_inverted_and_nan() {
        assert!(matches!(Interval::new(2.0, 1.0), Err(Error::InvalidInterval { .. })));
        assert!(matches!(Interval::new(f64::NAN, 1.0), Err(Error::NotANumber(_))));
        assert!(Interval::from_center_radius(0.0, -1.0).is_err());
        let t = IntervalTensor::from_vecs(&[2], vec![0.0, 1.0], vec![1.0, 0.5]);
        assert!(t.is_err());
    }

    #[test]
    fn addition_examples() {
        assert_eq!(iv_add(iv(1.0, 2.0), iv(3.0, 5.0)), iv(4.0, 7.0));
        assert_eq!(iv_add(iv(0.0, 0.0), iv(-0.25, 8.0)), iv(-0.25, 8.0));
        assert_eq!(iv_add(iv(-1.0, 1.0), iv(-2.0, 3.0)), iv(-3.0, 4.0));
    }

    #[test]
    fn multiplication_examples() {
        assert_eq!(iv_mul(iv(1.0, 2.0), iv(-3.0, 4.0)), iv(-6.0, 8.0));
        let z = iv_mul(iv(0.0, 0.0), iv(-9.0, 9.0));
        assert_eq!((z.lower(), z.upper()), (0.0, 0.0));
        assert_eq!(iv_mul(iv(-1.0, 1.0), iv(-1.0, 1.0)), iv(-1.0, 1.0));
    }

    #[test]
    fn corner_ties_pick_first_in_order() {
        // all four products equal
        let (_, lo, _, hi) = product_corners(2.0, 2.0, 3.0, 3.0);
        assert_eq!((lo, hi), (Corner::LowerLower, Corner::LowerLower));
        // [1,2]*[-3,4]: products -3, 4, -6, 8
        let (_, lo, _, hi) = product_corners(1.0, 2.0, -3.0, 4.0);
        assert_eq!((lo, hi), (Corner::UpperLower, Corner::UpperUpper));
    }

    #[test]
    fn dot_examples() {
        let w = vec_tensor(&[(1.0, 1.0), (2.0, 2.0)]);
        let x = vec_tensor(&[(1.0, 1.0), (1.0, 1.0)]);
        assert_eq!(iv_dot(&w, &x).unwrap(), iv(3.0, 3.0));

        let w = vec_tensor(&[(0.0, 1.0)]);
        let x = vec_tensor(&[(-1.0, 1.0)]);
        assert_eq!(iv_dot(&w, &x).unwrap(), iv(-1.0, 1.0));

        let short = vec_tensor(&[(0.0, 1.0)]);
        assert!(matches!(
            iv_dot(&w, &vec_tensor(&[(0.0, 1.0), (0.0, 1.0)])),
            Err(Error::ShapeMismatch { .. })
        ));
        let _ = short;
    }

    /// Enumerates every endpoint assignment of `w_i * x_i` summed in order.
    fn brute_dot(w: &[Interval], x: &[Interval]) -> (f64, f64) {
        let n = w.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for mask in 0u32..(1 << (2 * n)) {
            let mut s = 0.0;
            for i in 0..n {
                let a = if mask >> (2 * i) & 1 == 1 {
                    w[i].upper()
                } else {
                    w[i].lower()
                };
                let b = if mask >> (2 * i + 1) & 1 == 1 {
                    x[i].upper()
                } else {
                    x[i].lower()
                };
                s += a * b;
            }
            lo = lo.min(s);
            hi = hi.max(s);
        }
        (lo, hi)
    }

    #[test]
    fn dot_matches_corner_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let w: Vec<Interval> = (0..5).map(|_| random_interval(&mut rng)).collect();
            let x: Vec<Interval> = (0..5).map(|_| random_interval(&mut rng)).collect();
            let got = iv_dot(
                &IntervalTensor::from_intervals(&[5], &w).unwrap(),
                &IntervalTensor::from_intervals(&[5], &x).unwrap(),
            )
            .unwrap();
            let (lo, hi) = brute_dot(&w, &x);
            assert_eq!(got.lower().to_bits(), lo.to_bits());
            assert_eq!(got.upper().to_bits(), hi.to_bits());
        }
    }

    #[test]
    fn affine_examples() {
        let w = IntervalTensor::from_intervals(&[1, 1], &[iv(0.5, 1.5)]).unwrap();
        let b = vec_tensor(&[(0.0, 0.0)]);
        let x = vec_tensor(&[(2.0, 2.0)]);
        let y = iv_affine(&w, &b, &x).unwrap();
        assert_eq!(y.get(0), iv(1.0, 3.0));

        let bad = vec_tensor(&[(0.0, 0.0), (0.0, 0.0)]);
        assert!(iv_affine(&w, &b, &bad).is_err());
        assert!(iv_affine(&w, &bad, &x).is_err());
    }

    #[test]
    fn affine_degenerate_is_plain_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (rows, cols) = (4, 7);
        let wv: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bv: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xv: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = IntervalTensor::from_vecs(&[rows, cols], wv.clone(), wv.clone()).unwrap();
        let b = IntervalTensor::from_vecs(&[rows], bv.clone(), bv.clone()).unwrap();
        let x = IntervalTensor::from_vecs(&[cols], xv.clone(), xv.clone()).unwrap();
        let y = iv_affine(&w, &b, &x).unwrap();
        for r in 0..rows {
            let mut s = 0.0;
            for c in 0..cols {
                s += wv[r * cols + c] * xv[c];
            }
            s += bv[r];
            assert_eq!(y.get(r).lower().to_bits(), s.to_bits());
            assert_eq!(y.get(r).upper().to_bits(), s.to_bits());
        }
    }

    #[test]
    fn activation_examples() {
        let x = vec_tensor(&[(-2.0, 3.0), (-5.0, -1.0)]);
        let y = iv_activation(Activation::Relu, &x);
        assert_eq!(y.get(0), iv(0.0, 3.0));
        assert_eq!(y.get(1), iv(0.0, 0.0));
        let s = iv_activation(Activation::Sigmoid, &vec_tensor(&[(0.0, 0.0)]));
        assert_eq!(s.get(0), iv(0.5, 0.5));
        assert!(iv_monotone(|v: f64| -v, &vec_tensor(&[(0.0, 1.0)])).is_err());
    }

    /// Plain convolution of a point input, used as a reference.
    fn plain_conv(w: &[f64], b: &[f64], x: &[f64], g: &ConvGeometry) -> Vec<f64> {
        let mut out = vec![0.0; g.output_len()];
        for o in 0..g.out_channels {
            for p in 0..g.positions() {
                let mut s = 0.0;
                for j in 0..g.patch_len() {
                    let v = g.source_index(p, j).map_or(0.0, |i| x[i]);
                    s += w[o * g.patch_len() + j] * v;
                }
                out[o * g.positions() + p] = s + b[o];
            }
        }
        out
    }

    #[test]
    fn conv_one_by_one_degenerate_is_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = ConvGeometry {
            in_channels: 2,
            in_height: 3,
            in_width: 3,
            out_channels: 3,
            kernel: 1,
            stride: 1,
            padding: 0,
        };
        let wv: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bv: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xv: Vec<f64> = (0..18).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = IntervalTensor::from_vecs(&[3, 2, 1, 1], wv.clone(), wv.clone()).unwrap();
        let b = IntervalTensor::from_vecs(&[3], bv.clone(), bv.clone()).unwrap();
        let x = IntervalTensor::from_vecs(&[2, 3, 3], xv.clone(), xv.clone()).unwrap();
        let y = iv_conv2d(&w, &b, &x, 1, 0).unwrap();
        let expect = plain_conv(&wv, &bv, &xv, &g);
        for (i, e) in expect.iter().enumerate() {
            assert_eq!(y.get(i).lower(), *e);
            assert_eq!(y.get(i).upper(), *e);
        }
    }

    #[test]
    fn conv_zero_input_gives_bias() {
        let w = IntervalTensor::from_vecs(&[1, 1, 3, 3], vec![-1.0; 9], vec![1.0; 9]).unwrap();
        let b = vec_tensor(&[(0.25, 0.75)]);
        let x = IntervalTensor::from_vecs(&[1, 4, 4], vec![0.0; 16], vec![0.0; 16]).unwrap();
        let y = iv_conv2d(&w, &b, &x, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4]);
        assert!(y.iter().all(|v| v == iv(0.25, 0.75)));
    }

    #[test]
    fn conv_matches_unrolled_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (ic, oc, k) = (2, 2, 3);
        let g = ConvGeometry {
            in_channels: ic,
            in_height: 5,
            in_width: 5,
            out_channels: oc,
            kernel: k,
            stride: 2,
            padding: 1,
        };
        let nw = oc * ic * k * k;
        let w: Vec<Interval> = (0..nw).map(|_| random_interval(&mut rng)).collect();
        let b: Vec<Interval> = (0..oc).map(|_| random_interval(&mut rng)).collect();
        let x: Vec<Interval> = (0..ic * 25).map(|_| random_interval(&mut rng)).collect();
        let wt = IntervalTensor::from_intervals(&[oc, ic, k, k], &w).unwrap();
        let bt = IntervalTensor::from_intervals(&[oc], &b).unwrap();
        let xt = IntervalTensor::from_intervals(&[ic, 5, 5], &x).unwrap();
        let y = iv_conv2d(&wt, &bt, &xt, 2, 1).unwrap();
        assert_eq!(y.shape(), &[oc, 3, 3]);

        let w2 = IntervalTensor::from_intervals(&[oc, g.patch_len()], &w).unwrap();
        for p in 0..g.positions() {
            let patch: Vec<Interval> = (0..g.patch_len())
                .map(|j| g.source_index(p, j).map_or(iv(0.0, 0.0), |s| x[s]))
                .collect();
            let pt = IntervalTensor::from_intervals(&[g.patch_len()], &patch).unwrap();
            let col = iv_affine(&w2, &bt, &pt).unwrap();
            for o in 0..oc {
                let got = y.get(o * g.positions() + p);
                assert_eq!(got.lower().to_bits(), col.get(o).lower().to_bits());
                assert_eq!(got.upper().to_bits(), col.get(o).upper().to_bits());
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let w = IntervalTensor::from_vecs(&[1, 2, 1, 1], vec![0.0; 2], vec![0.0; 2]).unwrap();
        let b = vec_tensor(&[(0.0, 0.0)]);
        let x = IntervalTensor::from_vecs(&[3, 2, 2], vec![0.0; 12], vec![0.0; 12]).unwrap();
        assert!(iv_conv2d(&w, &b, &x, 1, 0).is_err());
    }
}
