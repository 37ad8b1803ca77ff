use ndarray::Zip;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Matrix;
use crate::error::{Error, Result};
use crate::interval::sigmoid;

/// Centers and radii of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxTensor {
    pub center: Matrix,
    pub radius: Matrix,
}

impl BoxTensor {
    pub fn new(center: Matrix, radius: Matrix) -> Result<Self> {
        if center.dim() != radius.dim() {
            let (c, r) = (center.dim(), radius.dim());
            return Err(Error::shape("box tensor", &[c.0, c.1], &[r.0, r.1]));
        }
        if center.iter().chain(radius.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NotANumber("box tensor"));
        }
        if let Some(&r) = radius.iter().find(|&&r| r < 0.0) {
            return Err(Error::InvalidInterval { lower: r, upper: -r });
        }
        Ok(Self { center, radius })
    }

    pub fn point(center: Matrix) -> Self {
        let radius = Matrix::zeros(center.dim());
        Self { center, radius }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.center.dim()
    }

    pub fn lower(&self) -> Matrix {
        &self.center - &self.radius
    }

    pub fn upper(&self) -> Matrix {
        &self.center + &self.radius
    }
}

/// Hyperrectangle over every intervalized parameter, ordered weight, bias,
/// weight, bias, ... along the trunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBox {
    pub tensors: Vec<BoxTensor>,
}

/// A coordinate where an inner box leaves its outer box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainmentViolation {
    pub tensor: usize,
    pub row: usize,
    pub col: usize,
    pub inner: (f64, f64),
    pub outer: (f64, f64),
}

impl ParamBox {
    pub fn new(tensors: Vec<BoxTensor>) -> Self {
        Self { tensors }
    }

    /// Box of uniform radius around the given centers.
    pub fn around(centers: Vec<Matrix>, radius: f64) -> Result<Self> {
        let tensors = centers
            .into_iter()
            .map(|c| {
                let r = Matrix::from_elem(c.dim(), radius);
                BoxTensor::new(c, r)
            })
            .collect::<Result<_>>()?;
        Ok(Self { tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn centers(&self) -> Vec<Matrix> {
        self.tensors.iter().map(|t| t.center.clone()).collect()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors.iter().map(BoxTensor::dim).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.center.len()).sum()
    }

    pub(crate) fn check_congruent(&self, other: &ParamBox, op: &'static str) -> Result<()> {
        let (a, b) = (self.shapes(), other.shapes());
        if a != b {
            let flat = |s: &[(usize, usize)]| s.iter().flat_map(|&(r, c)| [r, c]).collect::<Vec<_>>();
            return Err(Error::shape(op, &flat(&a), &flat(&b)));
        }
        Ok(())
    }

    /// Sum of all radii.
    pub fn region_size(&self) -> f64 {
        self.tensors.iter().map(|t| t.radius.sum()).sum()
    }

    /// Exact check that `inner` lies inside `self`, comparing the float bounds
    /// `c - r` and `c + r` with no tolerance.
    pub fn contains(&self, inner: &ParamBox) -> Result<bool> {
        Ok(self.violations(inner, 1)?.is_empty())
    }

    /// Up to `limit` coordinates where `inner` leaves `self`.
    pub fn violations(&self, inner: &ParamBox, limit: usize) -> Result<Vec<ContainmentViolation>> {
        self.check_congruent(inner, "box containment")?;
        let mut out = Vec::new();
        for (k, (o, i)) in self.tensors.iter().zip(&inner.tensors).enumerate() {
            for ((row, col), &oc) in o.center.indexed_iter() {
                let (or, ic, ir) = (o.radius[[row, col]], i.center[[row, col]], i.radius[[row, col]]);
                let (olo, ohi, ilo, ihi) = (oc - or, oc + or, ic - ir, ic + ir);
                if !(ilo >= olo && ihi <= ohi) {
                    out.push(ContainmentViolation {
                        tensor: k,
                        row,
                        col,
                        inner: (ilo, ihi),
                        outer: (olo, ohi),
                    });
                    if out.len() >= limit {
                        return Ok(out);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Whether a concrete parameter vector lies inside the box.
    pub fn contains_point(&self, point: &[Matrix]) -> bool {
        point.len() == self.tensors.len()
            && self.tensors.iter().zip(point).all(|(t, p)| {
                t.dim() == p.dim()
                    && Zip::from(&t.center)
                        .and(&t.radius)
                        .and(p)
                        .all(|&c, &r, &v| v >= c - r && v <= c + r)
            })
    }

    /// Intersection of two boxes, or `None` when some coordinate is empty.
    ///
    /// Where one interval already contains the other, the inner one is kept
    /// verbatim, so `A ∩ A` reproduces `A` exactly.
    pub fn intersect(&self, other: &ParamBox) -> Result<Option<ParamBox>> {
        self.check_congruent(other, "box intersection")?;
        let mut tensors = Vec::with_capacity(self.len());
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            let mut center = Matrix::zeros(a.dim());
            let mut radius = Matrix::zeros(a.dim());
            let mut empty = false;
            Zip::from(&mut center)
                .and(&mut radius)
                .and(&a.center)
                .and(&a.radius)
                .and(&b.center)
                .and(&b.radius)
                .for_each(|c, r, &ac, &ar, &bc, &br| {
                    let (alo, ahi, blo, bhi) = (ac - ar, ac + ar, bc - br, bc + br);
                    if alo >= blo && ahi <= bhi {
                        (*c, *r) = (ac, ar);
                    } else if blo >= alo && bhi <= ahi {
                        (*c, *r) = (bc, br);
                    } else {
                        let (lo, hi) = (alo.max(blo), ahi.min(bhi));
                        if lo > hi {
                            empty = true;
                            return;
                        }
                        (*c, *r) = inscribed(lo, hi);
                    }
                });
            if empty {
                return Ok(None);
            }
            tensors.push(BoxTensor { center, radius });
        }
        Ok(Some(ParamBox { tensors }))
    }

    /// Uniform sample from the box, clamped so rounding cannot leave it.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Matrix> {
        self.tensors
            .iter()
            .map(|t| {
                let mut out = Matrix::zeros(t.dim());
                Zip::from(&mut out).and(&t.center).and(&t.radius).for_each(|o, &c, &r| {
                    let u: f64 = rng.random_range(-1.0..=1.0);
                    *o = (c + u * r).clamp(c - r, c + r);
                });
                out
            })
            .collect()
    }
}

/// Center and radius whose float bounds lie inside `[lo, hi]`.
fn inscribed(lo: f64, hi: f64) -> (f64, f64) {
    let c = lo + (hi - lo) / 2.0;
    let mut r = (hi - lo) / 2.0;
    while r > 0.0 && (c - r < lo || c + r > hi) {
        r = r.next_down();
    }
    (c, r.max(0.0))
}

/// `outer ⊇ inner`, exact.
pub fn box_contains(outer: &ParamBox, inner: &ParamBox) -> Result<bool> {
    outer.contains(inner)
}

pub fn box_intersect(a: &ParamBox, b: &ParamBox) -> Result<Option<ParamBox>> {
    a.intersect(b)
}

pub fn region_size(b: &ParamBox) -> f64 {
    b.region_size()
}

/// One realized coordinate of the nested-box map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReparamElement {
    pub center: f64,
    pub radius: f64,
    /// Derivative of the distance-to-edge term with respect to the center:
    /// `-1` when the upper edge is nearer (ties included), `+1` otherwise.
    pub branch: i8,
}

/// `w = a + tanh(mu) r`, `e = sigmoid(nu) min((a + r) - w, w - (a - r))`.
///
/// The radius is then lowered ulp by ulp until the float bounds `w - e`,
/// `w + e` sit inside `a - r`, `a + r`, so that containment holds exactly
/// and not only in real arithmetic.
#[inline]
pub fn reparam_element(mu: f64, nu: f64, anchor: f64, radius: f64) -> ReparamElement {
    reparam_parts(mu.tanh(), sigmoid(nu), anchor, radius)
}

/// [`reparam_element`] from precomputed `tanh(mu)` and `sigmoid(nu)`.
#[inline]
pub(crate) fn reparam_parts(t: f64, s: f64, anchor: f64, radius: f64) -> ReparamElement {
    let (lo, hi) = (anchor - radius, anchor + radius);
    let center = (anchor + t * radius).clamp(lo, hi);
    let (up, down) = (hi - center, center - lo);
    let (gap, branch) = if up <= down { (up, -1) } else { (down, 1) };
    let mut e = (s * gap).clamp(0.0, radius);
    while e > 0.0 && (center - e < lo || center + e > hi) {
        e = e.next_down();
    }
    ReparamElement {
        center,
        radius: e.max(0.0),
        branch,
    }
}

/// Free variables of the nested-box map plus the box they are confined to.
#[derive(Debug, Clone, PartialEq)]
pub struct ReparamState {
    pub mu: Vec<Matrix>,
    pub nu: Vec<Matrix>,
    pub frozen: ParamBox,
}

impl ReparamState {
    /// Fresh state inside `frozen` with `mu = 0` and `nu = nu_reset`.
    pub fn new(frozen: ParamBox, nu_reset: f64) -> Self {
        let mu = frozen.tensors.iter().map(|t| Matrix::zeros(t.dim())).collect();
        let nu = frozen
            .tensors
            .iter()
            .map(|t| Matrix::from_elem(t.dim(), nu_reset))
            .collect();
        Self { mu, nu, frozen }
    }

    pub fn reset_nu(&mut self, nu_reset: f64) {
        for n in &mut self.nu {
            n.fill(nu_reset);
        }
    }

    fn check(&self) -> Result<()> {
        let shapes = self.frozen.shapes();
        let bad = |m: &[Matrix]| m.len() != shapes.len() || m.iter().zip(&shapes).any(|(a, s)| a.dim() != *s);
        if bad(&self.mu) || bad(&self.nu) {
            let first = |m: &[Matrix]| m.iter().flat_map(|a| [a.nrows(), a.ncols()]).collect::<Vec<_>>();
            let expected: Vec<usize> = shapes.iter().flat_map(|&(r, c)| [r, c]).collect();
            let actual = if bad(&self.mu) {
                first(&self.mu)
            } else {
                first(&self.nu)
            };
            return Err(Error::shape("reparam state", &expected, &actual));
        }
        Ok(())
    }

    /// The box described by the current free variables.
    pub fn realize(&self) -> Result<ParamBox> {
        self.check()?;
        let tensors = self
            .frozen
            .tensors
            .iter()
            .zip(self.mu.iter().zip(&self.nu))
            .map(|(f, (mu, nu))| {
                let mut center = Matrix::zeros(f.dim());
                let mut radius = Matrix::zeros(f.dim());
                Zip::from(&mut center)
                    .and(&mut radius)
                    .and(mu)
                    .and(nu)
                    .and(&f.center)
                    .and(&f.radius)
                    .for_each(|c, r, &m, &n, &a, &ar| {
                        let el = reparam_element(m, n, a, ar);
                        (*c, *r) = (el.center, el.radius);
                    });
                BoxTensor { center, radius }
            })
            .collect();
        Ok(ParamBox { tensors })
    }

    /// Centers only, skipping the radius computation.
    pub fn realize_centers(&self) -> Result<Vec<Matrix>> {
        self.check()?;
        Ok(self
            .frozen
            .tensors
            .iter()
            .zip(&self.mu)
            .map(|(f, mu)| {
                let mut c = Matrix::zeros(f.dim());
                Zip::from(&mut c)
                    .and(mu)
                    .and(&f.center)
                    .and(&f.radius)
                    .for_each(|c, &m, &a, &r| *c = reparam_element(m, 0.0, a, r).center);
                c
            })
            .collect())
    }
}

/// Realizes the current box, then starts a fresh state confined to it.
pub fn freeze(state: &ReparamState, nu_reset: f64) -> Result<ReparamState> {
    Ok(ReparamState::new(state.realize()?, nu_reset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_box(c: f64, r: f64) -> ParamBox {
        ParamBox::new(vec![BoxTensor::new(array![[c]], array![[r]]).unwrap()])
    }

    fn box2(lo: [f64; 2], hi: [f64; 2]) -> ParamBox {
        let c = array![[(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0]];
        let r = array![[(hi[0] - lo[0]) / 2.0, (hi[1] - lo[1]) / 2.0]];
        ParamBox::new(vec![BoxTensor::new(c, r).unwrap()])
    }

    #[test]
    fn realize_at_reset_value() {
        let s = ReparamState::new(scalar_box(0.0, 1.0), 5.0);
        let b = s.realize().unwrap();
        assert_eq!(b.tensors[0].center[[0, 0]], 0.0);
        let oracle = 1.0 / (1.0 + (-5.0f64).exp());
        assert!((b.tensors[0].radius[[0, 0]] - oracle).abs() < 1e-15);
        assert!((oracle - 0.993307).abs() < 1e-6);
    }

    #[test]
    fn realize_saturated_nu() {
        let mut s = ReparamState::new(scalar_box(0.0, 1.0), 5.0);
        s.mu[0][[0, 0]] = 0.5f64.atanh();
        s.nu[0][[0, 0]] = 60.0;
        let b = s.realize().unwrap();
        assert!((b.tensors[0].center[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((b.tensors[0].radius[[0, 0]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn realize_rejects_shape_mismatch() {
        let mut s = ReparamState::new(scalar_box(0.0, 1.0), 5.0);
        s.mu[0] = array![[0.0, 0.0]];
        assert!(matches!(s.realize(), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn saturated_tanh_collapses_radius() {
        let el = reparam_element(40.0, 3.0, 0.25, 0.5);
        assert_eq!(el.center, 0.75);
        assert_eq!(el.radius, 0.0);
    }

    #[test]
    fn containment_examples() {
        let outer = box2([0.0, 0.0], [2.0, 2.0]);
        assert!(outer.contains(&outer).unwrap());
        let mut half = outer.clone();
        half.tensors[0].radius.mapv_inplace(|r| r / 2.0);
        assert!(outer.contains(&half).unwrap());
        let mut shifted = outer.clone();
        shifted.tensors[0].center[[0, 1]] += 2.0 * outer.tensors[0].radius[[0, 1]];
        assert!(!outer.contains(&shifted).unwrap());
        let v = outer.violations(&shifted, 10).unwrap();
        assert_eq!((v.len(), v[0].tensor, v[0].row, v[0].col), (1, 0, 0, 1));
        assert!(outer.contains(&scalar_box(0.0, 1.0)).is_err());
    }

    #[test]
    fn intersection_examples() {
        let a = box2([0.0, 0.0], [2.0, 2.0]);
        let b = box2([1.0, -1.0], [3.0, 1.0]);
        let i = a.intersect(&b).unwrap().unwrap();
        assert_eq!(i.tensors[0].lower(), array![[1.0, 0.0]]);
        assert_eq!(i.tensors[0].upper(), array![[2.0, 1.0]]);
        assert_eq!(a.intersect(&a).unwrap().unwrap(), a);
        let far = box2([5.0, 5.0], [6.0, 6.0]);
        assert!(a.intersect(&far).unwrap().is_none());
    }

    #[test]
    fn region_size_counts_radii() {
        let layer = ParamBox::around(vec![Matrix::zeros((400, 784)), Matrix::zeros((1, 400))], 1.0).unwrap();
        assert_eq!(layer.region_size(), 314_000.0);
        let zero = ParamBox::around(vec![Matrix::zeros((3, 3))], 0.0).unwrap();
        assert_eq!(zero.region_size(), 0.0);
    }

    #[test]
    fn intersection_matches_membership() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let rand_box = |rng: &mut ChaCha8Rng| {
                let c = Matrix::from_shape_fn((1, 3), |_| rng.random_range(-1.0..1.0));
                let r = Matrix::from_shape_fn((1, 3), |_| rng.random_range(0.0..1.0));
                ParamBox::new(vec![BoxTensor::new(c, r).unwrap()])
            };
            let (a, b) = (rand_box(&mut rng), rand_box(&mut rng));
            let i = a.intersect(&b).unwrap();
            for _ in 0..10_000 {
                let p = vec![Matrix::from_shape_fn((1, 3), |_| rng.random_range(-2.0..2.0))];
                let both = a.contains_point(&p) && b.contains_point(&p);
                let inside = i.as_ref().is_some_and(|i| i.contains_point(&p));
                assert_eq!(both, inside, "point {p:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn realize_stays_in_frozen_box(
            anchor in -5.0f64..5.0,
            radius in 0.0f64..3.0,
            mu in -20.0f64..20.0,
            nu in -20.0f64..20.0,
        ) {
            let frozen = scalar_box(anchor, radius);
            let mut s = ReparamState::new(frozen.clone(), 5.0);
            s.mu[0][[0, 0]] = mu;
            s.nu[0][[0, 0]] = nu;
            let inner = s.realize().unwrap();
            prop_assert!(frozen.contains(&inner).unwrap());
            prop_assert!(inner.tensors[0].radius[[0, 0]] >= 0.0);
        }

        #[test]
        fn freezing_twice_only_rescales(anchor in -3.0f64..3.0, radius in 0.01f64..2.0) {
            let s = ReparamState::new(scalar_box(anchor, radius), 5.0);
            let once = freeze(&s, 5.0).unwrap();
            let twice = freeze(&once, 5.0).unwrap();
            let (r1, r2) = (once.frozen.tensors[0].radius[[0, 0]], twice.frozen.tensors[0].radius[[0, 0]]);
            prop_assert_eq!(twice.frozen.tensors[0].center[[0, 0]], anchor);
            prop_assert!((r2 - sigmoid(5.0) * r1).abs() <= 4.0 * f64::EPSILON * (anchor.abs() + radius));
            prop_assert!(once.frozen.contains(&twice.frozen).unwrap());
        }

        #[test]
        fn samples_stay_inside(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = Matrix::from_shape_fn((2, 3), |_| rng.random_range(-1.0..1.0));
            let r = Matrix::from_shape_fn((2, 3), |_| rng.random_range(0.0..1.0));
            let b = ParamBox::new(vec![BoxTensor::new(c, r).unwrap()]);
            for _ in 0..50 {
                let p = b.sample_uniform(&mut rng);
                prop_assert!(b.contains_point(&p));
            }
        }
    }
}
