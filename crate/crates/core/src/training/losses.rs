use ndarray::{Array2, ArrayView1, Axis};

use crate::autograd::kernels::softmax_cross_entropy;
use crate::autograd::Matrix;
use crate::error::{Error, Result};
use crate::interval::IntervalTensor;
use crate::nn::{argmax_rows, Network, ParamBox};

/// A task's training or test examples, addressed by row index into a shared
/// feature matrix. `labels[k]` belongs to row `indices[k]`.
#[derive(Debug, Clone, Copy)]
pub struct TaskData<'a> {
    pub features: &'a Matrix,
    pub indices: &'a [usize],
    pub labels: &'a [usize],
    pub head: Option<usize>,
}

impl<'a> TaskData<'a> {
    pub fn new(features: &'a Matrix, indices: &'a [usize], labels: &'a [usize], head: Option<usize>) -> Result<Self> {
        if indices.len() != labels.len() {
            return Err(Error::shape("task data", &[indices.len()], &[labels.len()]));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= features.nrows()) {
            return Err(Error::shape("task data index", &[features.nrows()], &[bad]));
        }
        Ok(Self {
            features,
            indices,
            labels,
            head,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Gathers the examples at the given positions (not row indices).
    pub fn gather(&self, positions: &[usize]) -> (Matrix, Vec<usize>) {
        let rows: Vec<usize> = positions.iter().map(|&p| self.indices[p]).collect();
        let x = self.features.select(Axis(0), &rows);
        let y = positions.iter().map(|&p| self.labels[p]).collect();
        (x, y)
    }

    /// Contiguous chunks of at most `size` examples, in order.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = (Matrix, Vec<usize>)> + '_ {
        let positions: Vec<usize> = (0..self.len()).collect();
        let size = size.max(1);
        (0..self.len().div_ceil(size)).map(move |c| {
            let end = ((c + 1) * size).min(positions.len());
            self.gather(&positions[c * size..end])
        })
    }
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&y| y >= classes) {
        Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

/// Mean cross-entropy of `logits: [batch, classes]`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != logits.nrows() || labels.is_empty() {
        return Err(Error::shape("cross_entropy", &[logits.nrows()], &[labels.len()]));
    }
    check_labels(labels, logits.ncols())?;
    let (losses, _) = softmax_cross_entropy(logits, labels);
    Ok(losses.iter().sum::<f64>() / labels.len() as f64)
}

/// Worst-case logits for one example: upper bounds everywhere except the
/// true class, which takes its lower bound.
pub fn worst_case_logits(bounds: &IntervalTensor, y: usize) -> Result<Vec<f64>> {
    if bounds.shape().len() != 1 {
        return Err(Error::shape("worst_case_logits", &[bounds.len()], bounds.shape()));
    }
    check_labels(&[y], bounds.len())?;
    Ok(bounds
        .iter()
        .enumerate()
        .map(|(i, iv)| if i == y { iv.lower() } else { iv.upper() })
        .collect())
}

/// `mask[n, i]` is true exactly at the true class of row `n`.
pub fn label_mask(labels: &[usize], classes: usize) -> Array2<bool> {
    let mut mask = Array2::from_elem((labels.len(), classes), false);
    for (n, &y) in labels.iter().enumerate() {
        mask[[n, y]] = true;
    }
    mask
}

/// Row-wise worst-case logits for a batch of bounds.
pub fn worst_case_batch(lower: &Matrix, upper: &Matrix, labels: &[usize]) -> Result<Matrix> {
    if lower.dim() != upper.dim() || labels.len() != lower.nrows() {
        return Err(Error::shape(
            "worst_case_batch",
            &[lower.nrows(), lower.ncols()],
            &[labels.len()],
        ));
    }
    check_labels(labels, lower.ncols())?;
    let mut z = upper.clone();
    for (n, &y) in labels.iter().enumerate() {
        z[[n, y]] = lower[[n, y]];
    }
    Ok(z)
}

/// True when every parameter vector in the box classifies the example
/// correctly: the true lower bound strictly exceeds every other upper bound.
pub fn is_guaranteed(lower: ArrayView1<f64>, upper: ArrayView1<f64>, y: usize) -> bool {
    let ly = lower[y];
    upper.iter().enumerate().all(|(i, &u)| i == y || ly > u)
}

pub fn guaranteed_count(lower: &Matrix, upper: &Matrix, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(n, &y)| is_guaranteed(lower.row(n), upper.row(n), y))
        .count()
}

pub fn correct_count(logits: &Matrix, labels: &[usize]) -> usize {
    argmax_rows(logits).iter().zip(labels).filter(|(p, y)| p == y).count()
}

/// Center accuracy, guaranteed accuracy and both losses over a whole task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxEvaluation {
    pub examples: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub guaranteed_accuracy: f64,
    pub worst_case_loss: f64,
}

const EVAL_CHUNK: usize = 500;

/// Evaluates the box on every example of `data`.
pub fn evaluate_box(net: &Network, b: &ParamBox, data: &TaskData) -> Result<BoxEvaluation> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("evaluation set".into()));
    }
    let centers = b.centers();
    let (mut correct, mut guaranteed) = (0usize, 0usize);
    let (mut loss, mut wc_loss) = (0.0, 0.0);
    for (x, y) in data.chunks(EVAL_CHUNK) {
        let z = net.forward_at(&centers, &x, data.head)?;
        let (lo, hi) = net.logit_bounds(b, &x, data.head)?;
        check_labels(&y, z.ncols())?;
        correct += correct_count(&z, &y);
        guaranteed += guaranteed_count(&lo, &hi, &y);
        loss += cross_entropy(&z, &y)? * y.len() as f64;
        wc_loss += cross_entropy(&worst_case_batch(&lo, &hi, &y)?, &y)? * y.len() as f64;
    }
    let n = data.len() as f64;
    Ok(BoxEvaluation {
        examples: data.len(),
        accuracy: correct as f64 / n,
        loss: loss / n,
        guaranteed_accuracy: guaranteed as f64 / n,
        worst_case_loss: wc_loss / n,
    })
}

/// Accuracy of an arbitrary parameter vector over a whole task.
pub fn accuracy_at(net: &Network, params: &[Matrix], data: &TaskData) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("evaluation set".into()));
    }
    let mut correct = 0;
    for (x, y) in data.chunks(EVAL_CHUNK) {
        correct += correct_count(&net.forward_at(params, &x, data.head)?, &y);
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Accuracy and mean loss of an arbitrary parameter vector over a task.
pub fn loss_and_accuracy_at(net: &Network, params: &[Matrix], data: &TaskData) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("evaluation set".into()));
    }
    let (mut correct, mut loss) = (0, 0.0);
    for (x, y) in data.chunks(EVAL_CHUNK) {
        let z = net.forward_at(params, &x, data.head)?;
        correct += correct_count(&z, &y);
        loss += cross_entropy(&z, &y)? * y.len() as f64;
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mean worst-case loss of the box on a batch.
pub fn worst_case_loss(net: &Network, b: &ParamBox, x: &Matrix, labels: &[usize], head: Option<usize>) -> Result<f64> {
    let (lo, hi) = net.logit_bounds(b, x, head)?;
    cross_entropy(&worst_case_batch(&lo, &hi, labels)?, labels)
}

/// Fraction of the batch that every parameter vector in the box classifies
/// correctly.
pub fn worst_case_accuracy(
    net: &Network,
    b: &ParamBox,
    x: &Matrix,
    labels: &[usize],
    head: Option<usize>,
) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset("batch".into()));
    }
    let (lo, hi) = net.logit_bounds(b, x, head)?;
    if labels.len() != lo.nrows() {
        return Err(Error::shape("worst_case_accuracy", &[lo.nrows()], &[labels.len()]));
    }
    check_labels(labels, lo.ncols())?;
    Ok(guaranteed_count(&lo, &hi, labels) as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_ce(z: &[f64], y: usize) -> f64 {
        let s: f64 = z.iter().map(|v| v.exp()).sum();
        -(z[y].exp() / s).ln()
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy(&array![[0.0, 0.0]], &[0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let big = cross_entropy(&array![[1000.0, 0.0]], &[0]).unwrap();
        assert!(big.is_finite() && big.abs() < 1e-300);
        assert!(matches!(
            cross_entropy(&array![[0.0, 0.0]], &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn cross_entropy_matches_naive_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = Matrix::from_shape_fn((16, 5), |_| rng.random_range(-5.0..5.0));
        let y: Vec<usize> = (0..16).map(|_| rng.random_range(0..5)).collect();
        let naive: f64 = (0..16)
            .map(|n| naive_ce(z.row(n).as_slice().unwrap(), y[n]))
            .sum::<f64>()
            / 16.0;
        assert!((cross_entropy(&z, &y).unwrap() - naive).abs() < 1e-10);
    }

    #[test]
    fn worst_case_logits_example() {
        let b = IntervalTensor::from_vecs(&[2], vec![0.0, 0.5], vec![1.0, 1.5]).unwrap();
        assert_eq!(worst_case_logits(&b, 0).unwrap(), vec![0.0, 1.5]);
        let p = IntervalTensor::from_vecs(&[3], vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(worst_case_logits(&p, 2).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(worst_case_logits(&p, 3).is_err());
    }

    #[test]
    fn worst_case_loss_dominates_sampled_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let lo: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.0..2.0)).collect();
            let y = rng.random_range(0..3);
            let b = IntervalTensor::from_vecs(&[3], lo.clone(), hi.clone()).unwrap();
            let worst = naive_ce(&worst_case_logits(&b, y).unwrap(), y);
            for _ in 0..10_000 {
                let z: Vec<f64> = (0..3).map(|i| rng.random_range(lo[i]..=hi[i])).collect();
                assert!(naive_ce(&z, y) <= worst + 1e-12);
            }
        }
    }

    #[test]
    fn guaranteed_rule_is_strict() {
        let lo = array![2.0, -1.0, -1.0];
        assert!(is_guaranteed(lo.view(), array![2.5, 1.9, 1.0].view(), 0));
        assert!(!is_guaranteed(lo.view(), array![2.5, 2.0, 1.0].view(), 0));
    }
}
