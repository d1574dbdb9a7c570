//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation applied to its variables. Values are
//! always two-dimensional; row vectors are `1 x n` matrices and scalars are
//! `1 x 1`. Calling [`Tape::backward`] on a scalar variable walks the tape in
//! reverse and returns the gradient of that scalar with respect to every
//! recorded variable.
//!
//! The operation set is deliberately small: exactly what the risk-object
//! models need (affine maps, gated recurrences, presence-masked softmax,
//! and a handful of losses).

use ndarray::{concatenate, s, Array2, Axis, Zip};

pub type Mat = Array2<f64>;

/// Clamp applied to probabilities fed into [`Tape::binary_cross_entropy`].
pub const PROB_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    MaskedSoftmaxRows(Var, Mat),
    SumAll(Var),
    SoftmaxCrossEntropy(Var, usize),
    BinaryCrossEntropy(Var, Mat),
    SmoothL1(Var, Mat),
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    /// Gradient for `var`, or `None` if the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Mat> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, materialising zeros of the right shape when the
    /// loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var, shape: (usize, usize)) -> Mat {
        self.get(var).cloned().unwrap_or_else(|| Mat::zeros(shape))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a `1 x n` row vector.
    pub fn row(&mut self, values: &[f64]) -> Var {
        let m = Mat::from_shape_vec((1, values.len()), values.to_vec())
            .expect("row vector shape");
        self.leaf(m)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.leaf(Mat::zeros((rows, cols)))
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a `1 x 1` variable.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar() on non-scalar variable");
        m[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// Adds the `1 x n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (_, cols) = self.shape(a);
        assert_eq!(self.shape(b), (1, cols), "add_row: bias must be 1 x cols");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::AddRow(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let v = concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat_cols: row counts differ");
        self.push(v, Op::ConcatCols(a, b))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    /// Row-wise softmax restricted to entries where `mask` is nonzero.
    ///
    /// Masked-out entries are exactly zero in the output and receive no
    /// gradient. A row with no unmasked entry is all zeros. Each row is
    /// stabilised by subtracting its maximum over unmasked entries.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: Mat) -> Var {
        assert_eq!(self.shape(a), mask.dim(), "masked_softmax_rows: mask shape");
        let v = masked_softmax(self.value(a), &mask);
        self.push(v, Op::MaskedSoftmaxRows(a, mask))
    }

    /// Sum of all entries, as a `1 x 1` variable.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    /// Cross entropy between `softmax(logits)` and the one-hot `target`.
    /// `logits` must be a `1 x C` row.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let z = self.value(logits);
        assert_eq!(z.nrows(), 1, "softmax_cross_entropy: logits must be a row");
        assert!(target < z.ncols(), "softmax_cross_entropy: target out of range");
        let row: Vec<f64> = z.row(0).to_vec();
        let loss = log_sum_exp(&row) - row[target];
        self.push(Mat::from_elem((1, 1), loss), Op::SoftmaxCrossEntropy(logits, target))
    }

    /// Summed binary cross entropy of probabilities `p` against `targets`.
    /// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn binary_cross_entropy(&mut self, p: Var, targets: Mat) -> Var {
        assert_eq!(self.shape(p), targets.dim(), "binary_cross_entropy: shape");
        let mut total = 0.0;
        Zip::from(self.value(p)).and(&targets).for_each(|&p, &t| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        });
        self.push(Mat::from_elem((1, 1), total), Op::BinaryCrossEntropy(p, targets))
    }

    /// Summed smooth-L1 (Huber with unit transition) between `pred` and `targets`.
    pub fn smooth_l1(&mut self, pred: Var, targets: Mat) -> Var {
        assert_eq!(self.shape(pred), targets.dim(), "smooth_l1: shape");
        let mut total = 0.0;
        Zip::from(self.value(pred)).and(&targets).for_each(|&x, &t| {
            total += smooth_l1(x - t);
        });
        self.push(Mat::from_elem((1, 1), total), Op::SmoothL1(pred, targets))
    }

    /// Gradient of the scalar `loss` with respect to every recorded variable.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward: loss must be 1 x 1");
        let mut grads: Vec<Option<Mat>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, gb);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, -&g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, &g * *c),
                Op::Relu(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(&node.value).for_each(|d, &y| *d *= y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(&node.value).for_each(|d, &y| *d *= 1.0 - y * y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let split = self.shape(*a).1;
                    accumulate(&mut grads, *a, g.slice(s![.., ..split]).to_owned());
                    accumulate(&mut grads, *b, g.slice(s![.., split..]).to_owned());
                }
                Op::SliceCols(a, start, end) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::MaskedSoftmaxRows(a, mask) => {
                    let y = &node.value;
                    let mut ga = Mat::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let dot: f64 = (0..y.ncols()).map(|c| y[[r, c]] * g[[r, c]]).sum();
                        for c in 0..y.ncols() {
                            if mask[[r, c]] != 0.0 {
                                ga[[r, c]] = y[[r, c]] * (g[[r, c]] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let ga = Mat::from_elem(self.shape(*a), g[[0, 0]]);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxCrossEntropy(a, target) => {
                    let row: Vec<f64> = self.value(*a).row(0).to_vec();
                    let probs = softmax(&row);
                    let mut ga = Mat::from_shape_vec((1, probs.len()), probs).expect("row");
                    ga[[0, *target]] -= 1.0;
                    accumulate(&mut grads, *a, ga * g[[0, 0]]);
                }
                Op::BinaryCrossEntropy(a, targets) => {
                    let mut ga = Mat::zeros(targets.dim());
                    Zip::from(&mut ga).and(self.value(*a)).and(targets).for_each(|d, &p, &t| {
                        if p > PROB_EPS && p < 1.0 - PROB_EPS {
                            *d = -t / p + (1.0 - t) / (1.0 - p);
                        }
                    });
                    accumulate(&mut grads, *a, ga * g[[0, 0]]);
                }
                Op::SmoothL1(a, targets) => {
                    let mut ga = Mat::zeros(targets.dim());
                    Zip::from(&mut ga).and(self.value(*a)).and(targets).for_each(|d, &x, &t| {
                        let diff = x - t;
                        *d = if diff.abs() < 1.0 { diff } else { diff.signum() };
                    });
                    accumulate(&mut grads, *a, ga * g[[0, 0]]);
                }
            }
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Grads { grads }
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn smooth_l1(diff: f64) -> f64 {
    let a = diff.abs();
    if a < 1.0 {
        0.5 * diff * diff
    } else {
        a - 0.5
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax of a slice.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Row-wise softmax over entries where `mask` is nonzero; see
/// [`Tape::masked_softmax_rows`].
pub fn masked_softmax(logits: &Mat, mask: &Mat) -> Mat {
    let mut out = Mat::zeros(logits.dim());
    for r in 0..logits.nrows() {
        let mut max = f64::NEG_INFINITY;
        for c in 0..logits.ncols() {
            if mask[[r, c]] != 0.0 {
                max = max.max(logits[[r, c]]);
            }
        }
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        for c in 0..logits.ncols() {
            if mask[[r, c]] != 0.0 {
                let e = (logits[[r, c]] - max).exp();
                out[[r, c]] = e;
                total += e;
            }
        }
        out.row_mut(r).mapv_inplace(|x| x / total);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_gradient_is_outer_product() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0]]);
        let b = t.leaf(array![[3.0], [4.0]]);
        let y = t.matmul(a, b);
        assert_eq!(t.scalar(y), 11.0);
        let g = t.backward(y);
        assert_eq!(g.get(a).unwrap(), &array![[3.0, 4.0]]);
        assert_eq!(g.get(b).unwrap(), &array![[1.0], [2.0]]);
    }

    #[test]
    fn shared_variable_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(array![[3.0]]);
        let y = t.mul(x, x);
        let z = t.add(y, x);
        let g = t.backward(z);
        assert_eq!(g.get(x).unwrap()[[0, 0]], 7.0);
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let logits = array![[1.0, 2.0, 100.0], [0.0, 0.0, 0.0]];
        let mask = array![[1.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        let y = masked_softmax(&logits, &mask);
        assert_eq!(y[[0, 2]], 0.0);
        assert!((y[[0, 0]] + y[[0, 1]] - 1.0).abs() < 1e-15);
        assert!(y.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_cross_entropy_of_equal_logits_is_log_classes() {
        let mut t = Tape::new();
        let z = t.row(&[0.0, 0.0, 0.0]);
        let l = t.softmax_cross_entropy(z, 1);
        assert!((t.scalar(l) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn unrelated_leaf_has_no_gradient() {
        let mut t = Tape::new();
        let a = t.row(&[1.0]);
        let b = t.row(&[2.0]);
        let l = t.sum_all(a);
        let g = t.backward(l);
        assert!(g.get(b).is_none());
        assert_eq!(g.get_or_zeros(b, (1, 1)), array![[0.0]]);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
