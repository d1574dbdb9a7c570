//! Named parameter tensors and the plumbing that moves them on and off a tape.

use rand::Rng;
use riskid_tape::{Mat, Tape, Var};

/// Anything that owns trainable tensors, visited in a fixed order.
///
/// The visiting order defines the flat layout used by the optimiser, the
/// checkpoint archive and [`Bound::vars`].
pub trait Parameterized {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Mat));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Mat));

    fn named_tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        self.visit(&mut |name, m| out.push((name.to_string(), m)));
        out
    }

    fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, m| n += m.len());
        n
    }
}

/// Tape variables for a parameter set, in visiting order.
pub trait Bound {
    fn vars(&self, out: &mut Vec<Var>);
}

/// Uniform initialisation in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Mat {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

/// Affine map `y = x W + b` on row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in x out`
    pub weight: Mat,
    /// `1 x out`
    pub bias: Mat,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Mat::zeros((input, output)),
            bias: Mat::zeros((1, output)),
        }
    }

    pub fn init<R: Rng>(rng: &mut R, input: usize, output: usize) -> Self {
        Self {
            weight: init_uniform(rng, input, output, input),
            bias: Mat::zeros((1, output)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn visit_named<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Mat)) {
        f(&format!("{prefix}.weight"), &self.weight);
        f(&format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_named_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }

    pub fn bind(&self, tape: &mut Tape) -> LinearVars {
        LinearVars {
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let y = tape.matmul(x, self.weight);
        tape.add_row(y, self.bias)
    }
}

impl Bound for LinearVars {
    fn vars(&self, out: &mut Vec<Var>) {
        out.push(self.weight);
        out.push(self.bias);
    }
}

/// Collects the gradient of every bound variable, zero-filled where the loss
/// does not reach it, in visiting order.
pub fn collect_grads<P: Parameterized, B: Bound>(
    params: &P,
    bound: &B,
    grads: &riskid_tape::Grads,
) -> Vec<Mat> {
    let mut vars = Vec::new();
    bound.vars(&mut vars);
    let mut shapes = Vec::new();
    params.visit(&mut |_, m| shapes.push(m.dim()));
    assert_eq!(vars.len(), shapes.len(), "bound variables do not match parameter layout");
    vars.iter()
        .zip(shapes)
        .map(|(v, shape)| grads.get_or_zeros(*v, shape))
        .collect()
}
