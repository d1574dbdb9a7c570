//! Gated recurrent cells with an `(h, c)` state signature.
//!
//! Cells are selected by name (`lstm`, `gru`) through [`cells`]. The GRU has
//! no cell state; it carries `c` through unchanged so both kinds share one
//! interface.

use std::sync::OnceLock;

use rand::Rng;
use riskid_tape::{Mat, Tape, Var};

use crate::params::{init_uniform, Bound};
use crate::registry::Registry;

/// Parameters of one gated cell: `gates = x W_x + h W_h + b`, where the gate
/// block holds `gate_count * H` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub w_x: Mat,
    pub w_h: Mat,
    pub bias: Mat,
}

impl CellParams {
    pub fn init<R: Rng>(rng: &mut R, input: usize, hidden: usize, gates: usize) -> Self {
        Self {
            w_x: init_uniform(rng, input, gates * hidden, input),
            w_h: init_uniform(rng, hidden, gates * hidden, hidden),
            bias: Mat::zeros((1, gates * hidden)),
        }
    }

    pub fn zeros(input: usize, hidden: usize, gates: usize) -> Self {
        Self {
            w_x: Mat::zeros((input, gates * hidden)),
            w_h: Mat::zeros((hidden, gates * hidden)),
            bias: Mat::zeros((1, gates * hidden)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.nrows()
    }

    pub fn input(&self) -> usize {
        self.w_x.nrows()
    }

    pub fn visit_named<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Mat)) {
        f(&format!("{prefix}.w_x"), &self.w_x);
        f(&format!("{prefix}.w_h"), &self.w_h);
        f(&format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_named_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        f(&format!("{prefix}.w_x"), &mut self.w_x);
        f(&format!("{prefix}.w_h"), &mut self.w_h);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }

    pub fn bind(&self, tape: &mut Tape) -> CellVars {
        CellVars {
            w_x: tape.leaf(self.w_x.clone()),
            w_h: tape.leaf(self.w_h.clone()),
            bias: tape.leaf(self.bias.clone()),
            hidden: self.hidden(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CellVars {
    pub w_x: Var,
    pub w_h: Var,
    pub bias: Var,
    pub hidden: usize,
}

impl Bound for CellVars {
    fn vars(&self, out: &mut Vec<Var>) {
        out.extend([self.w_x, self.w_h, self.bias]);
    }
}

pub trait RecurrentCell: Send + Sync {
    fn name(&self) -> &'static str;

    /// Number of `H`-wide gate blocks in the parameter matrices.
    fn gate_count(&self) -> usize;

    /// One update from `(h, c)` given input row `x`; returns `(h', c')`.
    fn step(&self, tape: &mut Tape, p: &CellVars, x: Var, h: Var, c: Var) -> (Var, Var);
}

pub struct Lstm;

impl RecurrentCell for Lstm {
    fn name(&self) -> &'static str {
        "lstm"
    }

    fn gate_count(&self) -> usize {
        4
    }

    fn step(&self, tape: &mut Tape, p: &CellVars, x: Var, h: Var, c: Var) -> (Var, Var) {
        let hs = p.hidden;
        let gx = tape.matmul(x, p.w_x);
        let gh = tape.matmul(h, p.w_h);
        let z = tape.add(gx, gh);
        let z = tape.add_row(z, p.bias);
        let i = tape.slice_cols(z, 0, hs);
        let i = tape.sigmoid(i);
        let f = tape.slice_cols(z, hs, 2 * hs);
        let f = tape.sigmoid(f);
        let g = tape.slice_cols(z, 2 * hs, 3 * hs);
        let g = tape.tanh(g);
        let o = tape.slice_cols(z, 3 * hs, 4 * hs);
        let o = tape.sigmoid(o);
        let keep = tape.mul(f, c);
        let write = tape.mul(i, g);
        let c_next = tape.add(keep, write);
        let squashed = tape.tanh(c_next);
        let h_next = tape.mul(o, squashed);
        (h_next, c_next)
    }
}

pub struct Gru;

impl RecurrentCell for Gru {
    fn name(&self) -> &'static str {
        "gru"
    }

    fn gate_count(&self) -> usize {
        3
    }

    fn step(&self, tape: &mut Tape, p: &CellVars, x: Var, h: Var, c: Var) -> (Var, Var) {
        let hs = p.hidden;
        let gx = tape.matmul(x, p.w_x);
        let gx = tape.add_row(gx, p.bias);
        let gh = tape.matmul(h, p.w_h);
        let pick = |tape: &mut Tape, v: Var, k: usize| tape.slice_cols(v, k * hs, (k + 1) * hs);
        let (xr, hr) = (pick(tape, gx, 0), pick(tape, gh, 0));
        let (xz, hz) = (pick(tape, gx, 1), pick(tape, gh, 1));
        let (xn, hn) = (pick(tape, gx, 2), pick(tape, gh, 2));
        let r = tape.add(xr, hr);
        let r = tape.sigmoid(r);
        let u = tape.add(xz, hz);
        let u = tape.sigmoid(u);
        let gated = tape.mul(r, hn);
        let n = tape.add(xn, gated);
        let n = tape.tanh(n);
        // h' = (1 - u) * n + u * h = n + u * (h - n)
        let diff = tape.sub(h, n);
        let mix = tape.mul(u, diff);
        let h_next = tape.add(n, mix);
        (h_next, c)
    }
}

/// The registry of recurrent cells.
pub fn cells() -> &'static Registry<dyn RecurrentCell> {
    static REGISTRY: OnceLock<Registry<dyn RecurrentCell>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut r: Registry<dyn RecurrentCell> = Registry::new("recurrent cell");
        r.register("lstm", Box::new(Lstm));
        r.register("gru", Box::new(Gru));
        r
    })
}
