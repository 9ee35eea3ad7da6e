//! Recurrent cells: LSTM without peepholes (gate order i, f, g, o) and a
//! plain tanh RNN, with batched unrolled forward and backward passes.
//!
//! Batched tensors are stacked time-major: rows `t * batch .. (t + 1) * batch`
//! hold step `t` for every sequence in the batch.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Rnn,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Rnn => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Rnn => "rnn",
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(CellKind::Lstm),
            "rnn" => Ok(CellKind::Rnn),
            _ => Err(Error::InvalidInput(format!("unknown cell type `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellParams<F> {
    pub kind: CellKind,
    /// `(G·H) × D`
    pub w_x: Array2<F>,
    /// `(G·H) × H`
    pub w_h: Array2<F>,
    /// `G·H`
    pub b: Array1<F>,
}

impl<F: Real> CellParams<F> {
    pub fn zeros(kind: CellKind, input: usize, hidden: usize) -> Self {
        let gh = kind.gates() * hidden;
        Self {
            kind,
            w_x: Array2::zeros((gh, input)),
            w_h: Array2::zeros((gh, hidden)),
            b: Array1::zeros(gh),
        }
    }

    /// Glorot-uniform weights, zero biases, forget-gate bias 1 for LSTM.
    pub fn glorot<R: Rng + ?Sized>(kind: CellKind, input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(kind, input, hidden);
        glorot_fill(&mut p.w_x, rng);
        glorot_fill(&mut p.w_h, rng);
        if kind == CellKind::Lstm {
            p.b.slice_mut(s![hidden..2 * hidden]).fill(F::one());
        }
        p
    }

    pub fn input_size(&self) -> usize {
        self.w_x.ncols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_h.ncols()
    }

    /// `G · (D·H + H² + H)`
    pub fn param_count(&self) -> usize {
        self.w_x.len() + self.w_h.len() + self.b.len()
    }

    pub fn check(&self) -> Result<()> {
        let h = self.hidden_size();
        let gh = self.kind.gates() * h;
        if self.w_x.nrows() != gh || self.w_h.nrows() != gh || self.b.len() != gh {
            return Err(Error::ShapeMismatch(format!(
                "{} cell with hidden size {h} needs {gh} gate rows",
                self.kind.name()
            )));
        }
        Ok(())
    }
}

/// Weights of a time-shared linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<F> {
    /// `H × O`
    pub w: Array2<F>,
    /// `O`
    pub b: Array1<F>,
}

impl<F: Real> DenseParams<F> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((input, output)),
            b: Array1::zeros(output),
        }
    }

    pub fn glorot<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, output);
        glorot_fill(&mut p.w, rng);
        p
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// Applies the layer to every row of `h`.
    pub fn apply(&self, h: &ArrayView2<F>) -> Array2<F> {
        let mut y = h.dot(&self.w);
        y += &self.b;
        y
    }
}

fn glorot_fill<F: Real, R: Rng + ?Sized>(w: &mut Array2<F>, rng: &mut R) {
    // our cell layout is (fan_out × fan_in); dense layout is (fan_in × fan_out)
    let limit = (6.0 / (w.nrows() + w.ncols()) as f64).sqrt();
    for v in w.iter_mut() {
        *v = F::from_f64(rng.gen_range(-limit..limit)).unwrap_or_else(F::zero);
    }
}

#[inline]
fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// One step of the cell for a single sequence.
pub fn cell_step<F: Real>(
    p: &CellParams<F>,
    x: &ArrayView1<F>,
    h: &ArrayView1<F>,
    c: &ArrayView1<F>,
) -> Result<(Array1<F>, Array1<F>)> {
    p.check()?;
    let hs = p.hidden_size();
    if x.len() != p.input_size() || h.len() != hs || c.len() != hs {
        return Err(Error::ShapeMismatch(format!(
            "cell expects x: {}, h/c: {hs}; got x: {}, h: {}, c: {}",
            p.input_size(),
            x.len(),
            h.len(),
            c.len()
        )));
    }
    let pre = p.w_x.dot(x) + p.w_h.dot(h) + &p.b;
    match p.kind {
        CellKind::Lstm => {
            let mut h2 = Array1::zeros(hs);
            let mut c2 = Array1::zeros(hs);
            for j in 0..hs {
                let i = sigmoid(pre[j]);
                let f = sigmoid(pre[hs + j]);
                let g = pre[2 * hs + j].tanh();
                let o = sigmoid(pre[3 * hs + j]);
                c2[j] = f * c[j] + i * g;
                h2[j] = o * c2[j].tanh();
            }
            Ok((h2, c2))
        }
        CellKind::Rnn => Ok((pre.mapv(|v| v.tanh()), c.to_owned())),
    }
}

pub(crate) enum Input<'a, F> {
    /// Distinct input per step, `steps·batch × D`.
    Steps(ArrayView2<'a, F>),
    /// The same `batch × D` input at every step.
    Repeat(ArrayView2<'a, F>),
}

pub(crate) struct Trace<F> {
    pub batch: usize,
    pub steps: usize,
    /// Activated gates, `steps·batch × G·H`.
    pub gates: Array2<F>,
    /// LSTM cell states and their tanh, `steps·batch × H` (empty for RNN).
    pub cells: Array2<F>,
    pub tanh_c: Array2<F>,
    /// Hidden states, `steps·batch × H`.
    pub hidden: Array2<F>,
}

impl<F: Real> Trace<F> {
    pub fn last_hidden(&self) -> ArrayView2<'_, F> {
        let n = self.steps * self.batch;
        self.hidden.slice(s![n - self.batch..n, ..])
    }
}

pub(crate) fn forward<F: Real>(p: &CellParams<F>, input: &Input<'_, F>, batch: usize, steps: usize) -> Trace<F> {
    let hs = p.hidden_size();
    let gh = p.kind.gates() * hs;
    let lstm = p.kind == CellKind::Lstm;
    let proj = match input {
        Input::Steps(x) | Input::Repeat(x) => {
            let mut z = x.dot(&p.w_x.t());
            z += &p.b;
            z
        }
    };
    let rows = steps * batch;
    let mut gates = Array2::<F>::zeros((rows, gh));
    let mut hidden = Array2::<F>::zeros((rows, hs));
    let (mut cells, mut tanh_c) = if lstm {
        (Array2::zeros((rows, hs)), Array2::zeros((rows, hs)))
    } else {
        (Array2::zeros((0, 0)), Array2::zeros((0, 0)))
    };
    let mut pre = Array2::<F>::zeros((batch, gh));
    for t in 0..steps {
        let cur = t * batch;
        match input {
            Input::Steps(_) => pre.assign(&proj.slice(s![cur..cur + batch, ..])),
            Input::Repeat(_) => pre.assign(&proj),
        }
        if t > 0 {
            let prev = hidden.slice(s![cur - batch..cur, ..]);
            general_mat_mul(F::one(), &prev, &p.w_h.t(), F::one(), &mut pre);
        }
        for r in 0..batch {
            let row = cur + r;
            let z = pre.row(r);
            let z = z.as_slice().expect("contiguous");
            if lstm {
                let c_prev: Option<Vec<F>> = (t > 0).then(|| cells.row(row - batch).to_vec());
                let mut g_row = gates.row_mut(row);
                let g_row = g_row.as_slice_mut().expect("contiguous");
                for j in 0..hs {
                    g_row[j] = sigmoid(z[j]);
                    g_row[hs + j] = sigmoid(z[hs + j]);
                    g_row[2 * hs + j] = z[2 * hs + j].tanh();
                    g_row[3 * hs + j] = sigmoid(z[3 * hs + j]);
                }
                for j in 0..hs {
                    let cp = c_prev.as_ref().map_or(F::zero(), |c| c[j]);
                    let c = g_row[hs + j] * cp + g_row[j] * g_row[2 * hs + j];
                    let tc = c.tanh();
                    cells[[row, j]] = c;
                    tanh_c[[row, j]] = tc;
                    hidden[[row, j]] = g_row[3 * hs + j] * tc;
                }
            } else {
                for j in 0..hs {
                    let h = z[j].tanh();
                    gates[[row, j]] = h;
                    hidden[[row, j]] = h;
                }
            }
        }
    }
    Trace {
        batch,
        steps,
        gates,
        cells,
        tanh_c,
        hidden,
    }
}

/// Backpropagation through time. `dh_out` is the loss gradient arriving at
/// every hidden state from above (`steps·batch × H`). Returns parameter
/// gradients and, when requested, the gradient with respect to the input
/// (per step for [`Input::Steps`], summed over steps for [`Input::Repeat`]).
pub(crate) fn backward<F: Real>(
    p: &CellParams<F>,
    input: &Input<'_, F>,
    trace: &Trace<F>,
    dh_out: &ArrayView2<'_, F>,
    want_input_grad: bool,
) -> (CellParams<F>, Option<Array2<F>>) {
    let hs = p.hidden_size();
    let gh = p.kind.gates() * hs;
    let batch = trace.batch;
    let steps = trace.steps;
    let lstm = p.kind == CellKind::Lstm;
    let one = F::one();

    let mut dz = Array2::<F>::zeros((steps * batch, gh));
    let mut dh_next = Array2::<F>::zeros((batch, hs));
    let mut dc_next = Array2::<F>::zeros((batch, hs));
    for t in (0..steps).rev() {
        let cur = t * batch;
        for r in 0..batch {
            let row = cur + r;
            let g = trace.gates.row(row);
            let g = g.as_slice().expect("contiguous");
            let mut d = dz.row_mut(row);
            let d = d.as_slice_mut().expect("contiguous");
            if lstm {
                for j in 0..hs {
                    let dh = dh_out[[row, j]] + dh_next[[r, j]];
                    let (i, f, gg, o) = (g[j], g[hs + j], g[2 * hs + j], g[3 * hs + j]);
                    let tc = trace.tanh_c[[row, j]];
                    let c_prev = if t > 0 {
                        trace.cells[[row - batch, j]]
                    } else {
                        F::zero()
                    };
                    let d_o = dh * tc;
                    let dc = dh * o * (one - tc * tc) + dc_next[[r, j]];
                    d[j] = dc * gg * i * (one - i);
                    d[hs + j] = dc * c_prev * f * (one - f);
                    d[2 * hs + j] = dc * i * (one - gg * gg);
                    d[3 * hs + j] = d_o * o * (one - o);
                    dc_next[[r, j]] = dc * f;
                }
            } else {
                for j in 0..hs {
                    let dh = dh_out[[row, j]] + dh_next[[r, j]];
                    let h = g[j];
                    d[j] = dh * (one - h * h);
                }
            }
        }
        if t > 0 {
            let dz_t = dz.slice(s![cur..cur + batch, ..]);
            general_mat_mul(one, &dz_t, &p.w_h, F::zero(), &mut dh_next);
        }
    }

    let mut grads = CellParams::zeros(p.kind, p.input_size(), hs);
    if steps > 1 {
        let dz_later = dz.slice(s![batch.., ..]);
        let h_prev = trace.hidden.slice(s![..(steps - 1) * batch, ..]);
        general_mat_mul(one, &dz_later.t(), &h_prev, F::zero(), &mut grads.w_h);
    }
    grads.b = dz.sum_axis(Axis(0));
    let d_input = match input {
        Input::Steps(x) => {
            general_mat_mul(one, &dz.t(), x, F::zero(), &mut grads.w_x);
            want_input_grad.then(|| dz.dot(&p.w_x))
        }
        Input::Repeat(x) => {
            let mut dz_sum = Array2::<F>::zeros((batch, gh));
            for t in 0..steps {
                dz_sum += &dz.slice(s![t * batch..(t + 1) * batch, ..]);
            }
            general_mat_mul(one, &dz_sum.t(), x, F::zero(), &mut grads.w_x);
            want_input_grad.then(|| dz_sum.dot(&p.w_x))
        }
    };
    (grads, d_input)
}
