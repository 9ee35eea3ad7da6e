use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cell::{self, CellKind, CellParams, DenseParams, Input};
use super::Real;
use crate::error::{Error, Result};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    /// Per-step feature count (24 box-corner coordinates).
    pub features: usize,
    /// Encoder hidden size, i.e. the size of the representation.
    pub latent: usize,
    pub decoder_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            features: 24,
            latent: 24,
            decoder_hidden: 256,
        }
    }
}

/// Weights of the composite autoencoder: a shared encoder, and one decoder
/// plus time-shared linear head each for reconstruction and prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub kind: CellKind,
    pub dims: ModelDims,
    pub encoder: CellParams<F>,
    pub dec_recon: CellParams<F>,
    pub dec_pred: CellParams<F>,
    pub head_recon: DenseParams<F>,
    pub head_pred: DenseParams<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub encoder: usize,
    pub dec_recon: usize,
    pub dec_pred: usize,
    pub head_recon: usize,
    pub head_pred: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.encoder + self.dec_recon + self.dec_pred + self.head_recon + self.head_pred
    }
}

pub const TENSOR_NAMES: [&str; 13] = [
    "encoder.w_x",
    "encoder.w_h",
    "encoder.b",
    "dec_recon.w_x",
    "dec_recon.w_h",
    "dec_recon.b",
    "dec_pred.w_x",
    "dec_pred.w_h",
    "dec_pred.b",
    "head_recon.w",
    "head_recon.b",
    "head_pred.w",
    "head_pred.b",
];

impl<F: Real> ModelParams<F> {
    pub fn zeros(dims: ModelDims, kind: CellKind) -> Self {
        Self {
            kind,
            dims,
            encoder: CellParams::zeros(kind, dims.features, dims.latent),
            dec_recon: CellParams::zeros(kind, dims.latent, dims.decoder_hidden),
            dec_pred: CellParams::zeros(kind, dims.latent, dims.decoder_hidden),
            head_recon: DenseParams::zeros(dims.decoder_hidden, dims.features),
            head_pred: DenseParams::zeros(dims.decoder_hidden, dims.features),
        }
    }

    pub fn init<R: Rng + ?Sized>(dims: ModelDims, kind: CellKind, rng: &mut R) -> Self {
        Self {
            kind,
            dims,
            encoder: CellParams::glorot(kind, dims.features, dims.latent, rng),
            dec_recon: CellParams::glorot(kind, dims.latent, dims.decoder_hidden, rng),
            dec_pred: CellParams::glorot(kind, dims.latent, dims.decoder_hidden, rng),
            head_recon: DenseParams::glorot(dims.decoder_hidden, dims.features, rng),
            head_pred: DenseParams::glorot(dims.decoder_hidden, dims.features, rng),
        }
    }

    pub fn param_count(&self) -> ParamCounts {
        ParamCounts {
            encoder: self.encoder.param_count(),
            dec_recon: self.dec_recon.param_count(),
            dec_pred: self.dec_pred.param_count(),
            head_recon: self.head_recon.param_count(),
            head_pred: self.head_pred.param_count(),
        }
    }

    /// Every tensor as a flat row-major slice, in [`TENSOR_NAMES`] order,
    /// with its shape.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[F])> {
        let arrays: [(&[usize], &[F]); 13] = [
            (self.encoder.w_x.shape(), flat2(&self.encoder.w_x)),
            (self.encoder.w_h.shape(), flat2(&self.encoder.w_h)),
            (self.encoder.b.shape(), flat1(&self.encoder.b)),
            (self.dec_recon.w_x.shape(), flat2(&self.dec_recon.w_x)),
            (self.dec_recon.w_h.shape(), flat2(&self.dec_recon.w_h)),
            (self.dec_recon.b.shape(), flat1(&self.dec_recon.b)),
            (self.dec_pred.w_x.shape(), flat2(&self.dec_pred.w_x)),
            (self.dec_pred.w_h.shape(), flat2(&self.dec_pred.w_h)),
            (self.dec_pred.b.shape(), flat1(&self.dec_pred.b)),
            (self.head_recon.w.shape(), flat2(&self.head_recon.w)),
            (self.head_recon.b.shape(), flat1(&self.head_recon.b)),
            (self.head_pred.w.shape(), flat2(&self.head_pred.w)),
            (self.head_pred.b.shape(), flat1(&self.head_pred.b)),
        ];
        TENSOR_NAMES
            .iter()
            .zip(arrays)
            .map(|(n, (shape, data))| (*n, shape.to_vec(), data))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            flat2_mut(&mut self.encoder.w_x),
            flat2_mut(&mut self.encoder.w_h),
            flat1_mut(&mut self.encoder.b),
            flat2_mut(&mut self.dec_recon.w_x),
            flat2_mut(&mut self.dec_recon.w_h),
            flat1_mut(&mut self.dec_recon.b),
            flat2_mut(&mut self.dec_pred.w_x),
            flat2_mut(&mut self.dec_pred.w_h),
            flat1_mut(&mut self.dec_pred.b),
            flat2_mut(&mut self.head_recon.w),
            flat1_mut(&mut self.head_recon.b),
            flat2_mut(&mut self.head_pred.w),
            flat1_mut(&mut self.head_pred.b),
        ]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims, self.kind)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, d)| d.iter().all(|v| v.is_finite()))
    }

    fn add_scaled(&mut self, other: &Self, scale: F) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b.2) {
                *x += *y * scale;
            }
        }
    }

    /// Converts every weight to another float type.
    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        let mut out = ModelParams::<G>::zeros(self.dims, self.kind);
        for (dst, (_, _, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = G::from_f64(s.to_f64().unwrap_or(f64::NAN)).unwrap_or_else(G::nan);
            }
        }
        out
    }
}

fn flat1<F>(a: &Array1<F>) -> &[F] {
    a.as_slice().expect("parameters are contiguous")
}

fn flat2<F>(a: &Array2<F>) -> &[F] {
    a.as_slice().expect("parameters are contiguous")
}

fn flat1_mut<F>(a: &mut Array1<F>) -> &mut [F] {
    a.as_slice_mut().expect("parameters are contiguous")
}

fn flat2_mut<F>(a: &mut Array2<F>) -> &mut [F] {
    a.as_slice_mut().expect("parameters are contiguous")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward<F> {
    /// `T_IN × D`
    pub recon: Array2<F>,
    /// `(T_FIN − T_IN) × D`
    pub pred: Array2<F>,
    /// Final encoder hidden state.
    pub hidden: Array1<F>,
}

impl<F: Real> Forward<F> {
    pub fn cast<G: Real>(&self) -> Forward<G> {
        let c = |v: &F| G::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or_else(G::nan);
        Forward {
            recon: self.recon.map(c),
            pred: self.pred.map(c),
            hidden: self.hidden.map(c),
        }
    }
}

fn check_sequence<F: Real>(params: &ModelParams<F>, seq: &ArrayView2<'_, F>) -> Result<()> {
    if seq.nrows() == 0 {
        return Err(Error::InvalidInput("input sequence has no steps".into()));
    }
    if seq.ncols() != params.dims.features {
        return Err(Error::ShapeMismatch(format!(
            "expected {} features per step, got {}",
            params.dims.features,
            seq.ncols()
        )));
    }
    Ok(())
}

/// Final hidden state of the encoder unrolled over every row of `seq`.
pub fn encode<F: Real>(params: &ModelParams<F>, seq: &ArrayView2<'_, F>) -> Result<Array1<F>> {
    check_sequence(params, seq)?;
    let tr = cell::forward(&params.encoder, &Input::Steps(seq.view()), 1, seq.nrows());
    Ok(tr.last_hidden().row(0).to_owned())
}

/// [`encode`] for many equal-length sequences in one batched pass.
pub fn encode_batch<F: Real>(params: &ModelParams<F>, seqs: &[&Array2<F>]) -> Result<Vec<Array1<F>>> {
    let Some(first) = seqs.first() else {
        return Ok(Vec::new());
    };
    let steps = first.nrows();
    for s in seqs {
        check_sequence(params, &s.view())?;
        if s.nrows() != steps {
            return Err(Error::ShapeMismatch(format!(
                "sequences of {} and {} steps in one batch",
                steps,
                s.nrows()
            )));
        }
    }
    let st = stack(seqs, steps);
    let tr = cell::forward(&params.encoder, &Input::Steps(st.input.view()), st.batch, steps);
    Ok(tr.last_hidden().rows().into_iter().map(|r| r.to_owned()).collect())
}

/// Runs a decoder from a zero state, feeding `h` at every step, and maps
/// each hidden state through the head.
pub fn decode<F: Real>(
    cell_params: &CellParams<F>,
    head: &DenseParams<F>,
    h: &ArrayView1<'_, F>,
    steps: usize,
) -> Result<Array2<F>> {
    if steps == 0 {
        return Err(Error::InvalidInput("decode needs at least one step".into()));
    }
    if h.len() != cell_params.input_size() {
        return Err(Error::ShapeMismatch(format!(
            "decoder expects a {}-vector, got {}",
            cell_params.input_size(),
            h.len()
        )));
    }
    let z = h.view().insert_axis(Axis(0));
    let tr = cell::forward(cell_params, &Input::Repeat(z), 1, steps);
    Ok(head.apply(&tr.hidden.view()))
}

pub fn forward<F: Real>(params: &ModelParams<F>, seq_in: &ArrayView2<'_, F>, pred_steps: usize) -> Result<Forward<F>> {
    let hidden = encode(params, seq_in)?;
    let recon = decode(&params.dec_recon, &params.head_recon, &hidden.view(), seq_in.nrows())?;
    let pred = decode(&params.dec_pred, &params.head_pred, &hidden.view(), pred_steps)?;
    Ok(Forward { recon, pred, hidden })
}

/// Sequences stacked time-major for one batched pass.
struct Stacked<F> {
    batch: usize,
    /// `t_in·batch × D`, also the reconstruction target.
    input: Array2<F>,
    /// `(t_fin − t_in)·batch × D`
    future: Array2<F>,
}

fn stack<F: Real>(seqs: &[&Array2<F>], t_in: usize) -> Stacked<F> {
    let batch = seqs.len();
    let d = seqs[0].ncols();
    let t_fin = seqs[0].nrows();
    let t_pred = t_fin - t_in;
    let mut input = Array2::zeros((t_in * batch, d));
    let mut future = Array2::zeros((t_pred * batch, d));
    for (b, s) in seqs.iter().enumerate() {
        for t in 0..t_in {
            input.row_mut(t * batch + b).assign(&s.row(t));
        }
        for t in 0..t_pred {
            future.row_mut(t * batch + b).assign(&s.row(t_in + t));
        }
    }
    Stacked { batch, input, future }
}

fn sq_err<F: Real>(a: &Array2<F>, b: &Array2<F>) -> F {
    a.iter().zip(b.iter()).fold(F::zero(), |acc, (x, y)| {
        let d = *x - *y;
        acc + d * d
    })
}

fn unstack<F: Real>(m: &Array2<F>, batch: usize, b: usize) -> Array2<F> {
    m.slice(s![b..;batch, ..]).to_owned()
}

/// Forward pass over a batch of full-length sequences (`t_fin × D` each),
/// using the first `t_in` steps as input.
pub fn forward_batch<F: Real>(params: &ModelParams<F>, seqs: &[&Array2<F>], t_in: usize) -> Vec<Forward<F>> {
    if seqs.is_empty() {
        return Vec::new();
    }
    let st = stack(seqs, t_in);
    let t_pred = seqs[0].nrows() - t_in;
    let (enc, rec, pred) = run_all(params, &st, t_in, t_pred);
    let y_rec = params.head_recon.apply(&rec.hidden.view());
    let y_pred = params.head_pred.apply(&pred.hidden.view());
    let z = enc.last_hidden();
    (0..st.batch)
        .map(|b| Forward {
            recon: unstack(&y_rec, st.batch, b),
            pred: unstack(&y_pred, st.batch, b),
            hidden: z.row(b).to_owned(),
        })
        .collect()
}

fn run_all<F: Real>(
    params: &ModelParams<F>,
    st: &Stacked<F>,
    t_in: usize,
    t_pred: usize,
) -> (cell::Trace<F>, cell::Trace<F>, cell::Trace<F>) {
    let enc = cell::forward(&params.encoder, &Input::Steps(st.input.view()), st.batch, t_in);
    let z = enc.last_hidden();
    let rec = cell::forward(&params.dec_recon, &Input::Repeat(z), st.batch, t_in);
    let pred = cell::forward(&params.dec_pred, &Input::Repeat(z), st.batch, t_pred);
    (enc, rec, pred)
}

/// One simulation: the full-length sequence of each of its components.
pub type SimFrames<F> = Vec<Array2<F>>;

pub(crate) fn check_groups<F: Real>(params: &ModelParams<F>, groups: &[&SimFrames<F>], t_in: usize) -> Result<usize> {
    let mut t_fin = None;
    for g in groups {
        if g.is_empty() {
            return Err(Error::InvalidInput("simulation without components".into()));
        }
        for s in g.iter() {
            if s.ncols() != params.dims.features {
                return Err(Error::ShapeMismatch(format!(
                    "expected {} features, got {}",
                    params.dims.features,
                    s.ncols()
                )));
            }
            match t_fin {
                None => t_fin = Some(s.nrows()),
                Some(t) if t != s.nrows() => return Err(Error::ShapeMismatch("sequences differ in length".into())),
                _ => {}
            }
        }
    }
    let t_fin = t_fin.ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
    if t_in == 0 || t_in >= t_fin {
        return Err(Error::Config(format!("t_in must be in 1..{t_fin}, got {t_in}")));
    }
    Ok(t_fin)
}

/// Loss over a batch of simulations: for every component, the mean squared
/// reconstruction error plus the mean squared prediction error (each averaged
/// over time and features), summed over components and averaged over
/// simulations.
pub fn batch_loss<F: Real>(
    params: &ModelParams<F>,
    groups: &[&SimFrames<F>],
    t_in: usize,
    shard_sims: usize,
    exec: Execution,
) -> Result<F> {
    let t_fin = check_groups(params, groups, t_in)?;
    let weight = F::one() / F::from_usize(groups.len()).unwrap_or_else(F::one);
    let shards: Vec<&[&SimFrames<F>]> = groups.chunks(shard_sims.max(1)).collect();
    let parts = par::map(exec, &shards, |shard| shard_loss(params, shard, t_in, t_fin, weight));
    Ok(parts.into_iter().fold(F::zero(), |a, b| a + b))
}

fn flatten<'a, F>(shard: &[&'a SimFrames<F>]) -> Vec<&'a Array2<F>> {
    shard.iter().flat_map(|g| g.iter()).collect()
}

fn shard_loss<F: Real>(params: &ModelParams<F>, shard: &[&SimFrames<F>], t_in: usize, t_fin: usize, weight: F) -> F {
    let seqs = flatten(shard);
    let st = stack(&seqs, t_in);
    let t_pred = t_fin - t_in;
    let (_, rec, pred) = run_all(params, &st, t_in, t_pred);
    let y_rec = params.head_recon.apply(&rec.hidden.view());
    let y_pred = params.head_pred.apply(&pred.hidden.view());
    let d = F::from_usize(params.dims.features).unwrap_or_else(F::one);
    let w_rec = weight / (F::from_usize(t_in).unwrap_or_else(F::one) * d);
    let w_pred = weight / (F::from_usize(t_pred).unwrap_or_else(F::one) * d);
    sq_err(&y_rec, &st.input) * w_rec + sq_err(&y_pred, &st.future) * w_pred
}

/// Loss and its exact gradient by backpropagation through time. Shards of
/// `shard_sims` simulations are processed independently and their gradients
/// summed in shard order, so the result does not depend on thread count.
pub fn batch_loss_and_grad<F: Real>(
    params: &ModelParams<F>,
    groups: &[&SimFrames<F>],
    t_in: usize,
    shard_sims: usize,
    exec: Execution,
) -> Result<(F, ModelParams<F>)> {
    let t_fin = check_groups(params, groups, t_in)?;
    let weight = F::one() / F::from_usize(groups.len()).unwrap_or_else(F::one);
    let shards: Vec<&[&SimFrames<F>]> = groups.chunks(shard_sims.max(1)).collect();
    let parts = par::map(exec, &shards, |shard| shard_grad(params, shard, t_in, t_fin, weight));
    let mut loss = F::zero();
    let mut grad = params.zeros_like();
    for (l, g) in parts {
        loss += l;
        grad.add_scaled(&g, F::one());
    }
    Ok((loss, grad))
}

fn shard_grad<F: Real>(
    params: &ModelParams<F>,
    shard: &[&SimFrames<F>],
    t_in: usize,
    t_fin: usize,
    weight: F,
) -> (F, ModelParams<F>) {
    let seqs = flatten(shard);
    let st = stack(&seqs, t_in);
    let batch = st.batch;
    let t_pred = t_fin - t_in;
    let (enc, rec, pred) = run_all(params, &st, t_in, t_pred);
    let y_rec = params.head_recon.apply(&rec.hidden.view());
    let y_pred = params.head_pred.apply(&pred.hidden.view());

    let d = F::from_usize(params.dims.features).unwrap_or_else(F::one);
    let w_rec = weight / (F::from_usize(t_in).unwrap_or_else(F::one) * d);
    let w_pred = weight / (F::from_usize(t_pred).unwrap_or_else(F::one) * d);
    let loss = sq_err(&y_rec, &st.input) * w_rec + sq_err(&y_pred, &st.future) * w_pred;

    let two = F::one() + F::one();
    let dy_rec = (&y_rec - &st.input) * (two * w_rec);
    let dy_pred = (&y_pred - &st.future) * (two * w_pred);

    let mut grad = params.zeros_like();
    grad.head_recon.w = rec.hidden.t().dot(&dy_rec);
    grad.head_recon.b = dy_rec.sum_axis(Axis(0));
    grad.head_pred.w = pred.hidden.t().dot(&dy_pred);
    grad.head_pred.b = dy_pred.sum_axis(Axis(0));
    let dh_rec = dy_rec.dot(&params.head_recon.w.t());
    let dh_pred = dy_pred.dot(&params.head_pred.w.t());

    let z = enc.last_hidden();
    let (g_rec, dz_rec) = cell::backward(&params.dec_recon, &Input::Repeat(z), &rec, &dh_rec.view(), true);
    let (g_pred, dz_pred) = cell::backward(&params.dec_pred, &Input::Repeat(z), &pred, &dh_pred.view(), true);
    grad.dec_recon = g_rec;
    grad.dec_pred = g_pred;

    let mut dh_enc = Array2::<F>::zeros((t_in * batch, params.dims.latent));
    {
        let mut last = dh_enc.slice_mut(s![(t_in - 1) * batch.., ..]);
        if let Some(a) = dz_rec {
            last += &a;
        }
        if let Some(b) = dz_pred {
            last += &b;
        }
    }
    let (g_enc, _) = cell::backward(
        &params.encoder,
        &Input::Steps(st.input.view()),
        &enc,
        &dh_enc.view(),
        false,
    );
    grad.encoder = g_enc;
    (loss, grad)
}
