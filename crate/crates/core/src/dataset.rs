//! Training tensors built from box sequences: one `T × 24` corner matrix per
//! (simulation, component), pooled normalization, rigid-motion removal and
//! the face-orthogonality metric.

use nalgebra::Vector3;
use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{corner_offset, corner_points, Obb, CORNER_FEATURES};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSequence {
    pub sim_id: String,
    pub component_id: String,
    /// `T × 24` corner coordinates, one row per time step.
    pub frames: Array2<f64>,
    /// Set by [`normalize_apply`], cleared by [`denormalize`].
    pub normalized: bool,
}

impl ComponentSequence {
    pub fn new(sim_id: impl Into<String>, component_id: impl Into<String>, frames: Array2<f64>) -> Result<Self> {
        if frames.ncols() != CORNER_FEATURES {
            return Err(Error::ShapeMismatch(format!(
                "frames must have {CORNER_FEATURES} columns, got {}",
                frames.ncols()
            )));
        }
        if frames.nrows() == 0 {
            return Err(Error::InvalidInput("sequence has no frames".into()));
        }
        if !frames.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("sequence frame".into()));
        }
        Ok(Self {
            sim_id: sim_id.into(),
            component_id: component_id.into(),
            frames,
            normalized: false,
        })
    }

    pub fn from_boxes(sim_id: impl Into<String>, component_id: impl Into<String>, boxes: &[Obb]) -> Result<Self> {
        let mut frames = Array2::zeros((boxes.len(), CORNER_FEATURES));
        for (mut row, b) in frames.rows_mut().into_iter().zip(boxes) {
            row.assign(&ArrayView1::from(&b.corners()));
        }
        Self::new(sim_id, component_id, frames)
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRecord {
    pub sim_id: String,
    pub params: Vec<f64>,
    pub components: Vec<ComponentSequence>,
}

impl SimulationRecord {
    pub fn t_fin(&self) -> usize {
        self.components.first().map_or(0, |c| c.len())
    }

    pub fn component(&self, id: &str) -> Option<&ComponentSequence> {
        self.components.iter().find(|c| c.component_id == id)
    }
}

/// Checks that all records share one time length and one parameter length,
/// and returns the time length.
pub fn check_records(records: &[SimulationRecord]) -> Result<usize> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidInput("no simulation records".into()))?;
    let t = first.t_fin();
    let p = first.params.len();
    for r in records {
        if r.components.is_empty() {
            return Err(Error::InvalidInput(format!(
                "simulation `{}` has no components",
                r.sim_id
            )));
        }
        if r.params.len() != p {
            return Err(Error::ShapeMismatch(format!(
                "simulation `{}` has {} parameters, expected {p}",
                r.sim_id,
                r.params.len()
            )));
        }
        for c in &r.components {
            if c.len() != t {
                return Err(Error::ShapeMismatch(format!(
                    "sim `{}` component `{}` has {} steps, expected {t}",
                    r.sim_id,
                    c.component_id,
                    c.len()
                )));
            }
        }
    }
    Ok(t)
}

/// Per-axis mean and one pooled standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: [f64; 3],
    pub std: f64,
}

impl NormalizationStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: 1.0,
        }
    }
}

pub fn normalize_fit(train: &[SimulationRecord]) -> Result<NormalizationStats> {
    normalize_fit_sequences(train.iter().flat_map(|r| r.components.iter()))
}

pub fn normalize_fit_sequences<'a>(
    seqs: impl Iterator<Item = &'a ComponentSequence> + Clone,
) -> Result<NormalizationStats> {
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for s in seqs.clone() {
        for (j, v) in s.frames.iter().enumerate() {
            sum[j % 3] += v;
        }
        count += s.frames.len() / 3;
    }
    if count == 0 {
        return Err(Error::InvalidInput("normalization needs at least one frame".into()));
    }
    let mean = sum.map(|s| s / count as f64);
    let mut ss = 0.0;
    for s in seqs {
        for (j, v) in s.frames.iter().enumerate() {
            let d = v - mean[j % 3];
            ss += d * d;
        }
    }
    let std = (ss / (3 * count) as f64).sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::DegenerateData("features have zero variance".into()));
    }
    Ok(NormalizationStats { mean, std })
}

pub fn normalize_apply(seq: &ComponentSequence, stats: &NormalizationStats) -> ComponentSequence {
    let mut out = seq.clone();
    for row in out.frames.rows_mut() {
        for (j, v) in row.into_iter().enumerate() {
            *v = (*v - stats.mean[j % 3]) / stats.std;
        }
    }
    out.normalized = true;
    out
}

pub fn denormalize(seq: &ComponentSequence, stats: &NormalizationStats) -> ComponentSequence {
    let mut out = seq.clone();
    denormalize_in_place(&mut out.frames, stats);
    out.normalized = false;
    out
}

pub fn denormalize_in_place(frames: &mut Array2<f64>, stats: &NormalizationStats) {
    for row in frames.rows_mut() {
        for (j, v) in row.into_iter().enumerate() {
            *v = *v * stats.std + stats.mean[j % 3];
        }
    }
}

pub fn normalize_record(r: &SimulationRecord, stats: &NormalizationStats) -> SimulationRecord {
    SimulationRecord {
        sim_id: r.sim_id.clone(),
        params: r.params.clone(),
        components: r.components.iter().map(|c| normalize_apply(c, stats)).collect(),
    }
}

/// Corners of the box moved to the origin in the standard frame: only the
/// extents survive.
pub fn remove_rigid(b: &Obb) -> [f64; CORNER_FEATURES] {
    rigid_free_corners(&b.extents)
}

/// [`remove_rigid`] for a corner frame; extents are read off the edges.
pub fn remove_rigid_frame(frame: &[f64]) -> Result<[f64; CORNER_FEATURES]> {
    Ok(remove_rigid(&Obb::from_corners(frame)?))
}

pub fn remove_rigid_sequence(seq: &ComponentSequence) -> Result<ComponentSequence> {
    let mut frames = seq.frames.clone();
    for mut row in frames.rows_mut() {
        let src: Vec<f64> = row.iter().copied().collect();
        row.assign(&ArrayView1::from(&remove_rigid_frame(&src)?));
    }
    ComponentSequence::new(seq.sim_id.clone(), seq.component_id.clone(), frames)
}

fn rigid_free_corners(extents: &Vector3<f64>) -> [f64; CORNER_FEATURES] {
    let half = extents * 0.5;
    let mut out = [0.0; CORNER_FEATURES];
    for k in 0..8 {
        let c = corner_offset(k, &half);
        out[3 * k..3 * k + 3].copy_from_slice(c.as_slice());
    }
    out
}

/// How far 8 points are from a rectangular box. Edges `e₁ = c₁ − c₀`,
/// `e₂ = c₂ − c₀`, `e₃ = c₄ − c₀` span the candidate parallelepiped; the
/// defect adds the absolute cosines between edge pairs and the distances of
/// every corner from its parallelepiped position, relative to the diagonal.
/// Zero exactly for rectangular boxes.
pub fn orthogonality_defect(frame: &[f64]) -> Result<f64> {
    let c = corner_points(frame)?;
    let edges = [c[1] - c[0], c[2] - c[0], c[4] - c[0]];
    let norms = edges.map(|e| e.norm());
    let mut defect = 0.0;
    for i in 0..3 {
        for j in i + 1..3 {
            if norms[i] > 0.0 && norms[j] > 0.0 {
                defect += (edges[i].dot(&edges[j]) / (norms[i] * norms[j])).abs();
            }
        }
    }
    let mut diag = norms.iter().map(|n| n * n).sum::<f64>().sqrt();
    if diag == 0.0 {
        for a in &c {
            for b in &c {
                diag = diag.max((a - b).norm());
            }
        }
        if diag == 0.0 {
            return Ok(0.0);
        }
    }
    let mut residual = 0.0;
    for (b, corner) in c.iter().enumerate() {
        let mut expect = c[0];
        for (bit, e) in edges.iter().enumerate() {
            if b >> bit & 1 == 1 {
                expect += e;
            }
        }
        residual += (corner - expect).norm();
    }
    Ok(defect + residual / diag)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    /// Unnormalized records.
    pub train: Vec<SimulationRecord>,
    pub test: Vec<SimulationRecord>,
    /// Computed from `train` only.
    pub stats: NormalizationStats,
    pub t_in: usize,
    pub t_fin: usize,
}

impl SplitDataset {
    pub fn normalized_train(&self) -> Vec<SimulationRecord> {
        self.train.iter().map(|r| normalize_record(r, &self.stats)).collect()
    }

    pub fn normalized_test(&self) -> Vec<SimulationRecord> {
        self.test.iter().map(|r| normalize_record(r, &self.stats)).collect()
    }
}

/// Deterministic shuffled split into `n_train` training and the remaining
/// test simulations.
pub fn split(records: &[SimulationRecord], n_train: usize, t_in: usize, seed: u64) -> Result<SplitDataset> {
    let t_fin = check_records(records)?;
    if n_train == 0 || n_train >= records.len() {
        return Err(Error::Config(format!(
            "n_train must be in 1..{}, got {n_train}",
            records.len()
        )));
    }
    if t_in == 0 || t_in >= t_fin {
        return Err(Error::Config(format!("t_in must be in 1..{t_fin}, got {t_in}")));
    }
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.shuffle(&mut seed::stream(seed, 0x0005_7117));
    let (a, b) = idx.split_at(n_train);
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    let train: Vec<_> = a.iter().map(|&i| records[i].clone()).collect();
    let test: Vec<_> = b.iter().map(|&i| records[i].clone()).collect();
    let stats = normalize_fit(&train)?;
    Ok(SplitDataset {
        train,
        test,
        stats,
        t_in,
        t_fin,
    })
}
