//! Nearest-neighbour forecasts and the comparison harness.
//!
//! Both baselines predict a simulation's future by copying the future frames
//! of the closest training simulation, either in standardized parameter space
//! or in the space of observed input windows.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::autoenc::{predict_records_at, train_at, CellKind, ModelParams, TrainConfig};
use crate::dataset::{orthogonality_defect, ComponentSequence, SimulationRecord, SplitDataset};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::seed;

/// Predicted future frames of one simulation, one entry per component.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub sim_id: String,
    /// `(component_id, (t_fin − t_in) × 24)` pairs.
    pub components: Vec<(String, Array2<f64>)>,
}

/// A baseline's choice: the index and id of the copied training simulation
/// plus its future frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub sim_id: String,
    pub future: Vec<(String, Array2<f64>)>,
}

fn future_of(r: &SimulationRecord, t_in: usize) -> Result<Vec<(String, Array2<f64>)>> {
    r.components
        .iter()
        .map(|c| {
            if t_in >= c.len() {
                return Err(Error::Config(format!(
                    "t_in = {t_in} leaves no future steps in a {}-step sequence",
                    c.len()
                )));
            }
            Ok((c.component_id.clone(), c.frames.slice(s![t_in.., ..]).to_owned()))
        })
        .collect()
}

/// Index of the smallest distance; ties go to the lowest sim id.
fn argmin(train: &[SimulationRecord], dist: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..dist.len() {
        let better = dist[i] < dist[best] || (dist[i] == dist[best] && train[i].sim_id < train[best].sim_id);
        if better {
            best = i;
        }
    }
    best
}

fn neighbor(train: &[SimulationRecord], i: usize, t_in: usize) -> Result<Neighbor> {
    Ok(Neighbor {
        index: i,
        sim_id: train[i].sim_id.clone(),
        future: future_of(&train[i], t_in)?,
    })
}

/// Per-dimension mean and population standard deviation of the training
/// parameters. Constant dimensions get a scale of 1.
pub fn param_scales(train: &[SimulationRecord]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = train
        .first()
        .ok_or_else(|| Error::InvalidInput("empty training set".into()))?;
    let p = first.params.len();
    let n = train.len() as f64;
    let mut mean = vec![0.0; p];
    for r in train {
        if r.params.len() != p {
            return Err(Error::ShapeMismatch(format!(
                "sim `{}` has {} parameters, expected {p}",
                r.sim_id,
                r.params.len()
            )));
        }
        for (m, v) in mean.iter_mut().zip(&r.params) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; p];
    for r in train {
        for ((s, v), m) in std.iter_mut().zip(&r.params).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    for s in &mut std {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    Ok((mean, std))
}

/// Nearest training simulation in standardized parameter space.
pub fn nn_param_predict(train: &[SimulationRecord], query_params: &[f64], t_in: usize) -> Result<Neighbor> {
    let (_, std) = param_scales(train)?;
    if query_params.len() != std.len() {
        return Err(Error::ShapeMismatch(format!(
            "query has {} parameters, training data {}",
            query_params.len(),
            std.len()
        )));
    }
    let dist: Vec<f64> = train
        .iter()
        .map(|r| {
            r.params
                .iter()
                .zip(query_params)
                .zip(&std)
                .map(|((a, b), s)| ((a - b) / s).powi(2))
                .sum()
        })
        .collect();
    neighbor(train, argmin(train, &dist), t_in)
}

/// Sum over components of the squared Frobenius distance between the first
/// `t_in` frames of `a` and the matching component of `b`.
pub fn input_distance(a: &[ComponentSequence], b: &[ComponentSequence], t_in: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::UnknownComponent(format!(
            "component sets differ in size ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let mut total = 0.0;
    for ca in a {
        let cb = b
            .iter()
            .find(|c| c.component_id == ca.component_id)
            .ok_or_else(|| Error::UnknownComponent(ca.component_id.clone()))?;
        if ca.len() < t_in || cb.len() < t_in {
            return Err(Error::ShapeMismatch(format!(
                "component `{}` is shorter than the {t_in}-step input window",
                ca.component_id
            )));
        }
        let wa = ca.frames.slice(s![..t_in, ..]);
        let wb = cb.frames.slice(s![..t_in, ..]);
        total += wa.iter().zip(wb.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    }
    Ok(total)
}

/// Nearest training simulation by input-window distance. Expects normalized
/// frames on both sides.
pub fn nn_sequence_predict(train: &[SimulationRecord], query: &[ComponentSequence], t_in: usize) -> Result<Neighbor> {
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let dist = train
        .iter()
        .map(|r| input_distance(query, &r.components, t_in))
        .collect::<Result<Vec<_>>>()?;
    neighbor(train, argmin(train, &dist), t_in)
}

fn mse(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> f64 {
    let n = a.len().max(1) as f64;
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n
}

/// Prediction-window error of each simulation: per-component mean squared
/// error over steps and features, summed over components.
pub fn per_sim_errors(forecasts: &[Forecast], truth: &[SimulationRecord], t_in: usize) -> Result<Vec<f64>> {
    if forecasts.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} forecasts for {} simulations",
            forecasts.len(),
            truth.len()
        )));
    }
    forecasts
        .iter()
        .zip(truth)
        .map(|(f, r)| {
            if f.sim_id != r.sim_id {
                return Err(Error::ShapeMismatch(format!(
                    "forecast for `{}` aligned with `{}`",
                    f.sim_id, r.sim_id
                )));
            }
            if f.components.len() != r.components.len() {
                return Err(Error::ShapeMismatch(format!(
                    "sim `{}`: {} forecast components, {} true",
                    r.sim_id,
                    f.components.len(),
                    r.components.len()
                )));
            }
            let mut total = 0.0;
            for (id, pred) in &f.components {
                let c = r.component(id).ok_or_else(|| Error::UnknownComponent(id.clone()))?;
                let fut = c.frames.slice(s![t_in.., ..]);
                if fut.dim() != pred.dim() {
                    return Err(Error::ShapeMismatch(format!(
                        "sim `{}` component `{id}`: forecast {:?}, truth {:?}",
                        r.sim_id,
                        pred.dim(),
                        fut.dim()
                    )));
                }
                total += mse(&pred.view(), &fut);
            }
            Ok(total)
        })
        .collect()
}

/// Mean over simulations of [`per_sim_errors`].
pub fn evaluate(forecasts: &[Forecast], truth: &[SimulationRecord], t_in: usize) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::InvalidInput("no simulations to evaluate".into()));
    }
    let e = per_sim_errors(forecasts, truth, t_in)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

fn forecast_from(query: &SimulationRecord, n: Neighbor) -> Forecast {
    Forecast {
        sim_id: query.sim_id.clone(),
        components: n.future,
    }
}

/// nn-param forecasts for every test simulation.
pub fn nn_param_forecasts(train: &[SimulationRecord], test: &[SimulationRecord], t_in: usize) -> Result<Vec<Forecast>> {
    test.iter()
        .map(|q| Ok(forecast_from(q, nn_param_predict(train, &q.params, t_in)?)))
        .collect()
}

/// nn-sequence forecasts for every test simulation.
pub fn nn_sequence_forecasts(
    train: &[SimulationRecord],
    test: &[SimulationRecord],
    t_in: usize,
) -> Result<Vec<Forecast>> {
    test.iter()
        .map(|q| Ok(forecast_from(q, nn_sequence_predict(train, &q.components, t_in)?)))
        .collect()
}

/// Network forecasts for normalized test records.
pub fn model_forecasts(
    params: &ModelParams<f64>,
    test: &[SimulationRecord],
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<Vec<Forecast>> {
    let out = predict_records_at(params, test, cfg.t_in, cfg.precision, exec)?;
    Ok(test
        .iter()
        .zip(out)
        .map(|(r, fwd)| Forecast {
            sim_id: r.sim_id.clone(),
            components: r
                .components
                .iter()
                .zip(fwd)
                .map(|(c, f)| (c.component_id.clone(), f.pred))
                .collect(),
        })
        .collect())
}

/// Mean orthogonality defect over every predicted frame.
pub fn mean_defect(forecasts: &[Forecast]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for f in forecasts {
        for (_, frames) in &f.components {
            for row in frames.rows() {
                total += orthogonality_defect(row.as_slice().unwrap_or(&row.to_vec()))?;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("no predicted frames".into()));
    }
    Ok(total / n as f64)
}

pub const NN_PARAM: &str = "nn-param";
pub const NN_SEQUENCE: &str = "nn-sequence";
pub const COMPOSITE_RNN: &str = "composite-rnn";
pub const COMPOSITE_LSTM: &str = "composite-lstm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub test_mse: f64,
    /// Sample standard deviation over training seeds; `None` for the
    /// deterministic baselines.
    pub std_over_seeds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn get(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// One trained network in a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub kind: CellKind,
    pub seed: u64,
    pub test_mse: f64,
    /// Mean orthogonality defect of predictions after training.
    pub defect_trained: f64,
    /// The same for the untrained initial weights.
    pub defect_init: f64,
    pub params: ModelParams<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub report: EvalReport,
    pub nn_param_per_sim: Vec<f64>,
    pub nn_sequence_per_sim: Vec<f64>,
    pub runs: Vec<SeedRun>,
}

impl Comparison {
    pub fn runs_of(&self, kind: CellKind) -> impl Iterator<Item = &SeedRun> {
        self.runs.iter().filter(move |r| r.kind == kind)
    }
}

/// Seed used for the `i`-th training run of a comparison.
pub fn run_seed(base: u64, i: usize) -> u64 {
    seed::derive(base, i as u64)
}

fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

/// Both baselines plus `n_seeds` trainings of each cell type. `progress` is
/// called once before every training run.
pub fn run_comparison(
    split: &SplitDataset,
    cfg: &TrainConfig,
    n_seeds: usize,
    exec: Execution,
    mut progress: impl FnMut(CellKind, u64),
) -> Result<Comparison> {
    if n_seeds == 0 {
        return Err(Error::Config("n_seeds must be at least 1".into()));
    }
    let train = split.normalized_train();
    let test = split.normalized_test();
    let t_in = split.t_in;
    let nn_param_per_sim = per_sim_errors(&nn_param_forecasts(&train, &test, t_in)?, &test, t_in)?;
    let nn_sequence_per_sim = per_sim_errors(&nn_sequence_forecasts(&train, &test, t_in)?, &test, t_in)?;
    let mut rows = vec![
        ReportRow {
            method: NN_PARAM.into(),
            test_mse: mean_std(&nn_param_per_sim).0,
            std_over_seeds: None,
        },
        ReportRow {
            method: NN_SEQUENCE.into(),
            test_mse: mean_std(&nn_sequence_per_sim).0,
            std_over_seeds: None,
        },
    ];
    let mut runs = Vec::new();
    for (kind, name) in [(CellKind::Rnn, COMPOSITE_RNN), (CellKind::Lstm, COMPOSITE_LSTM)] {
        let mut scores = Vec::with_capacity(n_seeds);
        for i in 0..n_seeds {
            let run_cfg = TrainConfig {
                seed: run_seed(cfg.seed, i),
                ..cfg.clone()
            };
            progress(kind, run_cfg.seed);
            let init = ModelParams::<f64>::init(run_cfg.dims, kind, &mut crate::autoenc::init_rng(run_cfg.seed));
            let defect_init = mean_defect(&model_forecasts(&init, &test, &run_cfg, exec)?)?;
            let out = train_at(split, &run_cfg, kind, exec, |_| {})?;
            let fc = model_forecasts(&out.params, &test, &run_cfg, exec)?;
            let test_mse = evaluate(&fc, &test, t_in)?;
            scores.push(test_mse);
            runs.push(SeedRun {
                kind,
                seed: run_cfg.seed,
                test_mse,
                defect_trained: mean_defect(&fc)?,
                defect_init,
                params: out.params,
            });
        }
        let (mean, std) = mean_std(&scores);
        rows.push(ReportRow {
            method: name.into(),
            test_mse: mean,
            std_over_seeds: Some(std.unwrap_or(0.0)),
        });
    }
    Ok(Comparison {
        report: EvalReport { rows },
        nn_param_per_sim,
        nn_sequence_per_sim,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CORNER_FEATURES;
    use approx::assert_abs_diff_eq;

    const T: usize = 5;
    const T_IN: usize = 2;

    fn record(id: &str, params: Vec<f64>, fill: &[f64]) -> SimulationRecord {
        let components = fill
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let frames = Array2::from_shape_fn((T, CORNER_FEATURES), |(t, j)| v + 0.1 * t as f64 + 0.01 * j as f64);
                ComponentSequence::new(id, format!("c{k}"), frames).unwrap()
            })
            .collect();
        SimulationRecord {
            sim_id: id.into(),
            params,
            components,
        }
    }

    fn future(r: &SimulationRecord) -> Vec<(String, Array2<f64>)> {
        future_of(r, T_IN).unwrap()
    }

    #[test]
    fn query_at_train_params_returns_that_future() {
        let train = vec![
            record("a", vec![0.0, 1.0], &[0.0, 1.0]),
            record("b", vec![2.0, 5.0], &[3.0, 4.0]),
        ];
        let n = nn_param_predict(&train, &[2.0, 5.0], T_IN).unwrap();
        assert_eq!(n.sim_id, "b");
        assert_eq!(n.future, future(&train[1]));
    }

    #[test]
    fn nearer_parameters_win() {
        // std per dim = 1 and 2, so distances are 0.64 and 0.16
        let train = vec![record("a", vec![0.0, 0.0], &[0.0]), record("b", vec![2.0, 4.0], &[1.0])];
        let n = nn_param_predict(&train, &[1.2, 2.4], T_IN).unwrap();
        assert_eq!(n.sim_id, "b");
        let n = nn_param_predict(&train, &[0.8, 1.6], T_IN).unwrap();
        assert_eq!(n.sim_id, "a");
    }

    #[test]
    fn rescaling_a_dimension_keeps_the_neighbor() {
        let train = vec![
            record("a", vec![0.0, 0.0], &[0.0]),
            record("b", vec![1.0, 3.0], &[1.0]),
            record("c", vec![2.0, 1.0], &[2.0]),
        ];
        let q = [1.4, 1.7];
        let before = nn_param_predict(&train, &q, T_IN).unwrap().sim_id;
        let scaled: Vec<_> = train
            .iter()
            .map(|r| SimulationRecord {
                params: vec![r.params[0] * 1000.0, r.params[1]],
                ..r.clone()
            })
            .collect();
        let after = nn_param_predict(&scaled, &[q[0] * 1000.0, q[1]], T_IN).unwrap().sim_id;
        assert_eq!(before, after);
    }

    #[test]
    fn ties_go_to_the_lowest_sim_id() {
        let train = vec![record("z", vec![1.0], &[0.0]), record("m", vec![-1.0], &[1.0])];
        assert_eq!(nn_param_predict(&train, &[0.0], T_IN).unwrap().sim_id, "m");
        let q = record("q", vec![0.0], &[0.5]);
        assert_eq!(nn_sequence_predict(&train, &q.components, T_IN).unwrap().sim_id, "m");
    }

    #[test]
    fn param_dimension_mismatch() {
        let train = vec![record("a", vec![0.0, 0.0], &[0.0])];
        assert!(matches!(
            nn_param_predict(&train, &[1.0], T_IN),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn sequence_neighbor_by_frobenius_distance() {
        // component offsets differ by 0.4 / 0.6 on T_IN × 24 entries
        let train = vec![record("a", vec![0.0], &[0.0, 0.0]), record("b", vec![0.0], &[1.0, 1.0])];
        let q = record("q", vec![0.0], &[0.4, 0.4]);
        let d_a = input_distance(&q.components, &train[0].components, T_IN).unwrap();
        let d_b = input_distance(&q.components, &train[1].components, T_IN).unwrap();
        let cells = (2 * T_IN * CORNER_FEATURES) as f64;
        assert_abs_diff_eq!(d_a, 0.16 * cells, epsilon = 1e-9);
        assert_abs_diff_eq!(d_b, 0.36 * cells, epsilon = 1e-9);
        assert_eq!(nn_sequence_predict(&train, &q.components, T_IN).unwrap().sim_id, "a");
        let q = record("q", vec![0.0], &[0.6, 0.6]);
        assert_eq!(nn_sequence_predict(&train, &q.components, T_IN).unwrap().sim_id, "b");
    }

    #[test]
    fn sequence_distance_is_symmetric_and_zero_on_identity() {
        let a = record("a", vec![], &[0.2, 0.7]);
        let b = record("b", vec![], &[0.3, 0.1]);
        let ab = input_distance(&a.components, &b.components, T_IN).unwrap();
        let ba = input_distance(&b.components, &a.components, T_IN).unwrap();
        assert_eq!(ab, ba);
        assert!(ab > 0.0);
        assert_eq!(input_distance(&a.components, &a.components, T_IN).unwrap(), 0.0);
    }

    #[test]
    fn component_set_mismatch() {
        let a = record("a", vec![], &[0.2, 0.7]);
        let b = record("b", vec![], &[0.3]);
        assert!(matches!(
            input_distance(&a.components, &b.components, T_IN),
            Err(Error::UnknownComponent(_))
        ));
    }

    fn perfect(truth: &[SimulationRecord]) -> Vec<Forecast> {
        truth
            .iter()
            .map(|r| Forecast {
                sim_id: r.sim_id.clone(),
                components: future(r),
            })
            .collect()
    }

    #[test]
    fn perfect_forecast_scores_zero() {
        let truth = vec![record("a", vec![], &[0.0, 1.0, 2.0])];
        assert_eq!(evaluate(&perfect(&truth), &truth, T_IN).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_scores_delta_squared_per_component() {
        let truth = vec![
            record("a", vec![], &[0.0, 1.0, 2.0]),
            record("b", vec![], &[4.0, 1.0, 2.0]),
        ];
        let delta = 0.3;
        let mut fc = perfect(&truth);
        for f in &mut fc {
            for (_, m) in &mut f.components {
                *m += delta;
            }
        }
        assert_abs_diff_eq!(
            evaluate(&fc, &truth, T_IN).unwrap(),
            delta * delta * 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn evaluate_is_permutation_invariant() {
        let truth = vec![
            record("a", vec![], &[0.0]),
            record("b", vec![], &[1.0]),
            record("c", vec![], &[2.0]),
        ];
        let mut fc = perfect(&truth);
        fc[0].components[0].1 += 0.5;
        fc[2].components[0].1 -= 0.25;
        let e = evaluate(&fc, &truth, T_IN).unwrap();
        let order = [2, 0, 1];
        let t2: Vec<_> = order.iter().map(|&i| truth[i].clone()).collect();
        let f2: Vec<_> = order.iter().map(|&i| fc[i].clone()).collect();
        assert_abs_diff_eq!(evaluate(&f2, &t2, T_IN).unwrap(), e, epsilon = 1e-15);
    }

    #[test]
    fn evaluate_shape_mismatch() {
        let truth = vec![record("a", vec![], &[0.0])];
        let mut fc = perfect(&truth);
        fc[0].components[0].1 = Array2::zeros((1, CORNER_FEATURES));
        assert!(matches!(evaluate(&fc, &truth, T_IN), Err(Error::ShapeMismatch(_))));
    }
}
