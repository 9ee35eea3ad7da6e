//! Hidden representations of whole component sequences, exact t-SNE and a
//! two-cluster k-means used to score how well deformation modes separate.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autoenc::{encode_records, ModelParams, Precision};
use crate::dataset::{
    normalize_apply, normalize_fit_sequences, remove_rigid_sequence, ComponentSequence, NormalizationStats,
    SimulationRecord,
};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::seed;
use crate::synthgen::{Mode, SynthLabel};

/// One encoder hidden vector per (simulation, component).
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenRepSet {
    pub rows: Array2<f64>,
    /// `(sim_id, component_id)` of each row.
    pub keys: Vec<(String, String)>,
}

impl HiddenRepSet {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Generator mode of every row.
    pub fn modes(&self, labels: &[SynthLabel]) -> Result<Vec<Mode>> {
        let map: std::collections::HashMap<(&str, &str), Mode> = labels
            .iter()
            .map(|l| ((l.sim_id.as_str(), l.component_id.as_str()), l.mode))
            .collect();
        self.keys
            .iter()
            .map(|(s, c)| {
                map.get(&(s.as_str(), c.as_str()))
                    .copied()
                    .ok_or_else(|| Error::InvalidInput(format!("no mode label for sim `{s}` component `{c}`")))
            })
            .collect()
    }

    /// Rows belonging to one component, with their positions in `self`.
    pub fn component_rows(&self, component_id: &str) -> (Vec<usize>, Array2<f64>) {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.keys[i].1 == component_id).collect();
        (idx.clone(), self.rows.select(Axis(0), &idx))
    }
}

/// Component ids present in every record, in the order of the first record.
pub fn component_ids(records: &[SimulationRecord]) -> Vec<String> {
    records
        .first()
        .map(|r| r.components.iter().map(|c| c.component_id.clone()).collect())
        .unwrap_or_default()
}

/// Encodes the full (unnormalized) sequences of the selected components.
///
/// Without rigid removal the sequences are normalized with `stats`. With it,
/// each frame is first expressed in its own box frame and normalization
/// statistics are refitted on the resulting sequences.
pub fn extract_hidden(
    params: &ModelParams<f64>,
    precision: Precision,
    records: &[SimulationRecord],
    stats: &NormalizationStats,
    components: Option<&[String]>,
    rigid_removed: bool,
    exec: Execution,
) -> Result<HiddenRepSet> {
    let wanted: Vec<String> = match components {
        Some(c) => c.to_vec(),
        None => component_ids(records),
    };
    let mut selected: Vec<&ComponentSequence> = Vec::new();
    for r in records {
        for id in &wanted {
            let c = r
                .component(id)
                .ok_or_else(|| Error::UnknownComponent(format!("`{id}` not found in sim `{}`", r.sim_id)))?;
            selected.push(c);
        }
    }
    if selected.is_empty() {
        return Err(Error::InvalidInput("no sequences selected".into()));
    }
    let prepared: Vec<ComponentSequence> = if rigid_removed {
        let local = par::map(exec, &selected, |c| remove_rigid_sequence(c))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let s = normalize_fit_sequences(local.iter())?;
        local.iter().map(|c| normalize_apply(c, &s)).collect()
    } else {
        selected.iter().map(|c| normalize_apply(c, stats)).collect()
    };
    let frames: Vec<&Array2<f64>> = prepared.iter().map(|c| &c.frames).collect();
    let hidden = encode_records(params, &frames, precision, exec)?;
    let width = hidden[0].len();
    let mut rows = Array2::zeros((hidden.len(), width));
    for (mut dst, h) in rows.rows_mut().into_iter().zip(&hidden) {
        dst.assign(h);
    }
    if !rows.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("hidden representation".into()));
    }
    Ok(HiddenRepSet {
        rows,
        keys: prepared
            .iter()
            .map(|c| (c.sim_id.clone(), c.component_id.clone()))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding2D {
    /// `N × 2`
    pub coords: Array2<f64>,
    /// KL(P‖Q) at the random initial layout.
    pub kl_initial: f64,
    /// KL(P‖Q) when early exaggeration ends.
    pub kl_post_exaggeration: f64,
    pub kl_final: f64,
}

fn sq_distances(x: &ArrayView2<'_, f64>, exec: Execution) -> Array2<f64> {
    let n = x.nrows();
    let rows = par::map_range(exec, n, |i| {
        (0..n)
            .map(|j| {
                x.row(i)
                    .iter()
                    .zip(x.row(j).iter())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
            })
            .collect::<Vec<_>>()
    });
    Array2::from_shape_vec((n, n), rows.concat()).expect("n × n")
}

/// Conditional probabilities `p(j|i)` for one row of squared distances and
/// a precision `beta`, with the Shannon entropy (nats) of the distribution.
fn row_affinities(d: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    // shift by the smallest off-diagonal distance so exp never underflows
    let d_min = d
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = d
        .iter()
        .enumerate()
        .map(|(j, &v)| if j == i { 0.0 } else { (-(v - d_min) * beta).exp() })
        .collect();
    let sum: f64 = p.iter().sum();
    let mut h = 0.0;
    for (j, pj) in p.iter_mut().enumerate() {
        *pj /= sum;
        if j != i && *pj > 0.0 {
            h -= *pj * pj.ln();
        }
    }
    (p, h)
}

/// Row of `p(j|i)` whose perplexity matches the target, found by bisection
/// on `beta`. Returns the row and its achieved perplexity.
fn calibrate_row(d: &[f64], i: usize, perplexity: f64) -> (Vec<f64>, f64) {
    let target = perplexity.ln();
    let mut beta = 1.0;
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let (mut p, mut h) = row_affinities(d, i, beta);
    for _ in 0..50 {
        if (h - target).abs() < 1e-5 {
            break;
        }
        if h > target {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
        (p, h) = row_affinities(d, i, beta);
    }
    (p, h.exp())
}

/// Symmetrized joint affinities `P` (summing to one) and the achieved
/// perplexity of each conditional row.
pub fn joint_affinities(x: &ArrayView2<'_, f64>, perplexity: f64, exec: Execution) -> Result<(Array2<f64>, Vec<f64>)> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidInput("t-SNE needs at least two points".into()));
    }
    if !(perplexity > 1.0 && 3.0 * perplexity < n as f64) {
        return Err(Error::Config(format!(
            "perplexity must lie in (1, N/3) = (1, {:.3}), got {perplexity}",
            n as f64 / 3.0
        )));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("t-SNE input".into()));
    }
    let d = sq_distances(x, exec);
    let rows = par::map_range(exec, n, |i| {
        calibrate_row(d.row(i).as_slice().expect("contiguous"), i, perplexity)
    });
    let mut cond = Array2::zeros((n, n));
    let mut perps = Vec::with_capacity(n);
    for (i, (p, perp)) in rows.into_iter().enumerate() {
        cond.row_mut(i).assign(&Array1::from(p));
        perps.push(perp);
    }
    let mut p = &cond + &cond.t();
    let total = p.sum();
    p /= total;
    Ok((p, perps))
}

/// Student-t numerators `1 / (1 + |y_i − y_j|²)` (zero diagonal) and their
/// sum. Rows are summed in order so the result is thread-count independent.
fn q_numerators(y: &Array2<f64>, exec: Execution) -> (Array2<f64>, f64) {
    let n = y.nrows();
    let rows = par::map_range(exec, n, |i| {
        (0..n)
            .map(|j| {
                if i == j {
                    0.0
                } else {
                    let dx = y[[i, 0]] - y[[j, 0]];
                    let dy = y[[i, 1]] - y[[j, 1]];
                    1.0 / (1.0 + dx * dx + dy * dy)
                }
            })
            .collect::<Vec<_>>()
    });
    let z: f64 = rows.iter().map(|r| r.iter().sum::<f64>()).sum();
    (Array2::from_shape_vec((n, n), rows.concat()).expect("n × n"), z)
}

fn kl(p: &Array2<f64>, num: &Array2<f64>, z: f64) -> f64 {
    p.iter()
        .zip(num.iter())
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &nij)| pij * (pij / (nij / z).max(f64::MIN_POSITIVE)).ln())
        .sum()
}

/// KL(P‖Q) of a layout.
pub fn kl_divergence(p: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let (num, z) = q_numerators(y, Execution::Sequential);
    kl(p, &num, z)
}

/// Exact `O(N²)` t-SNE to two dimensions.
pub fn tsne(x: &ArrayView2<'_, f64>, cfg: &TsneConfig, exec: Execution) -> Result<Embedding2D> {
    if cfg.iterations == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config(
            "t-SNE needs iterations > 0 and a positive learning rate".into(),
        ));
    }
    let (p, _) = joint_affinities(x, cfg.perplexity, exec)?;
    let n = x.nrows();
    let mut rng = seed::stream(cfg.seed, 0x75_e1);
    let mut y = Array2::from_shape_fn((n, 2), |_| {
        let v: f64 = StandardNormal.sample(&mut rng);
        1e-4 * v
    });
    let mut velocity = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let (num, z) = q_numerators(&y, exec);
    let kl_initial = kl(&p, &num, z);
    let mut kl_post = kl_initial;

    for iter in 0..cfg.iterations {
        if iter == cfg.exaggeration_iters {
            let (num, z) = q_numerators(&y, exec);
            kl_post = kl(&p, &num, z);
        }
        let exag = if iter < cfg.exaggeration_iters {
            cfg.exaggeration
        } else {
            1.0
        };
        let momentum = if iter < 250 { 0.5 } else { 0.8 };
        let (num, z) = q_numerators(&y, exec);
        let grad_rows = par::map_range(exec, n, |i| {
            let mut g = [0.0; 2];
            for j in 0..n {
                let w = (exag * p[[i, j]] - num[[i, j]] / z) * num[[i, j]];
                g[0] += w * (y[[i, 0]] - y[[j, 0]]);
                g[1] += w * (y[[i, 1]] - y[[j, 1]]);
            }
            [4.0 * g[0], 4.0 * g[1]]
        });
        for (i, g) in grad_rows.iter().enumerate() {
            for k in 0..2 {
                let same_sign = (g[k] > 0.0) == (velocity[[i, k]] > 0.0);
                gains[[i, k]] = if same_sign {
                    gains[[i, k]] * 0.8
                } else {
                    gains[[i, k]] + 0.2
                };
                gains[[i, k]] = gains[[i, k]].max(0.01);
                velocity[[i, k]] = momentum * velocity[[i, k]] - cfg.learning_rate * gains[[i, k]] * g[k];
            }
        }
        y += &velocity;
        let mean = y.mean_axis(Axis(0)).expect("n ≥ 2");
        y -= &mean;
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("t-SNE layout".into()));
    }
    let (num, z) = q_numerators(&y, exec);
    let kl_final = kl(&p, &num, z);
    if cfg.iterations <= cfg.exaggeration_iters {
        kl_post = kl_initial;
    }
    Ok(Embedding2D {
        coords: y,
        kl_initial,
        kl_post_exaggeration: kl_post,
        kl_final,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Two-cluster Lloyd iterations from a k-means++ start.
pub fn kmeans2(x: &ArrayView2<'_, f64>, seed_value: u64) -> Result<KMeans> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidInput("k-means needs at least two rows".into()));
    }
    let mut rng = seed::stream(seed_value, 0x4b_3a);
    let first = rng.gen_range(0..n);
    let d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    let total: f64 = d2.iter().sum();
    let second = if total > 0.0 {
        let mut r = rng.gen::<f64>() * total;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            if r < d {
                pick = i;
                break;
            }
            r -= d;
        }
        pick
    } else {
        (first + 1) % n
    };
    let mut centroids = ndarray::stack(Axis(0), &[x.row(first), x.row(second)]).expect("same width");
    let mut assignments = vec![usize::MAX; n];
    let mut inertia_history = Vec::new();
    for _ in 0..100 {
        let mut changed = false;
        let mut inertia = 0.0;
        for (row, a) in x.rows().into_iter().zip(assignments.iter_mut()) {
            let d0 = sq_dist(row, centroids.row(0));
            let d1 = sq_dist(row, centroids.row(1));
            let k = usize::from(d1 < d0);
            inertia += d0.min(d1);
            if *a != k {
                *a = k;
                changed = true;
            }
        }
        inertia_history.push(inertia);
        if !changed {
            break;
        }
        for k in 0..2 {
            let members: Vec<usize> = (0..n).filter(|&i| assignments[i] == k).collect();
            if !members.is_empty() {
                let m = x.select(Axis(0), &members).mean_axis(Axis(0)).expect("non-empty");
                centroids.row_mut(k).assign(&m);
            }
        }
    }
    Ok(KMeans {
        assignments,
        centroids,
        inertia_history,
    })
}

/// Fraction of rows grouped correctly under the better of the two
/// cluster-to-mode matchings.
pub fn mode_purity(assignments: &[usize], modes: &[Mode]) -> Result<f64> {
    if assignments.len() != modes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} assignments for {} labels",
            assignments.len(),
            modes.len()
        )));
    }
    if assignments.is_empty() {
        return Err(Error::InvalidInput("no rows to score".into()));
    }
    let direct = assignments
        .iter()
        .zip(modes)
        .filter(|(&a, &m)| (a == 0) == (m == Mode::A))
        .count();
    let best = direct.max(assignments.len() - direct);
    Ok(best as f64 / assignments.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blobs(n_per: usize, sep: f64, dim: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((2 * n_per, dim), |(i, j)| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let c = if i < n_per || j > 0 { 0.0 } else { sep };
            c + noise
        })
    }

    #[test]
    fn affinities_are_a_symmetric_distribution_at_target_perplexity() {
        let x = blobs(40, 5.0, 4, 1);
        let (p, perps) = joint_affinities(&x.view(), 10.0, Execution::Sequential).unwrap();
        assert_abs_diff_eq!(p.sum(), 1.0, epsilon = 1e-10);
        assert!(p.iter().all(|&v| v >= 0.0));
        assert_abs_diff_eq!(p, p.t(), epsilon = 1e-18);
        for perp in perps {
            assert!((perp - 10.0).abs() < 1e-3, "{perp}");
        }
    }

    #[test]
    fn infeasible_perplexity_is_a_config_error() {
        let x = blobs(5, 1.0, 2, 0);
        for perp in [1.0, 0.5, 10.0 / 3.0, 5.0] {
            assert!(matches!(
                tsne(
                    &x.view(),
                    &TsneConfig {
                        perplexity: perp,
                        ..Default::default()
                    },
                    Execution::Sequential
                ),
                Err(Error::Config(_))
            ));
        }
    }

    fn small_cfg() -> TsneConfig {
        TsneConfig {
            perplexity: 8.0,
            iterations: 400,
            // roughly N / 12; the default 200 overshoots at this size
            learning_rate: 10.0,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn descent_lowers_kl() {
        let x = blobs(30, 6.0, 5, 2);
        let e = tsne(&x.view(), &small_cfg(), Execution::Sequential).unwrap();
        assert!(e.kl_final < e.kl_post_exaggeration, "{e:?}");
        assert!(e.kl_final < e.kl_initial);
        assert_abs_diff_eq!(
            kl_divergence(
                &joint_affinities(&x.view(), 8.0, Execution::Sequential).unwrap().0,
                &e.coords
            ),
            e.kl_final,
            epsilon = 1e-12
        );
    }

    #[test]
    fn duplicated_rows_land_close() {
        let mut x = blobs(25, 4.0, 3, 4);
        let dup = x.row(7).to_owned();
        x.row_mut(30).assign(&dup);
        let e = tsne(&x.view(), &small_cfg(), Execution::Sequential).unwrap();
        let y = &e.coords;
        let mut all: Vec<f64> = Vec::new();
        for i in 0..y.nrows() {
            for j in i + 1..y.nrows() {
                all.push(sq_dist(y.row(i), y.row(j)).sqrt());
            }
        }
        all.sort_by(f64::total_cmp);
        let median = all[all.len() / 2];
        assert!(sq_dist(y.row(7), y.row(30)).sqrt() < median);
    }

    #[test]
    fn tsne_is_seed_deterministic_and_thread_independent() {
        let x = blobs(20, 3.0, 3, 5);
        let a = tsne(&x.view(), &small_cfg(), Execution::Sequential).unwrap();
        let b = tsne(&x.view(), &small_cfg(), Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let x = blobs(50, 20.0, 3, 6);
        let km = kmeans2(&x.view(), 0).unwrap();
        let modes: Vec<Mode> = (0..100).map(|i| if i < 50 { Mode::A } else { Mode::B }).collect();
        assert_eq!(mode_purity(&km.assignments, &modes).unwrap(), 1.0);
        assert!(km.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn kmeans_inertia_never_increases() {
        for seed in 0..20 {
            let x = blobs(30, 1.0, 4, 100 + seed);
            let km = kmeans2(&x.view(), seed).unwrap();
            assert!(km.inertia_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        }
    }

    #[test]
    fn kmeans_on_duplicated_data_gives_same_partition() {
        let x = blobs(20, 8.0, 2, 7);
        let xx = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let a = kmeans2(&x.view(), 1).unwrap();
        let b = kmeans2(&xx.view(), 1).unwrap();
        let modes: Vec<Mode> = a
            .assignments
            .iter()
            .map(|&k| if k == 0 { Mode::A } else { Mode::B })
            .collect();
        let modes2: Vec<Mode> = modes.iter().chain(modes.iter()).copied().collect();
        assert_eq!(mode_purity(&b.assignments, &modes2).unwrap(), 1.0);
    }

    #[test]
    fn purity_counts() {
        let modes: Vec<Mode> = (0..100).map(|i| if i % 2 == 0 { Mode::A } else { Mode::B }).collect();
        let perfect: Vec<usize> = (0..100).map(|i| i % 2).collect();
        assert_eq!(mode_purity(&perfect, &modes).unwrap(), 1.0);
        let swapped: Vec<usize> = perfect.iter().map(|k| 1 - k).collect();
        assert_eq!(mode_purity(&swapped, &modes).unwrap(), 1.0);
        let mut one_off = perfect.clone();
        one_off[17] = 1 - one_off[17];
        assert_abs_diff_eq!(mode_purity(&one_off, &modes).unwrap(), 0.99, epsilon = 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let random: Vec<usize> = (0..100).map(|_| rng.gen_range(0..2)).collect();
        let p = mode_purity(&random, &modes).unwrap();
        assert!((0.5..0.65).contains(&p), "{p}");
        assert!(matches!(mode_purity(&[0], &modes), Err(Error::ShapeMismatch(_))));
    }
}
