//! Hybrid global/local search for the minimum-volume box orientation: a
//! genetic algorithm over rotations followed by Nelder–Mead refinement in a
//! local axis-angle chart.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{aabb_volume, pca_rotation, project_to_rotation, Obb, PointCloud, Rotation3};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Initial simplex edge in the axis-angle chart, radians.
    pub initial_step: f64,
    pub reflect: f64,
    pub expand: f64,
    pub contract: f64,
    pub shrink: f64,
    /// Relative spread of simplex volumes at which a run stops.
    pub tol: f64,
    /// Re-centered restarts after the first run converges.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            initial_step: 0.1,
            reflect: 1.0,
            expand: 2.0,
            contract: 0.5,
            shrink: 0.5,
            tol: 1e-9,
            restarts: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneticOptions {
    pub population: usize,
    pub generations: usize,
    pub elite_count: usize,
    /// Largest mutation angle in the first generation, radians.
    pub mutation_angle: f64,
    /// Per-generation multiplier of the mutation angle.
    pub mutation_decay: f64,
    pub tournament: usize,
    /// Stop after this many generations without a relative improvement of
    /// at least `stall_tol`. Zero disables early stopping.
    pub stall_generations: usize,
    /// Stall window used when a warm start seeds the population.
    pub warm_stall_generations: usize,
    pub stall_tol: f64,
    pub seed: u64,
}

impl Default for GeneticOptions {
    fn default() -> Self {
        Self {
            population: 30,
            generations: 50,
            elite_count: 2,
            mutation_angle: 0.2,
            mutation_decay: 0.95,
            tournament: 3,
            stall_generations: 10,
            warm_stall_generations: 5,
            stall_tol: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub genetic: GeneticOptions,
    pub nelder_mead: NelderMeadOptions,
}

impl FitOptions {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.genetic.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchResult {
    pub rotation: Rotation3,
    pub volume: f64,
    pub evals: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneticResult {
    pub rotation: Rotation3,
    pub volume: f64,
    pub evals: usize,
    /// Best volume after initialization and after each generation.
    pub best_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub obb: Obb,
    pub evals: usize,
}

struct Objective<'a> {
    cloud: &'a PointCloud,
    evals: usize,
}

impl Objective<'_> {
    fn eval(&mut self, r: &Rotation3) -> f64 {
        self.evals += 1;
        aabb_volume(self.cloud, r)
    }
}

fn converged(best: f64, worst: f64, tol: f64) -> bool {
    worst - best <= tol * best.abs().max(f64::MIN_POSITIVE)
}

/// Nelder–Mead on the 3-vector `v` parameterizing `exp(v) · center`,
/// re-centering the chart at the incumbent between restarts.
pub fn nelder_mead_so3(cloud: &PointCloud, init: &Rotation3, opts: &NelderMeadOptions) -> Result<SearchResult> {
    if opts.max_iter == 0 {
        return Err(Error::Config("nelder-mead max_iter must be positive".into()));
    }
    let mut obj = Objective { cloud, evals: 0 };
    let mut best_r = *init;
    let mut best_f = obj.eval(init);
    let mut budget = opts.max_iter;
    let mut step = opts.initial_step;
    for _ in 0..=opts.restarts {
        if budget == 0 || best_f == 0.0 {
            break;
        }
        let (r, f, used) = nm_run(&mut obj, &best_r, best_f, step, budget, opts);
        budget -= used;
        let improved = f < best_f && !converged(f, best_f, opts.tol);
        if f < best_f {
            best_r = r;
            best_f = f;
        }
        if !improved {
            break;
        }
        step *= 0.5;
    }
    Ok(SearchResult {
        rotation: best_r,
        volume: best_f,
        evals: obj.evals,
    })
}

fn nm_run(
    obj: &mut Objective<'_>,
    center: &Rotation3,
    f_center: f64,
    step: f64,
    max_iter: usize,
    o: &NelderMeadOptions,
) -> (Rotation3, f64, usize) {
    let at = |v: &Vector3<f64>| Rotation3::from_axis_angle(v).compose(center);
    let mut xs = [Vector3::zeros(); 4];
    let mut fs = [f_center; 4];
    for k in 0..3 {
        xs[k + 1][k] = step;
        fs[k + 1] = obj.eval(&at(&xs[k + 1]));
    }
    let mut iter = 0;
    while iter < max_iter {
        iter += 1;
        let mut idx = [0usize, 1, 2, 3];
        idx.sort_by(|&a, &b| fs[a].total_cmp(&fs[b]));
        xs = idx.map(|i| xs[i]);
        fs = idx.map(|i| fs[i]);
        let diameter = (1..4).map(|i| (xs[i] - xs[0]).norm()).fold(0.0, f64::max);
        if converged(fs[0], fs[3], o.tol) || diameter < 1e-12 {
            break;
        }
        let centroid = (xs[0] + xs[1] + xs[2]) / 3.0;
        let xr = centroid + (centroid - xs[3]) * o.reflect;
        let fr = obj.eval(&at(&xr));
        if fr < fs[0] {
            let xe = centroid + (xr - centroid) * o.expand;
            let fe = obj.eval(&at(&xe));
            if fe < fr {
                xs[3] = xe;
                fs[3] = fe;
            } else {
                xs[3] = xr;
                fs[3] = fr;
            }
            continue;
        }
        if fr < fs[2] {
            xs[3] = xr;
            fs[3] = fr;
            continue;
        }
        let (xc, accept) = if fr < fs[3] {
            let xc = centroid + (xr - centroid) * o.contract;
            let fc = obj.eval(&at(&xc));
            ((xc, fc), fc <= fr)
        } else {
            let xc = centroid + (xs[3] - centroid) * o.contract;
            let fc = obj.eval(&at(&xc));
            ((xc, fc), fc < fs[3])
        };
        if accept {
            xs[3] = xc.0;
            fs[3] = xc.1;
            continue;
        }
        for i in 1..4 {
            xs[i] = xs[0] + (xs[i] - xs[0]) * o.shrink;
            fs[i] = obj.eval(&at(&xs[i]));
        }
    }
    let best = (0..4).min_by(|&a, &b| fs[a].total_cmp(&fs[b])).unwrap_or(0);
    (at(&xs[best]), fs[best], iter)
}

#[derive(Clone, Copy)]
struct Individual {
    rotation: Rotation3,
    volume: f64,
}

fn validate_genetic(opts: &GeneticOptions) -> Result<()> {
    if opts.population < 4 {
        return Err(Error::Config(format!(
            "genetic population must be at least 4, got {}",
            opts.population
        )));
    }
    if opts.elite_count == 0 || opts.elite_count >= opts.population {
        return Err(Error::Config(format!(
            "elite_count must be in 1..{}, got {}",
            opts.population, opts.elite_count
        )));
    }
    if opts.tournament == 0 {
        return Err(Error::Config("tournament size must be positive".into()));
    }
    Ok(())
}

/// Genetic search over rotations. The initial population holds the PCA
/// frame, the identity, the optional warm start, and uniform random
/// rotations; children are built by row-mixing two tournament-selected
/// parents, projecting back onto SO(3), and composing with a random small
/// rotation. The best `elite_count` individuals survive unchanged.
pub fn genetic_search_so3(
    cloud: &PointCloud,
    warm_start: Option<&Rotation3>,
    opts: &GeneticOptions,
) -> Result<GeneticResult> {
    validate_genetic(opts)?;
    let mut rng = seed::rng(opts.seed);
    let mut obj = Objective { cloud, evals: 0 };

    let mut seeds = vec![pca_rotation(cloud), Rotation3::identity()];
    if let Some(w) = warm_start {
        seeds.push(*w);
    }
    let mut pop: Vec<Individual> = Vec::with_capacity(opts.population);
    for i in 0..opts.population {
        let rotation = match seeds.get(i) {
            Some(r) => *r,
            None => Rotation3::random(&mut rng),
        };
        let volume = obj.eval(&rotation);
        pop.push(Individual { rotation, volume });
    }
    sort_population(&mut pop);

    let mut history = vec![pop[0].volume];
    let mut angle = opts.mutation_angle;
    let stall_window = if warm_start.is_some() {
        opts.warm_stall_generations
    } else {
        opts.stall_generations
    };
    let mut stalled = 0;
    let mut reference = pop[0].volume;
    for _ in 0..opts.generations {
        let mut next: Vec<Individual> = pop[..opts.elite_count].to_vec();
        while next.len() < opts.population {
            let a = tournament(&pop, opts.tournament, &mut rng);
            let b = tournament(&pop, opts.tournament, &mut rng);
            let child = crossover(&a.rotation, &b.rotation, &mut rng);
            let child = Rotation3::random_small(&mut rng, angle).compose(&child);
            let volume = obj.eval(&child);
            next.push(Individual {
                rotation: child,
                volume,
            });
        }
        sort_population(&mut next);
        pop = next;
        history.push(pop[0].volume);
        angle *= opts.mutation_decay;

        if stall_window > 0 {
            if reference - pop[0].volume > opts.stall_tol * reference.abs() {
                reference = pop[0].volume;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled >= stall_window {
                    break;
                }
            }
        }
    }
    Ok(GeneticResult {
        rotation: pop[0].rotation,
        volume: pop[0].volume,
        evals: obj.evals,
        best_history: history,
    })
}

fn sort_population(pop: &mut [Individual]) {
    // stable: ties keep insertion order, so elites stay put
    pop.sort_by(|a, b| a.volume.total_cmp(&b.volume));
}

fn tournament<R: Rng>(pop: &[Individual], size: usize, rng: &mut R) -> Individual {
    let mut best: Option<usize> = None;
    for _ in 0..size {
        let i = rng.gen_range(0..pop.len());
        // the population is sorted, so the lowest index is the fittest
        best = Some(best.map_or(i, |b| b.min(i)));
    }
    pop[best.unwrap_or(0)]
}

fn crossover<R: Rng>(a: &Rotation3, b: &Rotation3, rng: &mut R) -> Rotation3 {
    let mut m = Matrix3::zeros();
    for i in 0..3 {
        let src = if rng.gen::<bool>() { a } else { b };
        m.set_row(i, &src.matrix().row(i));
    }
    project_to_rotation(&m).unwrap_or(*a)
}

/// How a sequence fit seeds each time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartMode {
    /// Step t > 1 starts from step t − 1's rotation.
    Warm,
    /// Every step is fitted independently.
    Cold,
}

/// Genetic search followed by Nelder–Mead refinement of the best individual.
/// The returned frame is the symmetry-equivalent one closest to the warm
/// start (or to the PCA frame without one), so axis order stays stable.
pub fn fit_obb(cloud: &PointCloud, warm_start: Option<&Rotation3>, opts: &FitOptions) -> Result<FitResult> {
    let ga = genetic_search_so3(cloud, warm_start, &opts.genetic)?;
    let nm = nelder_mead_so3(cloud, &ga.rotation, &opts.nelder_mead)?;
    let (rotation, _) = if nm.volume <= ga.volume {
        (nm.rotation, nm.volume)
    } else {
        (ga.rotation, ga.volume)
    };
    let reference = match warm_start {
        Some(w) => *w,
        None => pca_rotation(cloud),
    };
    let obb = Obb::for_rotation(cloud, rotation).aligned_to(&reference);
    Ok(FitResult {
        obb,
        evals: ga.evals + nm.evals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObbSequence {
    pub boxes: Vec<Obb>,
    pub eval_counts: Vec<usize>,
}

impl ObbSequence {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn total_evals(&self) -> usize {
        self.eval_counts.iter().sum()
    }
}

pub fn fit_obb_sequence(clouds: &[PointCloud], opts: &FitOptions) -> Result<ObbSequence> {
    fit_obb_sequence_with(clouds, opts, StartMode::Warm)
}

pub fn fit_obb_sequence_with(clouds: &[PointCloud], opts: &FitOptions, mode: StartMode) -> Result<ObbSequence> {
    if clouds.is_empty() {
        return Err(Error::InvalidInput("empty cloud sequence".into()));
    }
    let mut boxes: Vec<Obb> = Vec::with_capacity(clouds.len());
    let mut eval_counts = Vec::with_capacity(clouds.len());
    for (t, cloud) in clouds.iter().enumerate() {
        let step_opts = opts.with_seed(seed::derive(opts.genetic.seed, t as u64));
        let warm = match mode {
            StartMode::Warm => boxes.last().map(|b| b.rotation),
            StartMode::Cold => None,
        };
        let fit = fit_obb(cloud, warm.as_ref(), &step_opts)?;
        boxes.push(fit.obb);
        eval_counts.push(fit.evals);
    }
    Ok(ObbSequence { boxes, eval_counts })
}

/// Fits many independent sequences. Each sequence gets its own seed derived
/// from `opts.genetic.seed` and its index, so results do not depend on
/// scheduling.
pub fn fit_sequences(
    sequences: &[Vec<PointCloud>],
    opts: &FitOptions,
    mode: StartMode,
    exec: Execution,
) -> Result<Vec<ObbSequence>> {
    par::map_range(exec, sequences.len(), |i| {
        let o = opts.with_seed(seed::derive(opts.genetic.seed, 1_000_003 + i as u64));
        fit_obb_sequence_with(&sequences[i], &o, mode)
    })
    .into_iter()
    .collect()
}
