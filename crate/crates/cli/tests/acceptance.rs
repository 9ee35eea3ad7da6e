//! End-to-end acceptance run. Prints one `[PASS]`/`[FAIL]` line per
//! criterion and exits nonzero if any fails. Criterion numbers given as
//! arguments select a subset, e.g. `cargo test --test acceptance -- 1 4`.

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};
use std::time::Instant;

use boxseq::autoenc::{batch_loss, batch_loss_and_grad, CellKind, ModelDims, ModelParams, SimFrames, TrainConfig};
use boxseq::baselines::{run_comparison, Comparison};
use boxseq::dataset::{split, ComponentSequence, SimulationRecord, SplitDataset};
use boxseq::embed::{component_ids, extract_hidden, joint_affinities, kmeans2, mode_purity, tsne, TsneConfig};
use boxseq::geometry::{
    aabb_volume, fit_obb, fit_sequences, pca_obb, FitOptions, ObbSequence, PointCloud, Rotation3, StartMode,
};
use boxseq::par::{self, Execution};
use boxseq::synthgen::{generate, RawSimulation, SynthConfig, SynthLabel};
use nalgebra::Vector3;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EXPECTED_COUNTS: [usize; 5] = [4704, 287_744, 287_744, 6168, 6168];
const EXPECTED_TOTAL: usize = 592_528;

const CUBE_POSES: usize = 50;
const CUBE_VOLUME_TOL: f64 = 1e-4;
const RANDOM_CLOUDS: usize = 20;
const CLOUD_POINTS: usize = 50;
const ORACLE_SAMPLES: usize = 200_000;
const ORACLE_SLACK: f64 = 1.02;
const PCA_SLACK: f64 = 1e-9;
const ENCLOSURE_TOL: f64 = 1e-9;

const BENCH_SIMS: usize = 192;
const BENCH_TRAIN: usize = 128;
const MAX_EVAL_RATIO: f64 = 0.9;
const MAX_VOLUME_DEV: f64 = 0.01;

const FD_EPS: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const FD_INSTANCES: u64 = 20;

const N_SEEDS: usize = 5;
const MIN_SEQUENCE_WINS: usize = 4;
const MIN_PURITY: f64 = 0.9;

const P_SUM_TOL: f64 = 1e-10;
const P_SYMMETRY_TOL: f64 = 1e-12;
const PERPLEXITY_TOL: f64 = 1e-3;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_param_counts() -> Check {
    let c = ModelParams::<f64>::zeros(ModelDims::default(), CellKind::Lstm).param_count();
    let got = [c.encoder, c.dec_recon, c.dec_pred, c.head_recon, c.head_pred];
    let total: usize = got.iter().sum();
    ensure(
        got == EXPECTED_COUNTS && total == EXPECTED_TOTAL,
        format!("layers {got:?}, total {total}"),
    )
}

fn unit_cube_cloud(rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let mut pts = Vec::new();
    for i in 0..8 {
        pts.push(Vector3::new(
            (i & 1) as f64 - 0.5,
            ((i >> 1) & 1) as f64 - 0.5,
            ((i >> 2) & 1) as f64 - 0.5,
        ));
    }
    for _ in 0..40 {
        pts.push(Vector3::new(
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        ));
    }
    pts
}

fn posed(points: &[Vector3<f64>], rng: &mut ChaCha8Rng, shift: f64) -> PointCloud {
    let r = Rotation3::random(rng);
    let t = Vector3::new(
        rng.gen_range(-shift..shift),
        rng.gen_range(-shift..shift),
        rng.gen_range(-shift..shift),
    );
    PointCloud::new(points.iter().map(|p| r.matrix() * p + t).collect()).unwrap()
}

fn c2_obb() -> Check {
    let opts = FitOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_cube: f64 = 0.0;
    let mut enclosed = true;
    for _ in 0..CUBE_POSES {
        let pts = unit_cube_cloud(&mut rng);
        let cloud = posed(&pts, &mut rng, 10.0);
        let fit = fit_obb(&cloud, None, &opts).map_err(|e| e.to_string())?;
        worst_cube = worst_cube.max((fit.obb.volume() - 1.0).abs());
        enclosed &= fit.obb.encloses(&cloud, ENCLOSURE_TOL);
    }

    let clouds: Vec<PointCloud> = (0..RANDOM_CLOUDS)
        .map(|_| {
            let pts: Vec<Vector3<f64>> = (0..CLOUD_POINTS)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-1.5..1.5),
                        rng.gen_range(-0.5..0.5),
                    )
                })
                .collect();
            posed(&pts, &mut rng, 5.0)
        })
        .collect();
    let oracle: Vec<f64> = par::map_range(Execution::Parallel, clouds.len(), |i| {
        let mut r = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        (0..ORACLE_SAMPLES)
            .map(|_| aabb_volume(&clouds[i], &Rotation3::random(&mut r)))
            .fold(f64::INFINITY, f64::min)
    });
    let mut worst_oracle: f64 = 0.0;
    let mut pca_ok = true;
    for (cloud, best) in clouds.iter().zip(&oracle) {
        let fit = fit_obb(cloud, None, &opts).map_err(|e| e.to_string())?;
        let v = fit.obb.volume();
        worst_oracle = worst_oracle.max(v / best);
        pca_ok &= v <= pca_obb(cloud).volume() + PCA_SLACK;
        enclosed &= fit.obb.encloses(cloud, ENCLOSURE_TOL);
    }
    ensure(
        worst_cube <= CUBE_VOLUME_TOL && worst_oracle <= ORACLE_SLACK && pca_ok && enclosed,
        format!(
            "cube |V-1| max {worst_cube:.2e} (tol {CUBE_VOLUME_TOL:e}); fit/oracle max {worst_oracle:.4} \
             (limit {ORACLE_SLACK}); <= PCA {pca_ok}; enclosed {enclosed}"
        ),
    )
}

fn random_instance(seed: u64, kind: CellKind) -> (ModelParams<f64>, Vec<SimFrames<f64>>) {
    const T_FIN: usize = 5;
    let dims = ModelDims {
        features: 3,
        latent: 2,
        decoder_hidden: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::<f64>::zeros(dims, kind);
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    let sims = (0..rng.gen_range(1..4))
        .map(|_| {
            (0..rng.gen_range(1..3))
                .map(|_| Array2::from_shape_fn((T_FIN, 3), |_| rng.gen_range(-1.5..1.5)))
                .collect()
        })
        .collect();
    (p, sims)
}

fn c4_gradients() -> Check {
    const T_IN: usize = 3;
    let mut worst: f64 = 0.0;
    for kind in [CellKind::Lstm, CellKind::Rnn] {
        for seed in 0..FD_INSTANCES {
            let (p, sims) = random_instance(seed, kind);
            let refs: Vec<&SimFrames<f64>> = sims.iter().collect();
            let loss = |q: &ModelParams<f64>| batch_loss(q, &refs, T_IN, 1, Execution::Sequential).unwrap();
            let (_, analytic) =
                batch_loss_and_grad(&p, &refs, T_IN, 1, Execution::Sequential).map_err(|e| e.to_string())?;
            for (k, (_, _, a)) in analytic.tensors().into_iter().enumerate() {
                let numeric: Vec<f64> = (0..a.len())
                    .map(|i| {
                        let mut plus = p.clone();
                        plus.tensors_mut()[k][i] += FD_EPS;
                        let mut minus = p.clone();
                        minus.tensors_mut()[k][i] -= FD_EPS;
                        (loss(&plus) - loss(&minus)) / (2.0 * FD_EPS)
                    })
                    .collect();
                let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let diff: Vec<f64> = a.iter().zip(&numeric).map(|(x, y)| x - y).collect();
                let scale = norm(a).max(norm(&numeric));
                let e = if scale < 1e-10 {
                    norm(&diff)
                } else {
                    norm(&diff) / scale
                };
                worst = worst.max(e);
            }
        }
    }
    ensure(
        worst < FD_TOL,
        format!("{FD_INSTANCES} instances per cell type, worst tensor relative error {worst:.2e} (tol {FD_TOL:e})"),
    )
}

/// The synthetic benchmark shared by criteria 3 and 5 to 9.
struct Bench {
    raw: Vec<RawSimulation>,
    labels: Vec<SynthLabel>,
    warm: Vec<ObbSequence>,
    records: Vec<SimulationRecord>,
    split: SplitDataset,
    train_cfg: TrainConfig,
}

impl Bench {
    fn sequences(&self) -> Vec<Vec<PointCloud>> {
        self.raw
            .iter()
            .flat_map(|s| s.components.iter().map(|c| c.clouds.clone()))
            .collect()
    }

    fn build() -> Self {
        let t0 = Instant::now();
        let synth = SynthConfig {
            n_simulations: BENCH_SIMS,
            ..SynthConfig::default()
        };
        let (raw, labels) = generate(&synth).expect("synthesis");
        let seqs: Vec<Vec<PointCloud>> = raw
            .iter()
            .flat_map(|s| s.components.iter().map(|c| c.clouds.clone()))
            .collect();
        let warm = fit_sequences(&seqs, &FitOptions::default(), StartMode::Warm, Execution::Parallel).expect("fit");
        let mut it = warm.iter();
        let records: Vec<SimulationRecord> = raw
            .iter()
            .map(|s| SimulationRecord {
                sim_id: s.sim_id.clone(),
                params: s.params.clone(),
                components: s
                    .components
                    .iter()
                    .map(|c| ComponentSequence::from_boxes(&s.sim_id, &c.component_id, &it.next().unwrap().boxes))
                    .collect::<Result<_, _>>()
                    .expect("frames"),
            })
            .collect();
        let train_cfg = TrainConfig::default();
        let split = split(&records, BENCH_TRAIN, train_cfg.t_in, 0).expect("split");
        eprintln!(
            "benchmark: {BENCH_SIMS} sims synthesized and fitted in {:.1?}",
            t0.elapsed()
        );
        Bench {
            raw,
            labels,
            warm,
            records,
            split,
            train_cfg,
        }
    }
}

fn c3_warm_start(bench: &Bench) -> Check {
    let cold = fit_sequences(
        &bench.sequences(),
        &FitOptions::default(),
        StartMode::Cold,
        Execution::Parallel,
    )
    .map_err(|e| e.to_string())?;
    let warm_evals: usize = bench.warm.iter().map(|s| s.total_evals()).sum();
    let cold_evals: usize = cold.iter().map(|s| s.total_evals()).sum();
    let ratio = warm_evals as f64 / cold_evals as f64;
    let mut max_dev: f64 = 0.0;
    for (w, c) in bench.warm.iter().zip(&cold) {
        for (a, b) in w.boxes.iter().zip(&c.boxes) {
            max_dev = max_dev.max((a.volume() / b.volume() - 1.0).abs());
        }
    }
    ensure(
        ratio <= MAX_EVAL_RATIO && max_dev <= MAX_VOLUME_DEV,
        format!(
            "evals warm {warm_evals} / cold {cold_evals} = {ratio:.3} (limit {MAX_EVAL_RATIO}); \
             max per-step volume deviation {:.3}% (limit {}%)",
            max_dev * 100.0,
            MAX_VOLUME_DEV * 100.0
        ),
    )
}

fn c5_ordering(cmp: &Comparison) -> Check {
    let lstm: Vec<f64> = cmp.runs_of(CellKind::Lstm).map(|r| r.test_mse).collect();
    let rnn: Vec<f64> = cmp.runs_of(CellKind::Rnn).map(|r| r.test_mse).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let nn_param = cmp.report.get("nn-param").unwrap().test_mse;
    let nn_seq = cmp.report.get("nn-sequence").unwrap().test_mse;
    let wins = lstm.iter().filter(|&&m| m < nn_seq).count();
    ensure(
        mean(&lstm) < nn_param && wins >= MIN_SEQUENCE_WINS,
        format!(
            "nn-param {nn_param:.4e}, nn-sequence {nn_seq:.4e}, rnn mean {:.4e}, lstm mean {:.4e}; \
             lstm seeds beating nn-sequence {wins}/{} (need {MIN_SEQUENCE_WINS}); lstm per seed {:?}",
            mean(&rnn),
            mean(&lstm),
            lstm.len(),
            lstm.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>()
        ),
    )
}

fn c6_orthogonality(cmp: &Comparison) -> Check {
    let runs: Vec<_> = cmp.runs_of(CellKind::Lstm).collect();
    let n = runs.len() as f64;
    let trained = runs.iter().map(|r| r.defect_trained).sum::<f64>() / n;
    let init = runs.iter().map(|r| r.defect_init).sum::<f64>() / n;
    ensure(
        trained < init,
        format!(
            "mean defect over {} seeds: trained {trained:.4e} < initial {init:.4e}",
            runs.len()
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn c7_modes(bench: &Bench, cmp: &Comparison) -> Check {
    let mut medians = Vec::new();
    for run in cmp.runs_of(CellKind::Lstm) {
        let h = extract_hidden(
            &run.params,
            bench.train_cfg.precision,
            &bench.records,
            &bench.split.stats,
            None,
            true,
            Execution::Parallel,
        )
        .map_err(|e| e.to_string())?;
        let modes = h.modes(&bench.labels).map_err(|e| e.to_string())?;
        let mut purities = Vec::new();
        for id in component_ids(&bench.records) {
            let (idx, rows) = h.component_rows(&id);
            let km = kmeans2(&rows.view(), 0).map_err(|e| e.to_string())?;
            let sub: Vec<_> = idx.iter().map(|&i| modes[i]).collect();
            purities.push(mode_purity(&km.assignments, &sub).map_err(|e| e.to_string())?);
        }
        medians.push(median(purities));
    }
    let worst = medians.iter().copied().fold(f64::INFINITY, f64::min);
    ensure(
        worst >= MIN_PURITY,
        format!(
            "median per-component purity per seed {:?}, min {worst:.3} (need {MIN_PURITY})",
            medians.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn c9_tsne(bench: &Bench, cmp: &Comparison) -> Check {
    let run = cmp.runs_of(CellKind::Lstm).next().ok_or("no lstm run")?;
    let h = extract_hidden(
        &run.params,
        bench.train_cfg.precision,
        &bench.records,
        &bench.split.stats,
        None,
        true,
        Execution::Parallel,
    )
    .map_err(|e| e.to_string())?;
    let cfg = TsneConfig::default();
    let (p, perps) =
        joint_affinities(&h.rows.view(), cfg.perplexity, Execution::Parallel).map_err(|e| e.to_string())?;
    let sum: f64 = p.sum();
    let asym = (&p - &p.t()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let nonneg = p.iter().all(|&v| v >= 0.0);
    let perp_err = perps.iter().fold(0.0f64, |m, v| m.max((v - cfg.perplexity).abs()));
    let e = tsne(&h.rows.view(), &cfg, Execution::Parallel).map_err(|e| e.to_string())?;
    ensure(
        e.kl_final < e.kl_post_exaggeration
            && (sum - 1.0).abs() <= P_SUM_TOL
            && asym <= P_SYMMETRY_TOL
            && nonneg
            && perp_err <= PERPLEXITY_TOL,
        format!(
            "N {}: KL initial {:.4}, post-exaggeration {:.4}, final {:.4}; |sum P - 1| {:.1e}, \
             max |P - P^T| {asym:.1e}, non-negative {nonneg}, max perplexity error {perp_err:.1e}",
            h.len(),
            e.kl_initial,
            e.kl_post_exaggeration,
            e.kl_final,
            (sum - 1.0).abs()
        ),
    )
}

const TINY_CONFIG: &str = r#"{
  "synth": {"n_simulations": 12, "n_components": 3, "points_per_component": 40, "t_fin": 8},
  "geometry": {"fit": {"genetic": {"population": 12, "generations": 10}}},
  "split": {"n_train": 8},
  "train": {"t_in": 4, "t_fin": 8, "epochs": 3, "dims": {"features": 24, "latent": 6, "decoder_hidden": 8}},
  "n_seeds": 2,
  "embed": {"tsne": {"perplexity": 5, "iterations": 300, "learning_rate": 10}}
}"#;

fn run_pipeline(dir: &Path, threads: usize) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, TINY_CONFIG).map_err(|e| e.to_string())?;
    let out = dir.join("out");
    let steps: [&[&str]; 6] = [
        &["synth"],
        &["fit"],
        &["train"],
        &["eval"],
        &["predict", "--sim", "sim_000"],
        &["embed"],
    ];
    for step in steps {
        let status = Command::new(env!("CARGO_BIN_EXE_boxseq"))
            .args(step)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--seed", "7", "--threads", &threads.to_string()])
            .env("RUST_LOG", "warn")
            .stdout(Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("`{}` failed with {status}", step.join(" ")));
        }
    }
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(&out).map_err(|e| e.to_string())? {
        let path: PathBuf = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        files.insert(name, std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    Ok(files)
}

fn c8_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for (i, threads) in [1, 4, 4].into_iter().enumerate() {
        let dir = tmp.path().join(format!("run{i}"));
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        runs.push((threads, run_pipeline(&dir, threads)?));
    }
    let (_, reference) = &runs[0];
    let mut mismatches = Vec::new();
    for (threads, files) in &runs[1..] {
        if files.keys().ne(reference.keys()) {
            mismatches.push(format!("file set differs with --threads {threads}"));
        }
        for (name, bytes) in files {
            if reference.get(name) != Some(bytes) {
                mismatches.push(format!("{name} differs with --threads {threads}"));
            }
        }
    }
    ensure(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!(
                "{} output files byte-identical across --threads 1, 4 and a rerun",
                reference.len()
            )
        } else {
            mismatches.join("; ")
        },
    )
}

fn report(n: usize, name: &str, f: impl FnOnce() -> Check) -> bool {
    let t = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let (tag, detail, ok) = match result {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("[{tag}] {n} {name}: {detail} ({:.1?})", t.elapsed());
    ok
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);

    let bench = OnceCell::new();
    let bench = || bench.get_or_init(Bench::build);
    let comparison: OnceCell<Result<Comparison, String>> = OnceCell::new();
    let comparison = || {
        comparison
            .get_or_init(|| {
                let b = bench();
                run_comparison(&b.split, &b.train_cfg, N_SEEDS, Execution::Parallel, |kind, seed| {
                    eprintln!("training {kind:?} seed {seed}")
                })
                .map_err(|e| e.to_string())
            })
            .clone()
    };

    let mut all = true;
    if wanted(1) {
        all &= report(1, "parameter counts", c1_param_counts);
    }
    if wanted(2) {
        all &= report(2, "box fitting", c2_obb);
    }
    if wanted(3) {
        all &= report(3, "warm start", || c3_warm_start(bench()));
    }
    if wanted(4) {
        all &= report(4, "gradient check", c4_gradients);
    }
    if wanted(5) {
        all &= report(5, "method ordering", || c5_ordering(&comparison()?));
    }
    if wanted(6) {
        all &= report(6, "orthogonality trend", || c6_orthogonality(&comparison()?));
    }
    if wanted(7) {
        all &= report(7, "mode separation", || c7_modes(bench(), &comparison()?));
    }
    if wanted(8) {
        all &= report(8, "determinism", c8_determinism);
    }
    if wanted(9) {
        all &= report(9, "t-SNE sanity", || c9_tsne(bench(), &comparison()?));
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
