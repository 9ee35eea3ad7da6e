use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use boxseq::autoenc::{predict_records_at, train_at, ModelParams};
use boxseq::baselines::{run_comparison, Comparison, COMPOSITE_LSTM, COMPOSITE_RNN};
use boxseq::dataset::{denormalize, normalize_record, split, ComponentSequence, SimulationRecord, SplitDataset};
use boxseq::embed::{component_ids, extract_hidden, kmeans2, mode_purity, tsne, Embedding2D, HiddenRepSet};
use boxseq::geometry::{fit_sequences, PointCloud};
use boxseq::io::{self, CloudSequence, EmbeddingRow};
use boxseq::par::Execution;
use boxseq::synthgen::{self, SynthLabel};
use log::info;

use crate::config::PipelineConfig;

fn exec() -> Execution {
    Execution::Parallel
}

pub fn cmd_synth(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let (raw, labels) = synthgen::generate_with(&cfg.synth, exec())?;
    let clouds: Vec<CloudSequence> = raw
        .iter()
        .flat_map(|s| {
            s.components.iter().map(|c| CloudSequence {
                sim_id: s.sim_id.clone(),
                component_id: c.component_id.clone(),
                clouds: c.clouds.clone(),
            })
        })
        .collect();
    let params: Vec<(String, Vec<f64>)> = raw.iter().map(|s| (s.sim_id.clone(), s.params.clone())).collect();
    io::write_clouds(&cfg.clouds_path(), &clouds)?;
    io::write_labels(&cfg.labels_path(), &labels)?;
    io::write_params(&cfg.params_path(), &params)?;
    info!(
        "generated {} simulations × {} components",
        raw.len(),
        cfg.synth.n_components
    );
    Ok(vec![cfg.clouds_path(), cfg.labels_path(), cfg.params_path()])
}

pub fn cmd_fit(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let clouds = io::read_clouds(&cfg.clouds_path())?;
    let seqs: Vec<Vec<PointCloud>> = clouds.iter().map(|c| c.clouds.clone()).collect();
    info!("fitting {} sequences", seqs.len());
    let fits = fit_sequences(&seqs, &cfg.geometry.fit, cfg.geometry.start_mode(), exec())?;
    let boxes = clouds
        .iter()
        .zip(&fits)
        .map(|(c, f)| ComponentSequence::from_boxes(&c.sim_id, &c.component_id, &f.boxes))
        .collect::<boxseq::Result<Vec<_>>>()?;
    io::write_boxes(&cfg.boxes_path(), &boxes)?;
    let evals: Vec<Vec<String>> = clouds
        .iter()
        .zip(&fits)
        .map(|(c, f)| vec![c.sim_id.clone(), c.component_id.clone(), f.total_evals().to_string()])
        .collect();
    let evals_path = cfg.out("fit_evals.csv");
    io::write_table(&evals_path, &["sim_id", "component_id", "evals"], &evals)?;
    Ok(vec![cfg.boxes_path(), evals_path])
}

/// Boxes joined with their simulation parameters.
pub fn load_records(cfg: &PipelineConfig) -> Result<Vec<SimulationRecord>> {
    let boxes = io::read_boxes(&cfg.boxes_path()).context("reading boxes (run `fit` first)")?;
    let params = io::read_params(&cfg.params_path())?;
    let records = io::assemble_records(boxes, &params)?;
    let t_fin = boxseq::dataset::check_records(&records)?;
    if t_fin != cfg.train.t_fin {
        bail!("boxes have {t_fin} steps but train.t_fin is {}", cfg.train.t_fin);
    }
    Ok(records)
}

pub fn load_split(cfg: &PipelineConfig) -> Result<SplitDataset> {
    let records = load_records(cfg)?;
    Ok(split(&records, cfg.split.n_train, cfg.train.t_in, cfg.split.seed)?)
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let sp = load_split(cfg)?;
    info!(
        "training {} on {} simulations ({} held out)",
        cfg.cell.name(),
        sp.train.len(),
        sp.test.len()
    );
    let out = train_at(&sp, &cfg.train, cfg.cell, exec(), |e| {
        info!(
            "epoch {:4}  train {:.6e}  test {:.6e}",
            e.epoch, e.train_loss, e.test_loss
        );
    })?;
    let ckpt = io::Checkpoint::new(&out.params, &cfg.train, sp.stats);
    io::write_checkpoint(&cfg.checkpoint_path(), &ckpt)?;
    let hist = cfg.out("history.csv");
    io::write_history(&hist, &out.history)?;
    Ok(vec![cfg.checkpoint_path(), hist])
}

pub fn comparison(cfg: &PipelineConfig) -> Result<Comparison> {
    let sp = load_split(cfg)?;
    Ok(run_comparison(&sp, &cfg.train, cfg.n_seeds, exec(), |kind, seed| {
        info!("training {} with seed {seed}", kind.name());
    })?)
}

pub fn cmd_eval(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let cmp = comparison(cfg)?;
    let report = cfg.out("report.csv");
    io::write_report(&report, &cmp.report)?;
    let runs: Vec<Vec<String>> = cmp
        .runs
        .iter()
        .map(|r| {
            let name = match r.kind {
                boxseq::autoenc::CellKind::Lstm => COMPOSITE_LSTM,
                boxseq::autoenc::CellKind::Rnn => COMPOSITE_RNN,
            };
            vec![
                name.to_string(),
                r.seed.to_string(),
                io::format_f64(r.test_mse),
                io::format_f64(r.defect_trained),
                io::format_f64(r.defect_init),
            ]
        })
        .collect();
    let runs_path = cfg.out("eval_runs.csv");
    io::write_table(
        &runs_path,
        &["method", "seed", "test_mse", "defect_trained", "defect_init"],
        &runs,
    )?;
    println!("{:<16} {:>14} {:>14}", "method", "test_mse", "std");
    for r in &cmp.report.rows {
        let std = r.std_over_seeds.map_or("-".to_string(), |s| format!("{s:.4e}"));
        println!("{:<16} {:>14.4e} {:>14}", r.method, r.test_mse, std);
    }
    Ok(vec![report, runs_path])
}

fn load_model(cfg: &PipelineConfig) -> Result<(io::Checkpoint, ModelParams<f64>)> {
    let ckpt = io::read_checkpoint(&cfg.checkpoint_path()).context("reading checkpoint (run `train` first)")?;
    let params = ckpt.params()?;
    Ok((ckpt, params))
}

/// Denormalized predicted frames for one simulation.
pub fn predict_sim(cfg: &PipelineConfig, sim_id: &str) -> Result<Vec<ComponentSequence>> {
    let (ckpt, params) = load_model(cfg)?;
    let t_in = ckpt.config.train.t_in;
    let records = load_records(cfg)?;
    let rec = records
        .iter()
        .find(|r| r.sim_id == sim_id)
        .with_context(|| format!("unknown simulation `{sim_id}`"))?;
    let norm = normalize_record(rec, &ckpt.stats);
    let fwd = predict_records_at(
        &params,
        std::slice::from_ref(&norm),
        t_in,
        ckpt.config.train.precision,
        exec(),
    )?;
    rec.components
        .iter()
        .zip(&fwd[0])
        .map(|(c, f)| {
            let mut seq = ComponentSequence::new(&c.sim_id, &c.component_id, f.pred.clone())?;
            seq.normalized = true;
            Ok(denormalize(&seq, &ckpt.stats))
        })
        .collect()
}

pub fn cmd_predict(cfg: &PipelineConfig, sim_id: &str) -> Result<Vec<PathBuf>> {
    let seqs = predict_sim(cfg, sim_id)?;
    let t_in = io::read_checkpoint(&cfg.checkpoint_path())?.config.train.t_in;
    let path = cfg.out(&format!("predict_{sim_id}.csv"));
    io::write_boxes_from(&path, t_in + 1, &seqs)?;
    Ok(vec![path])
}

/// Result of embedding one set of hidden representations.
#[derive(Debug, Clone)]
pub struct EmbedOutcome {
    pub hidden: HiddenRepSet,
    pub embedding: Embedding2D,
    /// Cluster of each row from a 2-means run per component.
    pub clusters: Vec<usize>,
    /// `(component_id, rows, purity)` when labels are available.
    pub purity: Vec<(String, usize, Option<f64>)>,
}

pub fn embed(cfg: &PipelineConfig, components: Option<&[String]>, rigid: bool) -> Result<EmbedOutcome> {
    let (ckpt, params) = load_model(cfg)?;
    let records = load_records(cfg)?;
    let labels: Option<Vec<SynthLabel>> = if cfg.labels_path().exists() {
        Some(io::read_labels(&cfg.labels_path())?)
    } else {
        None
    };
    let hidden = extract_hidden(
        &params,
        ckpt.config.train.precision,
        &records,
        &ckpt.stats,
        components,
        rigid,
        exec(),
    )?;
    let embedding = tsne(&hidden.rows.view(), &cfg.embed.tsne, exec())?;
    let modes = labels.as_deref().map(|l| hidden.modes(l)).transpose()?;
    let ids: Vec<String> = match components {
        Some(c) => c.to_vec(),
        None => component_ids(&records),
    };
    let mut clusters = vec![0; hidden.len()];
    let mut purity = Vec::new();
    for id in &ids {
        let (idx, rows) = hidden.component_rows(id);
        let km = kmeans2(&rows.view(), cfg.embed.kmeans_seed)?;
        for (&i, &k) in idx.iter().zip(&km.assignments) {
            clusters[i] = k;
        }
        let p = match &modes {
            Some(m) => {
                let sub: Vec<_> = idx.iter().map(|&i| m[i]).collect();
                Some(mode_purity(&km.assignments, &sub)?)
            }
            None => None,
        };
        purity.push((id.clone(), idx.len(), p));
    }
    Ok(EmbedOutcome {
        hidden,
        embedding,
        clusters,
        purity,
    })
}

pub fn cmd_embed(cfg: &PipelineConfig, components: Option<&[String]>, rigid: bool) -> Result<Vec<PathBuf>> {
    let out = embed(cfg, components, rigid)?;
    let labels: HashMap<(String, String), boxseq::synthgen::Mode> = if cfg.labels_path().exists() {
        io::read_labels(&cfg.labels_path())?
            .into_iter()
            .map(|l| ((l.sim_id, l.component_id), l.mode))
            .collect()
    } else {
        HashMap::new()
    };
    let rows: Vec<EmbeddingRow> = out
        .hidden
        .keys
        .iter()
        .enumerate()
        .map(|(i, (s, c))| EmbeddingRow {
            sim_id: s.clone(),
            component_id: c.clone(),
            x: out.embedding.coords[[i, 0]],
            y: out.embedding.coords[[i, 1]],
            cluster: out.clusters[i],
            mode: labels.get(&(s.clone(), c.clone())).copied(),
        })
        .collect();
    let emb_path = cfg.out("embedding.csv");
    io::write_embedding(&emb_path, &rows)?;
    let purity_rows: Vec<Vec<String>> = out
        .purity
        .iter()
        .map(|(id, n, p)| vec![id.clone(), n.to_string(), p.map(io::format_f64).unwrap_or_default()])
        .collect();
    let purity_path = cfg.out("purity.csv");
    io::write_table(&purity_path, &["component_id", "rows", "purity"], &purity_rows)?;
    let kl_path = cfg.out("tsne_kl.csv");
    io::write_table(
        &kl_path,
        &["kl_initial", "kl_post_exaggeration", "kl_final"],
        &[vec![
            io::format_f64(out.embedding.kl_initial),
            io::format_f64(out.embedding.kl_post_exaggeration),
            io::format_f64(out.embedding.kl_final),
        ]],
    )?;
    for (id, n, p) in &out.purity {
        match p {
            Some(p) => println!("{id}: {n} rows, purity {p:.3}"),
            None => println!("{id}: {n} rows"),
        }
    }
    println!(
        "t-SNE KL {:.4} -> {:.4}",
        out.embedding.kl_post_exaggeration, out.embedding.kl_final
    );
    Ok(vec![emb_path, purity_path, kl_path])
}
