//! File formats: point clouds as JSON Lines, boxes and tables as CSV, model
//! checkpoints as one JSON document. Floats are written in shortest
//! round-trip form and time steps are 1-based on disk.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autoenc::{CellKind, EpochLoss, ModelParams, TrainConfig};
use crate::baselines::EvalReport;
use crate::dataset::{ComponentSequence, NormalizationStats, SimulationRecord};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, CORNER_FEATURES};
use crate::synthgen::{Mode, SynthLabel};

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(path)?))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(File::open(path)?))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(path, line, e.to_string())
}

fn f(v: f64) -> String {
    format!("{v}")
}

fn parse_f64(path: &Path, line: u64, column: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("column `{column}`: `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("column `{column}`: value is not finite")));
    }
    Ok(v)
}

fn parse_t(path: &Path, line: u64, s: &str) -> Result<usize> {
    match s.trim().parse::<usize>() {
        Ok(t) if t >= 1 => Ok(t),
        _ => Err(parse_err(
            path,
            line,
            format!("column `t`: `{s}` is not a positive integer"),
        )),
    }
}

fn check_header(path: &Path, got: &csv::StringRecord, want: &[String]) -> Result<()> {
    if got.iter().ne(want.iter().map(String::as_str)) {
        return Err(parse_err(
            path,
            1,
            format!(
                "expected header `{}`, found `{}`",
                want.join(","),
                got.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------- clouds

/// One line of a cloud file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudRecord {
    pub sim_id: String,
    pub component_id: String,
    pub t: usize,
    pub points: PointCloud,
}

/// All clouds of one (simulation, component), ordered by time.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudSequence {
    pub sim_id: String,
    pub component_id: String,
    pub clouds: Vec<PointCloud>,
}

pub fn write_clouds(path: &Path, sequences: &[CloudSequence]) -> Result<()> {
    let mut w = create(path)?;
    for s in sequences {
        for (i, c) in s.clouds.iter().enumerate() {
            let rec = CloudRecord {
                sim_id: s.sim_id.clone(),
                component_id: s.component_id.clone(),
                t: i + 1,
                points: c.clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a cloud file and groups it by (simulation, component), sorted by
/// id. Every group must cover `t = 1..=t_fin` exactly once, where `t_fin` is
/// the largest step in the file.
pub fn read_clouds(path: &Path) -> Result<Vec<CloudSequence>> {
    let reader = BufReader::new(File::open(path)?);
    let mut groups: BTreeMap<(String, String), BTreeMap<usize, (u64, PointCloud)>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CloudRecord = serde_json::from_str(&line).map_err(|e| parse_err(path, line_no, e.to_string()))?;
        if rec.t == 0 {
            return Err(parse_err(path, line_no, "time steps start at 1"));
        }
        let g = groups.entry((rec.sim_id, rec.component_id)).or_default();
        if let Some((first, _)) = g.get(&rec.t) {
            return Err(parse_err(
                path,
                line_no,
                format!("duplicate time step {} (first seen on line {first})", rec.t),
            ));
        }
        g.insert(rec.t, (line_no, rec.points));
    }
    if groups.is_empty() {
        return Err(parse_err(path, 0, "file contains no clouds"));
    }
    let t_fin = groups
        .values()
        .filter_map(|g| g.keys().next_back().copied())
        .max()
        .unwrap_or(0);
    groups
        .into_iter()
        .map(|((sim, comp), steps)| {
            if let Some(t) = (1..=t_fin).find(|t| !steps.contains_key(t)) {
                return Err(Error::MissingStep {
                    sim,
                    component: comp,
                    t,
                });
            }
            Ok(CloudSequence {
                sim_id: sim,
                component_id: comp,
                clouds: steps.into_values().map(|(_, c)| c).collect(),
            })
        })
        .collect()
}

// ---------------------------------------------------------------- boxes

pub fn boxes_header() -> Vec<String> {
    let mut h = vec!["sim_id".to_string(), "component_id".to_string(), "t".to_string()];
    for c in 0..8 {
        for axis in ["x", "y", "z"] {
            h.push(format!("c{c:02}{axis}"));
        }
    }
    h
}

/// Writes the frames of every sequence, one row per time step.
pub fn write_boxes<'a>(path: &Path, sequences: impl IntoIterator<Item = &'a ComponentSequence>) -> Result<()> {
    write_boxes_from(path, 1, sequences)
}

/// Like [`write_boxes`], numbering the first row of each sequence `t_first`.
pub fn write_boxes_from<'a>(
    path: &Path,
    t_first: usize,
    sequences: impl IntoIterator<Item = &'a ComponentSequence>,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(boxes_header())?;
    for s in sequences {
        for (i, row) in s.frames.rows().into_iter().enumerate() {
            let mut rec = vec![s.sim_id.clone(), s.component_id.clone(), (t_first + i).to_string()];
            rec.extend(row.iter().map(|&v| f(v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a boxes file into unnormalized sequences sorted by
/// (simulation, component). Steps must run `1..=t_fin` without gaps.
pub fn read_boxes(path: &Path) -> Result<Vec<ComponentSequence>> {
    let mut rdr = csv_reader(path)?;
    check_header(path, rdr.headers().map_err(|e| csv_err(path, e))?, &boxes_header())?;
    let header = boxes_header();
    let mut groups: BTreeMap<(String, String), BTreeMap<usize, [f64; CORNER_FEATURES]>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let t = parse_t(path, line, &rec[2])?;
        let mut corners = [0.0; CORNER_FEATURES];
        for (j, v) in corners.iter_mut().enumerate() {
            *v = parse_f64(path, line, &header[3 + j], &rec[3 + j])?;
        }
        let g = groups.entry((rec[0].to_string(), rec[1].to_string())).or_default();
        if g.insert(t, corners).is_some() {
            return Err(parse_err(path, line, format!("duplicate time step {t}")));
        }
    }
    if groups.is_empty() {
        return Err(parse_err(path, 1, "file contains no boxes"));
    }
    let t_fin = groups
        .values()
        .filter_map(|g| g.keys().next_back().copied())
        .max()
        .unwrap_or(0);
    groups
        .into_iter()
        .map(|((sim, comp), steps)| {
            if let Some(t) = (1..=t_fin).find(|t| !steps.contains_key(t)) {
                return Err(Error::MissingStep {
                    sim,
                    component: comp,
                    t,
                });
            }
            let flat: Vec<f64> = steps.into_values().flatten().collect();
            let frames = Array2::from_shape_vec((t_fin, CORNER_FEATURES), flat).expect("t_fin × 24");
            ComponentSequence::new(sim, comp, frames)
        })
        .collect()
}

/// Groups sequences into simulation records, attaching parameters by sim id.
pub fn assemble_records(
    sequences: Vec<ComponentSequence>,
    params: &HashMap<String, Vec<f64>>,
) -> Result<Vec<SimulationRecord>> {
    let mut by_sim: BTreeMap<String, Vec<ComponentSequence>> = BTreeMap::new();
    for s in sequences {
        by_sim.entry(s.sim_id.clone()).or_default().push(s);
    }
    by_sim
        .into_iter()
        .map(|(sim_id, components)| {
            let p = params
                .get(&sim_id)
                .ok_or_else(|| Error::InvalidInput(format!("no parameters for sim `{sim_id}`")))?;
            Ok(SimulationRecord {
                sim_id,
                params: p.clone(),
                components,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- params and labels

pub fn write_params(path: &Path, rows: &[(String, Vec<f64>)]) -> Result<()> {
    let width = rows.first().map_or(0, |r| r.1.len());
    let mut w = csv_writer(path)?;
    let mut header = vec!["sim_id".to_string()];
    header.extend((0..width).map(|i| format!("p{i}")));
    w.write_record(&header)?;
    for (id, p) in rows {
        if p.len() != width {
            return Err(Error::ShapeMismatch(format!(
                "sim `{id}` has {} parameters, expected {width}",
                p.len()
            )));
        }
        let mut rec = vec![id.clone()];
        rec.extend(p.iter().map(|&v| f(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_params(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    let mut rdr = csv_reader(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some("sim_id") {
        return Err(parse_err(path, 1, "first column must be `sim_id`"));
    }
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let vals = (1..rec.len())
            .map(|j| parse_f64(path, line, &header[j], &rec[j]))
            .collect::<Result<Vec<_>>>()?;
        if out.insert(rec[0].to_string(), vals).is_some() {
            return Err(parse_err(path, line, format!("duplicate sim `{}`", &rec[0])));
        }
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &[SynthLabel]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["sim_id", "component_id", "mode"])?;
    for l in labels {
        w.write_record([l.sim_id.as_str(), l.component_id.as_str(), &l.mode.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<SynthLabel>> {
    let mut rdr = csv_reader(path)?;
    check_header(
        path,
        rdr.headers().map_err(|e| csv_err(path, e))?,
        &["sim_id".into(), "component_id".into(), "mode".into()],
    )?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            let mode: Mode = rec[2]
                .parse()
                .map_err(|_| parse_err(path, line, format!("unknown mode `{}`", &rec[2])))?;
            Ok(SynthLabel {
                sim_id: rec[0].to_string(),
                component_id: rec[1].to_string(),
                mode,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- checkpoint

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub cell: CellKind,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub shape: Vec<usize>,
    /// Row-major values.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: CheckpointConfig,
    pub stats: NormalizationStats,
    pub layers: Vec<Layer>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams<f64>, train: &TrainConfig, stats: NormalizationStats) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            config: CheckpointConfig {
                cell: params.kind,
                train: TrainConfig {
                    dims: params.dims,
                    ..train.clone()
                },
            },
            stats,
            layers: params
                .tensors()
                .into_iter()
                .map(|(name, shape, data)| Layer {
                    name: name.to_string(),
                    shape,
                    data: data.to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds the weights, checking every layer's name and shape.
    pub fn params(&self) -> Result<ModelParams<f64>> {
        let mut p = ModelParams::<f64>::zeros(self.config.train.dims, self.config.cell);
        let expected: Vec<(&str, Vec<usize>)> = p.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        if expected.len() != self.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint has {} layers, model needs {}",
                self.layers.len(),
                expected.len()
            )));
        }
        for ((dst, (name, shape)), layer) in p.tensors_mut().into_iter().zip(&expected).zip(&self.layers) {
            if layer.name != *name || layer.shape != *shape || layer.data.len() != dst.len() {
                return Err(Error::ShapeMismatch(format!(
                    "layer `{}` {:?} with {} values, expected `{name}` {shape:?}",
                    layer.name,
                    layer.shape,
                    layer.data.len()
                )));
            }
            dst.copy_from_slice(&layer.data);
        }
        if !p.is_finite() {
            return Err(Error::NonFinite("checkpoint weights".into()));
        }
        Ok(p)
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, ckpt)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| parse_err(path, e.line() as u64, e.to_string()))?;
    if ckpt.format_version != CHECKPOINT_VERSION {
        return Err(parse_err(
            path,
            1,
            format!("unsupported format_version {}", ckpt.format_version),
        ));
    }
    Ok(ckpt)
}

// ---------------------------------------------------------------- tables

pub fn write_history(path: &Path, history: &[EpochLoss]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["epoch", "train_loss", "test_loss"])?;
    for h in history {
        w.write_record([h.epoch.to_string(), f(h.train_loss), f(h.test_loss)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["method", "test_mse", "std_over_seeds"])?;
    for r in &report.rows {
        w.write_record([
            r.method.clone(),
            f(r.test_mse),
            r.std_over_seeds.map(f).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let mut rdr = csv_reader(path)?;
    check_header(
        path,
        rdr.headers().map_err(|e| csv_err(path, e))?,
        &["method".into(), "test_mse".into(), "std_over_seeds".into()],
    )?;
    let rows = rdr
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            let std = if rec[2].trim().is_empty() {
                None
            } else {
                Some(parse_f64(path, line, "std_over_seeds", &rec[2])?)
            };
            Ok(crate::baselines::ReportRow {
                method: rec[0].to_string(),
                test_mse: parse_f64(path, line, "test_mse", &rec[1])?,
                std_over_seeds: std,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { rows })
}

/// One embedded point.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub sim_id: String,
    pub component_id: String,
    pub x: f64,
    pub y: f64,
    pub cluster: usize,
    pub mode: Option<Mode>,
}

pub fn write_embedding(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["sim_id", "component_id", "x", "y", "cluster", "mode"])?;
    for r in rows {
        w.write_record([
            r.sim_id.clone(),
            r.component_id.clone(),
            f(r.x),
            f(r.y),
            r.cluster.to_string(),
            r.mode.map(|m| m.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes any header plus rows of already formatted fields.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest decimal form that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    f(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(v: f64) -> PointCloud {
        PointCloud::new(vec![Vector3::new(v, 0.1 * v, 1.0 / 3.0), Vector3::new(-v, 2.0, 1e-300)]).unwrap()
    }

    fn seqs() -> Vec<CloudSequence> {
        ["b", "a"]
            .iter()
            .flat_map(|s| {
                ["c1", "c0"].iter().map(move |c| CloudSequence {
                    sim_id: s.to_string(),
                    component_id: c.to_string(),
                    clouds: (0..3).map(|t| cloud(t as f64 + 0.7)).collect(),
                })
            })
            .collect()
    }

    #[test]
    fn clouds_round_trip_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clouds.jsonl");
        write_clouds(&p, &seqs()).unwrap();
        let back = read_clouds(&p).unwrap();
        let keys: Vec<_> = back
            .iter()
            .map(|s| (s.sim_id.as_str(), s.component_id.as_str()))
            .collect();
        assert_eq!(keys, [("a", "c0"), ("a", "c1"), ("b", "c0"), ("b", "c1")]);
        assert_eq!(back[0].clouds, seqs()[0].clouds);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.lines().next().unwrap().contains("\"t\":1"));
    }

    #[test]
    fn missing_cloud_step_names_the_gap() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clouds.jsonl");
        write_clouds(&p, &seqs()).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let kept: Vec<&str> = text
            .lines()
            .filter(|l| !(l.contains("\"sim_id\":\"a\"") && l.contains("\"c1\"") && l.contains("\"t\":2")))
            .collect();
        std::fs::write(&p, kept.join("\n")).unwrap();
        match read_clouds(&p) {
            Err(Error::MissingStep { sim, component, t }) => {
                assert_eq!((sim.as_str(), component.as_str(), t), ("a", "c1", 2));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_cloud_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clouds.jsonl");
        write_clouds(&p, &seqs()).unwrap();
        let mut lines: Vec<String> = std::fs::read_to_string(&p).unwrap().lines().map(String::from).collect();
        lines[4] = "{\"sim_id\": 3".into();
        std::fs::write(&p, lines.join("\n")).unwrap();
        match read_clouds(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }

    fn random_seq(rng: &mut ChaCha8Rng, sim: &str, comp: &str) -> ComponentSequence {
        let frames = Array2::from_shape_fn((4, CORNER_FEATURES), |_| {
            let e: i32 = rng.gen_range(-30..30);
            rng.gen_range(-1.0..1.0) * 10f64.powi(e)
        });
        ComponentSequence::new(sim, comp, frames).unwrap()
    }

    #[test]
    fn boxes_round_trip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let seqs = vec![
            random_seq(&mut rng, "s0", "k0"),
            random_seq(&mut rng, "s0", "k1"),
            random_seq(&mut rng, "s1", "k0"),
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("boxes.csv");
        write_boxes(&p, &seqs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("sim_id,component_id,t,c00x,c00y,c00z,c01x,"));
        assert!(text.lines().next().unwrap().ends_with("c07x,c07y,c07z"));
        assert!(!text.contains('\r'));
        let back = read_boxes(&p).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in seqs.iter().zip(&back) {
            assert_eq!(a.sim_id, b.sim_id);
            for (x, y) in a.frames.iter().zip(b.frames.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn boxes_errors_carry_line_numbers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seqs = vec![random_seq(&mut rng, "s0", "k0")];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("boxes.csv");
        write_boxes(&p, &seqs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3] = lines[3].replace("s0,k0,3,", "s0,k0,3,oops");
        std::fs::write(&p, lines.join("\n")).unwrap();
        match read_boxes(&p) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 4);
                assert!(msg.contains("c00x"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        let kept: Vec<&str> = text.lines().filter(|l| !l.starts_with("s0,k0,2,")).collect();
        std::fs::write(&p, kept.join("\n")).unwrap();
        assert!(matches!(read_boxes(&p), Err(Error::MissingStep { t: 2, .. })));
    }

    #[test]
    fn params_and_labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("params.csv");
        let rows = vec![
            ("s0".to_string(), vec![0.1, 1.0 / 3.0]),
            ("s1".to_string(), vec![2.0, -5e-7]),
        ];
        write_params(&p, &rows).unwrap();
        let back = read_params(&p).unwrap();
        assert_eq!(back["s1"], rows[1].1);
        let l = dir.path().join("labels.csv");
        let labels = vec![
            SynthLabel {
                sim_id: "s0".into(),
                component_id: "k0".into(),
                mode: Mode::A,
            },
            SynthLabel {
                sim_id: "s0".into(),
                component_id: "k1".into(),
                mode: Mode::B,
            },
        ];
        write_labels(&l, &labels).unwrap();
        assert_eq!(read_labels(&l).unwrap(), labels);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = crate::autoenc::ModelDims {
            features: 24,
            latent: 5,
            decoder_hidden: 7,
        };
        let params = ModelParams::<f64>::init(dims, CellKind::Lstm, &mut rng);
        let stats = NormalizationStats {
            mean: [0.1, -2.0 / 3.0, 7.0],
            std: 1.0 / 7.0,
        };
        let ckpt = Checkpoint::new(&params, &TrainConfig::default(), stats);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        write_checkpoint(&p, &ckpt).unwrap();
        let back = read_checkpoint(&p).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.params().unwrap(), params);
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["config", "format_version", "layers", "stats"]);
    }

    #[test]
    fn checkpoint_rejects_wrong_shapes() {
        let params = ModelParams::<f64>::zeros(crate::autoenc::ModelDims::default(), CellKind::Rnn);
        let mut ckpt = Checkpoint::new(&params, &TrainConfig::default(), NormalizationStats::identity());
        ckpt.layers[2].shape = vec![1, 2];
        assert!(matches!(ckpt.params(), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn report_round_trip() {
        let report = EvalReport {
            rows: vec![
                crate::baselines::ReportRow {
                    method: "nn-param".into(),
                    test_mse: 0.125,
                    std_over_seeds: None,
                },
                crate::baselines::ReportRow {
                    method: "composite-lstm".into(),
                    test_mse: 1.0 / 3.0,
                    std_over_seeds: Some(1e-5),
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("report.csv");
        write_report(&p, &report).unwrap();
        assert_eq!(read_report(&p).unwrap(), report);
    }
}
