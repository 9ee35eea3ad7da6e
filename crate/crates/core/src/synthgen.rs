//! Synthetic crash-like benchmark: beam-shaped components sampled as point
//! clouds over time, deforming in one of two plastic modes chosen by a
//! per-component thickness parameter, under smooth rigid motion and noise.
//!
//! Mode A is a progressive axial crush (the long axis shortens, the section
//! bulges slightly and folds). Mode B is a lateral buckle (the beam shears
//! and bends sideways while its height flattens). Every simulation also has
//! an unobserved impact-speed factor that scales both the deformation rate
//! and the rigid motion, so the early time steps carry information the input
//! parameters do not.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Rotation3};
use crate::par::{self, Execution};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_simulations: usize,
    pub n_components: usize,
    pub points_per_component: usize,
    pub t_fin: usize,
    /// Components thinner than this crush axially (mode A), others buckle.
    pub mode_threshold: f64,
    pub thickness_range: [f64; 2],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_simulations: 196,
            n_components: 8,
            points_per_component: 120,
            t_fin: 31,
            mode_threshold: 1.0,
            thickness_range: [0.5, 1.5],
            noise_sigma: 0.002,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_simulations == 0 || self.n_components == 0 {
            return Err(Error::Config("synth counts must be at least 1".into()));
        }
        if self.points_per_component < 8 {
            return Err(Error::Config("points_per_component must be at least 8".into()));
        }
        if self.t_fin < 2 {
            return Err(Error::Config("t_fin must be at least 2".into()));
        }
        let [lo, hi] = self.thickness_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config("thickness_range must be an increasing pair".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    A,
    B,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::A => "A",
            Mode::B => "B",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Mode::A),
            "B" => Ok(Mode::B),
            _ => Err(Error::InvalidInput(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthLabel {
    pub sim_id: String,
    pub component_id: String,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawComponent {
    pub component_id: String,
    /// One cloud per time step.
    pub clouds: Vec<PointCloud>,
    /// Noise-free extents of the deformed beam in its own frame, per step.
    pub local_extents: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSimulation {
    pub sim_id: String,
    pub params: Vec<f64>,
    pub components: Vec<RawComponent>,
}

pub fn sim_id(i: usize) -> String {
    format!("sim_{i:03}")
}

pub fn component_id(k: usize) -> String {
    format!("comp_{k:02}")
}

/// Fixed per-component geometry shared by every simulation.
#[derive(Debug, Clone)]
struct Part {
    dims: Vector3<f64>,
    rotation: Rotation3,
    position: Vector3<f64>,
    tilt_axis: Vector3<f64>,
    reference: Vec<Vector3<f64>>,
}

fn make_part(cfg: &SynthConfig, k: usize) -> Part {
    let mut rng = seed::stream(cfg.seed, k as u64);
    let dims = Vector3::new(
        rng.gen_range(1.2..2.4),
        rng.gen_range(0.25..0.45),
        rng.gen_range(0.12..0.22),
    );
    let rotation = Rotation3::random(&mut rng);
    let position = Vector3::new(
        rng.gen_range(-3.0..3.0),
        rng.gen_range(-3.0..3.0),
        rng.gen_range(-1.0..1.0),
    );
    let tilt_axis = Rotation3::random(&mut rng).matrix().column(0).into_owned();

    // the 8 corners plus uniform samples on the surface, in units of dims
    let mut reference = Vec::with_capacity(cfg.points_per_component);
    for b in 0..8 {
        let s = |bit: usize| if b >> bit & 1 == 1 { 0.5 } else { -0.5 };
        reference.push(Vector3::new(s(2), s(1), s(0)));
    }
    let areas = [dims.y * dims.z, dims.x * dims.z, dims.x * dims.y];
    let total: f64 = areas.iter().sum();
    while reference.len() < cfg.points_per_component {
        let pick = rng.gen::<f64>() * total;
        let axis = if pick < areas[0] {
            0
        } else if pick < areas[0] + areas[1] {
            1
        } else {
            2
        };
        let mut u = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        u[axis] = if rng.gen::<bool>() { 0.5 } else { -0.5 };
        reference.push(u);
    }
    Part {
        dims,
        rotation,
        position,
        tilt_axis,
        reference,
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Deformation state of one component in one simulation.
#[derive(Debug, Clone, Copy)]
struct Loading {
    mode: Mode,
    /// Final deformation magnitude, in [0.25, 0.45] for crush and [0.15, 0.3]
    /// for buckling, scaled by the impact speed.
    severity: f64,
    speed: f64,
    fold_phase: f64,
}

/// Maps a reference point (in units of the beam dims, each coordinate in
/// [-1/2, 1/2]) to its deformed position in the beam frame.
fn deform(u: &Vector3<f64>, dims: &Vector3<f64>, load: &Loading, progress: f64) -> Vector3<f64> {
    let a = load.severity * progress;
    match load.mode {
        Mode::A => {
            let bulge = 1.0 + 0.15 * a;
            let fold = 0.04 * a * dims.x * (std::f64::consts::TAU * 2.0 * u.x + load.fold_phase).sin();
            Vector3::new(
                u.x * dims.x * (1.0 - a),
                u.y * dims.y * bulge + fold,
                u.z * dims.z * bulge,
            )
        }
        Mode::B => {
            let lateral = a * dims.x * (0.3 * u.x + 0.5 * (1.0 - 4.0 * u.x * u.x));
            Vector3::new(
                u.x * dims.x * (1.0 - 0.05 * a),
                u.y * dims.y + lateral,
                u.z * dims.z * (1.0 - 0.5 * a),
            )
        }
    }
}

fn progress(t: usize, t_fin: usize, speed: f64) -> f64 {
    let s = t as f64 / (t_fin - 1) as f64;
    smoothstep(s * speed)
}

fn generate_one(cfg: &SynthConfig, parts: &[Part], i: usize) -> (RawSimulation, Vec<SynthLabel>) {
    let mut rng = seed::stream(cfg.seed, 1_000_000 + i as u64);
    let [lo, hi] = cfg.thickness_range;
    let thr = cfg.mode_threshold;
    let speed = rng.gen_range(0.85..1.15);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("sigma is finite and non-negative");
    let sid = sim_id(i);

    let mut params = Vec::with_capacity(parts.len());
    let mut comps = Vec::with_capacity(parts.len());
    let mut labels = Vec::with_capacity(parts.len());
    for (k, part) in parts.iter().enumerate() {
        let thickness = rng.gen_range(lo..hi);
        params.push(thickness);
        let (mode, severity) = if thickness < thr {
            let rel = ((thr - thickness) / (thr - lo).max(1e-12)).clamp(0.0, 1.0);
            (Mode::A, 0.25 + 0.2 * rel)
        } else {
            let rel = ((thickness - thr) / (hi - thr).max(1e-12)).clamp(0.0, 1.0);
            (Mode::B, 0.15 + 0.15 * rel)
        };
        let load = Loading {
            mode,
            severity: severity * speed,
            speed,
            fold_phase: rng.gen_range(0.0..std::f64::consts::TAU),
        };
        let tilt_jitter = Vector3::new(
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
        );
        let tilt_axis = (part.tilt_axis + tilt_jitter).normalize();
        let drift = Vector3::new(-0.8, rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));

        let mut clouds = Vec::with_capacity(cfg.t_fin);
        let mut local_extents = Vec::with_capacity(cfg.t_fin);
        for t in 0..cfg.t_fin {
            let p = progress(t, cfg.t_fin, load.speed);
            let s = t as f64 / (cfg.t_fin - 1) as f64;
            let tilt = Rotation3::from_axis_angle(&(tilt_axis * 0.15 * speed * s * s));
            let pose = tilt.compose(&part.rotation);
            let shift = part.position + drift * speed * s.powf(1.5);
            let mut lo_b = Vector3::repeat(f64::INFINITY);
            let mut hi_b = Vector3::repeat(f64::NEG_INFINITY);
            let mut pts = Vec::with_capacity(part.reference.len());
            for u in &part.reference {
                let local = deform(u, &part.dims, &load, p);
                lo_b = lo_b.inf(&local);
                hi_b = hi_b.sup(&local);
                let mut w = pose.matrix() * local + shift;
                if cfg.noise_sigma > 0.0 {
                    for c in w.iter_mut() {
                        *c += noise.sample(&mut rng);
                    }
                }
                pts.push(w);
            }
            local_extents.push(hi_b - lo_b);
            clouds.push(PointCloud::new(pts).expect("generated points are finite"));
        }
        comps.push(RawComponent {
            component_id: component_id(k),
            clouds,
            local_extents,
        });
        labels.push(SynthLabel {
            sim_id: sid.clone(),
            component_id: component_id(k),
            mode,
        });
    }
    (
        RawSimulation {
            sim_id: sid,
            params,
            components: comps,
        },
        labels,
    )
}

/// Generates the benchmark. Each simulation draws from its own seeded
/// stream, so the output is identical in sequential and parallel runs.
pub fn generate(cfg: &SynthConfig) -> Result<(Vec<RawSimulation>, Vec<SynthLabel>)> {
    generate_with(cfg, Execution::default())
}

pub fn generate_with(cfg: &SynthConfig, exec: Execution) -> Result<(Vec<RawSimulation>, Vec<SynthLabel>)> {
    cfg.validate()?;
    let parts: Vec<Part> = (0..cfg.n_components).map(|k| make_part(cfg, k)).collect();
    let out = par::map_range(exec, cfg.n_simulations, |i| generate_one(cfg, &parts, i));
    let mut sims = Vec::with_capacity(out.len());
    let mut labels = Vec::with_capacity(out.len() * cfg.n_components);
    for (s, l) in out {
        sims.push(s);
        labels.extend(l);
    }
    Ok((sims, labels))
}

/// Configured undeformed beam dimensions per component.
pub fn beam_dims(cfg: &SynthConfig) -> Vec<Vector3<f64>> {
    (0..cfg.n_components).map(|k| make_part(cfg, k).dims).collect()
}
