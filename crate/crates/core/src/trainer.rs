//! Adam, an optional L-BFGS refinement, and the training loop with
//! checkpoints.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{energy_and_gradient, EnergyError, Problem};
use crate::network::{init_params, ArchSpec};
use crate::quadrature::{random_parameter_grid, QuadratureError, QuadratureSet};

/// Version of the checkpoint sidecar format.
pub const LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("non-finite {what} at step {step}")]
    NonFinite {
        what: &'static str,
        step: usize,
        last_good: Box<Checkpoint>,
        cause: Option<EnergyError>,
    },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub hyper: AdamConfig,
}

impl AdamState {
    pub fn new(n: usize, hyper: AdamConfig) -> Self {
        Self {
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            hyper,
        }
    }

    /// One bias-corrected Adam update of `theta` in place.
    pub fn step(&mut self, theta: &mut [f64], g: &[f64]) {
        assert_eq!(theta.len(), g.len(), "gradient shape");
        assert_eq!(theta.len(), self.m.len(), "state shape");
        let AdamConfig { lr, beta1, beta2, eps } = self.hyper;
        self.t += 1;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        for i in 0..theta.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            theta[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory curvature pairs for the two-loop recursion.
#[derive(Debug, Clone)]
pub struct Lbfgs {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
}

impl Lbfgs {
    pub fn new(memory: usize) -> Self {
        Self {
            memory: memory.max(1),
            pairs: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Stores `(s, y)` unless `s . y <= 0`. Returns whether it was kept.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        if dot(&s, &y) <= 0.0 {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y));
        true
    }

    /// `-H g` by the two-loop recursion; `-g` if that is not a descent direction.
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y) in self.pairs.iter().rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push((rho, a));
        }
        if let Some((s, y)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y), (rho, a)) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let d: Vec<f64> = q.into_iter().map(|v| -v).collect();
        if dot(&d, g) < 0.0 && d.iter().all(|v| v.is_finite()) {
            d
        } else {
            g.iter().map(|v| -v).collect()
        }
    }
}

/// Minimizes `f` from `x` with L-BFGS and Armijo backtracking. Returns the
/// loss after each accepted iteration.
pub fn lbfgs_minimize<E>(
    mut f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
    x: &mut Vec<f64>,
    iterations: usize,
    memory: usize,
) -> Result<Vec<f64>, E> {
    let mut mem = Lbfgs::new(memory);
    let (mut fx, mut g) = f(x)?;
    let mut history = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let d = mem.direction(&g);
        let slope = dot(&d, &g);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let (ft, gt) = f(&trial)?;
            if ft.is_finite() && ft <= fx + 1e-4 * t * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, ft, gt)) = accepted else { break };
        let s: Vec<f64> = trial.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        mem.push(s, y);
        *x = trial;
        fx = ft;
        g = gt;
        history.push(fx);
        if g.iter().all(|v| *v == 0.0) {
            break;
        }
    }
    Ok(history)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Adam(AdamConfig),
    /// Adam for the scheduled steps, then `iterations` of L-BFGS.
    AdamLbfgs {
        adam: AdamConfig,
        iterations: usize,
        memory: usize,
    },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam(AdamConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub steps: usize,
    /// Re-sample random parameter points every this many steps; 0 never.
    #[serde(default)]
    pub resample_every: usize,
    /// Snapshot `theta` every this many steps; 0 only at the end.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub optimizer: Optimizer,
}

/// Where the interior points come from.
#[derive(Debug, Clone)]
pub enum InteriorSource {
    Fixed,
    /// `n_p` uniform draws from `p_box` crossed with `spatial`, redrawn on
    /// schedule with seeds `seed, seed + 1, ...`.
    RandomParameters {
        p_box: Vec<(f64, f64)>,
        n_p: usize,
        spatial: QuadratureSet,
        seed: u64,
    },
}

impl InteriorSource {
    pub fn draw(&self, round: u64) -> Result<Option<QuadratureSet>, QuadratureError> {
        match self {
            InteriorSource::Fixed => Ok(None),
            InteriorSource::RandomParameters { p_box, n_p, spatial, seed } => {
                random_parameter_grid(p_box, *n_p, spatial, seed.wrapping_add(round)).map(Some)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Number of optimizer steps applied to `theta`.
    pub step: usize,
    /// Loss at `theta`, when known.
    pub loss: Option<f64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss before each step.
    pub losses: Vec<f64>,
    pub checkpoints: Vec<Checkpoint>,
    pub theta: Vec<f64>,
    pub seed: u64,
    pub seconds: f64,
    pub quadrature: String,
    /// Losses of the L-BFGS phase, if any.
    pub refinement: Vec<f64>,
}

/// Trains `arch` on `problem` from `init_params(arch, seed)`.
pub fn train(
    problem: &mut Problem,
    source: &InteriorSource,
    arch: &ArchSpec,
    schedule: &Schedule,
    seed: u64,
) -> Result<TrainReport, TrainError> {
    train_from(problem, source, arch, schedule, seed, init_params(arch, seed).0)
}

/// Trains from a given starting point.
pub fn train_from(
    problem: &mut Problem,
    source: &InteriorSource,
    arch: &ArchSpec,
    schedule: &Schedule,
    seed: u64,
    mut theta: Vec<f64>,
) -> Result<TrainReport, TrainError> {
    let start = Instant::now();
    let adam_cfg = match schedule.optimizer {
        Optimizer::Adam(c) => c,
        Optimizer::AdamLbfgs { adam, .. } => adam,
    };
    let mut adam = AdamState::new(theta.len(), adam_cfg);
    let mut losses = Vec::with_capacity(schedule.steps);
    let mut checkpoints = Vec::new();
    let mut last_good = Checkpoint {
        step: 0,
        loss: None,
        theta: theta.clone(),
    };
    let mut round = 0;
    if let Some(set) = source.draw(round)? {
        problem.set_interior(set)?;
    }
    for step in 0..schedule.steps {
        if schedule.resample_every > 0 && step > 0 && step % schedule.resample_every == 0 {
            round += 1;
            if let Some(set) = source.draw(round)? {
                problem.set_interior(set)?;
            }
        }
        let (loss, grad) = match energy_and_gradient(problem, arch, &theta) {
            Ok(v) => v,
            Err(e @ (EnergyError::NonFinite { .. } | EnergyError::NonFiniteGradient { .. })) => {
                return Err(TrainError::NonFinite {
                    what: "loss",
                    step,
                    last_good: Box::new(last_good),
                    cause: Some(e),
                })
            }
            Err(e) => return Err(e.into()),
        };
        losses.push(loss);
        let current = Checkpoint {
            step,
            loss: Some(loss),
            theta: theta.clone(),
        };
        if schedule.checkpoint_every > 0 && step % schedule.checkpoint_every == 0 {
            checkpoints.push(current.clone());
        }
        last_good = current;
        adam.step(&mut theta, &grad);
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFinite {
                what: "parameter",
                step,
                last_good: Box::new(last_good),
                cause: None,
            });
        }
    }
    let mut refinement = Vec::new();
    if let Optimizer::AdamLbfgs { iterations, memory, .. } = schedule.optimizer {
        refinement = lbfgs_minimize(|t| energy_and_gradient(problem, arch, t), &mut theta, iterations, memory)?;
    }
    let final_loss = if schedule.steps > 0 || !refinement.is_empty() {
        energy_and_gradient(problem, arch, &theta).ok().map(|(l, _)| l)
    } else {
        None
    };
    checkpoints.push(Checkpoint {
        step: schedule.steps + refinement.len(),
        loss: final_loss,
        theta: theta.clone(),
    });
    Ok(TrainReport {
        losses,
        checkpoints,
        theta,
        seed,
        seconds: start.elapsed().as_secs_f64(),
        quadrature: describe(problem, source),
        refinement,
    })
}

fn describe(problem: &Problem, source: &InteriorSource) -> String {
    let base = format!(
        "{} interior points in dimension {}, weight {:e}",
        problem.interior.len(),
        problem.interior.dim,
        problem.interior.weight
    );
    let base = match &problem.boundary {
        Some(b) => format!("{base}, {} boundary points", b.len()),
        None => base,
    };
    match source {
        InteriorSource::Fixed => base,
        InteriorSource::RandomParameters { n_p, seed, .. } => {
            format!("{base}, {n_p} parameter draws from seed {seed}")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub layout_version: u32,
    pub arch: ArchSpec,
    pub step: usize,
    pub param_count: usize,
    pub loss: Option<f64>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `<base>.bin` (little-endian f64) and `<base>.json`.
pub fn save_checkpoint(base: &Path, arch: &ArchSpec, ck: &Checkpoint) -> Result<(), TrainError> {
    let bin = base.with_extension("bin");
    let json = base.with_extension("json");
    let bytes: Vec<u8> = ck.theta.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&bin, bytes).map_err(io_err(&bin))?;
    let meta = CheckpointMeta {
        layout_version: LAYOUT_VERSION,
        arch: arch.clone(),
        step: ck.step,
        param_count: ck.theta.len(),
        loss: ck.loss,
    };
    let text = serde_json::to_string_pretty(&meta).expect("checkpoint metadata serializes");
    fs::write(&json, text).map_err(io_err(&json))
}

pub fn load_checkpoint(base: &Path) -> Result<(CheckpointMeta, Checkpoint), TrainError> {
    let bin = base.with_extension("bin");
    let json = base.with_extension("json");
    let bad = |path: &Path, reason: String| TrainError::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(&json).map_err(io_err(&json))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| bad(&json, e.to_string()))?;
    if meta.layout_version != LAYOUT_VERSION {
        return Err(bad(&json, format!("unsupported layout version {}", meta.layout_version)));
    }
    let bytes = fs::read(&bin).map_err(io_err(&bin))?;
    if bytes.len() != 8 * meta.param_count || meta.arch.param_count() != meta.param_count {
        return Err(bad(
            &bin,
            format!("{} bytes for {} parameters of {:?}", bytes.len(), meta.param_count, meta.arch.hidden_widths),
        ));
    }
    let theta = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let ck = Checkpoint {
        step: meta.step,
        loss: meta.loss,
        theta,
    };
    Ok((meta, ck))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::energy::{ProblemSpec, Variant};
    use crate::network::LiftSpec;
    use crate::quadrature::{tensor_grid, Axis};

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut s = AdamState::new(3, AdamConfig::default());
        let mut th = vec![0.5, -1.0, 2.0];
        s.step(&mut th, &[0.0; 3]);
        assert_eq!(th, vec![0.5, -1.0, 2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_first_step() {
        let mut s = AdamState::new(1, AdamConfig::default());
        let mut th = vec![0.0];
        s.step(&mut th, &[1.0]);
        assert!((th[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn adam_matches_recursion() {
        let gs = [0.3, -1.2, 0.7, 0.0, 2.5, -0.1, 0.05, 1.0, -3.0, 0.4];
        let mut s = AdamState::new(1, AdamConfig::default());
        let mut th = vec![0.25];
        // Written out independently of `AdamState::step`.
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.25f64);
        for (k, g) in gs.iter().enumerate() {
            s.step(&mut th, &[*g]);
            let t = (k + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            x -= 1e-3 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            assert!((th[0] - x).abs() <= 1e-12);
        }
    }

    #[test]
    fn lbfgs_basics() {
        let mem = Lbfgs::new(5);
        assert_eq!(mem.direction(&[1.0, -2.0]), vec![-1.0, 2.0]);
        let mut mem = Lbfgs::new(5);
        assert!(!mem.push(vec![1.0, 0.0], vec![-1.0, 0.0]));
        assert!(mem.is_empty());
        let quad = |x: &[f64]| -> Result<(f64, Vec<f64>), ()> { Ok((0.5 * dot(x, x), x.to_vec())) };
        for start in [vec![3.0, -4.0, 1.0], vec![-100.0, 0.1, 7.0]] {
            let mut x = start;
            let h = lbfgs_minimize(quad, &mut x, 5, 5).unwrap();
            assert!(h.len() <= 5);
            assert!(dot(&x, &x).sqrt() < 1e-12, "{x:?}");
        }
    }

    fn small_problem() -> (Problem, ArchSpec) {
        let spec = ProblemSpec::new(Variant::FixedP { p: 2.0 }, "1", vec![], 1).unwrap();
        let quad = tensor_grid(&[Axis::new(-1.0, 1.0, 200)]).unwrap();
        let arch = ArchSpec::new(1, vec![8, 8], Activation::S2Relu).with_lift(LiftSpec::Product1d { a: -1.0, b: 1.0 });
        (Problem::new(spec, quad, None).unwrap(), arch)
    }

    #[test]
    fn zero_steps_returns_init() {
        let (mut problem, arch) = small_problem();
        let sched = Schedule {
            steps: 0,
            resample_every: 0,
            checkpoint_every: 10,
            optimizer: Optimizer::default(),
        };
        let r = train(&mut problem, &InteriorSource::Fixed, &arch, &sched, 4).unwrap();
        assert!(r.losses.is_empty());
        assert_eq!(r.theta, init_params(&arch, 4).0);
    }

    #[test]
    fn training_is_deterministic_and_descends() {
        let (mut problem, arch) = small_problem();
        let sched = Schedule {
            steps: 300,
            resample_every: 0,
            checkpoint_every: 100,
            optimizer: Optimizer::Adam(AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            }),
        };
        let a = train(&mut problem, &InteriorSource::Fixed, &arch, &sched, 7).unwrap();
        let b = train(&mut problem, &InteriorSource::Fixed, &arch, &sched, 7).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.losses.len(), 300);
        assert_eq!(a.checkpoints.len(), 4);
        assert!(a.losses[299] < a.losses[0]);
        assert!(a.losses[299] > -1.0 / 3.0 - 1e-3);
    }

    #[test]
    fn lbfgs_refinement_lowers_loss() {
        let (mut problem, arch) = small_problem();
        let sched = Schedule {
            steps: 50,
            resample_every: 0,
            checkpoint_every: 0,
            optimizer: Optimizer::AdamLbfgs {
                adam: AdamConfig::default(),
                iterations: 30,
                memory: 10,
            },
        };
        let r = train(&mut problem, &InteriorSource::Fixed, &arch, &sched, 2).unwrap();
        assert!(!r.refinement.is_empty());
        assert!(*r.refinement.last().unwrap() < r.losses[49]);
    }

    #[test]
    fn non_finite_loss_keeps_last_good() {
        let spec = ProblemSpec::new(Variant::FixedP { p: 2.0 }, "1/x", vec![], 1).unwrap();
        let quad = QuadratureSet::from_points(1, vec![-0.5, 0.0, 0.5], 2.0, crate::quadrature::SetKind::Interior).unwrap();
        let mut problem = Problem::new(spec, quad, None).unwrap();
        let arch = ArchSpec::new(1, vec![4], Activation::GeluApprox).with_lift(LiftSpec::Product1d { a: -1.0, b: 1.0 });
        let sched = Schedule {
            steps: 5,
            resample_every: 0,
            checkpoint_every: 0,
            optimizer: Optimizer::default(),
        };
        match train(&mut problem, &InteriorSource::Fixed, &arch, &sched, 1) {
            Err(TrainError::NonFinite { step, last_good, .. }) => {
                assert_eq!(step, 0);
                assert_eq!(last_good.theta, init_params(&arch, 1).0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resampling_changes_points() {
        let spec = ProblemSpec::new(
            Variant::VariableRhs { p: 2.0 },
            "p*x",
            vec![(0.0, 1.0)],
            1,
        )
        .unwrap();
        let spatial = tensor_grid(&[Axis::new(-1.0, 1.0, 10)]).unwrap();
        let source = InteriorSource::RandomParameters {
            p_box: vec![(0.0, 1.0)],
            n_p: 3,
            spatial,
            seed: 5,
        };
        let a = source.draw(0).unwrap().unwrap();
        let b = source.draw(1).unwrap().unwrap();
        assert_ne!(a.points, b.points);
        let mut problem = Problem::new(spec, a, None).unwrap();
        let arch = ArchSpec::new(2, vec![4], Activation::GeluApprox);
        let sched = Schedule {
            steps: 6,
            resample_every: 2,
            checkpoint_every: 0,
            optimizer: Optimizer::default(),
        };
        train(&mut problem, &source, &arch, &sched, 3).unwrap();
        assert_eq!(problem.interior.points, source.draw(2).unwrap().unwrap().points);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let arch = ArchSpec::new(2, vec![5, 3], Activation::S2Relu).with_fourier(4, 2.0);
        let ck = Checkpoint {
            step: 12,
            loss: Some(-0.25),
            theta: init_params(&arch, 9).0,
        };
        let base = dir.path().join("ck_12");
        save_checkpoint(&base, &arch, &ck).unwrap();
        let (meta, back) = load_checkpoint(&base).unwrap();
        assert_eq!(meta.arch, arch);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.theta), bits(&ck.theta));
        fs::write(base.with_extension("bin"), [0u8; 5]).unwrap();
        assert!(matches!(load_checkpoint(&base), Err(TrainError::Checkpoint { .. })));
    }
}
