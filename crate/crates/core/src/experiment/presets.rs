//! Built-in configurations: full-scale studies and reduced desk-scale runs.

use std::f64::consts::PI;

use super::{
    config_err, EvalGrid, EvaluationConfig, ExperimentError, FdOracleConfig, Kind, LemmasConfig, PenaltyRateConfig,
    QuadratureConfig, ReferenceConfig, RunConfig, SandwichConfig, Seeds, SliceConfig, SpatialGrid, TrainingConfig,
};
use crate::activation::Activation;
use crate::energy::{ProblemSpec, Variant};
use crate::expr::Expr;
use crate::network::{ArchSpec, LiftSpec};
use crate::quadrature::Axis;
use crate::reference::Family;
use crate::trainer::{Optimizer, Schedule};

pub const PRESET_NAMES: &[&str] = &[
    "vrhs",
    "vrhs_desk",
    "vexp",
    "vexp_desk",
    "vdom",
    "vdom_desk",
    "mixed7d",
    "mixed7d_smoke",
    "sandwich",
    "lemmas",
    "penalty_rate",
    "fd_oracle",
];

const SEEDS: Seeds = Seeds { init: 7, quadrature: 11 };

fn unit_lift() -> LiftSpec {
    LiftSpec::Product1d { a: -1.0, b: 1.0 }
}

fn schedule(steps: usize, checkpoint_every: usize) -> Schedule {
    Schedule {
        steps,
        resample_every: 0,
        checkpoint_every,
        optimizer: Optimizer::default(),
    }
}

fn slices(values: &[f64]) -> Vec<Vec<f64>> {
    values.iter().map(|&v| vec![v]).collect()
}

fn training(kind: Kind, name: &str, training: TrainingConfig) -> RunConfig {
    RunConfig {
        kind,
        name: Some(name.into()),
        seeds: SEEDS,
        output: None,
        training: Some(training),
        sandwich: None,
        lemmas: None,
        penalty_rate: None,
        fd_oracle: None,
    }
}

fn study(kind: Kind) -> RunConfig {
    RunConfig {
        kind,
        name: Some(kind.name().into()),
        seeds: SEEDS,
        output: None,
        training: None,
        sandwich: None,
        lemmas: None,
        penalty_rate: None,
        fd_oracle: None,
    }
}

fn vrhs(desk: bool) -> Result<RunConfig, ExperimentError> {
    let (p_box, n_p, n_x, steps) = if desk { ((1.0, 3.0), 50, 500, 5000) } else { ((0.0, 6.0), 100, 1000, 20000) };
    let problem = ProblemSpec::new(Variant::VariableRhs { p: 2.0 }, "p^2*sin(p*pi*x)", vec![p_box], 1).map_err(config_err)?;
    let arch = ArchSpec::new(2, vec![16; 4], Activation::GeluApprox)
        .with_fourier(16, 1.0)
        .with_lift(unit_lift());
    let plot = if desk { slices(&[1.5, 2.0, 2.5]) } else { slices(&[2.0, 3.0, 4.0, 5.0]) };
    let name = if desk { "vrhs_desk" } else { "vrhs" };
    Ok(training(
        Kind::Vrhs,
        name,
        TrainingConfig {
            problem,
            arch,
            quadrature: QuadratureConfig::TensorGrid {
                axes: vec![Axis::new(p_box.0, p_box.1, n_p), Axis::new(-1.0, 1.0, n_x)],
            },
            boundary: None,
            schedule: schedule(steps, 1000),
            evaluation: EvaluationConfig {
                reference: ReferenceConfig::Exact {
                    family: Family::Vrhs,
                    k: None,
                },
                slices: SliceConfig::List { params: plot.clone() },
                grid: EvalGrid::Interval { lo: -1.0, hi: 1.0, n: 1000 },
                plot_slices: plot,
            },
        },
    ))
}

fn vexp() -> Result<RunConfig, ExperimentError> {
    let problem = ProblemSpec::new(
        Variant::VariableExponent {
            p_of: Expr::parse("p").map_err(config_err)?,
            p_min: 1.5,
            p_max: 6.0,
        },
        "1",
        vec![(1.5, 6.0)],
        1,
    )
    .map_err(config_err)?;
    let plot = slices(&[2.0, 3.0, 4.0, 5.0]);
    Ok(training(
        Kind::Vexp,
        "vexp",
        TrainingConfig {
            problem,
            arch: ArchSpec::new(2, vec![16; 4], Activation::S2Relu).with_lift(unit_lift()),
            quadrature: QuadratureConfig::TensorGrid {
                axes: vec![Axis::new(1.5, 6.0, 100), Axis::new(-1.0, 1.0, 1000)],
            },
            boundary: None,
            schedule: schedule(20000, 1000),
            evaluation: EvaluationConfig {
                reference: ReferenceConfig::Exact {
                    family: Family::Vexp,
                    k: None,
                },
                slices: SliceConfig::List { params: plot.clone() },
                grid: EvalGrid::Interval { lo: -1.0, hi: 1.0, n: 1000 },
                plot_slices: plot,
            },
        },
    ))
}

/// The fixed exponent `p = 2` member of the variable exponent family.
fn vexp_desk() -> Result<RunConfig, ExperimentError> {
    let problem = ProblemSpec::new(Variant::FixedP { p: 2.0 }, "1", Vec::new(), 1).map_err(config_err)?;
    Ok(training(
        Kind::Vexp,
        "vexp_desk",
        TrainingConfig {
            problem,
            arch: ArchSpec::new(1, vec![16; 4], Activation::S2Relu).with_lift(unit_lift()),
            quadrature: QuadratureConfig::TensorGrid {
                axes: vec![Axis::new(-1.0, 1.0, 1000)],
            },
            boundary: None,
            schedule: schedule(5000, 500),
            evaluation: EvaluationConfig {
                reference: ReferenceConfig::Exact {
                    family: Family::Vexp,
                    k: Some(2.0),
                },
                slices: SliceConfig::List { params: vec![vec![]] },
                grid: EvalGrid::Interval { lo: -1.0, hi: 1.0, n: 1000 },
                plot_slices: Vec::new(),
            },
        },
    ))
}

fn vdom(desk: bool) -> Result<RunConfig, ExperimentError> {
    let problem = ProblemSpec::new(Variant::VariableDomain { p: 2.0 }, "1", vec![(1.0, 2.0)], 1).map_err(config_err)?;
    let (n_p, n_x_per_unit, steps, plot) = if desk {
        (20, 200.0, 3000, slices(&[1.2, 1.8]))
    } else {
        (100, 2000.0, 20000, slices(&[1.2, 1.4, 1.6, 1.8]))
    };
    Ok(training(
        Kind::Vdom,
        if desk { "vdom_desk" } else { "vdom" },
        TrainingConfig {
            problem,
            arch: ArchSpec::new(2, vec![16; 4], Activation::GeluApprox).with_lift(LiftSpec::IntervalFamily),
            quadrature: QuadratureConfig::VariableDomain {
                p_axis: Axis::new(1.0, 2.0, n_p),
                n_x_per_unit,
            },
            boundary: None,
            schedule: schedule(steps, 500),
            evaluation: EvaluationConfig {
                reference: ReferenceConfig::Exact {
                    family: Family::Vdom,
                    k: None,
                },
                slices: SliceConfig::List { params: plot.clone() },
                grid: EvalGrid::VariableInterval { n: 1000 },
                plot_slices: plot,
            },
        },
    ))
}

fn mixed7d(smoke: bool) -> Result<RunConfig, ExperimentError> {
    let problem = ProblemSpec::new(
        Variant::MixedMass {
            p_of: Expr::parse("p4").map_err(config_err)?,
        },
        "p0/(2*pi*p1)*exp(-((x-p2)^2+(y-p3)^2)/(2*p1^2))",
        vec![(1.5 * PI, 2.5 * PI), (0.2, 0.5), (-0.3, 0.3), (-0.3, 0.3), (1.8, 2.2)],
        2,
    )
    .map_err(config_err)?;
    let (n_p, n_axis, steps, epoch, n_rand) = if smoke { (5, 25, 200, 100, 8) } else { (25, 75, 60000, 300, 1200) };
    Ok(training(
        Kind::Mixed7d,
        if smoke { "mixed7d_smoke" } else { "mixed7d" },
        TrainingConfig {
            problem,
            arch: ArchSpec::new(7, vec![32; 4], Activation::S2Relu),
            quadrature: QuadratureConfig::RandomParameters {
                n_p,
                spatial: SpatialGrid::Disk {
                    radius: 1.0,
                    n_per_axis: n_axis,
                },
            },
            boundary: None,
            schedule: Schedule {
                steps,
                resample_every: epoch,
                checkpoint_every: epoch,
                optimizer: Optimizer::default(),
            },
            evaluation: EvaluationConfig {
                reference: ReferenceConfig::PreviousCheckpoint,
                slices: SliceConfig::Random { n: n_rand },
                grid: EvalGrid::Disk {
                    radius: 1.0,
                    n_per_axis: n_axis,
                },
                plot_slices: Vec::new(),
            },
        },
    ))
}

/// A named built-in configuration.
pub fn preset(name: &str) -> Result<RunConfig, ExperimentError> {
    let exps = || vec![1.5, 2.0, 3.0, 4.0];
    match name {
        "vrhs" => vrhs(false),
        "vrhs_desk" => vrhs(true),
        "vexp" => vexp(),
        "vexp_desk" => vexp_desk(),
        "vdom" => vdom(false),
        "vdom_desk" => vdom(true),
        "mixed7d" => mixed7d(false),
        "mixed7d_smoke" => mixed7d(true),
        "sandwich" => Ok(RunConfig {
            sandwich: Some(SandwichConfig {
                exponents: exps(),
                n: 4000,
                perturbations: 200,
                modes: 4,
                delta: (0.1, 10.0),
            }),
            ..study(Kind::Sandwich)
        }),
        "lemmas" => Ok(RunConfig {
            lemmas: Some(LemmasConfig {
                exponents: exps(),
                dims: vec![1, 2, 3],
                samples: 100_000,
                n_tau: 32,
                relation_trials: 100,
                relation_points: 1000,
            }),
            ..study(Kind::Lemmas)
        }),
        "penalty_rate" => Ok(RunConfig {
            penalty_rate: Some(PenaltyRateConfig {
                exponents: vec![2.0, 3.0],
                lambdas: vec![1.0, 10.0, 100.0, 1000.0],
                n: 400,
            }),
            ..study(Kind::PenaltyRate)
        }),
        "fd_oracle" => Ok(RunConfig {
            fd_oracle: Some(FdOracleConfig {
                exponents: vec![2.0, 3.0],
                cells: vec![50, 100, 200, 400],
            }),
            ..study(Kind::FdOracle)
        }),
        other => Err(config_err(format!("unknown preset `{other}`; known: {}", PRESET_NAMES.join(", ")))),
    }
}
