//! The training studies: build the problem, train, evaluate, write.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::json;

use super::{
    config_err, numeric_err, write, EvalGrid, EvaluationConfig, ExperimentError, Outcome, QuadratureConfig,
    QuadratureInfo, ReferenceConfig, Seeds, SliceConfig, SpatialGrid, TrainingConfig,
};
use crate::energy::{energy_of_field, energy_value, Problem};
use crate::metrics::{compare_fields, natural_distance_sq, sample_reference, ErrorReport, Reference};
use crate::network::{evaluate_lifted, ArchSpec, SampledField};
use crate::quadrature::{
    boundary_grid_1d, disk_grid, sample_box, tensor_grid, variable_domain_grid, Axis, QuadratureSet,
};
use crate::reference::Family;
use crate::trainer::{save_checkpoint, train, Checkpoint, InteriorSource, TrainError, TrainReport};

/// Offset between the quadrature seed and the seed of random evaluation slices.
const SLICE_SEED_OFFSET: u64 = 0x51_1ce5;

pub(super) fn validate(tc: &TrainingConfig) -> Result<(), ExperimentError> {
    let spec = &tc.problem;
    spec.validate().map_err(config_err)?;
    tc.arch.validate().map_err(config_err)?;
    if tc.arch.input_dim != spec.input_dim() {
        return Err(config_err(format!(
            "arch.input_dim is {} but the problem has {} parameters and {} spatial dimensions",
            tc.arch.input_dim,
            spec.param_dim(),
            spec.spatial_dim
        )));
    }
    let pd = spec.param_dim();
    match &tc.quadrature {
        QuadratureConfig::TensorGrid { axes } if axes.len() != spec.input_dim() => {
            return Err(config_err(format!(
                "quadrature.axes has {} axes, problem needs {}",
                axes.len(),
                spec.input_dim()
            )))
        }
        QuadratureConfig::VariableDomain { n_x_per_unit, .. } if !(*n_x_per_unit > 0.0) => {
            return Err(config_err("quadrature.n_x_per_unit must be positive"))
        }
        QuadratureConfig::RandomParameters { n_p: 0, .. } => return Err(config_err("quadrature.n_p must be positive")),
        QuadratureConfig::RandomParameters { .. } if pd == 0 => {
            return Err(config_err("random parameter quadrature needs a parameter box"))
        }
        _ => {}
    }
    if spec.lambda().is_some() != tc.boundary.is_some() {
        return Err(config_err("`boundary` must be given exactly for penalty problems"));
    }
    if tc.schedule.steps > 0 && tc.schedule.checkpoint_every == 0 {
        // Allowed: only the final checkpoint is written.
    }
    let ev = &tc.evaluation;
    if let ReferenceConfig::Exact { k, .. } = ev.reference {
        if spec.spatial_dim != 1 {
            return Err(config_err("exact references are one-dimensional"));
        }
        if k.is_none() && pd == 0 {
            return Err(config_err("evaluation.reference.k is required without problem parameters"));
        }
    }
    match &ev.slices {
        SliceConfig::List { params } => {
            if let Some(bad) = params.iter().find(|p| p.len() != pd) {
                return Err(config_err(format!("evaluation slice {bad:?} needs {pd} values")));
            }
        }
        SliceConfig::Random { .. } if pd == 0 => return Err(config_err("random slices need a parameter box")),
        SliceConfig::Random { .. } => {}
    }
    if let Some(bad) = ev.plot_slices.iter().find(|p| p.len() != pd) {
        return Err(config_err(format!("plot slice {bad:?} needs {pd} values")));
    }
    let grid_dim = match ev.grid {
        EvalGrid::Interval { .. } | EvalGrid::VariableInterval { .. } => 1,
        EvalGrid::Disk { .. } => 2,
    };
    if grid_dim != spec.spatial_dim {
        return Err(config_err("evaluation.grid dimension differs from the problem's"));
    }
    Ok(())
}

fn spatial_set(grid: &SpatialGrid) -> Result<QuadratureSet, ExperimentError> {
    match grid {
        SpatialGrid::Tensor { axes } => tensor_grid(axes),
        SpatialGrid::Disk { radius, n_per_axis } => disk_grid(*radius, *n_per_axis),
    }
    .map_err(config_err)
}

/// The problem on its initial interior set, and where later sets come from.
pub fn build_problem(tc: &TrainingConfig, seeds: Seeds) -> Result<(Problem, InteriorSource), ExperimentError> {
    let spec = &tc.problem;
    let (interior, source) = match &tc.quadrature {
        QuadratureConfig::TensorGrid { axes } => (tensor_grid(axes).map_err(config_err)?, InteriorSource::Fixed),
        QuadratureConfig::VariableDomain { p_axis, n_x_per_unit } => {
            let s = spec.clone();
            let set = variable_domain_grid(*p_axis, |p| n_x_per_unit * p, |p| {
                s.domain(&[p]).unwrap_or((-p, p))
            })
            .map_err(config_err)?;
            (set, InteriorSource::Fixed)
        }
        QuadratureConfig::RandomParameters { n_p, spatial } => {
            let source = InteriorSource::RandomParameters {
                p_box: spec.param_box.clone(),
                n_p: *n_p,
                spatial: spatial_set(spatial)?,
                seed: seeds.quadrature,
            };
            (source.draw(0).map_err(config_err)?.expect("random source draws"), source)
        }
    };
    let boundary = match tc.boundary {
        Some((a, b)) => Some(boundary_grid_1d(a, b).map_err(config_err)?),
        None => None,
    };
    let problem = Problem::new(spec.clone(), interior, boundary).map_err(config_err)?;
    Ok((problem, source))
}

fn exact_reference(family: Family, k: Option<f64>) -> impl Fn(&[f64], &[f64]) -> (f64, Vec<f64>) + Sync {
    move |params: &[f64], x: &[f64]| {
        let (u, du) = family.exact(k.unwrap_or_else(|| params[0]), x[0]);
        (u, vec![du])
    }
}

fn eval_set(grid: &EvalGrid, params: &[f64]) -> Result<QuadratureSet, ExperimentError> {
    match *grid {
        EvalGrid::Interval { lo, hi, n } => tensor_grid(&[Axis::new(lo, hi, n)]),
        EvalGrid::VariableInterval { n } => tensor_grid(&[Axis::new(-params[0], params[0], n)]),
        EvalGrid::Disk { radius, n_per_axis } => disk_grid(radius, n_per_axis),
    }
    .map_err(config_err)
}

fn error_slices(ev: &EvaluationConfig, param_box: &[(f64, f64)], seeds: Seeds) -> Vec<Vec<f64>> {
    match &ev.slices {
        SliceConfig::List { params } => params.clone(),
        SliceConfig::Random { n } => sample_box(param_box, *n, seeds.quadrature.wrapping_add(SLICE_SEED_OFFSET))
            .chunks_exact(param_box.len())
            .map(<[f64]>::to_vec)
            .collect(),
    }
}

/// Lifted network and reference on one evaluation slice.
fn slice_fields(
    tc: &TrainingConfig,
    theta: &[f64],
    previous: &[f64],
    params: &[f64],
) -> Result<(QuadratureSet, SampledField, Option<SampledField>), ExperimentError> {
    let spec = &tc.problem;
    let set = eval_set(&tc.evaluation.grid, params)?.with_parameters(params);
    let lifted = |t: &[f64]| evaluate_lifted(&tc.arch, t, &set.points, &spec.tracked()).map_err(numeric_err);
    let field = lifted(theta)?;
    let reference = match tc.evaluation.reference {
        ReferenceConfig::Exact { family, k } => {
            let r = exact_reference(family, k);
            Some(sample_reference(&r as &Reference<'_>, params, &set).map_err(numeric_err)?)
        }
        ReferenceConfig::PreviousCheckpoint => Some(lifted(previous)?),
        ReferenceConfig::None => None,
    };
    Ok((set, field, reference))
}

/// Slice errors of `theta`. `previous` is the comparison network for
/// `PreviousCheckpoint` references.
pub fn errors_for(
    tc: &TrainingConfig,
    seeds: Seeds,
    theta: &[f64],
    previous: &[f64],
) -> Result<Option<ErrorReport>, ExperimentError> {
    if tc.evaluation.reference == ReferenceConfig::None {
        return Ok(None);
    }
    let spec = &tc.problem;
    let mut records = Vec::new();
    for params in error_slices(&tc.evaluation, &spec.param_box, seeds) {
        let (set, field, reference) = slice_fields(tc, theta, previous, &params)?;
        let reference = reference.expect("reference configured");
        records.push(compare_fields(spec.exponent(&params), &params, set.weight, &field, &reference));
    }
    Ok(Some(ErrorReport {
        param_dim: spec.param_dim(),
        records,
    }))
}

fn slices_csv(tc: &TrainingConfig, theta: &[f64], previous: &[f64], plot: &[Vec<f64>]) -> Result<String, ExperimentError> {
    let spec = &tc.problem;
    let (pd, k) = (spec.param_dim(), spec.spatial_dim);
    let mut cols: Vec<String> = (0..pd).map(|i| format!("p{i}")).collect();
    cols.extend((0..k).map(|i| format!("x{i}")));
    cols.extend(["u_theta".into(), "u_star".into()]);
    cols.extend((0..k).map(|i| format!("du_theta_{i}")));
    cols.extend((0..k).map(|i| format!("du_star_{i}")));
    cols.extend(["err_u".into(), "err_grad".into()]);
    let mut out = cols.join(",");
    out.push('\n');
    for params in plot {
        let (set, field, reference) = slice_fields(tc, theta, previous, params)?;
        for (i, z) in set.iter().enumerate() {
            let (us, dus): (f64, Vec<f64>) = match &reference {
                Some(r) => (r.u[i], r.grad(i).to_vec()),
                None => (f64::NAN, vec![f64::NAN; k]),
            };
            let g = field.grad(i);
            let err_grad = g.iter().zip(&dus).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let row: Vec<String> = z
                .iter()
                .copied()
                .chain([field.u[i], us])
                .chain(g.iter().copied())
                .chain(dus.iter().copied())
                .chain([(field.u[i] - us).abs(), err_grad])
                .map(|v| v.to_string())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    Ok(out)
}

/// Energy gap and natural distance to the exact solution at each checkpoint.
fn cea_csv(tc: &TrainingConfig, problem: &Problem, report: &TrainReport) -> Result<Option<(String, f64)>, ExperimentError> {
    let ReferenceConfig::Exact { family, k } = tc.evaluation.reference else {
        return Ok(None);
    };
    let spec = &problem.spec;
    let pd = spec.param_dim();
    let exact = exact_reference(family, k);
    let star = |z: &[f64]| exact(&z[..pd], &z[pd..]);
    let e_star = energy_of_field(problem, star).map_err(numeric_err)?;
    let mut star_field = SampledField {
        k: 1,
        u: Vec::new(),
        du: Vec::new(),
    };
    for z in problem.interior.iter() {
        let (u, du) = star(z);
        star_field.u.push(u);
        star_field.du.extend(du);
    }
    let mut out = String::from("step,energy,energy_star,gap,natural_sq,ratio\n");
    let mut worst = 0.0f64;
    for ck in &report.checkpoints {
        let e = energy_value(problem, &tc.arch, &ck.theta).map_err(numeric_err)?;
        let field = evaluate_lifted(&tc.arch, &ck.theta, &problem.interior.points, &spec.tracked()).map_err(numeric_err)?;
        let rho = natural_distance_sq(spec, &problem.interior, &field, &star_field);
        let gap = e - e_star;
        let ratio = rho / gap;
        worst = worst.max(ratio);
        writeln!(out, "{},{},{},{},{},{}", ck.step, e, e_star, gap, rho, ratio).expect("write to string");
    }
    Ok(Some((out, worst)))
}

fn save_all(dir: &Path, arch: &ArchSpec, cks: &[Checkpoint]) -> Result<Vec<String>, ExperimentError> {
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut names = Vec::new();
    for ck in cks {
        let name = format!("step_{:07}", ck.step);
        save_checkpoint(&dir.join(&name), arch, ck).map_err(|e| numeric_err(format!("saving checkpoint: {e}")))?;
        names.push(format!("checkpoints/{name}.bin"));
    }
    Ok(names)
}

pub(super) fn run_training(tc: &TrainingConfig, seeds: Seeds, out: &Path) -> Result<Outcome, ExperimentError> {
    let (mut problem, source) = build_problem(tc, seeds)?;
    let report = match train(&mut problem, &source, &tc.arch, &tc.schedule, seeds.init) {
        Ok(r) => r,
        Err(TrainError::NonFinite {
            what,
            step,
            last_good,
            cause,
        }) => {
            save_all(&out.join("checkpoints"), &tc.arch, std::slice::from_ref(&last_good))?;
            let detail = cause.map(|c| format!(": {c}")).unwrap_or_default();
            return Err(numeric_err(format!(
                "non-finite {what} at step {step}{detail}; last good parameters saved at step {}",
                last_good.step
            )));
        }
        Err(e) => return Err(numeric_err(e)),
    };
    let mut artifacts = Vec::new();

    let mut loss = String::from("step,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        writeln!(loss, "{i},{l}").expect("write to string");
    }
    for (i, l) in report.refinement.iter().enumerate() {
        writeln!(loss, "{},{l}", report.losses.len() + i).expect("write to string");
    }
    artifacts.push(write(out, "loss.csv", &loss)?);
    artifacts.extend(save_all(&out.join("checkpoints"), &tc.arch, &report.checkpoints)?);

    let n_ck = report.checkpoints.len();
    let previous = if n_ck >= 2 {
        report.checkpoints[n_ck - 2].theta.clone()
    } else {
        crate::network::init_params(&tc.arch, seeds.init).0
    };
    let errors = errors_for(tc, seeds, &report.theta, &previous)?;
    if let Some(e) = &errors {
        artifacts.push(write(out, "errors.csv", &e.to_csv())?);
        let agg = serde_json::to_string_pretty(&e.aggregates()).expect("aggregates serialize");
        artifacts.push(write(out, "errors.json", &agg)?);
    }
    let plot = if !tc.evaluation.plot_slices.is_empty() {
        tc.evaluation.plot_slices.clone()
    } else if let SliceConfig::List { params } = &tc.evaluation.slices {
        params.clone()
    } else {
        Vec::new()
    };
    if !plot.is_empty() {
        artifacts.push(write(out, "slices.csv", &slices_csv(tc, &report.theta, &previous, &plot)?)?);
    }
    let mut summary = json!({ "seconds_training": report.seconds, "quadrature": report.quadrature });
    if let Some((csv, worst)) = cea_csv(tc, &problem, &report)? {
        artifacts.push(write(out, "cea.csv", &csv)?);
        summary["cea_max_ratio"] = json!(worst);
    }
    Ok(Outcome {
        quadrature: Some(QuadratureInfo {
            interior: problem.interior.len(),
            boundary: problem.boundary.as_ref().map_or(0, |b| b.len()),
            description: report.quadrature.clone(),
        }),
        param_count: Some(tc.arch.param_count()),
        final_loss: report.checkpoints.last().and_then(|c| c.loss),
        errors: errors.map(|e| e.aggregates()),
        summary,
        artifacts,
    })
}
