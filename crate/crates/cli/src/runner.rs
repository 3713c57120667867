//! Mode dispatch: fit a dataset, run a simulation study, or sweep a
//! relative-efficiency curve, emitting artifacts into the output
//! directory and returning a machine-readable summary.

use std::path::{Path, PathBuf};

use excursion_core::bench::{efficiency_sweep, run_replications, study_spec, AnySpec, SweepGrid};
use excursion_core::estimator::{fit_with_inference, EstimatorKind, EstimatorSpec};
use excursion_core::gee::{fit_gee_with_inference, GeeSpec, WorkingCorrelation};
use excursion_core::inference::InferenceConfig;
use excursion_core::outcomes::build_for_dataset;
use excursion_core::simgen::{true_marginal_beta0, GenerativeConfig};
use excursion_core::weights::NumeratorPolicy;
use serde_json::{json, Value};

use crate::config::{
    Axis, EstimatorChoice, FitConfig, GenerativeChoice, Mode, NumeratorChoice, RunConfig,
    SimulateConfig, SweepConfig,
};
use crate::report;
use crate::schema::{ingest_csv_with_terms, Term};
use crate::{CliError, CliResult};

/// Result of a run: the stdout summary plus the artifact paths written.
pub struct RunOutput {
    pub summary: Value,
    pub artifacts: Vec<PathBuf>,
}

pub fn run(config: &RunConfig) -> CliResult<RunOutput> {
    config.validate()?;
    if let Some(threads) = config.threads {
        // ignore failure: the global pool may already exist in-process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let out_dir = config.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    match config.mode {
        Mode::Fit => run_fit(config.fit.as_ref().unwrap(), &out_dir),
        Mode::Simulate => run_simulate(config.simulate.as_ref().unwrap(), config.seed, &out_dir),
        Mode::Sweep => run_sweep(config.sweep.as_ref().unwrap(), config.seed, &out_dir),
    }
}

fn inference_config(choice: &crate::config::InferenceChoice) -> CliResult<InferenceConfig<f64>> {
    if !(choice.eta > 0.0 && choice.eta < 1.0) {
        return Err(CliError::Config("eta must lie in (0,1)".into()));
    }
    Ok(InferenceConfig {
        eta: choice.eta,
        residual_correction: choice.residual_correction,
        t_critical: choice.t_critical,
        df_override: None,
    })
}

fn run_fit(fit: &FitConfig, out_dir: &Path) -> CliResult<RunOutput> {
    let controls: Vec<Term> = match &fit.controls {
        Some(terms) => terms.clone(),
        None => all_ctl_columns(&fit.input)?,
    };
    let ingested = ingest_csv_with_terms(&fit.input, fit.delta, &fit.moderators, &controls)?;
    let data = &ingested.data;
    let constant_prob = data.constant_rand_prob();
    if constant_prob.is_some() {
        eprintln!(
            "note: rand_prob is constant; the numerator policy `auto` pins \
             the stabilized-weight numerator to the design probability"
        );
    }
    let numerator = match &fit.numerator {
        NumeratorChoice::Auto => NumeratorPolicy::default_for(data),
        NumeratorChoice::Constant { value } => NumeratorPolicy::Constant(*value),
        NumeratorChoice::EmpiricalMean => NumeratorPolicy::EmpiricalMean,
        NumeratorChoice::LogisticOnS => NumeratorPolicy::LogisticOnS,
    };
    let inf = inference_config(&fit.inference)?;
    let moderator_cols: Vec<usize> = (0..data.n_moderators()).collect();
    let control_cols: Vec<usize> = (0..data.n_controls()).collect();
    let outcomes = build_for_dataset(data)?;
    let (result, estimator_label) = match &fit.estimator {
        choice if choice.is_gee() => {
            let corr = match choice {
                EstimatorChoice::GeeInd => WorkingCorrelation::Independent,
                _ => WorkingCorrelation::Exchangeable,
            };
            let spec = GeeSpec::new(corr, moderator_cols, control_cols);
            let label = spec.label();
            (
                fit_gee_with_inference(data, &outcomes, &spec, &inf)?.fit,
                label,
            )
        }
        choice => {
            let kind = excursion_kind(choice)?;
            let spec = EstimatorSpec {
                kind,
                moderator_cols,
                control_cols,
                numerator,
                solver: Default::default(),
            };
            (
                fit_with_inference(data, &outcomes, &spec, &inf)?,
                kind.label(),
            )
        }
    };
    let table = result.summarize(&inf);
    let coef_path = report::out_path(out_dir, "coefficients.csv");
    report::write_atomic(&coef_path, &report::coefficients_csv(&table))?;
    let summary = json!({
        "mode": "fit",
        "estimator": estimator_label,
        "n": data.n(),
        "delta": data.delta(),
        "constant_rand_prob": constant_prob,
        "converged": result.diagnostics.converged,
        "iterations": result.diagnostics.iterations,
        "beta": result.beta,
        "se_beta": result.se_beta,
        "p_values": result.p_values,
        "outputs": [coef_path],
    });
    Ok(RunOutput {
        summary,
        artifacts: vec![coef_path],
    })
}

fn all_ctl_columns(input: &Path) -> CliResult<Vec<Term>> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", input.display())))?;
    let header = text.lines().next().unwrap_or_default();
    Ok(header
        .split(',')
        .map(str::trim)
        .filter(|c| c.starts_with("ctl_"))
        .map(Term::column)
        .collect())
}

fn excursion_kind(choice: &EstimatorChoice) -> CliResult<EstimatorKind> {
    Ok(match choice {
        EstimatorChoice::PdEmee => EstimatorKind::PdEmee,
        EstimatorChoice::Emee => EstimatorKind::Emee,
        EstimatorChoice::RefRegimeK { k } => EstimatorKind::RefRegimeK(*k),
        EstimatorChoice::RefRegimeKEmee { k } => EstimatorKind::RefRegimeKEmee(*k),
        _ => return Err(CliError::Config("not an excursion estimator".into())),
    })
}

fn generative(choice: &GenerativeChoice, seed: Option<u64>) -> CliResult<GenerativeConfig<f64>> {
    let mut gen = GenerativeConfig::with_horizon(
        choice.n,
        choice.t,
        choice.delta,
        choice.p_a,
        seed.unwrap_or(0),
    )?;
    if let Some(gamma) = choice.gamma {
        gen = gen.with_gamma(gamma)?;
    }
    Ok(gen)
}

fn run_simulate(sim: &SimulateConfig, seed: Option<u64>, out_dir: &Path) -> CliResult<RunOutput> {
    let gen = generative(&sim.generative, seed)?;
    let truth: Vec<f64> = if sim.moderated {
        vec![0.1, 0.2]
    } else {
        vec![true_marginal_beta0(&gen)]
    };
    let specs: Vec<AnySpec<f64>> = sim
        .estimators
        .iter()
        .map(|choice| -> CliResult<AnySpec<f64>> {
            Ok(match choice {
                EstimatorChoice::GeeInd | EstimatorChoice::GeeExch => {
                    let corr = if *choice == EstimatorChoice::GeeInd {
                        WorkingCorrelation::Independent
                    } else {
                        WorkingCorrelation::Exchangeable
                    };
                    let mods = if sim.moderated { vec![0, 1] } else { vec![0] };
                    AnySpec::Gee(GeeSpec::new(corr, mods, vec![0, 1]))
                }
                other => {
                    AnySpec::Excursion(study_spec(excursion_kind(other)?, sim.moderated, gen.p_a))
                }
            })
        })
        .collect::<CliResult<_>>()?;
    let report_data = run_replications(&gen, &specs, sim.reps, &truth)?;
    let csv_path = report::out_path(out_dir, "report.csv");
    let json_path = report::out_path(out_dir, "report.json");
    report::write_atomic(&csv_path, &report::report_csv(&report_data))?;
    report::write_json(&json_path, &report_data)?;
    let summary = json!({
        "mode": "simulate",
        "reps": report_data.reps,
        "true_values": report_data.true_values,
        "excess_failures": report_data.excess_failures,
        "wall_time_secs": report_data.wall_time_secs,
        "estimators": report_data.estimators.iter().map(|e| json!({
            "label": e.label,
            "n_failed": e.n_failed,
            "bias": e.params.iter().map(|p| p.bias).collect::<Vec<_>>(),
            "sd": e.params.iter().map(|p| p.sd).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
        "outputs": [csv_path, json_path],
    });
    Ok(RunOutput {
        summary,
        artifacts: vec![csv_path, json_path],
    })
}

fn run_sweep(sweep: &SweepConfig, seed: Option<u64>, out_dir: &Path) -> CliResult<RunOutput> {
    let gen = generative(&sweep.generative, seed)?;
    let to_usize_grid = |grid: &[f64]| -> CliResult<Vec<usize>> {
        grid.iter()
            .map(|&x| {
                if x.fract() == 0.0 && x >= 0.0 {
                    Ok(x as usize)
                } else {
                    Err(CliError::Config(format!(
                        "grid value {x} must be a nonnegative integer for this axis"
                    )))
                }
            })
            .collect()
    };
    let grid = match sweep.axis {
        Axis::Delta => SweepGrid::Delta(to_usize_grid(&sweep.grid)?),
        Axis::K => SweepGrid::K(to_usize_grid(&sweep.grid)?),
        Axis::RandProb => SweepGrid::RandProb(sweep.grid.clone()),
    };
    let curve = efficiency_sweep(&grid, &gen, sweep.reps)?;
    let csv_path = report::out_path(out_dir, "curve.csv");
    report::write_atomic(&csv_path, &report::curve_csv(&curve))?;
    let summary = json!({
        "mode": "sweep",
        "axis": curve.axis,
        "points": curve.points,
        "outputs": [csv_path],
    });
    Ok(RunOutput {
        summary,
        artifacts: vec![csv_path],
    })
}
