//! `fit`: estimate score-model parameters from a possibly masked CSV.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array1;
use serde::Serialize;
use serde_json::json;

use margscore::data::{load_csv, standardize, MaskedDataset, PropensityFn};
use margscore::iw::{fit_iw, IwConfig, IwMode};
use margscore::models::gaussian::{GaussianCholModel, GaussianParams};
use margscore::models::ica::{IcaModel, IcaParams};
use margscore::models::ScoreModel;
use margscore::proposal::ProposalDensity;
use margscore::synth::logistic_self_masking;
use margscore::truncation::{TruncationRegion, WeightFunction};
use margscore::variational::{
    fit_variational, DenoiseLevel, DenoiseSpec, SliceKind, VarConfig, VarLossKind, VarMode,
    VariationalParams,
};
use margscore::zeroed::{fit_zeroed, ZeroedConfig};

use crate::commands::{matrix_rows, resolve_out, resolve_truncation};
use crate::config::{parse_list, parse_loss, parse_pair, parse_slice, FileConfig};
use crate::errors::CliError;
use crate::manifest::write_manifest;
use crate::FitArgs;

/// Everything resolved from flags, config file, and defaults.
struct Plan {
    method: String,
    model: String,
    r: usize,
    proposal_var: f64,
    lr: f64,
    lr_phi: f64,
    batch: usize,
    iters: usize,
    inner_steps: usize,
    hidden: usize,
    loss: VarLossKind,
    factor_two: bool,
    truncation: Option<TruncationRegion>,
    mnar: Option<(f64, f64)>,
    sliced: Option<SliceKind>,
    denoise_sigmas: Option<Vec<f64>>,
    seed: u64,
}

#[derive(Serialize)]
struct ResolvedFit<'a> {
    data: &'a Path,
    method: &'a str,
    model: &'a str,
    standardize: bool,
    truncation: &'a Option<TruncationRegion>,
    mnar_propensity: Option<(f64, f64)>,
    sliced: Option<SliceKind>,
    denoise_sigmas: &'a Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iw: Option<IwConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    proposal_var: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    var: Option<VarConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    zeroed: Option<ZeroedConfig>,
    seed: u64,
}

fn validate_plan(plan: &Plan) -> Result<(), CliError> {
    match plan.method.as_str() {
        "iw" => {
            if plan.sliced.is_some() || plan.denoise_sigmas.is_some() {
                return Err(CliError::config(
                    "--sliced and --denoise-levels belong to --method var",
                ));
            }
            if plan.truncation.is_some() && plan.mnar.is_some() {
                return Err(CliError::config(
                    "choose either a truncation region or an MNAR propensity, not both",
                ));
            }
        }
        "var" => {
            if plan.mnar.is_some() {
                return Err(CliError::config(
                    "--mnar-propensity belongs to --method iw",
                ));
            }
            let variants = usize::from(plan.truncation.is_some())
                + usize::from(plan.sliced.is_some())
                + usize::from(plan.denoise_sigmas.is_some());
            if variants > 1 {
                return Err(CliError::config(
                    "choose at most one of: truncation, --sliced, --denoise-levels",
                ));
            }
        }
        "zeroed" => {
            if plan.sliced.is_some() || plan.denoise_sigmas.is_some() || plan.mnar.is_some() {
                return Err(CliError::config(
                    "the zero-fill baseline takes none of: --sliced, --denoise-levels, \
                     --mnar-propensity",
                ));
            }
            if plan.truncation.is_some() {
                eprintln!(
                    "note: the zero-fill baseline has no truncation-aware variant; \
                     the region is recorded but ignored"
                );
            }
        }
        other => {
            return Err(CliError::config(format!(
                "unknown method {other:?}; use iw | var | zeroed"
            )));
        }
    }
    match plan.model.as_str() {
        "gaussian" | "ica" => Ok(()),
        other => Err(CliError::config(format!(
            "unknown model {other:?}; use gaussian | ica"
        ))),
    }
}

/// Fit outcome shared across models: parameters, objective trace, and the
/// variational state when the variational route ran.
type FitOutcome = (Vec<f64>, Vec<f64>, Option<(VariationalParams, Vec<f64>)>);

fn fit_with<M: ScoreModel>(
    model: &M,
    theta0: &[f64],
    data: &MaskedDataset,
    plan: &Plan,
) -> Result<FitOutcome, CliError> {
    let d = data.dim;
    let weight = WeightFunction::default();
    match plan.method.as_str() {
        "iw" => {
            let cfg = IwConfig {
                r: plan.r,
                seed: plan.seed,
                learning_rate: plan.lr,
                batch_size: plan.batch,
                max_iters: plan.iters,
            };
            let proposal = ProposalDensity::new(Array1::zeros(d), plan.proposal_var)?;
            let (theta, trace) = match (&plan.truncation, plan.mnar) {
                (Some(region), None) => fit_iw(
                    model,
                    theta0,
                    data,
                    &proposal,
                    &cfg,
                    &IwMode::Truncated { region, weight },
                )?,
                (None, Some((alpha, beta))) => {
                    let propensity = logistic_self_masking(alpha, beta);
                    let propensity: &PropensityFn = &propensity;
                    fit_iw(
                        model,
                        theta0,
                        data,
                        &proposal,
                        &cfg,
                        &IwMode::Mnar { propensity },
                    )?
                }
                _ => fit_iw(model, theta0, data, &proposal, &cfg, &IwMode::Plain)?,
            };
            Ok((theta, trace, None))
        }
        "var" => {
            let cfg = VarConfig {
                inner_steps: plan.inner_steps,
                r: plan.r,
                loss_kind: plan.loss,
                lr_phi: plan.lr_phi,
                lr_theta: plan.lr,
                batch_size: plan.batch,
                max_iters: plan.iters,
                seed: plan.seed,
            };
            let phi0 = VariationalParams::new(d, plan.hidden, plan.seed)?;
            let denoise = match &plan.denoise_sigmas {
                Some(sigmas) => {
                    let k = sigmas.len().max(1) as f64;
                    Some(DenoiseSpec::new(
                        sigmas
                            .iter()
                            .map(|&sigma| DenoiseLevel {
                                m: 1.0,
                                sigma,
                                weight: 1.0 / k,
                            })
                            .collect(),
                    )?)
                }
                None => None,
            };
            let mode = if let Some(region) = &plan.truncation {
                VarMode::Truncated { region, weight }
            } else if let Some(kind) = plan.sliced {
                VarMode::Sliced { kind }
            } else if let Some(spec) = &denoise {
                VarMode::Denoised { spec }
            } else {
                VarMode::Plain
            };
            let (theta, phi, traces) = fit_variational(model, theta0, &phi0, data, &cfg, &mode)?;
            Ok((theta, traces.objective, Some((phi, traces.var_loss))))
        }
        "zeroed" => {
            let cfg = ZeroedConfig {
                factor_two: plan.factor_two,
                learning_rate: plan.lr,
                batch_size: plan.batch,
                max_iters: plan.iters,
                seed: plan.seed,
            };
            let (theta, trace) = fit_zeroed(model, theta0, data, &cfg)?;
            Ok((theta, trace, None))
        }
        _ => unreachable!("validated earlier"),
    }
}

fn write_trace(path: PathBuf, trace: &[f64]) -> Result<(), CliError> {
    let mut text = String::from("iter,objective\n");
    for (i, v) in trace.iter().enumerate() {
        text.push_str(&format!("{i},{v}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn run(args: FitArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let file = FileConfig::load(args.config.as_deref())?;
    let sec = file.fit.clone().unwrap_or_default();
    let data_path = args
        .data
        .or(file.data.clone())
        .ok_or_else(|| CliError::config("fit needs --data (or a `data` config key)"))?;
    let mut data = load_csv(&data_path)?;
    let d = data.dim;
    let standardize_on = args.standardize || sec.standardize.unwrap_or(false);
    if standardize_on {
        standardize(&mut data);
    }

    let mnar = match args.mnar_propensity.as_deref() {
        Some(s) => Some(parse_pair(s)?),
        None => match &sec.mnar_propensity {
            Some(v) if v.len() == 2 => Some((v[0], v[1])),
            Some(_) => {
                return Err(CliError::config(
                    "[fit].mnar_propensity must be [alpha, beta]",
                ))
            }
            None => None,
        },
    };
    let sliced = match args.sliced.as_deref().or(sec.sliced.as_deref()) {
        Some(name) => Some(parse_slice(name)?),
        None => None,
    };
    let denoise_sigmas = match args.denoise_levels.as_deref() {
        Some(s) => Some(parse_list(s)?),
        None => sec.denoise_levels.clone(),
    };
    let loss = match args.loss.as_deref().or(sec.loss.as_deref()) {
        Some(name) => parse_loss(name)?,
        None => VarLossKind::Fisher,
    };
    let plan = Plan {
        method: args
            .method
            .or(sec.method)
            .ok_or_else(|| CliError::config("fit needs --method iw | var | zeroed"))?,
        model: args.model.or(sec.model).unwrap_or_else(|| "gaussian".into()),
        r: args.r.or(sec.r).unwrap_or(10),
        proposal_var: args.proposal_var.or(sec.proposal_var).unwrap_or(16.0),
        lr: args.lr.or(sec.lr).unwrap_or(0.01),
        lr_phi: args.lr_phi.or(sec.lr_phi).unwrap_or(0.01),
        batch: args.batch.or(sec.batch).unwrap_or(100),
        iters: args.iters.or(sec.iters).unwrap_or(1000),
        inner_steps: args.inner_steps.or(sec.inner_steps).unwrap_or(10),
        hidden: args.hidden.or(sec.hidden).unwrap_or(64),
        loss,
        factor_two: args.factor_two.or(sec.factor_two).unwrap_or(true),
        truncation: resolve_truncation(args.truncation.as_deref(), &file)?,
        mnar,
        sliced,
        denoise_sigmas,
        seed: args.seed.or(file.seed).unwrap_or(0),
    };
    validate_plan(&plan)?;
    let out = resolve_out(args.out, file.out.clone())?;

    let (theta, trace, var_state) = match plan.model.as_str() {
        "gaussian" => {
            let model = GaussianCholModel::new(d);
            fit_with(&model, &model.identity_theta(), &data, &plan)?
        }
        "ica" => {
            let model = IcaModel::new(d);
            fit_with(&model, &model.default_theta(), &data, &plan)?
        }
        _ => unreachable!("validated earlier"),
    };

    let params_json = match plan.model.as_str() {
        "gaussian" => {
            let params = GaussianParams::from_chol_theta(d, &theta)?;
            json!({
                "model": "gaussian",
                "d": d,
                "mu": params.mu().to_vec(),
                "precision": matrix_rows(&params.precision()),
                "theta_internal": theta,
            })
        }
        _ => {
            let params = IcaParams::from_theta_vec(d, &theta)?;
            json!({
                "model": "ica",
                "d": d,
                "theta": matrix_rows(params.theta()),
                "theta_internal": theta,
            })
        }
    };
    let params_file = std::fs::File::create(out.join("params.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(params_file), &params_json)?;
    write_trace(out.join("trace.csv"), &trace)?;
    if let Some((phi, var_loss)) = &var_state {
        phi.save(out.join("variational.json"))?;
        let mut text = String::from("step,loss\n");
        for (i, v) in var_loss.iter().enumerate() {
            text.push_str(&format!("{i},{v}\n"));
        }
        std::fs::write(out.join("phi_loss.csv"), text)?;
    }

    let resolved = ResolvedFit {
        data: &data_path,
        method: &plan.method,
        model: &plan.model,
        standardize: standardize_on,
        truncation: &plan.truncation,
        mnar_propensity: plan.mnar,
        sliced: plan.sliced,
        denoise_sigmas: &plan.denoise_sigmas,
        iw: (plan.method == "iw").then(|| IwConfig {
            r: plan.r,
            seed: plan.seed,
            learning_rate: plan.lr,
            batch_size: plan.batch,
            max_iters: plan.iters,
        }),
        proposal_var: (plan.method == "iw").then_some(plan.proposal_var),
        var: (plan.method == "var").then(|| VarConfig {
            inner_steps: plan.inner_steps,
            r: plan.r,
            loss_kind: plan.loss,
            lr_phi: plan.lr_phi,
            lr_theta: plan.lr,
            batch_size: plan.batch,
            max_iters: plan.iters,
            seed: plan.seed,
        }),
        hidden: (plan.method == "var").then_some(plan.hidden),
        zeroed: (plan.method == "zeroed").then(|| ZeroedConfig {
            factor_two: plan.factor_two,
            learning_rate: plan.lr,
            batch_size: plan.batch,
            max_iters: plan.iters,
            seed: plan.seed,
        }),
        seed: plan.seed,
    };
    let details = json!({
        "final_objective": trace.last().copied(),
        "iterations": trace.len(),
        "rows": data.n(),
        "truncation_ignored": plan.method == "zeroed" && plan.truncation.is_some(),
    });
    write_manifest(
        &out,
        "fit",
        plan.seed,
        &resolved,
        details,
        start.elapsed().as_secs_f64(),
    )?;
    println!(
        "fit {} ({} model) in {:.2}s, final objective {:.6e}; wrote {}",
        plan.method,
        plan.model,
        start.elapsed().as_secs_f64(),
        trace.last().copied().unwrap_or(f64::NAN),
        out.join("params.json").display()
    );
    Ok(())
}
