use std::path::Path;

use eqprop::diagnostics::{
    alignment_fleet, check_lemma1, finite_diff_grad, fleet_case, fraction_positive, FleetSpec, DEFAULT_FD_STEP,
    DEGENERATE_NORM,
};
use eqprop::learning::{grad_exact, nu_exact};
use eqprop::network::layer_sizes_from_architecture;
use eqprop::rbp::{
    recorded_two_phases, recurrent_backprop, temporal_from_pair, trace_gaps, DerivativeScheme, DEFAULT_T_HORIZON,
};
use eqprop::{Activation, FieldKind, HyperParams, LayeredNetwork, ParamDelta};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

const DEFAULT_WEIGHT_CAP: usize = 2000;

/// `dJ/dtheta` from the closed form and from recurrent backprop against
/// central differences.
const GRAD_TOL: f64 = 1e-5;
const RBP_TOL: f64 = 1e-4;
/// Gradient fields only: `nu = -dJ/dtheta`.
const SYMMETRIC_NU_TOL: f64 = 1e-5;
const SYMMETRIC_COSINE_TOL: f64 = 1e-9;
/// Final temporal-process value against `-nu`, an O(beta) gap.
const TEMPORAL_TOL: f64 = 1e-2;
const LEMMA1_TOL: f64 = 1e-4;
/// Sup-norm gap between the temporal process and the adjoint when the
/// Jacobian is symmetric.
const TRACE_TOL: f64 = 1e-3;

fn fleet_spec(cfg: &RunConfig) -> FleetSpec {
    FleetSpec {
        architecture: cfg.architecture_or(&FleetSpec::default().architecture),
        activation: cfg.activation.unwrap_or(Activation::Logistic),
        field_kind: cfg.field_kind.unwrap_or(FieldKind::Leaky),
        target_at_free_output: cfg.target_at_free_output.unwrap_or(false),
    }
}

fn check_cap(spec: &FleetSpec, cfg: &RunConfig) -> Result<(), CliError> {
    let net =
        LayeredNetwork::zeros(layer_sizes_from_architecture(&spec.architecture), spec.activation, spec.field_kind)?;
    let cap = cfg.weight_cap.unwrap_or(DEFAULT_WEIGHT_CAP);
    if net.num_params() > cap {
        return Err(CliError::CapExceeded { params: net.num_params(), cap });
    }
    Ok(())
}

fn seeds(cfg: &RunConfig, hp: &HyperParams, default_size: u64) -> Vec<u64> {
    let n = cfg.fleet_size.unwrap_or(default_size);
    (hp.seed..hp.seed + n).collect()
}

/// One weight between a single input and a single output unit, hard sigmoid,
/// input 1 and target 1. The fixed point sits at the weight itself, so
/// `dJ/dw = w - 1`.
fn scalar_case(weight: f64) -> Result<(LayeredNetwork, DVector<f64>, DVector<f64>), CliError> {
    let net = LayeredNetwork::from_weights(
        vec![1, 1],
        vec![DMatrix::from_element(1, 1, weight)],
        vec![],
        Activation::HardSigmoid,
        FieldKind::Leaky,
    )?;
    Ok((net, DVector::from_element(1, 1.0), DVector::from_element(1, 1.0)))
}

fn negated(d: &ParamDelta) -> ParamDelta {
    let mut out = d.clone();
    out.scale(-1.0);
    out
}

/// Relative error, falling back to the absolute error for a vanishing reference.
fn gap(value: &ParamDelta, reference: &ParamDelta) -> f64 {
    let mut diff = value.clone();
    diff.add_scaled(-1.0, reference);
    let r = reference.norm();
    if r > DEGENERATE_NORM {
        diff.norm() / r
    } else {
        diff.norm()
    }
}

#[derive(Serialize)]
struct GradRow {
    case: &'static str,
    seed: Option<u64>,
    field_kind: FieldKind,
    grad_0: f64,
    nu_0: f64,
    grad_norm: f64,
    nu_norm: f64,
    fd_norm: f64,
    grad_vs_fd: f64,
    nu_vs_neg_fd: f64,
    rbp_vs_fd: f64,
    temporal_vs_neg_nu: f64,
    lemma1_rel_err: f64,
    cosine: Option<f64>,
    pass: bool,
}

struct GradSettings {
    hp: HyperParams,
    fd_step: f64,
    t_horizon: f64,
    temporal_beta: f64,
    scheme: DerivativeScheme,
}

fn grad_row(
    case: &'static str,
    seed: Option<u64>,
    (net, x, y): &(LayeredNetwork, DVector<f64>, DVector<f64>),
    settings: &GradSettings,
) -> Result<GradRow, CliError> {
    let hp = &settings.hp;
    let grad = grad_exact(net, x, y, hp)?;
    let nu = nu_exact(net, x, y, hp)?;
    let fd = finite_diff_grad(net, x, y, hp, settings.fd_step)?;
    let rbp = recurrent_backprop(net, x, y, hp, settings.t_horizon)?;
    let nudged_hp = HyperParams { beta: settings.temporal_beta, ..hp.clone() };
    let pair = recorded_two_phases(net, x, y, &nudged_hp)?;
    let temporal = temporal_from_pair(net, x, &pair, hp.epsilon, hp.lambda, settings.scheme)?;
    let lemma1 = check_lemma1(net, x, y, hp, settings.fd_step)?.max();

    let (grad_norm, nu_norm) = (grad.norm(), nu.norm());
    let cosine = (grad_norm > DEGENERATE_NORM && nu_norm > DEGENERATE_NORM)
        .then(|| (-nu.dot(&grad) / (grad_norm * nu_norm)).clamp(-1.0, 1.0));
    let neg_fd = negated(&fd);
    let mut row = GradRow {
        case,
        seed,
        field_kind: net.field_kind(),
        grad_0: grad.flat()[0],
        nu_0: nu.flat()[0],
        grad_norm,
        nu_norm,
        fd_norm: fd.norm(),
        grad_vs_fd: gap(&grad, &fd),
        nu_vs_neg_fd: gap(&nu, &neg_fd),
        rbp_vs_fd: gap(rbp.final_theta(), &fd),
        temporal_vs_neg_nu: gap(temporal.final_theta(), &negated(&nu)),
        lemma1_rel_err: lemma1,
        cosine,
        pass: false,
    };
    let symmetric = net.field_kind() == FieldKind::HopfieldGradient || net.state_size() == 1;
    row.pass = row.grad_vs_fd < GRAD_TOL
        && row.rbp_vs_fd < RBP_TOL
        && row.temporal_vs_neg_nu < TEMPORAL_TOL
        && row.lemma1_rel_err < LEMMA1_TOL
        && (!symmetric
            || (row.nu_vs_neg_fd < SYMMETRIC_NU_TOL
                && row.cosine.is_none_or(|c| (c - 1.0).abs() < SYMMETRIC_COSINE_TOL)));
    Ok(row)
}

pub fn gradcheck(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let hp = cfg.hyper_params(HyperParams {
        epsilon: 0.5,
        iters_phase1: 2000,
        iters_phase2: 2000,
        ..HyperParams::default()
    });
    hp.validate()?;
    let spec = fleet_spec(cfg);
    check_cap(&spec, cfg)?;
    let settings = GradSettings {
        fd_step: cfg.fd_step.unwrap_or(DEFAULT_FD_STEP),
        t_horizon: cfg.t_horizon.unwrap_or(DEFAULT_T_HORIZON),
        temporal_beta: cfg.temporal_beta.unwrap_or(1e-4),
        scheme: cfg.derivative_scheme.unwrap_or_default(),
        hp,
    };

    let mut writer = csv::Writer::from_path(out.join("gradcheck.csv"))?;
    let mut failed = Vec::new();
    let mut emit = |row: GradRow| -> Result<(), CliError> {
        if !row.pass {
            failed.push(match row.seed {
                Some(s) => format!("seed {s}"),
                None => row.case.to_string(),
            });
        }
        writer.serialize(&row)?;
        Ok(())
    };
    if cfg.include_scalar_case.unwrap_or(true) {
        let row = grad_row("scalar", None, &scalar_case(0.3)?, &settings)?;
        println!("scalar case: dJ/dw = {:.6}, nu = {:.6}", row.grad_0, row.nu_0);
        emit(row)?;
    }
    let seeds = seeds(cfg, &settings.hp, 20);
    for &seed in &seeds {
        let case = fleet_case(&spec, seed, &settings.hp)?;
        emit(grad_row("fleet", Some(seed), &case, &settings)?)?;
    }
    writer.flush()?;
    println!("{} fleet members checked, {} rows outside tolerance", seeds.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Tolerance(format!("gradient checks failed for {}", failed.join(", "))))
    }
}

#[derive(Serialize)]
struct AlignRow {
    seed: u64,
    asymmetry: f64,
    cosine: Option<f64>,
    grad_norm: f64,
    nu_norm: f64,
    condition_estimate: f64,
    degenerate: bool,
}

pub fn align(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let hp = cfg.hyper_params(HyperParams { epsilon: 0.5, iters_phase1: 2000, ..HyperParams::default() });
    hp.validate()?;
    let spec = fleet_spec(cfg);
    check_cap(&spec, cfg)?;
    let seeds = seeds(cfg, &hp, 100);

    let mut reports = Vec::with_capacity(seeds.len());
    let mut writer = csv::Writer::from_path(out.join("align.csv"))?;
    for (seed, result) in alignment_fleet(&spec, &seeds, &hp) {
        let report = result?;
        writer.serialize(AlignRow {
            seed,
            asymmetry: report.asymmetry,
            cosine: report.cosine,
            grad_norm: report.grad_norm,
            nu_norm: report.nu_norm,
            condition_estimate: report.condition_estimate,
            degenerate: report.is_degenerate(),
        })?;
        reports.push(report);
    }
    writer.flush()?;

    let fraction = fraction_positive(&reports);
    let degenerate = reports.iter().filter(|r| r.is_degenerate()).count();
    let mean_asymmetry = reports.iter().map(|r| r.asymmetry).sum::<f64>() / reports.len().max(1) as f64;
    println!(
        "fraction positive {fraction:.4}, mean asymmetry {mean_asymmetry:.4}, degenerate {degenerate} of {}",
        reports.len()
    );
    match cfg.min_fraction_positive {
        Some(min) if fraction < min => {
            Err(CliError::Tolerance(format!("fraction of positive cosines {fraction:.4} below {min}")))
        }
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct TraceRow {
    field_kind: FieldKind,
    seed: Option<u64>,
    t: f64,
    s_gap: f64,
    theta_gap: f64,
    s_bar_0: f64,
    s_tilde_0: f64,
    theta_bar_0: f64,
    theta_tilde_0: f64,
}

pub fn rbp_compare(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let hp = cfg.hyper_params(HyperParams {
        epsilon: 1e-3,
        beta: 1e-4,
        iters_phase1: 60_000,
        iters_phase2: 10_000,
        residual_tol: Some(1e-12),
        ..HyperParams::default()
    });
    hp.validate()?;
    let scheme = cfg.derivative_scheme.unwrap_or_default();
    let every = cfg.record_every.unwrap_or(100).max(1);
    let horizon = hp.iters_phase2 as f64 * hp.epsilon;

    let mut cases = Vec::new();
    if cfg.scalar_case.unwrap_or(false) {
        cases.push((None, scalar_case(0.3)?));
    } else {
        let base = fleet_spec(cfg);
        let kinds = match cfg.field_kind {
            Some(kind) => vec![kind],
            None => vec![FieldKind::Leaky, FieldKind::HopfieldGradient],
        };
        for field_kind in kinds {
            let spec = FleetSpec { field_kind, ..base.clone() };
            check_cap(&spec, cfg)?;
            for seed in seeds(cfg, &hp, 3) {
                cases.push((Some(seed), fleet_case(&spec, seed, &hp)?));
            }
        }
    }

    let mut writer = csv::Writer::from_path(out.join("rbp_compare.csv"))?;
    let mut violations = Vec::new();
    for (seed, (net, x, y)) in &cases {
        let pair = recorded_two_phases(net, x, y, &hp)?;
        let temporal = temporal_from_pair(net, x, &pair, hp.epsilon, hp.lambda, scheme)?;
        let adjoint = recurrent_backprop(net, x, y, &hp, horizon)?;
        let gaps = trace_gaps(&temporal, &adjoint);
        let (mut sup_s, mut sup_theta): (f64, f64) = (0.0, 0.0);
        for (k, &(t, s_gap, theta_gap)) in gaps.iter().enumerate() {
            sup_s = sup_s.max(s_gap);
            sup_theta = sup_theta.max(theta_gap);
            if k % every == 0 || k + 1 == gaps.len() {
                writer.serialize(TraceRow {
                    field_kind: net.field_kind(),
                    seed: *seed,
                    t,
                    s_gap,
                    theta_gap,
                    s_bar_0: adjoint.s_bar[k][0],
                    s_tilde_0: temporal.s_tilde[k][0],
                    theta_bar_0: adjoint.theta_bar[k].flat()[0],
                    theta_tilde_0: temporal.theta_tilde[k].flat()[0],
                })?;
            }
        }
        let label = seed.map_or("scalar".to_string(), |s| format!("seed {s}"));
        println!("{:?} {label}: sup |S~ - S| = {sup_s:.3e}, sup |Theta~ - Theta| = {sup_theta:.3e}", net.field_kind());
        let symmetric = net.field_kind() == FieldKind::HopfieldGradient || net.state_size() == 1;
        if symmetric && (sup_s >= TRACE_TOL || sup_theta >= TRACE_TOL) {
            violations.push(label);
        }
    }
    writer.flush()?;
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Tolerance(format!("temporal process departs from the adjoint for {}", violations.join(", "))))
    }
}
