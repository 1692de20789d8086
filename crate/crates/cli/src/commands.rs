//! The four batch commands. Each takes a parsed config plus the common CLI
//! options and returns the full output file contents as a string, so that
//! nothing is written on failure.

use crate::config::{
    build_transmon_problem, labels_for_channels, reference_perturbed_propagator,
    solution_distance, ComputeTermsConfig, FidelityScanConfig, RobustnessConfig,
    SolverSweepConfig, SweepInstance, NUM_TRANSMON_CHANNELS,
};
use anyhow::{bail, Context, Result};
use perturbdyn::linalg::expm;
use perturbdyn::models::{gaussian_moments, infidelity, robustness_breakdown};
use perturbdyn::perturbation::{compute_perturbation_terms, ArrayPolynomial};
use perturbdyn::pertsolver;
use perturbdyn::{ComplexMatrix, Expansion, Multiset};
use serde::Serialize;
use serde_json::json;
use std::fmt::Write as _;
use std::time::Instant;

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn json_output<T: Serialize>(config: &impl Serialize, seed: u64, payload: T) -> Result<String> {
    let doc = json!({
        "version": VERSION,
        "seed": seed,
        "config": config,
        "result": payload,
    });
    Ok(format!("{}\n", serde_json::to_string_pretty(&doc)?))
}

fn csv_preamble(config: &impl Serialize, seed: u64) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "# version: {VERSION}")?;
    writeln!(out, "# seed: {seed}")?;
    writeln!(out, "# config: {}", serde_json::to_string(config)?)?;
    Ok(out)
}

pub fn compute_terms(cfg: &ComputeTermsConfig, seed: u64) -> Result<String> {
    let labels = match (&cfg.labels, cfg.order) {
        (Some(_), Some(_)) => bail!("config must set `labels` or `order`, not both"),
        (Some(labels), None) => labels.clone(),
        (None, Some(order)) => labels_for_channels(&cfg.channels, order),
        (None, None) => bail!("config must set either `labels` or `order`"),
    };
    let problem = build_transmon_problem(
        &cfg.transmon,
        cfg.t_span,
        labels,
        &cfg.channels,
        cfg.expansion,
        cfg.method,
        seed,
    )?;
    let start = Instant::now();
    let result = compute_perturbation_terms(&problem).context("computing expansion terms")?;
    let elapsed = start.elapsed().as_secs_f64();
    log::info!("computed {} labels in {elapsed:.3}s", result.labels.len());
    println!("{} labels, {elapsed:.3}s", result.labels.len());
    json_output(
        cfg,
        seed,
        json!({
            "expansion": cfg.expansion,
            "label_count": result.labels.len(),
            "terms": result,
        }),
    )
}

/// Sub-polynomial keeping only monomials up to `order`.
fn truncate_poly(poly: &ArrayPolynomial, order: usize) -> ArrayPolynomial {
    ArrayPolynomial::new(
        poly.constant().cloned(),
        poly.monomials().iter().filter(|(l, _)| l.size() <= order).cloned().collect(),
    )
}

pub fn fidelity_scan(cfg: &FidelityScanConfig, seed: u64) -> Result<String> {
    if cfg.orders.is_empty() {
        bail!("`orders` must not be empty");
    }
    let max_order = *cfg.orders.iter().max().unwrap();
    let labels = labels_for_channels(&cfg.axes, max_order);
    let problem = build_transmon_problem(
        &cfg.transmon,
        cfg.t_span,
        labels,
        &cfg.axes,
        Expansion::Magnus,
        cfg.method,
        seed,
    )?;
    let magnus = compute_perturbation_terms(&problem).context("computing Magnus terms")?;
    let frame = magnus.frame_solution.clone();
    let full_poly = magnus.to_polynomial();
    let polys: Vec<(usize, ArrayPolynomial)> =
        cfg.orders.iter().map(|&n| (n, truncate_poly(&full_poly, n))).collect();

    // X gate on the computational subspace
    let mut target = ComplexMatrix::zeros(2, 2);
    target[(0, 1)] = num_complex::Complex64::new(1.0, 0.0);
    target[(1, 0)] = num_complex::Complex64::new(1.0, 0.0);

    let mut out = csv_preamble(cfg, seed)?;
    let mut writer = csv::Writer::from_writer(vec![]);
    let mut header = vec!["axis".to_string(), "c_value".to_string(), "true_infidelity".to_string()];
    for &n in &cfg.orders {
        header.push(format!("infidelity_order{n}"));
        header.push(format!("abs_error_order{n}"));
    }
    writer.write_record(&header)?;

    for &axis in &cfg.axes {
        for &value in &cfg.scan_values {
            let mut c = vec![0.0; NUM_TRANSMON_CHANNELS];
            c[axis] = value;
            let reference = reference_perturbed_propagator(&problem, &c, cfg.method)?;
            let true_inf = infidelity(&reference, &target);
            let mut row = vec![axis.to_string(), format!("{value:e}"), format!("{true_inf:e}")];
            for (_, poly) in &polys {
                let approx = &frame * &expm(&poly.eval(&c)?)?;
                let approx_inf = infidelity(&approx, &target);
                row.push(format!("{approx_inf:e}"));
                row.push(format!("{:e}", (approx_inf - true_inf).abs()));
            }
            writer.write_record(&row)?;
        }
    }
    out.push_str(&String::from_utf8(writer.into_inner()?)?);
    Ok(out)
}

pub fn solver_sweep(cfg: &SolverSweepConfig, seed: u64, parallel: bool) -> Result<String> {
    let instance = SweepInstance::from_spec(&cfg.problem)?;
    let reference = instance.reference(cfg.reference_tol)?;
    let y0 = ComplexMatrix::identity(instance.frame_op.rows());

    let mut out = csv_preamble(cfg, seed)?;
    let mut writer = csv::Writer::from_writer(vec![]);
    writer.write_record([
        "mode",
        "expansion_order",
        "chebyshev_order",
        "n_steps",
        "num_terms",
        "distance",
        "wall_time_s",
    ])?;

    for &mode in &cfg.modes {
        for &order in &cfg.expansion_orders {
            for &cheb in &cfg.chebyshev_orders {
                for &n_steps in &cfg.step_counts {
                    let dt = instance.t_final / n_steps as f64;
                    let solver_cfg = instance.solver_config(dt, cheb, order, cfg.method);
                    let start = Instant::now();
                    let exp = pertsolver::precompute(&solver_cfg, mode)
                        .context("solver precomputation")?;
                    let solution =
                        pertsolver::solve(&exp, &instance.signals, 0.0, n_steps, &y0, parallel)
                            .context("perturbative solve")?;
                    let elapsed = start.elapsed().as_secs_f64();
                    let distance = solution_distance(&solution, &reference);
                    let mode_name = match mode {
                        Expansion::Dyson => "dyson",
                        Expansion::Magnus => "magnus",
                    };
                    log::info!(
                        "{mode_name} order={order} cheb={cheb} steps={n_steps}: distance {distance:.3e} ({elapsed:.3}s)"
                    );
                    writer.write_record([
                        mode_name.to_string(),
                        order.to_string(),
                        cheb.to_string(),
                        n_steps.to_string(),
                        exp.labels.len().to_string(),
                        format!("{distance:e}"),
                        format!("{elapsed:.6}"),
                    ])?;
                }
            }
        }
    }
    out.push_str(&String::from_utf8(writer.into_inner()?)?);
    Ok(out)
}

pub fn robustness(cfg: &RobustnessConfig, seed: u64) -> Result<String> {
    let max_channel = cfg.channels.iter().copied().max().unwrap_or(0);
    if cfg.sigmas.len() <= max_channel || cfg.bounds.len() <= max_channel {
        bail!(
            "sigmas/bounds must cover channel {max_channel} (got {} / {})",
            cfg.sigmas.len(),
            cfg.bounds.len()
        );
    }
    let labels = labels_for_channels(&cfg.channels, cfg.order);
    let problem = build_transmon_problem(
        &cfg.transmon,
        cfg.t_span,
        labels,
        &cfg.channels,
        Expansion::Magnus,
        cfg.method,
        seed,
    )?;
    let magnus = compute_perturbation_terms(&problem).context("computing Magnus terms")?;
    let poly = magnus.to_polynomial();

    // products of two expansion monomials reach order 2n
    let product_labels = labels_for_channels(&cfg.channels, 2 * cfg.order);
    let moments = gaussian_moments(&product_labels, &cfg.sigmas, &cfg.bounds)?;
    let breakdown = robustness_breakdown(&poly, &moments)?;
    log::info!("g = {:.6e} from {} surviving monomials", breakdown.total, breakdown.terms.len());
    println!("g = {:e}", breakdown.total);

    let used_moments: Vec<&(Multiset, f64)> =
        moments.iter().filter(|(_, v)| *v != 0.0).collect();
    json_output(
        cfg,
        seed,
        json!({
            "g": breakdown.total,
            "terms": breakdown.terms,
            "nonzero_moments": used_moments,
        }),
    )
}
