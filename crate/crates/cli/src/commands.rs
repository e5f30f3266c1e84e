//! The four harness commands. Each appends result lines as it goes, so a run
//! that stops on an error still reports what it finished.

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use weyl_persistence::bounds::{self, SuiteConfig};
use weyl_persistence::persistence::{self, ExponentFit, PersistenceEstimate, Side};
use weyl_persistence::SampleOptions;

use crate::config::{Command, ExperimentConfig, SideChoice};
use crate::error::CliError;
use crate::record::{ResultLine, RunHeader, RunRecord, BUILD_ID};

/// Runs `command` with a merged configuration. Configuration errors produce
/// no record; any later error is returned next to the partial record.
pub fn run(command: Command, config: &ExperimentConfig) -> Result<(RunRecord, Option<CliError>), CliError> {
    let resolved = config.resolve(command)?;
    let timestamp_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let started = Instant::now();
    let mut results = Vec::new();
    let outcome = match command {
        Command::EstimateB => estimate_b(&resolved, &mut results),
        Command::WeylExponent => weyl_exponent(&resolved, &mut results),
        Command::VerifyBounds => verify_bounds(&resolved, &mut results),
        Command::Decompose => decompose(&resolved, &mut results),
    };
    let failure = outcome.err();
    let header = RunHeader {
        kind: "run".into(),
        command: command.name().into(),
        config: resolved,
        build: BUILD_ID.into(),
        timestamp_unix,
        duration_secs: started.elapsed().as_secs_f64(),
        error: failure.as_ref().map(|e| e.to_string()),
    };
    Ok((RunRecord { header, results }, failure))
}

fn options(config: &ExperimentConfig) -> SampleOptions {
    SampleOptions { workers: config.workers, ..SampleOptions::default() }
}

fn required<T: Clone>(value: &Option<T>) -> T {
    value.clone().expect("resolved configuration fills every field its command reads")
}

fn push_fit(
    results: &mut Vec<ResultLine>,
    label: &str,
    estimates: &[PersistenceEstimate],
) -> Result<ExponentFit, CliError> {
    let fit = persistence::fit_exponent(estimates)?;
    results.push(ResultLine::fit(label, &fit));
    Ok(fit)
}

/// Ratio `a / b` with first-order propagated standard error.
pub fn ratio_with_stderr(a: f64, a_err: f64, b: f64, b_err: f64) -> (f64, f64) {
    let r = a / b;
    (r, r.abs() * ((a_err / a).powi(2) + (b_err / b).powi(2)).sqrt())
}

fn estimate_b(config: &ExperimentConfig, results: &mut Vec<ResultLine>) -> Result<(), CliError> {
    let kernel = required(&config.kernel).spec();
    let t_list = required(&config.t);
    let step = required(&config.step);
    let estimates =
        persistence::sweep_t(kernel, &t_list, step, required(&config.trials), required(&config.seed), options(config))?;
    for e in &estimates {
        results.push(ResultLine::estimate("stationary", &[("T", e.scale), ("step", step)], e));
    }
    let fit = push_fit(results, "log_p_vs_T", &estimates)?;
    results.push(ResultLine::Derived { label: "b_hat".into(), value: -fit.slope, stderr: fit.slope_stderr });
    Ok(())
}

fn side_label(side: Side) -> &'static str {
    match side {
        Side::HalfLine => "half_line",
        Side::WholeLine => "whole_line",
    }
}

fn weyl_exponent(config: &ExperimentConfig, results: &mut Vec<ResultLine>) -> Result<(), CliError> {
    let n_list = required(&config.n);
    let step = required(&config.step);
    let trials = required(&config.trials);
    let seed = required(&config.seed);
    let sides: &[Side] = match required(&config.side) {
        SideChoice::Half => &[Side::HalfLine],
        SideChoice::Whole => &[Side::WholeLine],
        SideChoice::Both => &[Side::HalfLine, Side::WholeLine],
    };
    let mut fits = Vec::new();
    for &side in sides {
        let label = side_label(side);
        let mut fit_at = |step: f64, label: &str| -> Result<ExponentFit, CliError> {
            let estimates = persistence::sweep_n(side, &n_list, step, trials, seed, options(config))?;
            for (e, &n) in estimates.iter().zip(&n_list) {
                results.push(ResultLine::estimate(label, &[("n", n as f64), ("step", step)], e));
            }
            push_fit(results, label, &estimates)
        };
        let fit = fit_at(step, label)?;
        if required(&config.refine) {
            let refined = fit_at(step / 2.0, &format!("{label}_refined"))?;
            results.push(ResultLine::Derived {
                label: format!("{label}_refinement_gap"),
                value: fit.slope - refined.slope,
                stderr: fit.slope_stderr.hypot(refined.slope_stderr),
            });
        }
        fits.push(fit);
    }
    if let [half, whole] = fits.as_slice() {
        let (value, stderr) = ratio_with_stderr(whole.slope, whole.slope_stderr, half.slope, half.slope_stderr);
        results.push(ResultLine::Derived { label: "whole_over_half".into(), value, stderr });
    }
    Ok(())
}

fn verify_bounds(config: &ExperimentConfig, results: &mut Vec<ResultLine>) -> Result<(), CliError> {
    let suite = SuiteConfig { n_list: required(&config.n), ..SuiteConfig::default() };
    let reports = bounds::run_suite(&suite)?;
    results.extend(reports.iter().map(ResultLine::report));
    let failed: Vec<String> = reports.iter().filter(|r| !r.pass).map(|r| r.name.clone()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::VerificationFailed(failed))
    }
}

fn decompose(config: &ExperimentConfig, results: &mut Vec<ResultLine>) -> Result<(), CliError> {
    let step = required(&config.step);
    for n in required(&config.n) {
        let d = persistence::product_decomposition(
            n,
            step,
            required(&config.trials),
            required(&config.seed),
            options(config),
        )?;
        let root = (n as f64).sqrt();
        let params =
            |lo: f64, hi: f64| [("n", n as f64), ("alpha_n", d.alpha_n), ("lo", lo), ("hi", hi), ("step", step)];
        let (a, b) = (root - d.alpha_n, root + d.alpha_n);
        let end = root + 3.0 * d.alpha_n;
        results.push(ResultLine::estimate("full", &params(0.0, end), &d.full));
        results.push(ResultLine::estimate("A", &params(0.0, a), &d.a));
        results.push(ResultLine::estimate("B", &params(a, b), &d.b));
        results.push(ResultLine::estimate("C", &params(b, end), &d.c));
        results.push(ResultLine::slepian(n, &d.slepian));
        results.push(ResultLine::EdgeRate {
            n,
            neg_log_b_over_sqrt_n: -d.b.log_p / root,
            neg_log_c_over_sqrt_n: -d.c.log_p / root,
        });
    }
    Ok(())
}

/// Short human-readable digest of a record.
pub fn summary(record: &RunRecord) -> String {
    let mut out = format!("{} ({:.1} s)\n", record.header.command, record.header.duration_secs);
    for line in &record.results {
        let text = match line {
            ResultLine::Estimate { label, params, successes, trials, p_hat, ci, .. } => {
                let params: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                format!(
                    "{label} [{}]: {successes}/{trials} p={p_hat:.6e} ci=[{:.3e}, {:.3e}]",
                    params.join(" "),
                    ci[0],
                    ci[1]
                )
            }
            ResultLine::Fit { label, slope, stderr, r2, .. } => {
                format!("fit {label}: slope={slope:.5} +- {stderr:.5} r2={r2:.4}")
            }
            ResultLine::Derived { label, value, stderr } => format!("{label} = {value:.5} +- {stderr:.5}"),
            ResultLine::Report { name, worst_margin, pass, .. } => {
                format!("{} {name}: worst margin {worst_margin:.3e}", if *pass { "PASS" } else { "FAIL" })
            }
            ResultLine::Slepian { n, full, product, margin, pass, .. } => format!(
                "slepian n={n}: full={full:.4e} product={product:.4e} margin={margin:.3e} {}",
                if *pass { "ok" } else { "violated" }
            ),
            ResultLine::EdgeRate { n, neg_log_b_over_sqrt_n, neg_log_c_over_sqrt_n } => format!(
                "edge rates n={n}: -log B/sqrt(n)={neg_log_b_over_sqrt_n:.4} -log C/sqrt(n)={neg_log_c_over_sqrt_n:.4}"
            ),
        };
        out.push_str(&text);
        out.push('\n');
    }
    out
}
