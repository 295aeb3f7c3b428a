//! Campaign stages. Each stage reads its inputs from and writes its outputs to the output
//! directory, so stages can be rerun independently.

use std::fmt::Write as _;
use std::ops::ControlFlow;

use anyhow::{bail, Context, Result};
use specguard_core::bayesopt::{history_from_csv, history_to_csv, FalsificationResult, Falsifier};
use specguard_core::calibrate::{estimate_accuracy, AccuracyProfile};
use specguard_core::certify::{self as cert, Certificate, ValidationReport};
use specguard_core::stl::robustness;
use specguard_core::systems::simulate_nominal;

use crate::artifacts::{self as art, OutDir};
use crate::campaign::Campaign;

/// Bins in the deviation histogram.
pub const HISTOGRAM_BINS: usize = 20;

pub fn calibrate(c: &Campaign, out: &OutDir) -> Result<AccuracyProfile> {
    let cal = &c.config.calibration;
    let profile = estimate_accuracy(
        &c.nominal,
        &c.true_model,
        &c.controller,
        &c.scenario,
        &c.space,
        &c.norm,
        cal.samples,
        cal.lambda,
        c.config.calibration_mode()?,
        cal.seed,
    )?;
    out.write_json(art::PROFILE, &profile)?;
    Ok(profile)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FalsifyOptions {
    /// Discard any stored history instead of resuming from it.
    pub fresh: bool,
    /// Stop once the history holds this many evaluations.
    pub stop_after: Option<usize>,
}

fn nominal_robustness(c: &Campaign, d: &[f64]) -> Result<f64, String> {
    let tr = simulate_nominal(&c.nominal, &c.controller, &c.scenario, d).map_err(|e| e.to_string())?;
    robustness(&c.measure, &tr).map_err(|e| e.to_string())
}

fn stored_falsifier(c: &Campaign, out: &OutDir) -> Result<Falsifier> {
    let history = history_from_csv(&out.read(art::HISTORY)?)?;
    Falsifier::resume(c.space.clone(), c.config.bo_params(), c.config.bo.seed, history)
        .context("stored falsification history does not belong to this configuration")
}

/// Minimizes nominal robustness, checkpointing the history after every evaluation. An existing
/// history is resumed unless `opts.fresh` is set.
pub fn falsify(c: &Campaign, out: &OutDir, opts: FalsifyOptions) -> Result<FalsificationResult> {
    let mut falsifier = if out.exists(art::HISTORY) && !opts.fresh {
        stored_falsifier(c, out)?
    } else {
        Falsifier::new(c.space.clone(), c.config.bo_params(), c.config.bo.seed)?
    };
    let dim = c.space.len();
    let mut history = falsifier.history().to_vec();
    if opts.stop_after.is_some_and(|n| history.len() >= n) {
        out.write(art::HISTORY, &history_to_csv(&history, dim))?;
        return Ok(falsifier.result()?);
    }
    let mut write_err = None;
    let result = falsifier.run(
        |d: &[f64]| nominal_robustness(c, d),
        |e| {
            history.push(e.clone());
            if let Err(err) = out.write(art::HISTORY, &history_to_csv(&history, dim)) {
                write_err = Some(err);
                return ControlFlow::Break(());
            }
            match opts.stop_after {
                Some(n) if history.len() >= n => ControlFlow::Break(()),
                _ => ControlFlow::Continue(()),
            }
        },
    )?;
    if let Some(err) = write_err {
        return Err(err);
    }
    out.write(art::HISTORY, &history_to_csv(&result.history, dim))?;
    Ok(result)
}

fn completed_falsification(c: &Campaign, out: &OutDir) -> Result<FalsificationResult> {
    let f = stored_falsifier(c, out)?;
    let r = f.result()?;
    if !r.is_complete() {
        bail!(
            "falsification stopped after {} of {} evaluations; rerun `specguard falsify` to finish it",
            r.history.len(),
            r.budget
        );
    }
    Ok(r)
}

/// Timestamp for certificates: `SOURCE_DATE_EPOCH` when set, else a fixed epoch.
pub fn created_at() -> Result<String> {
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => {
            let secs: i64 = v.trim().parse().with_context(|| format!("SOURCE_DATE_EPOCH={v:?}"))?;
            let t = chrono::DateTime::from_timestamp(secs, 0).context("SOURCE_DATE_EPOCH out of range")?;
            Ok(t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
        }
        Err(_) => Ok(cert::DEFAULT_CREATED_AT.into()),
    }
}

pub fn certify(c: &Campaign, out: &OutDir) -> Result<Certificate> {
    let profile: AccuracyProfile = out.read_json(art::PROFILE)?;
    if profile.t_f != c.scenario.t_f || profile.dt != c.scenario.dt {
        bail!(
            "accuracy profile covers t_f = {}, dt = {} but the scenario uses t_f = {}, dt = {}",
            profile.t_f,
            profile.dt,
            c.scenario.t_f,
            c.scenario.dt
        );
    }
    let fr = completed_falsification(c, out)?;
    let mut certificate = cert::certify(&fr, &profile, &c.measure, &c.spec)?;
    certificate.accuracy_profile_ref = out.sha256(art::PROFILE)?;
    certificate.falsification_ref = out.sha256(art::HISTORY)?;
    certificate.created_at = created_at()?;
    out.write_json(art::CERTIFICATE, &certificate)?;
    Ok(certificate)
}

pub fn validate(c: &Campaign, out: &OutDir) -> Result<ValidationReport> {
    let fr = completed_falsification(c, out)?;
    let v = &c.config.validation;
    let mut report = cert::validate_empirically(
        &c.true_model,
        &c.controller,
        &c.scenario,
        &fr.d_star,
        &c.spec,
        &c.measure,
        v.trials,
        v.seed,
    )?;
    if v.sweep > 0 {
        report.sweep =
            cert::sweep(&c.true_model, &c.controller, &c.scenario, &c.space, &c.spec, &c.measure, v.sweep, v.seed)?;
    }
    let mut traces = Vec::new();
    if v.traces > 0 {
        traces.push(("nominal".to_string(), simulate_nominal(&c.nominal, &c.controller, &c.scenario, &fr.d_star)?));
        for k in 0..v.traces.min(v.trials) {
            match cert::validation_trace(&c.true_model, &c.controller, &c.scenario, &fr.d_star, v.seed, k) {
                Ok(tr) => traces.push((k.to_string(), tr)),
                Err(specguard_core::systems::SimError::Divergence { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    out.write_json(art::VALIDATION, &report)?;
    out.write(art::TRACES, &art::traces_to_csv(&traces))?;
    Ok(report)
}

fn deviation_histogram(profile: &AccuracyProfile) -> String {
    let finite: Vec<f64> = profile.samples_sorted.iter().copied().filter(|v| v.is_finite()).collect();
    let mut out = String::from("bin_lo,bin_hi,count\n");
    let hi = finite.iter().copied().fold(0.0, f64::max);
    if !finite.is_empty() {
        let width = if hi > 0.0 { hi / HISTOGRAM_BINS as f64 } else { 0.0 };
        let mut counts = [0usize; HISTOGRAM_BINS];
        for v in &finite {
            let i = if width > 0.0 { ((v / width) as usize).min(HISTOGRAM_BINS - 1) } else { 0 };
            counts[i] += 1;
        }
        for (i, n) in counts.iter().enumerate() {
            let lo = i as f64 * width;
            let up = if i + 1 == HISTOGRAM_BINS { hi } else { (i + 1) as f64 * width };
            writeln!(out, "{lo},{up},{n}").unwrap();
        }
    }
    if profile.divergences > 0 {
        writeln!(out, "inf,inf,{}", profile.divergences).unwrap();
    }
    out
}

fn convergence(out: &OutDir) -> Result<String> {
    let history = history_from_csv(&out.read(art::HISTORY)?)?;
    let mut csv = String::from("iteration,value,incumbent,penalized\n");
    for e in &history {
        writeln!(csv, "{},{},{},{}", e.iteration, e.value, e.incumbent, u8::from(e.penalized)).unwrap();
    }
    Ok(csv)
}

fn trace_plot(c: &Campaign, out: &OutDir) -> Result<String> {
    let traces = art::traces_from_csv(&out.read(art::TRACES)?)?;
    let coord = c.plotted_coordinate();
    let mut csv = String::from("t");
    for (source, _) in &traces {
        if source == "nominal" {
            csv.push_str(",nominal");
        } else {
            write!(csv, ",trial_{source}").unwrap();
        }
    }
    csv.push('\n');
    let Some((_, first)) = traces.first() else {
        return Ok(csv);
    };
    for (k, t) in first.times().iter().enumerate() {
        write!(csv, "{t}").unwrap();
        for (_, tr) in &traces {
            match tr.states().get(k) {
                Some(x) => write!(csv, ",{}", x[coord]).unwrap(),
                None => csv.push(','),
            }
        }
        csv.push('\n');
    }
    Ok(csv)
}

/// Regenerates the plot tables from stored artifacts. Each table is written when its source
/// artifact exists; at least one must.
pub fn report(c: &Campaign, out: &OutDir) -> Result<Vec<&'static str>> {
    let mut written = Vec::new();
    if out.exists(art::PROFILE) {
        let profile: AccuracyProfile = out.read_json(art::PROFILE)?;
        out.write(art::PLOT_DEVIATIONS, &deviation_histogram(&profile))?;
        written.push(art::PLOT_DEVIATIONS);
    }
    if out.exists(art::HISTORY) {
        out.write(art::PLOT_CONVERGENCE, &convergence(out)?)?;
        written.push(art::PLOT_CONVERGENCE);
    }
    if out.exists(art::TRACES) {
        out.write(art::PLOT_TRACES, &trace_plot(c, out)?)?;
        written.push(art::PLOT_TRACES);
    }
    if written.is_empty() {
        bail!("no artifacts to report on; run `specguard calibrate`, `falsify` or `validate` first");
    }
    Ok(written)
}

/// Summary of a full campaign.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub profile: AccuracyProfile,
    pub falsification: FalsificationResult,
    pub certificate: Certificate,
    pub validation: ValidationReport,
}

/// calibrate, falsify, certify, validate, report.
pub fn run(c: &Campaign, out: &OutDir) -> Result<RunSummary> {
    let profile = calibrate(c, out)?;
    let falsification = falsify(c, out, FalsifyOptions { fresh: true, stop_after: None })?;
    let certificate = certify(c, out)?;
    let validation = validate(c, out)?;
    report(c, out)?;
    Ok(RunSummary { profile, falsification, certificate, validation })
}
