//! Mean-vs-median contamination experiment: verify the outlier-robustness
//! theory numerically over a grid of contamination rates and outlier
//! magnitudes.

use std::path::PathBuf;

use prefcal::numerics::fmt_f64;
use prefcal::rng::SplitMix64;
use prefcal::robustness::{
    dkw_check, median, reports_to_csv, sample_with_outlier_count, verify_contamination_theorem,
    CleanFamily, ContaminationModel, EstimatorReport,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::rundir::RunDir;
use crate::{Result, RunnerError};

#[derive(Serialize)]
struct ContaminationChecks {
    /// Per positive alpha: regression slope of mean-over-seeds empirical
    /// mean against the outlier offset, and its relative error to alpha.
    slopes: Vec<SlopeCheck>,
    /// Per positive alpha: worst |median - analytic| and spread across the
    /// offset grid (both over seed means).
    medians: Vec<MedianCheck>,
    /// alpha = 0 control: CLT bands for both estimators.
    clean_control: Option<CleanControl>,
    median_stability_pass: bool,
    breakdown_median: f64,
    dkw_bound: f64,
    dkw_violation_frequency: f64,
    all_pass: bool,
}

#[derive(Serialize)]
struct SlopeCheck {
    alpha: f64,
    slope: f64,
    relative_error: f64,
    pass: bool,
}

#[derive(Serialize)]
struct MedianCheck {
    alpha: f64,
    max_abs_deviation: f64,
    max_spread: f64,
    pass: bool,
}

#[derive(Serialize)]
struct CleanControl {
    mean_abs_deviation: f64,
    median_abs_deviation: f64,
    band: f64,
    pass: bool,
}

fn seed_means(reports: &[EstimatorReport], alpha: f64, offset: f64) -> (f64, f64) {
    let rows: Vec<&EstimatorReport> = reports
        .iter()
        .filter(|r| r.alpha == alpha && r.outlier_offset == offset)
        .collect();
    let n = rows.len() as f64;
    (
        rows.iter().map(|r| r.empirical_mean).sum::<f64>() / n,
        rows.iter().map(|r| r.empirical_median).sum::<f64>() / n,
    )
}

/// Least-squares slope through the origin-free fit of y against x.
fn regression_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let var: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    cov / var
}

pub fn run(config: &RunConfig) -> Result<PathBuf> {
    let mut dir = RunDir::create(config)?;
    let cc = &config.contamination;
    let mut all_reports: Vec<EstimatorReport> = Vec::new();

    let seeds: Vec<u64> = (0..cc.num_seeds)
        .map(|i| SplitMix64::stream(config.master_seed, "contamination-seed", i as u64).next_u64())
        .collect();

    dir.time("grid", |_| {
        for &alpha in &cc.alphas {
            let base = ContaminationModel::new(0.0, alpha, 0.0, CleanFamily::Uniform, cc.bound, 0)?;
            let reports = verify_contamination_theorem(&base, &cc.offsets, cc.n, &seeds)?;
            all_reports.extend(reports);
        }
        Ok(())
    })?;
    dir.write(
        "reports/contamination.csv",
        reports_to_csv(&all_reports).as_bytes(),
    )?;
    dir.write(
        "reports/contamination.json",
        serde_json::to_string_pretty(&all_reports)
            .expect("report serialization cannot fail")
            .as_bytes(),
    )?;

    // Checks against the closed-form predictions.
    let mut slopes = Vec::new();
    let mut medians = Vec::new();
    let mut clean_control = None;
    for &alpha in &cc.alphas {
        if alpha == 0.0 {
            // Clean control: both estimators concentrate at z within a CLT
            // band of 3 B / sqrt(n).
            let band = 3.0 * cc.bound / (cc.n as f64).sqrt();
            let mut worst_mean: f64 = 0.0;
            let mut worst_median: f64 = 0.0;
            for &offset in &cc.offsets {
                let (m, md) = seed_means(&all_reports, alpha, offset);
                worst_mean = worst_mean.max(m.abs());
                worst_median = worst_median.max(md.abs());
            }
            clean_control = Some(CleanControl {
                mean_abs_deviation: worst_mean,
                median_abs_deviation: worst_median,
                band,
                pass: worst_mean <= band && worst_median <= band,
            });
            continue;
        }
        let points: Vec<(f64, f64)> = cc
            .offsets
            .iter()
            .map(|&offset| (offset, seed_means(&all_reports, alpha, offset).0))
            .collect();
        let slope = regression_slope(&points);
        let relative_error = (slope - alpha).abs() / alpha;
        slopes.push(SlopeCheck {
            alpha,
            slope,
            relative_error,
            pass: relative_error <= 0.05,
        });

        let model = ContaminationModel::new(0.0, alpha, 0.0, CleanFamily::Uniform, cc.bound, 0)?;
        let delta = model.analytic_median_offset()?;
        let med_means: Vec<f64> = cc
            .offsets
            .iter()
            .map(|&offset| seed_means(&all_reports, alpha, offset).1)
            .collect();
        let max_abs_deviation = med_means
            .iter()
            .map(|m| (m - delta).abs())
            .fold(0.0, f64::max);
        let max_spread = med_means
            .iter()
            .flat_map(|a| med_means.iter().map(move |b| (a - b).abs()))
            .fold(0.0, f64::max);
        medians.push(MedianCheck {
            alpha,
            max_abs_deviation,
            max_spread,
            pass: max_abs_deviation <= 0.05 && max_spread <= 0.05,
        });
    }

    // Deterministic median stability: K < n/2 outliers at +1e6 cannot move
    // the median out of the clean support.
    let stability_model = ContaminationModel::new(
        0.0,
        0.3,
        1e6,
        CleanFamily::Uniform,
        cc.bound,
        config.master_seed,
    )?;
    let n_stab = 10_001;
    let injected = sample_with_outlier_count(&stability_model, n_stab, (3 * n_stab) / 10)?;
    let stab_median = median(&injected.values);
    let median_stability_pass = stab_median.abs() <= cc.bound;

    // Breakdown demonstration: K >= n/2 moves the median to the outlier.
    let broken = sample_with_outlier_count(&stability_model, n_stab, n_stab / 2 + 1)?;
    let breakdown_median = median(&broken.values);

    // DKW concentration at the default operating point.
    let dkw_model = ContaminationModel::new(
        0.0,
        0.1,
        10.0,
        CleanFamily::Uniform,
        cc.bound,
        config.master_seed,
    )?;
    let dkw = dir.time("dkw", |_| Ok(dkw_check(&dkw_model, 10_000, 1000, 0.05)?))?;
    let dkw_sigma = (dkw.bound * (1.0 - dkw.bound) / dkw.num_trials as f64)
        .abs()
        .sqrt();
    let dkw_pass = dkw.violation_frequency <= dkw.bound + 3.0 * dkw_sigma;

    let all_pass = slopes.iter().all(|s| s.pass)
        && medians.iter().all(|m| m.pass)
        && clean_control.as_ref().map(|c| c.pass).unwrap_or(true)
        && median_stability_pass
        && dkw_pass;
    let checks = ContaminationChecks {
        slopes,
        medians,
        clean_control,
        median_stability_pass,
        breakdown_median,
        dkw_bound: dkw.bound,
        dkw_violation_frequency: dkw.violation_frequency,
        all_pass,
    };

    let mut checks_csv = String::from("check,value,threshold,pass\n");
    for s in &checks.slopes {
        checks_csv.push_str(&format!(
            "slope_alpha_{},{},{},{}\n",
            s.alpha,
            fmt_f64(s.relative_error),
            fmt_f64(0.05),
            s.pass
        ));
    }
    for m in &checks.medians {
        checks_csv.push_str(&format!(
            "median_alpha_{},{},{},{}\n",
            m.alpha,
            fmt_f64(m.max_abs_deviation.max(m.max_spread)),
            fmt_f64(0.05),
            m.pass
        ));
    }
    if let Some(c) = &checks.clean_control {
        checks_csv.push_str(&format!(
            "clean_control,{},{},{}\n",
            fmt_f64(c.mean_abs_deviation.max(c.median_abs_deviation)),
            fmt_f64(c.band),
            c.pass
        ));
    }
    checks_csv.push_str(&format!(
        "median_stability,{},{},{}\n",
        fmt_f64(stab_median.abs()),
        fmt_f64(cc.bound),
        median_stability_pass
    ));
    checks_csv.push_str(&format!(
        "dkw,{},{},{}\n",
        fmt_f64(dkw.violation_frequency),
        fmt_f64(dkw.bound),
        dkw_pass
    ));
    dir.write("reports/checks.csv", checks_csv.as_bytes())?;
    dir.write(
        "reports/checks.json",
        serde_json::to_string_pretty(&checks)
            .expect("checks serialization cannot fail")
            .as_bytes(),
    )?;

    let root = dir.finish(config)?;
    if !all_pass {
        return Err(RunnerError::Invariant(format!(
            "contamination checks failed; see {}",
            root.join("reports/checks.json").display()
        )));
    }
    Ok(root)
}
