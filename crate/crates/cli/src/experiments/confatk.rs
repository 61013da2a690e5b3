//! Confidence@k experiment: accuracy of confidence-based selection at
//! k in {4, 8} for every trained branch, with oracle-calibrated and
//! random-selection control rows.

use std::path::PathBuf;

use prefcal::numerics::fmt_f64;
use prefcal::policy::{default_tau_grid, temperature_scale};
use prefcal::selection::{
    evaluate_selection_rule, ConfidenceSource, SelectionEstimate, SelectionRule,
};
use prefcal::synthdata::Split;
use serde::Serialize;

use super::run_seed;
use crate::config::RunConfig;
use crate::rundir::RunDir;
use crate::{Result, RunnerError};

#[derive(Serialize)]
struct ConfatkRow {
    method: String,
    k: usize,
    temperature: f64,
    accuracy: f64,
    stderr: f64,
}

#[derive(Serialize)]
struct ConfatkChecks {
    /// Oracle control must not lose accuracy going from k=4 to k=8
    /// (3-sigma slack).
    oracle_k8_ge_k4: bool,
    /// Random selection under oracle confidences never beats Confidence@k
    /// (exact scoring on shared candidate sets).
    random_le_confidence: bool,
}

/// Per-method selection report rows (spec schema:
/// `k,temperature,seed,accuracy,stderr`).
fn selection_csv(rows: &[(usize, f64, u64, SelectionEstimate)]) -> String {
    let mut out = String::from("k,temperature,seed,accuracy,stderr\n");
    for (k, tau, seed, est) in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            k,
            fmt_f64(*tau),
            seed,
            fmt_f64(est.accuracy),
            fmt_f64(est.stderr),
        ));
    }
    out
}

pub fn run(config: &RunConfig) -> Result<PathBuf> {
    let mut dir = RunDir::create(config)?;
    let mut rows: Vec<ConfatkRow> = Vec::new();
    let mut per_method: std::collections::BTreeMap<String, Vec<(usize, f64, u64, SelectionEstimate)>> =
        Default::default();

    // Aggregates for control-row checks.
    let mut oracle_by_k: std::collections::BTreeMap<usize, Vec<SelectionEstimate>> =
        Default::default();
    let mut control_pairs: Vec<(f64, f64)> = Vec::new(); // (confidence, random)

    for &seed in &config.seeds {
        let run = dir.time(&format!("seed_{seed}"), |_| run_seed(config, seed))?;
        let derived = config.derived_seed(seed);
        let val = run.data.sft_split(Split::Validation);
        for branch in &run.branches {
            // Per-branch temperature selection on validation, then sample
            // candidates from the scaled policy.
            let tau = temperature_scale(&branch.policy, &val, &default_tau_grid())?;
            let scaled = branch.policy.scaled(tau)?;
            for &k in &config.confatk.k {
                let est = evaluate_selection_rule(
                    &scaled,
                    &run.spec,
                    k,
                    1.0,
                    config.confatk.num_trials,
                    ConfidenceSource::Policy,
                    SelectionRule::ConfidenceAtK,
                    derived,
                    false,
                )?;
                per_method
                    .entry(branch.name.to_string())
                    .or_default()
                    .push((k, tau, seed, est));
            }
        }

        // Control rows ride on the SFT policy with oracle confidences and
        // exact scoring, so their ordering is deterministic.
        for &k in &config.confatk.k {
            let oracle = evaluate_selection_rule(
                &run.sft_policy,
                &run.spec,
                k,
                1.0,
                config.confatk.num_trials,
                ConfidenceSource::Oracle,
                SelectionRule::ConfidenceAtK,
                derived,
                true,
            )?;
            let random = evaluate_selection_rule(
                &run.sft_policy,
                &run.spec,
                k,
                1.0,
                config.confatk.num_trials,
                ConfidenceSource::Oracle,
                SelectionRule::UniformRandom,
                derived,
                true,
            )?;
            control_pairs.push((oracle.accuracy, random.accuracy));
            per_method
                .entry("oracle_confidence".to_string())
                .or_default()
                .push((k, 1.0, seed, oracle.clone()));
            per_method
                .entry("uniform_random_oracle".to_string())
                .or_default()
                .push((k, 1.0, seed, random));
            oracle_by_k.entry(k).or_default().push(oracle);
        }
    }

    // Emit per-method selection reports and the aggregate table.
    for (method, entries) in &per_method {
        dir.write(
            &format!("reports/selection_{method}.csv"),
            selection_csv(entries).as_bytes(),
        )?;
        for &k in &config.confatk.k {
            let of_k: Vec<&(usize, f64, u64, SelectionEstimate)> =
                entries.iter().filter(|(kk, ..)| *kk == k).collect();
            let n = of_k.len() as f64;
            let acc = of_k.iter().map(|(.., e)| e.accuracy).sum::<f64>() / n;
            let err = of_k.iter().map(|(.., e)| e.stderr).sum::<f64>() / n;
            let tau = of_k.iter().map(|(_, t, ..)| *t).sum::<f64>() / n;
            rows.push(ConfatkRow {
                method: method.clone(),
                k,
                temperature: tau,
                accuracy: acc,
                stderr: err,
            });
        }
    }

    let mut csv = String::from("method,k,temperature,accuracy,stderr\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method,
            r.k,
            fmt_f64(r.temperature),
            fmt_f64(r.accuracy),
            fmt_f64(r.stderr),
        ));
    }
    dir.write("reports/confatk.csv", csv.as_bytes())?;

    // Checks.
    let ks: Vec<usize> = config.confatk.k.clone();
    let oracle_k8_ge_k4 = if ks.len() >= 2 {
        let lo = &oracle_by_k[&ks[0]];
        let hi = &oracle_by_k[&ks[ks.len() - 1]];
        let mean = |v: &[SelectionEstimate]| {
            v.iter().map(|e| e.accuracy).sum::<f64>() / v.len() as f64
        };
        let sig = |v: &[SelectionEstimate]| {
            (v.iter().map(|e| e.stderr * e.stderr).sum::<f64>()).sqrt() / v.len() as f64
        };
        mean(hi) >= mean(lo) - 3.0 * (sig(hi) + sig(lo))
    } else {
        true
    };
    let random_le_confidence = control_pairs.iter().all(|(c, r)| r <= c);
    let checks = ConfatkChecks {
        oracle_k8_ge_k4,
        random_le_confidence,
    };
    let detail: Vec<serde_json::Value> = per_method
        .iter()
        .flat_map(|(method, entries)| {
            entries.iter().map(move |(k, tau, seed, est)| {
                serde_json::json!({
                    "method": method,
                    "k": k,
                    "temperature": tau,
                    "seed": seed,
                    "accuracy": est.accuracy,
                    "stderr": est.stderr,
                })
            })
        })
        .collect();
    dir.write(
        "reports/confatk.json",
        serde_json::to_string_pretty(&serde_json::json!({
            "rows": rows,
            "detail": detail,
            "checks": checks,
        }))
        .expect("confatk serialization cannot fail")
        .as_bytes(),
    )?;

    let root = dir.finish(config)?;
    if !checks.oracle_k8_ge_k4 || !checks.random_le_confidence {
        return Err(RunnerError::Invariant(format!(
            "confidence@k control checks failed; see {}",
            root.join("reports/confatk.json").display()
        )));
    }
    Ok(root)
}
