//! Verification suite for the calibration-metric identities and
//! inequalities over seeded random datasets.

use std::path::PathBuf;

use prefcal::metrics::{
    classwise_ece, decomposition_noise_term, ece_binned, exact_conditional_ece, l1_risk,
    reliability_diagram, weighted_ece, PredictionRecord,
};
use prefcal::numerics::fmt_f64;
use prefcal::rng::SplitMix64;
use serde::Serialize;

use crate::config::RunConfig;
use crate::rundir::RunDir;
use crate::{Result, RunnerError};

#[derive(Debug, Clone, Serialize)]
pub struct SuiteItem {
    pub check: String,
    pub samples: usize,
    /// Largest observed violation (nonpositive values mean the property
    /// held with margin).
    pub max_violation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Random grouped dataset: sizes 1..=500, group keys shared by several
/// records, classes attached.
fn random_dataset(rng: &mut SplitMix64, with_classes: bool) -> Vec<PredictionRecord> {
    let n = 1 + rng.next_below(500) as usize;
    let num_groups = 1 + rng.next_below(20) as usize;
    let num_classes = 2 + rng.next_below(4) as usize;
    (0..n)
        .map(|_| {
            let g = rng.next_below(num_groups as u64);
            let confidence = rng.next_f64();
            let p_correct = rng.next_f64();
            let correct = rng.next_bool(p_correct);
            let mut r = PredictionRecord::new(confidence, correct)
                .expect("valid confidence")
                .with_group(format!("g{g}"));
            if with_classes {
                r = r.with_class(rng.next_below(num_classes as u64) as usize);
            }
            r
        })
        .collect()
}

/// Dataset for the decomposition identity: constant confidence within each
/// group (the group key is the confidence-determining context) and
/// `oracle_z` equal to the within-group mean of the correctness draws.
fn decomposition_dataset(rng: &mut SplitMix64) -> Vec<PredictionRecord> {
    let num_groups = 1 + rng.next_below(20) as usize;
    let mut records = Vec::new();
    for g in 0..num_groups {
        let size = 1 + rng.next_below(25) as usize;
        let confidence = rng.next_f64();
        let p = rng.next_f64();
        let draws: Vec<bool> = (0..size).map(|_| rng.next_bool(p)).collect();
        let mean_z = draws.iter().filter(|z| **z).count() as f64 / size as f64;
        for &z in &draws {
            records.push(
                PredictionRecord::new(confidence, z)
                    .expect("valid confidence")
                    .with_group(format!("g{g}"))
                    .with_oracle_z(mean_z)
                    .expect("valid oracle"),
            );
        }
    }
    records
}

/// Run every metric identity and inequality check. Deterministic under
/// `master_seed`.
pub fn run_suite(master_seed: u64) -> prefcal::Result<Vec<SuiteItem>> {
    let mut items = Vec::new();

    // Jensen: exact conditional ECE never exceeds the L1 risk.
    {
        let mut rng = SplitMix64::stream(master_seed, "ms-jensen", 0);
        let n = 1000;
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..n {
            let records = random_dataset(&mut rng, false);
            let exact = exact_conditional_ece(&records)?;
            let l1 = l1_risk(&records)?;
            worst = worst.max(exact - l1);
        }
        items.push(SuiteItem {
            check: "jensen_exact_le_l1".into(),
            samples: n,
            max_violation: worst,
            tolerance: 1e-12,
            pass: worst <= 1e-12,
        });
    }

    // Decomposition identity: l1 = exact + noise.
    {
        let mut rng = SplitMix64::stream(master_seed, "ms-decomposition", 0);
        let n = 1000;
        let mut worst = 0.0f64;
        for _ in 0..n {
            let records = decomposition_dataset(&mut rng);
            let l1 = l1_risk(&records)?;
            let exact = exact_conditional_ece(&records)?;
            let noise = decomposition_noise_term(&records)?;
            worst = worst.max((l1 - exact - noise).abs());
        }
        items.push(SuiteItem {
            check: "l1_equals_exact_plus_noise".into(),
            samples: n,
            max_violation: worst,
            tolerance: 1e-12,
            pass: worst <= 1e-12,
        });
    }

    // Dominance chain: exact <= classwise <= l1.
    {
        let mut rng = SplitMix64::stream(master_seed, "ms-dominance", 0);
        let n = 1000;
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..n {
            let records = random_dataset(&mut rng, true);
            let num_classes = records
                .iter()
                .filter_map(|r| r.true_class)
                .max()
                .unwrap_or(0)
                + 1;
            let exact = exact_conditional_ece(&records)?;
            let cw = classwise_ece(&records, num_classes)?;
            let l1 = l1_risk(&records)?;
            worst = worst.max(exact - cw).max(cw - l1);
        }
        items.push(SuiteItem {
            check: "dominance_exact_le_cw_le_l1".into(),
            samples: n,
            max_violation: worst,
            tolerance: 1e-12,
            pass: worst <= 1e-12,
        });
    }

    // Bounded reweighting: weighted <= w_max * exact.
    {
        let mut rng = SplitMix64::stream(master_seed, "ms-weighted", 0);
        let n = 1000;
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..n {
            let records = random_dataset(&mut rng, false);
            // One weight per group, in [0, 2].
            let mut weights = Vec::with_capacity(records.len());
            let mut by_group: std::collections::BTreeMap<String, f64> = Default::default();
            for r in &records {
                let key = r.group_key.clone().expect("grouped dataset");
                let w = *by_group
                    .entry(key)
                    .or_insert_with(|| rng.next_range(0.0, 2.0));
                weights.push(w);
            }
            let w_max = weights.iter().cloned().fold(0.0, f64::max);
            let weighted = weighted_ece(&records, &weights)?;
            let exact = exact_conditional_ece(&records)?;
            worst = worst.max(weighted - w_max * exact);
        }
        items.push(SuiteItem {
            check: "weighted_le_wmax_exact".into(),
            samples: n,
            max_violation: worst,
            tolerance: 1e-12,
            pass: worst <= 1e-12,
        });
    }

    // Per-token loss symmetry under target complement.
    {
        let mut rng = SplitMix64::stream(master_seed, "ms-symmetry", 0);
        let n = 100_000;
        let mut worst = 0.0f64;
        for _ in 0..n {
            let z = rng.next_f64();
            let c = rng.next_f64();
            let sum = prefcal::calibration::token_cal_loss(z, c)?
                + prefcal::calibration::token_cal_loss(1.0 - z, c)?;
            worst = worst.max((sum - 1.0).abs());
        }
        items.push(SuiteItem {
            check: "token_loss_symmetry".into(),
            samples: n,
            max_violation: worst,
            tolerance: 1e-15,
            pass: worst <= 1e-15,
        });
    }

    // Binned ECE stays in range and is exactly recomputable from the
    // reliability diagram.
    {
        let mut rng = SplitMix64::stream(master_seed, "ms-binned", 0);
        let n = 500;
        let mut worst = 0.0f64;
        for _ in 0..n {
            let records = random_dataset(&mut rng, false);
            let bins = 1 + rng.next_below(40) as usize;
            let direct = ece_binned(&records, bins)?;
            let rel = reliability_diagram(&records, bins)?;
            if !(0.0..=1.0).contains(&direct) {
                worst = worst.max(1.0);
            }
            worst = worst.max((rel.ece() - direct).abs());
            let counted: usize = rel.bins.iter().map(|b| b.count).sum();
            if counted != records.len() {
                worst = worst.max(1.0);
            }
        }
        items.push(SuiteItem {
            check: "binned_range_and_recompute".into(),
            samples: n,
            max_violation: worst,
            tolerance: 0.0,
            pass: worst <= 0.0,
        });
    }

    Ok(items)
}

pub fn items_to_csv(items: &[SuiteItem]) -> String {
    let mut out = String::from("check,samples,max_violation,tolerance,pass\n");
    for i in items {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            i.check,
            i.samples,
            fmt_f64(i.max_violation),
            fmt_f64(i.tolerance),
            i.pass,
        ));
    }
    out
}

pub fn run(config: &RunConfig) -> Result<PathBuf> {
    let mut dir = RunDir::create(config)?;
    let items = dir.time("suite", |_| Ok(run_suite(config.master_seed)?))?;
    dir.write(
        "reports/metrics_suite.csv",
        items_to_csv(&items).as_bytes(),
    )?;
    dir.write(
        "reports/metrics_suite.json",
        serde_json::to_string_pretty(&items)
            .expect("suite serialization cannot fail")
            .as_bytes(),
    )?;
    let failed = items.iter().any(|i| !i.pass);
    let root = dir.finish(config)?;
    if failed {
        return Err(RunnerError::Invariant(format!(
            "metric identity checks failed; see {}",
            root.join("reports/metrics_suite.json").display()
        )));
    }
    Ok(root)
}
