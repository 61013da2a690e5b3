//! Calibration metrics.
//!
//! The estimators form a hierarchy over the same per-record deviation
//! between confidence and correctness:
//!
//! ```text
//! ece_binned            M equal-width bins, sum over bins of (|B|/N)|acc - conf|
//! exact_conditional_ece grouping by an exact context key instead of bins
//! classwise_ece         exact ECE within each true class, class-frequency weighted
//! weighted_ece          exact ECE with a bounded per-group weight
//! l1_risk               mean |confidence - correctness|, no grouping at all
//! ```
//!
//! For the exact-conditional estimators the chain
//! `exact <= classwise <= l1` and the decomposition
//! `l1 = exact + noise` hold at finite sample size, not just in population;
//! the binned estimator is the reporting metric.
//!
//! Bins are half-open `[i/M, (i+1)/M)` with the last bin closed at 1.0, and
//! empty bins contribute zero weight.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::invalid_input;
use crate::numerics::fmt_f64;

/// One scored prediction: a confidence, whether it was correct, and optional
/// side information for the finer-grained estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    /// Reported confidence in `[0, 1]`.
    pub confidence: f64,
    /// Whether the prediction was correct.
    pub correct: bool,
    /// True class label, for classwise estimators.
    pub true_class: Option<usize>,
    /// Opaque key identifying predictions that share the same
    /// confidence-determining context.
    pub group_key: Option<String>,
    /// True correctness probability, when an oracle provides it.
    pub oracle_z: Option<f64>,
}

impl PredictionRecord {
    pub fn new(confidence: f64, correct: bool) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) || !confidence.is_finite() {
            invalid_input!("confidence {confidence} outside [0, 1]");
        }
        Ok(Self {
            confidence,
            correct,
            true_class: None,
            group_key: None,
            oracle_z: None,
        })
    }

    pub fn with_class(mut self, class: usize) -> Self {
        self.true_class = Some(class);
        self
    }

    pub fn with_group(mut self, key: impl Into<String>) -> Self {
        self.group_key = Some(key.into());
        self
    }

    pub fn with_oracle_z(mut self, z: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&z) || !z.is_finite() {
            invalid_input!("oracle z {z} outside [0, 1]");
        }
        self.oracle_z = Some(z);
        Ok(self)
    }

    fn z(&self) -> f64 {
        if self.correct {
            1.0
        } else {
            0.0
        }
    }
}

/// Statistics of one confidence bin.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean confidence of the bin; `None` when empty.
    pub mean_confidence: Option<f64>,
    /// Empirical accuracy of the bin; `None` when empty.
    pub accuracy: Option<f64>,
    /// `|accuracy - mean_confidence|`; `None` when empty.
    pub gap: Option<f64>,
}

/// Reliability-diagram data: a full confidence histogram with per-bin
/// accuracy, from which the binned ECE is exactly recomputable.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedReliability {
    pub num_bins: usize,
    pub total: usize,
    pub bins: Vec<ReliabilityBin>,
}

impl BinnedReliability {
    /// Recompute the binned ECE from the stored bins.
    pub fn ece(&self) -> f64 {
        let n = self.total as f64;
        self.bins
            .iter()
            .filter_map(|b| b.gap.map(|g| b.count as f64 / n * g))
            .sum()
    }

    /// Serialize with the fixed schema
    /// `bin_lower,bin_upper,count,mean_confidence,accuracy,gap`; empty bins
    /// keep their row with blank statistics.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lower,bin_upper,count,mean_confidence,accuracy,gap\n");
        for b in &self.bins {
            let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_f64(b.lower),
                fmt_f64(b.upper),
                b.count,
                opt(b.mean_confidence),
                opt(b.accuracy),
                opt(b.gap),
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("bin_lower,bin_upper,count,mean_confidence,accuracy,gap") => {}
            other => {
                return Err(crate::Error::Parse(format!(
                    "unexpected reliability header: {other:?}"
                )))
            }
        }
        let mut bins = Vec::new();
        let mut total = 0;
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(crate::Error::Parse(format!("bad reliability row: {line}")));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| crate::Error::Parse(format!("bad float: {s}")))
            };
            let opt = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    num(s).map(Some)
                }
            };
            let count: usize = fields[2]
                .parse()
                .map_err(|_| crate::Error::Parse(format!("bad count: {}", fields[2])))?;
            total += count;
            bins.push(ReliabilityBin {
                lower: num(fields[0])?,
                upper: num(fields[1])?,
                count,
                mean_confidence: opt(fields[3])?,
                accuracy: opt(fields[4])?,
                gap: opt(fields[5])?,
            });
        }
        Ok(Self {
            num_bins: bins.len(),
            total,
            bins,
        })
    }
}

/// Headline calibration numbers for one record set.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CalibrationSummary {
    pub ece_binned: f64,
    pub l1_risk: f64,
    pub exact_ece: Option<f64>,
    pub cw_ece: Option<f64>,
    pub noise_term: Option<f64>,
}

fn require_nonempty(records: &[PredictionRecord]) -> Result<()> {
    if records.is_empty() {
        invalid_input!("empty record set");
    }
    Ok(())
}

fn bin_index(confidence: f64, num_bins: usize) -> usize {
    // Confidence exactly 1.0 lands in the closed last bin.
    ((confidence * num_bins as f64).floor() as usize).min(num_bins - 1)
}

/// Binned expected calibration error over `num_bins` equal-width bins.
pub fn ece_binned(records: &[PredictionRecord], num_bins: usize) -> Result<f64> {
    require_nonempty(records)?;
    if num_bins == 0 {
        invalid_input!("need at least one bin");
    }
    let mut count = vec![0usize; num_bins];
    let mut conf = vec![0.0; num_bins];
    let mut hits = vec![0.0; num_bins];
    for r in records {
        let b = bin_index(r.confidence, num_bins);
        count[b] += 1;
        conf[b] += r.confidence;
        hits[b] += r.z();
    }
    let n = records.len() as f64;
    let mut ece = 0.0;
    for b in 0..num_bins {
        if count[b] > 0 {
            let c = count[b] as f64;
            ece += c / n * (hits[b] / c - conf[b] / c).abs();
        }
    }
    Ok(ece)
}

/// Per-bin reliability data (confidence histogram, accuracy, gap).
pub fn reliability_diagram(records: &[PredictionRecord], num_bins: usize) -> Result<BinnedReliability> {
    require_nonempty(records)?;
    if num_bins == 0 {
        invalid_input!("need at least one bin");
    }
    let mut count = vec![0usize; num_bins];
    let mut conf = vec![0.0; num_bins];
    let mut hits = vec![0.0; num_bins];
    for r in records {
        let b = bin_index(r.confidence, num_bins);
        count[b] += 1;
        conf[b] += r.confidence;
        hits[b] += r.z();
    }
    let bins = (0..num_bins)
        .map(|b| {
            let (mean_confidence, accuracy, gap) = if count[b] > 0 {
                let c = count[b] as f64;
                let mc = conf[b] / c;
                let acc = hits[b] / c;
                (Some(mc), Some(acc), Some((acc - mc).abs()))
            } else {
                (None, None, None)
            };
            ReliabilityBin {
                lower: b as f64 / num_bins as f64,
                upper: (b + 1) as f64 / num_bins as f64,
                count: count[b],
                mean_confidence,
                accuracy,
                gap,
            }
        })
        .collect();
    Ok(BinnedReliability {
        num_bins,
        total: records.len(),
        bins,
    })
}

/// Mean absolute deviation between confidence and correctness.
pub fn l1_risk(records: &[PredictionRecord]) -> Result<f64> {
    require_nonempty(records)?;
    let sum: f64 = records.iter().map(|r| (r.confidence - r.z()).abs()).sum();
    Ok(sum / records.len() as f64)
}

struct GroupAcc {
    count: usize,
    conf: f64,
    hits: f64,
}

fn group_by_key<'a>(
    records: impl Iterator<Item = &'a PredictionRecord>,
) -> Result<BTreeMap<&'a str, GroupAcc>> {
    let mut groups: BTreeMap<&str, GroupAcc> = BTreeMap::new();
    for r in records {
        let key = match &r.group_key {
            Some(k) => k.as_str(),
            None => invalid_input!("record missing group_key"),
        };
        let g = groups.entry(key).or_insert(GroupAcc {
            count: 0,
            conf: 0.0,
            hits: 0.0,
        });
        g.count += 1;
        g.conf += r.confidence;
        g.hits += r.z();
    }
    Ok(groups)
}

/// ECE with exact conditional expectations: records sharing a `group_key`
/// (identical confidence-determining context) are pooled instead of binned.
pub fn exact_conditional_ece(records: &[PredictionRecord]) -> Result<f64> {
    require_nonempty(records)?;
    let groups = group_by_key(records.iter())?;
    let n = records.len() as f64;
    Ok(groups
        .values()
        .map(|g| {
            let c = g.count as f64;
            c / n * (g.hits / c - g.conf / c).abs()
        })
        .sum())
}

/// The conditional-noise term `2 E[min{z(1-c), c(1-z)}]` that separates the
/// L1 risk from the exact ECE.
pub fn decomposition_noise_term(records: &[PredictionRecord]) -> Result<f64> {
    require_nonempty(records)?;
    let mut sum = 0.0;
    for r in records {
        let z = match r.oracle_z {
            Some(z) => z,
            None => invalid_input!("record missing oracle_z"),
        };
        let c = r.confidence;
        sum += (z * (1.0 - c)).min(c * (1.0 - z));
    }
    Ok(2.0 * sum / records.len() as f64)
}

/// Class-frequency weighted exact ECE: within each true class, records are
/// grouped by key; class terms are weighted by empirical class frequency.
pub fn classwise_ece(records: &[PredictionRecord], num_classes: usize) -> Result<f64> {
    require_nonempty(records)?;
    if num_classes == 0 {
        invalid_input!("need at least one class");
    }
    let n = records.len() as f64;
    let mut total = 0.0;
    for k in 0..num_classes {
        let in_class: Vec<&PredictionRecord> = records
            .iter()
            .filter(|r| r.true_class == Some(k))
            .collect();
        if in_class.is_empty() {
            continue;
        }
        let nk = in_class.len() as f64;
        let groups = group_by_key(in_class.into_iter())?;
        let class_ece: f64 = groups
            .values()
            .map(|g| {
                let c = g.count as f64;
                c / nk * (g.hits / c - g.conf / c).abs()
            })
            .sum();
        total += nk / n * class_ece;
    }
    let labeled = records.iter().filter(|r| r.true_class.is_some()).count();
    if labeled != records.len() {
        invalid_input!("{} records missing true_class", records.len() - labeled);
    }
    if records
        .iter()
        .any(|r| r.true_class.map(|c| c >= num_classes).unwrap_or(false))
    {
        invalid_input!("true_class out of range");
    }
    Ok(total)
}

/// Exact ECE reweighted by a bounded per-group weight. Weights are given per
/// record, must be nonnegative and constant within each group.
pub fn weighted_ece(records: &[PredictionRecord], weights: &[f64]) -> Result<f64> {
    require_nonempty(records)?;
    if weights.len() != records.len() {
        invalid_input!(
            "{} weights for {} records",
            weights.len(),
            records.len()
        );
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        invalid_input!("weights must be finite and nonnegative");
    }
    let mut groups: BTreeMap<&str, (GroupAcc, f64)> = BTreeMap::new();
    for (r, &w) in records.iter().zip(weights) {
        let key = match &r.group_key {
            Some(k) => k.as_str(),
            None => invalid_input!("record missing group_key"),
        };
        let entry = groups.entry(key).or_insert((
            GroupAcc {
                count: 0,
                conf: 0.0,
                hits: 0.0,
            },
            w,
        ));
        if entry.1 != w {
            invalid_input!("weight not constant within group {key}");
        }
        entry.0.count += 1;
        entry.0.conf += r.confidence;
        entry.0.hits += r.z();
    }
    let n = records.len() as f64;
    Ok(groups
        .values()
        .map(|(g, w)| {
            let c = g.count as f64;
            c / n * w * (g.hits / c - g.conf / c).abs()
        })
        .sum())
}

/// Compute every metric the records support in one pass.
pub fn calibration_summary(records: &[PredictionRecord], num_bins: usize) -> Result<CalibrationSummary> {
    let all_grouped = records.iter().all(|r| r.group_key.is_some());
    let all_classed = records.iter().all(|r| r.true_class.is_some());
    let all_oracle = records.iter().all(|r| r.oracle_z.is_some());
    let num_classes = records
        .iter()
        .filter_map(|r| r.true_class)
        .max()
        .map(|m| m + 1)
        .unwrap_or(0);
    Ok(CalibrationSummary {
        ece_binned: ece_binned(records, num_bins)?,
        l1_risk: l1_risk(records)?,
        exact_ece: if all_grouped {
            Some(exact_conditional_ece(records)?)
        } else {
            None
        },
        cw_ece: if all_grouped && all_classed {
            Some(classwise_ece(records, num_classes)?)
        } else {
            None
        },
        noise_term: if all_oracle {
            Some(decomposition_noise_term(records)?)
        } else {
            None
        },
    })
}

/// Serialize records with the fixed schema
/// `confidence,correct,true_class,group_key,oracle_z`; optional trailing
/// columns are left blank.
pub fn records_to_csv(records: &[PredictionRecord]) -> String {
    let mut out = String::from("confidence,correct,true_class,group_key,oracle_z\n");
    for r in records {
        debug_assert!(
            r.group_key
                .as_deref()
                .map(|k| !k.contains(',') && !k.contains('\n'))
                .unwrap_or(true),
            "group keys must stay CSV-safe"
        );
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(r.confidence),
            if r.correct { 1 } else { 0 },
            r.true_class.map(|c| c.to_string()).unwrap_or_default(),
            r.group_key.clone().unwrap_or_default(),
            r.oracle_z.map(fmt_f64).unwrap_or_default(),
        ));
    }
    out
}

pub fn records_from_csv(text: &str) -> Result<Vec<PredictionRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("confidence,correct,true_class,group_key,oracle_z") => {}
        other => {
            return Err(crate::Error::Parse(format!(
                "unexpected prediction-record header: {other:?}"
            )))
        }
    }
    let mut records = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(crate::Error::Parse(format!("bad record row: {line}")));
        }
        let confidence: f64 = fields[0]
            .parse()
            .map_err(|_| crate::Error::Parse(format!("bad confidence: {}", fields[0])))?;
        let correct = match fields[1] {
            "1" => true,
            "0" => false,
            other => return Err(crate::Error::Parse(format!("bad correct flag: {other}"))),
        };
        let mut record = PredictionRecord::new(confidence, correct)?;
        if !fields[2].is_empty() {
            let class: usize = fields[2]
                .parse()
                .map_err(|_| crate::Error::Parse(format!("bad class: {}", fields[2])))?;
            record = record.with_class(class);
        }
        if !fields[3].is_empty() {
            record = record.with_group(fields[3]);
        }
        if !fields[4].is_empty() {
            let z: f64 = fields[4]
                .parse()
                .map_err(|_| crate::Error::Parse(format!("bad oracle z: {}", fields[4])))?;
            record = record.with_oracle_z(z)?;
        }
        records.push(record);
    }
    Ok(records)
}
