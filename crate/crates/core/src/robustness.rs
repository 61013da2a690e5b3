//! Mean-vs-median robustness under point-mass contamination.
//!
//! The surrogate observation model is
//!
//! ```text
//! S ~ (1 - alpha) * F0(. - z) + alpha * point mass at z + M
//! ```
//!
//! with a clean noise family `F0` of median and mean zero supported on
//! `[-B, B]`. The population mean shifts by `alpha * M`, linear in the
//! outlier magnitude, while the population median shifts only by the
//! constant offset `Delta_alpha` solving `(1 - alpha) F0(Delta) = 1/2`,
//! provided `alpha < 1/2` and the outlier sits above the clean support.
//!
//! This module samples the model, evaluates the closed-form biases, runs
//! the Monte Carlo verification grid, checks the DKW-based median
//! concentration bound, and grid-scans the pointwise Bayes risks whose
//! minimizers distinguish the squared loss (recovers `z`) from the absolute
//! loss on binary outcomes (collapses to 0 or 1) and on deterministic
//! surrogate targets (recovers the target).

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::invalid_input;
use crate::rng::SplitMix64;

/// Clean noise family on `[-B, B]` with median and mean zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanFamily {
    Uniform,
    /// Symmetric triangular with peak at 0.
    Triangular,
}

impl CleanFamily {
    /// CDF of the unit family (B = 1) at `t`.
    pub fn cdf(self, t: f64) -> f64 {
        let t = t.clamp(-1.0, 1.0);
        match self {
            CleanFamily::Uniform => (t + 1.0) / 2.0,
            CleanFamily::Triangular => {
                if t <= 0.0 {
                    (t + 1.0) * (t + 1.0) / 2.0
                } else {
                    1.0 - (1.0 - t) * (1.0 - t) / 2.0
                }
            }
        }
    }

    /// Inverse CDF of the unit family.
    pub fn inv_cdf(self, u: f64) -> f64 {
        match self {
            CleanFamily::Uniform => 2.0 * u - 1.0,
            CleanFamily::Triangular => {
                if u <= 0.5 {
                    (2.0 * u).sqrt() - 1.0
                } else {
                    1.0 - (2.0 * (1.0 - u)).sqrt()
                }
            }
        }
    }

    /// Density of the unit family at `t`.
    pub fn density(self, t: f64) -> f64 {
        match self {
            CleanFamily::Uniform => {
                if (-1.0..=1.0).contains(&t) {
                    0.5
                } else {
                    0.0
                }
            }
            CleanFamily::Triangular => {
                if (-1.0..=1.0).contains(&t) {
                    1.0 - t.abs()
                } else {
                    0.0
                }
            }
        }
    }

    fn sample(self, bound: f64, rng: &mut SplitMix64) -> f64 {
        bound * self.inv_cdf(rng.next_f64())
    }

    pub fn name(self) -> &'static str {
        match self {
            CleanFamily::Uniform => "uniform",
            CleanFamily::Triangular => "triangular",
        }
    }
}

/// The contamination model: target, contamination rate, outlier offset,
/// clean family, support bound, seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationModel {
    pub z: f64,
    pub alpha: f64,
    pub outlier_offset: f64,
    pub family: CleanFamily,
    pub bound: f64,
    pub seed: u64,
}

impl ContaminationModel {
    pub fn new(
        z: f64,
        alpha: f64,
        outlier_offset: f64,
        family: CleanFamily,
        bound: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..0.5).contains(&alpha) {
            invalid_input!("alpha must lie in [0, 0.5), got {alpha}");
        }
        if bound <= 0.0 || !bound.is_finite() {
            invalid_input!("bound must be positive, got {bound}");
        }
        if !z.is_finite() || !outlier_offset.is_finite() {
            invalid_input!("model parameters must be finite");
        }
        Ok(Self {
            z,
            alpha,
            outlier_offset,
            family,
            bound,
            seed,
        })
    }

    /// Density lower bound of the mixture's clean component at the shifted
    /// median, used by the DKW proposition.
    pub fn f_min(&self) -> Result<f64> {
        let delta = self.analytic_median_offset()?;
        Ok(self.family.density(delta / self.bound) / self.bound)
    }

    /// Population mean bias of the contaminated surrogate: `alpha * M`
    /// (the clean families have mean zero).
    pub fn analytic_mean_bias(&self) -> f64 {
        self.alpha * self.outlier_offset
    }

    /// Median offset `Delta_alpha` solving `(1 - alpha) F0(Delta) = 1/2`,
    /// valid when the outlier mass sits above the clean support.
    pub fn analytic_median_offset(&self) -> Result<f64> {
        let target = 1.0 / (2.0 * (1.0 - self.alpha));
        Ok(self.bound * self.family.inv_cdf(target))
    }

    /// Both closed-form biases: `(mean_bias, median_offset)`.
    pub fn analytic_biases(&self) -> Result<(f64, f64)> {
        Ok((self.analytic_mean_bias(), self.analytic_median_offset()?))
    }
}

/// A drawn sample with its realized outlier count.
#[derive(Debug, Clone)]
pub struct SurrogateSample {
    pub values: Vec<f64>,
    pub outlier_count: usize,
}

/// Draw `n` surrogate observations; each is the outlier `z + M` with
/// probability `alpha`, otherwise `z + eps` with clean noise `eps`.
pub fn sample_surrogate(model: &ContaminationModel, n: usize) -> Result<SurrogateSample> {
    if n == 0 {
        invalid_input!("need at least one draw");
    }
    let mut rng = SplitMix64::stream(model.seed, "surrogate", 0);
    let mut values = Vec::with_capacity(n);
    let mut outlier_count = 0;
    for _ in 0..n {
        if rng.next_bool(model.alpha) {
            values.push(model.z + model.outlier_offset);
            outlier_count += 1;
        } else {
            values.push(model.z + model.family.sample(model.bound, &mut rng));
        }
    }
    Ok(SurrogateSample {
        values,
        outlier_count,
    })
}

/// Draw exactly `k` outliers and `n - k` clean observations: the
/// deterministic injection used by the conditional median-stability lemma
/// and the breakdown demonstration.
pub fn sample_with_outlier_count(
    model: &ContaminationModel,
    n: usize,
    k: usize,
) -> Result<SurrogateSample> {
    if n == 0 || k > n {
        invalid_input!("need 0 <= k <= n with n >= 1, got k={k}, n={n}");
    }
    let mut rng = SplitMix64::stream(model.seed, "surrogate-injected", 0);
    let mut values = Vec::with_capacity(n);
    for _ in 0..k {
        values.push(model.z + model.outlier_offset);
    }
    for _ in 0..(n - k) {
        values.push(model.z + model.family.sample(model.bound, &mut rng));
    }
    Ok(SurrogateSample {
        values,
        outlier_count: k,
    })
}

/// Sample mean.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample median: middle order statistic, or the average of the two middle
/// ones for even sizes.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// One cell of the theorem-verification table.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorReport {
    pub alpha: f64,
    pub outlier_offset: f64,
    pub bound: f64,
    pub family: CleanFamily,
    pub n: usize,
    pub seed: u64,
    pub empirical_mean: f64,
    pub empirical_median: f64,
    pub analytic_mean: f64,
    pub analytic_median: f64,
    pub outlier_count: usize,
}

/// Run the mean-vs-median comparison over an outlier-offset grid and a set
/// of seeds, at sample size `n`.
pub fn verify_contamination_theorem(
    base: &ContaminationModel,
    offsets: &[f64],
    n: usize,
    seeds: &[u64],
) -> Result<Vec<EstimatorReport>> {
    if offsets.is_empty() || seeds.is_empty() {
        invalid_input!("need at least one offset and one seed");
    }
    if n < 10_000 {
        invalid_input!("n = {n} is too small for the CLT bands (need >= 1e4)");
    }
    let mut reports = Vec::with_capacity(offsets.len() * seeds.len());
    for &offset in offsets {
        for &seed in seeds {
            let model = ContaminationModel::new(
                base.z,
                base.alpha,
                offset,
                base.family,
                base.bound,
                seed,
            )?;
            let sample = sample_surrogate(&model, n)?;
            let (mean_bias, median_offset) = model.analytic_biases()?;
            reports.push(EstimatorReport {
                alpha: model.alpha,
                outlier_offset: offset,
                bound: model.bound,
                family: model.family,
                n,
                seed,
                empirical_mean: mean(&sample.values),
                empirical_median: median(&sample.values),
                analytic_mean: model.z + mean_bias,
                analytic_median: model.z + median_offset,
                outlier_count: sample.outlier_count,
            });
        }
    }
    Ok(reports)
}

/// CSV emission with the fixed schema
/// `alpha,M,B,family,n,seed,empirical_mean,empirical_median,analytic_mean,analytic_median,K`.
pub fn reports_to_csv(reports: &[EstimatorReport]) -> String {
    use crate::numerics::fmt_f64;
    let mut out = String::from(
        "alpha,M,B,family,n,seed,empirical_mean,empirical_median,analytic_mean,analytic_median,K\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            fmt_f64(r.alpha),
            fmt_f64(r.outlier_offset),
            fmt_f64(r.bound),
            r.family.name(),
            r.n,
            r.seed,
            fmt_f64(r.empirical_mean),
            fmt_f64(r.empirical_median),
            fmt_f64(r.analytic_mean),
            fmt_f64(r.analytic_median),
            r.outlier_count,
        ));
    }
    out
}

/// Result of the DKW median-concentration check.
#[derive(Debug, Clone, Serialize)]
pub struct DkwReport {
    pub n: usize,
    pub num_trials: usize,
    pub rho: f64,
    /// Deviation radius `rho / ((1 - alpha) f_min)`.
    pub radius: f64,
    /// `2 exp(-2 n (rho - 1/n)^2)`.
    pub bound: f64,
    pub violations: usize,
    pub violation_frequency: f64,
}

/// Estimate how often the sample median deviates from the population median
/// by more than the DKW radius, against the printed bound.
pub fn dkw_check(
    model: &ContaminationModel,
    n: usize,
    num_trials: usize,
    rho: f64,
) -> Result<DkwReport> {
    if num_trials == 0 {
        invalid_input!("need at least one trial");
    }
    if n == 0 || rho <= 1.0 / n as f64 {
        invalid_input!("rho must exceed 1/n (rho = {rho}, n = {n})");
    }
    let f_min = model.f_min()?;
    if f_min <= 0.0 {
        invalid_input!("clean density vanishes at the shifted median");
    }
    let radius = rho / ((1.0 - model.alpha) * f_min);
    let population_median = model.z + model.analytic_median_offset()?;
    let mut violations = 0usize;
    for trial in 0..num_trials {
        let trial_model = ContaminationModel {
            seed: SplitMix64::stream(model.seed, "dkw-trial", trial as u64).next_u64(),
            ..*model
        };
        let sample = sample_surrogate(&trial_model, n)?;
        if (median(&sample.values) - population_median).abs() > radius {
            violations += 1;
        }
    }
    let slack = rho - 1.0 / n as f64;
    Ok(DkwReport {
        n,
        num_trials,
        rho,
        radius,
        bound: 2.0 * (-2.0 * n as f64 * slack * slack).exp(),
        violations,
        violation_frequency: violations as f64 / num_trials as f64,
    })
}

/// Grid-scan result for the pointwise Bayes risks at a Bernoulli target.
#[derive(Debug, Clone)]
pub struct RiskMinimizers {
    /// Argmin of `E[(c - Z)^2]`; the true probability up to grid step.
    pub l2_argmin: f64,
    /// Argmin of `E[|c - Z|]`; 0 or 1 away from `z = 1/2`.
    pub l1_argmin: f64,
    /// Every grid point whose absolute risk ties the minimum within 1e-12.
    pub l1_ties: Vec<f64>,
}

fn grid(step: f64) -> Result<Vec<f64>> {
    if step <= 0.0 || step > 1.0 {
        invalid_input!("grid step must lie in (0, 1], got {step}");
    }
    let n = (1.0 / step).round() as usize;
    Ok((0..=n).map(|i| i as f64 / n as f64).collect())
}

/// Exact-expectation grid scan of the squared and absolute risks for
/// `Z ~ Bernoulli(z)`.
pub fn pointwise_risk_minimizers(z: f64, grid_step: f64) -> Result<RiskMinimizers> {
    if !(0.0..=1.0).contains(&z) {
        invalid_input!("z must lie in [0, 1], got {z}");
    }
    let points = grid(grid_step)?;
    let l2 = |c: f64| z * (1.0 - c) * (1.0 - c) + (1.0 - z) * c * c;
    let l1 = |c: f64| z * (1.0 - c) + (1.0 - z) * c;
    let mut best_l2 = points[0];
    let mut best_l1 = points[0];
    for &c in &points[1..] {
        if l2(c) < l2(best_l2) {
            best_l2 = c;
        }
        if l1(c) < l1(best_l1) {
            best_l1 = c;
        }
    }
    let min_l1 = l1(best_l1);
    let l1_ties = points
        .iter()
        .copied()
        .filter(|&c| (l1(c) - min_l1).abs() <= 1e-12)
        .collect();
    Ok(RiskMinimizers {
        l2_argmin: best_l2,
        l1_argmin: best_l1,
        l1_ties,
    })
}

/// Grid argmin of `|c - z_tilde|` for a deterministic surrogate target.
pub fn surrogate_l1_argmin(z_tilde: f64, grid_step: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&z_tilde) {
        invalid_input!("surrogate target must lie in [0, 1], got {z_tilde}");
    }
    let points = grid(grid_step)?;
    let mut best = points[0];
    for &c in &points[1..] {
        if (c - z_tilde).abs() < (best - z_tilde).abs() {
            best = c;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(alpha: f64, m: f64, seed: u64) -> ContaminationModel {
        ContaminationModel::new(0.0, alpha, m, CleanFamily::Uniform, 1.0, seed).unwrap()
    }

    #[test]
    fn family_cdf_inverse_round_trip() {
        for family in [CleanFamily::Uniform, CleanFamily::Triangular] {
            assert!((family.cdf(0.0) - 0.5).abs() < 1e-15);
            for i in 1..100 {
                let u = i as f64 / 100.0;
                let t = family.inv_cdf(u);
                assert!((family.cdf(t) - u).abs() < 1e-12);
                assert!((-1.0..=1.0).contains(&t));
            }
        }
    }

    #[test]
    fn clean_families_have_zero_mean_and_median() {
        let mut rng = SplitMix64::stream(1, "family-moments", 0);
        for family in [CleanFamily::Uniform, CleanFamily::Triangular] {
            let draws: Vec<f64> = (0..200_000).map(|_| family.sample(1.0, &mut rng)).collect();
            assert!(mean(&draws).abs() < 0.01);
            assert!(median(&draws).abs() < 0.01);
        }
    }

    #[test]
    fn alpha_zero_stays_in_clean_support() {
        let m = model(0.0, 1000.0, 3);
        let s = sample_surrogate(&m, 10_000).unwrap();
        assert_eq!(s.outlier_count, 0);
        assert!(s.values.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn outlier_count_concentrates_near_alpha() {
        let m = model(0.4999, 10.0, 5);
        let n = 100_000;
        let s = sample_surrogate(&m, n).unwrap();
        let sigma = (n as f64 * 0.4999 * 0.5001).sqrt();
        assert!((s.outlier_count as f64 - 0.4999 * n as f64).abs() < 4.0 * sigma);
    }

    #[test]
    fn sampling_is_deterministic_under_seed() {
        let m = model(0.1, 10.0, 11);
        let a = sample_surrogate(&m, 1000).unwrap();
        let b = sample_surrogate(&m, 1000).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn analytic_biases_hand_values() {
        // Uniform, B = 1, alpha = 0.1: Delta = F0^{-1}(1/1.8) = 2/1.8 - 1 = 1/9.
        let m = model(0.1, 10.0, 0);
        let (mean_bias, delta) = m.analytic_biases().unwrap();
        assert!((mean_bias - 1.0).abs() < 1e-12);
        assert!((delta - 1.0 / 9.0).abs() < 1e-12);
        // alpha = 0 removes both biases.
        let clean = model(0.0, 10.0, 0);
        let (mb, d) = clean.analytic_biases().unwrap();
        assert_eq!(mb, 0.0);
        assert!(d.abs() < 1e-12);
        // alpha >= 0.5 is rejected at construction.
        assert!(ContaminationModel::new(0.0, 0.5, 1.0, CleanFamily::Uniform, 1.0, 0).is_err());
    }

    #[test]
    fn triangular_median_offset_matches_cdf_solve() {
        let m = ContaminationModel::new(0.0, 0.2, 100.0, CleanFamily::Triangular, 2.0, 0).unwrap();
        let delta = m.analytic_median_offset().unwrap();
        // (1 - alpha) F0(delta) = 1/2 by construction.
        let lhs = 0.8 * CleanFamily::Triangular.cdf(delta / 2.0);
        assert!((lhs - 0.5).abs() < 1e-12);
        // f_min is the triangular density there.
        let f = m.f_min().unwrap();
        assert!((f - CleanFamily::Triangular.density(delta / 2.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn median_ignores_outlier_magnitude_mean_does_not() {
        let offsets = [10.0, 1000.0];
        let base = model(0.1, 0.0, 0);
        let reports =
            verify_contamination_theorem(&base, &offsets, 100_000, &[1, 2, 3, 4, 5]).unwrap();
        let med_small: Vec<f64> = reports
            .iter()
            .filter(|r| r.outlier_offset == 10.0)
            .map(|r| r.empirical_median)
            .collect();
        let med_large: Vec<f64> = reports
            .iter()
            .filter(|r| r.outlier_offset == 1000.0)
            .map(|r| r.empirical_median)
            .collect();
        let mean_small = mean(
            &reports
                .iter()
                .filter(|r| r.outlier_offset == 10.0)
                .map(|r| r.empirical_mean)
                .collect::<Vec<_>>(),
        );
        let mean_large = mean(
            &reports
                .iter()
                .filter(|r| r.outlier_offset == 1000.0)
                .map(|r| r.empirical_mean)
                .collect::<Vec<_>>(),
        );
        assert!((mean(&med_small) - mean(&med_large)).abs() < 0.05);
        assert!((mean_large - mean_small - 0.1 * 990.0).abs() < 1.0);
        assert!(verify_contamination_theorem(&base, &offsets, 100, &[1]).is_err());
    }

    #[test]
    fn conditional_median_stability_is_deterministic() {
        // K < n/2 outliers at +1e6 leave the median inside [z - B, z + B].
        let m = model(0.3, 1e6, 17);
        let n = 10_001;
        for k in [0, 1, n / 2 - 1] {
            let s = sample_with_outlier_count(&m, n, k).unwrap();
            let med = median(&s.values);
            assert!((-1.0..=1.0).contains(&med), "k = {k}: median {med}");
        }
    }

    #[test]
    fn breakdown_at_half_contamination() {
        let m = model(0.3, 1e6, 17);
        let n = 10_000;
        let s = sample_with_outlier_count(&m, n, n / 2 + 1).unwrap();
        assert!((median(&s.values) - 1e6).abs() < 1e-6);
    }

    #[test]
    fn mean_band_lemma_holds_with_overwhelming_probability() {
        // tau = alpha/2; the failure probability 2 exp(-2 tau^2 n) is ~1e-22
        // at n = 1e5, so every trial must land in the band.
        let alpha = 0.1;
        let m_offset = 100.0;
        let tau = alpha / 2.0;
        for seed in 0..20 {
            let m = model(alpha, m_offset, seed);
            let s = sample_surrogate(&m, 100_000).unwrap();
            let em = mean(&s.values);
            let lo = (alpha - tau) * m_offset - 1.0;
            let hi = (alpha + tau) * m_offset + 1.0;
            assert!(em >= lo && em <= hi, "seed {seed}: mean {em}");
        }
    }

    #[test]
    fn dkw_bound_holds() {
        let m = model(0.1, 10.0, 23);
        let report = dkw_check(&m, 10_000, 200, 0.05).unwrap();
        // Bound is astronomically small here; no violations are tolerable.
        assert!(report.bound < 1e-20);
        assert_eq!(report.violations, 0);
        // Overly tight rho is rejected.
        assert!(dkw_check(&m, 100, 10, 0.005).is_err());
    }

    #[test]
    fn dkw_large_radius_never_violates() {
        let m = ContaminationModel::new(0.3, 0.2, 50.0, CleanFamily::Triangular, 1.0, 29).unwrap();
        let report = dkw_check(&m, 10_000, 100, 0.2).unwrap();
        assert_eq!(report.violations, 0);
    }

    #[test]
    fn dkw_uncontaminated_tight_radius() {
        // alpha = 0 with a modest radius: violations stay within the bound
        // plus binomial slack.
        let m = model(0.0, 0.0, 31);
        let report = dkw_check(&m, 10_000, 500, 0.02).unwrap();
        let sigma = (report.bound * (1.0 - report.bound) / 500.0).sqrt();
        assert!(report.violation_frequency <= report.bound + 3.0 * sigma);
    }

    #[test]
    fn bayes_minimizers_on_bernoulli() {
        for i in 1..=9 {
            let z = i as f64 / 10.0;
            let r = pointwise_risk_minimizers(z, 1e-3).unwrap();
            assert!((r.l2_argmin - z).abs() <= 1e-3 + 1e-12, "z = {z}");
            if z < 0.5 {
                assert_eq!(r.l1_argmin, 0.0);
            } else if z > 0.5 {
                assert_eq!(r.l1_argmin, 1.0);
            }
        }
        // z = 1/2: the absolute risk is flat; every grid point ties.
        let r = pointwise_risk_minimizers(0.5, 1e-3).unwrap();
        assert_eq!(r.l1_ties.len(), 1001);
    }

    #[test]
    fn surrogate_argmin_recovers_target() {
        let r = surrogate_l1_argmin(0.63, 1e-3).unwrap();
        assert!((r - 0.63).abs() <= 1e-3 / 2.0 + 1e-12);
        assert!(surrogate_l1_argmin(1.5, 1e-3).is_err());
        assert!(pointwise_risk_minimizers(0.5, 0.0).is_err());
    }
}
