//! Finite-distribution checks of the likelihood-gap analysis.
//!
//! `G` and `H` are the distributions of recoveries given a fake and a real
//! input, modeled as discrete distributions over a shared support.
//! `logp` is a per-outcome log-likelihood table of the generator.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::choose_k;
use crate::rng::{self, SeededRng};

const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("invalid input: {0}")]
    Validation(String),
}

fn invalid(msg: impl Into<String>) -> TheoryError {
    TheoryError::Validation(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDist {
    support: Vec<u64>,
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(support: Vec<u64>, probs: Vec<f64>) -> Result<Self, TheoryError> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(invalid(format!(
                "support has {} outcomes, probs has {}",
                support.len(),
                probs.len()
            )));
        }
        let mut sorted = support.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("support outcomes must be distinct"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid("probabilities must be finite and >= 0"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(invalid(format!("probabilities sum to {sum}")));
        }
        Ok(Self { support, probs })
    }

    /// Distribution on outcomes `0..probs.len()`.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self, TheoryError> {
        Self::new((0..probs.len() as u64).collect(), probs)
    }

    /// `P(1) = p`, `P(0) = 1 - p`.
    pub fn bernoulli(p: f64) -> Result<Self, TheoryError> {
        Self::from_probs(vec![1.0 - p, p])
    }

    /// Uniform draw from the simplex over `n` outcomes.
    pub fn random(n: usize, rng: &mut impl Rng) -> Result<Self, TheoryError> {
        if n == 0 {
            return Err(invalid("need at least one outcome"));
        }
        let raw: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = raw.iter().sum();
        Self::from_probs(raw.iter().map(|x| x / total).collect())
    }

    pub fn support(&self) -> &[u64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// `n` i.i.d. outcome indices.
    pub fn sample_indices(&self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        let w = WeightedIndex::new(&self.probs).expect("validated probabilities");
        (0..n).map(|_| w.sample(rng)).collect()
    }
}

fn check_shared(g: &DiscreteDist, h: &DiscreteDist) -> Result<(), TheoryError> {
    if g.support != h.support {
        return Err(invalid("distributions do not share a support"));
    }
    Ok(())
}

pub fn tv_distance(g: &DiscreteDist, h: &DiscreteDist) -> Result<f64, TheoryError> {
    check_shared(g, h)?;
    Ok(0.5 * g.probs.iter().zip(&h.probs).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `KL(g || h)`; requires `h > 0` wherever `g > 0`.
pub fn kl_divergence(g: &DiscreteDist, h: &DiscreteDist) -> Result<f64, TheoryError> {
    check_shared(g, h)?;
    let mut kl = 0.0;
    for (i, (&a, &b)) in g.probs.iter().zip(&h.probs).enumerate() {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Err(invalid(format!(
                "outcome {} has g > 0 but h = 0",
                g.support[i]
            )));
        }
        kl += a * (a / b).ln();
    }
    // rounding can leave a tiny negative value for g ~ h
    Ok(kl.max(0.0))
}

/// `E_G[logp] - E_H[logp]`.
pub fn likelihood_gap(g: &DiscreteDist, h: &DiscreteDist, logp: &[f64]) -> Result<f64, TheoryError> {
    check_shared(g, h)?;
    if logp.len() != g.len() {
        return Err(invalid(format!(
            "logp has {} entries for {} outcomes",
            logp.len(),
            g.len()
        )));
    }
    if logp.iter().any(|v| !v.is_finite()) {
        return Err(invalid("logp entries must be finite"));
    }
    Ok(g.probs
        .iter()
        .zip(&h.probs)
        .zip(logp)
        .map(|((a, b), l)| (a - b) * l)
        .sum())
}

/// Best AUROC achievable by any detector separating `G` from `H`.
pub fn auc_ceiling(tv: f64) -> Result<f64, TheoryError> {
    if !(0.0..=1.0).contains(&tv) {
        return Err(invalid(format!("tv must lie in [0, 1], got {tv}")));
    }
    Ok(0.5 + tv - tv * tv / 2.0)
}

/// Both sides of `gap <= |logp|_inf * tv <= |logp|_inf * sqrt(kl / 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainCheck {
    pub gap: f64,
    pub tv: f64,
    pub kl: f64,
    pub sup_logp: f64,
    pub tv_bound: f64,
    pub kl_bound: f64,
}

impl ChainCheck {
    /// Smallest margin across the two inequalities.
    pub fn slack(&self) -> f64 {
        (self.tv_bound - self.gap).min(self.kl_bound - self.tv_bound)
    }
}

/// The middle step uses `|sum (g-h) l| <= 2 tv |l|_inf` tightened to
/// `tv |l|_inf`, which needs `l` of one sign; so `logp` must be a genuine
/// log-probability table (all entries <= 0).
pub fn likelihood_gap_chain(
    g: &DiscreteDist,
    h: &DiscreteDist,
    logp: &[f64],
) -> Result<ChainCheck, TheoryError> {
    if logp.iter().any(|&v| v > 0.0) {
        return Err(invalid("logp entries must be <= 0"));
    }
    let gap = likelihood_gap(g, h, logp)?;
    let tv = tv_distance(g, h)?;
    let kl = kl_divergence(g, h)?;
    let sup_logp = logp.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(ChainCheck {
        gap,
        tv,
        kl,
        sup_logp,
        tv_bound: sup_logp * tv,
        kl_bound: sup_logp * (kl / 2.0).sqrt(),
    })
}

/// Symmetric Gaussian with variance `sigma`, truncated at three standard
/// deviations. Truncation keeps the mean and makes the variable bounded,
/// so it is sub-Gaussian with variance proxy at most `sigma`.
struct TruncatedNormal {
    normal: Normal<f64>,
    limit: f64,
}

impl TruncatedNormal {
    fn new(sigma: f64) -> Self {
        let sd = sigma.sqrt();
        Self {
            normal: Normal::new(0.0, sd).expect("positive sd"),
            limit: 3.0 * sd,
        }
    }

    fn sample(&self, rng: &mut SeededRng) -> f64 {
        loop {
            let x = self.normal.sample(rng);
            if x.abs() <= self.limit {
                return x;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub sigma: f64,
    pub gap: f64,
    pub k: usize,
    pub trials: usize,
    pub failures: usize,
    pub failure_ratio: f64,
}

pub const MIN_TRIALS: usize = 100;

/// Monte-Carlo estimate of how often `K`-sample means fail to order two
/// distance distributions whose means differ by `gap`.
///
/// Real distances are centered at 0 and fake ones at `-gap`; a trial fails
/// when the fake mean is not strictly below the real mean. Trial `t` draws
/// from its own stream of `seed`, so results do not depend on scheduling.
pub fn simulate_separation(
    sigma: f64,
    gap: f64,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<SeparationReport, TheoryError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(invalid(format!("sigma must be > 0, got {sigma}")));
    }
    if !(gap.is_finite() && gap > 0.0) {
        return Err(invalid(format!("gap must be > 0, got {gap}")));
    }
    if k == 0 {
        return Err(invalid("k must be >= 1"));
    }
    if trials < MIN_TRIALS {
        return Err(invalid(format!("need at least {MIN_TRIALS} trials, got {trials}")));
    }
    let noise = TruncatedNormal::new(sigma);
    let failures = (0..trials as u64)
        .filter(|&t| {
            let mut rng = rng::stream(seed, t);
            let real: f64 = (0..k).map(|_| noise.sample(&mut rng)).sum::<f64>() / k as f64;
            let fake: f64 = (0..k).map(|_| noise.sample(&mut rng) - gap).sum::<f64>() / k as f64;
            fake >= real
        })
        .count();
    Ok(SeparationReport {
        sigma,
        gap,
        k,
        trials,
        failures,
        failure_ratio: failures as f64 / trials as f64,
    })
}

/// [`simulate_separation`] at `K = choose_k(sigma, delta_prob, gap, c)`.
pub fn validate_k_bound(
    sigma: f64,
    gap: f64,
    delta_prob: f64,
    c: f64,
    trials: usize,
    seed: u64,
) -> Result<SeparationReport, TheoryError> {
    let k = choose_k(sigma, delta_prob, gap, c).map_err(|e| invalid(e.to_string()))?;
    simulate_separation(sigma, gap, k, trials, seed)
}

/// Empirical AUROC of a per-outcome score table from outcome counts.
/// Fake is positive and lower scores are more fake-like; ties count 1/2.
pub fn auroc_from_counts(scores: &[f64], fake_counts: &[u64], real_counts: &[u64]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_fake: u64 = fake_counts.iter().sum();
    let n_real: u64 = real_counts.iter().sum();
    let mut twice_u: u128 = 0;
    let mut real_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut f, mut r) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            f += u128::from(fake_counts[order[j]]);
            r += u128::from(real_counts[order[j]]);
            j += 1;
        }
        twice_u += 2 * f * (u128::from(n_real) - real_below - r) + f * r;
        real_below += r;
        i = j;
    }
    twice_u as f64 / (2.0 * n_fake as f64 * n_real as f64)
}

fn counts(indices: &[usize], n: usize) -> Vec<u64> {
    let mut c = vec![0u64; n];
    for &i in indices {
        c[i] += 1;
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Pinsker,
    Lecam,
    Kbound,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::Pinsker => "pinsker",
            Experiment::Lecam => "lecam",
            Experiment::Kbound => "kbound",
        })
    }
}

impl FromStr for Experiment {
    type Err = TheoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pinsker" => Ok(Experiment::Pinsker),
            "lecam" => Ok(Experiment::Lecam),
            "kbound" => Ok(Experiment::Kbound),
            other => Err(invalid(format!(
                "unknown experiment {other:?} (pinsker, lecam, kbound)"
            ))),
        }
    }
}

pub const MAX_SUPPORT: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinskerReport {
    pub instances: usize,
    /// Instances where the chain slack fell below `-1e-9`.
    pub chain_violations: usize,
    /// Instances with `KL < 2 TV^2 - 1e-12`.
    pub pinsker_violations: usize,
    pub min_slack: f64,
    pub max_gap: f64,
}

/// Random `(G, H, logp)` instances on supports of 2..=20 outcomes. `logp`
/// is the log of a third random distribution, with zero-mass outcomes
/// allowed in `G` and `H` to exercise the `0 ln 0` convention.
pub fn pinsker_experiment(instances: usize, seed: u64) -> Result<PinskerReport, TheoryError> {
    if instances == 0 {
        return Err(invalid("need at least one instance"));
    }
    let mut report = PinskerReport {
        instances,
        chain_violations: 0,
        pinsker_violations: 0,
        min_slack: f64::INFINITY,
        max_gap: f64::NEG_INFINITY,
    };
    for t in 0..instances as u64 {
        let mut rng = rng::stream(seed, t);
        let n = rng.random_range(2..=MAX_SUPPORT);
        let h = DiscreteDist::random(n, &mut rng)?;
        let mut g = DiscreteDist::random(n, &mut rng)?;
        if rng.random_bool(0.25) {
            // drop one outcome from g; h stays positive so KL is finite
            let drop = rng.random_range(0..n);
            let mut p = g.probs.clone();
            p[drop] = 0.0;
            let total: f64 = p.iter().sum();
            g = DiscreteDist::from_probs(p.iter().map(|x| x / total).collect())?;
        }
        let p = DiscreteDist::random(n, &mut rng)?;
        let logp: Vec<f64> = p.probs().iter().map(|x| x.max(1e-300).ln()).collect();
        let check = likelihood_gap_chain(&g, &h, &logp)?;
        if check.slack() < -1e-9 {
            report.chain_violations += 1;
        }
        if check.kl < 2.0 * check.tv * check.tv - 1e-12 {
            report.pinsker_violations += 1;
        }
        report.min_slack = report.min_slack.min(check.slack());
        report.max_gap = report.max_gap.max(check.gap);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeCamReport {
    pub pairs: usize,
    pub detectors_per_pair: usize,
    pub samples_per_class: usize,
    pub violations: usize,
    /// Largest `auc - ceiling`; the allowance is `3 / sqrt(n)`.
    pub max_excess: f64,
    pub allowance: f64,
}

/// Empirical AUROC of score-table detectors against the Le Cam ceiling.
///
/// Detector 0 of each pair scores outcomes by `h / (g + h)`, the
/// likelihood-ratio ordering, which attains the highest AUROC; the rest
/// are random tables, half with heavily tied integer scores.
pub fn lecam_experiment(
    pairs: usize,
    detectors: usize,
    samples: usize,
    seed: u64,
) -> Result<LeCamReport, TheoryError> {
    if pairs == 0 || detectors == 0 || samples == 0 {
        return Err(invalid("pairs, detectors and samples must be >= 1"));
    }
    let allowance = 3.0 / (samples as f64).sqrt();
    let mut report = LeCamReport {
        pairs,
        detectors_per_pair: detectors,
        samples_per_class: samples,
        violations: 0,
        max_excess: f64::NEG_INFINITY,
        allowance,
    };
    for t in 0..pairs as u64 {
        let mut rng = rng::stream(seed, t);
        let n = rng.random_range(2..=MAX_SUPPORT);
        let g = DiscreteDist::random(n, &mut rng)?;
        let h = DiscreteDist::random(n, &mut rng)?;
        let ceiling = auc_ceiling(tv_distance(&g, &h)?.min(1.0))?;
        let fake = counts(&g.sample_indices(samples, &mut rng), n);
        let real = counts(&h.sample_indices(samples, &mut rng), n);
        for d in 0..detectors {
            let scores: Vec<f64> = match d {
                0 => g.probs.iter().zip(&h.probs).map(|(a, b)| b / (a + b)).collect(),
                _ if d % 2 == 0 => (0..n).map(|_| rng.random_range(0..4) as f64).collect(),
                _ => (0..n).map(|_| rng.random::<f64>()).collect(),
            };
            let excess = auroc_from_counts(&scores, &fake, &real) - ceiling;
            if excess > allowance {
                report.violations += 1;
            }
            report.max_excess = report.max_excess.max(excess);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KBoundParams {
    pub sigma: f64,
    pub delta_prob: f64,
    pub gap: f64,
    pub c: f64,
}

impl Default for KBoundParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            delta_prob: 0.05,
            gap: 0.5,
            c: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "lowercase")]
pub enum ExperimentReport {
    Pinsker(PinskerReport),
    Lecam(LeCamReport),
    Kbound {
        params: KBoundParams,
        /// `2 * delta_prob`, the failure rate the bound allows.
        allowed_failure: f64,
        #[serde(flatten)]
        result: SeparationReport,
    },
}

pub const LECAM_DETECTORS: usize = 20;
pub const LECAM_SAMPLES: usize = 10_000;

/// `trials` counts instances for pinsker, `(G, H)` pairs for lecam and
/// Monte-Carlo trials for kbound.
pub fn run_experiment(
    experiment: Experiment,
    trials: usize,
    seed: u64,
) -> Result<ExperimentReport, TheoryError> {
    Ok(match experiment {
        Experiment::Pinsker => ExperimentReport::Pinsker(pinsker_experiment(trials, seed)?),
        Experiment::Lecam => ExperimentReport::Lecam(lecam_experiment(
            trials,
            LECAM_DETECTORS,
            LECAM_SAMPLES,
            seed,
        )?),
        Experiment::Kbound => {
            let params = KBoundParams::default();
            let result =
                validate_k_bound(params.sigma, params.gap, params.delta_prob, params.c, trials, seed)?;
            ExperimentReport::Kbound {
                params,
                allowed_failure: 2.0 * params.delta_prob,
                result,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn bern(p: f64) -> DiscreteDist {
        DiscreteDist::bernoulli(p).unwrap()
    }

    #[test]
    fn dist_validation() {
        assert!(DiscreteDist::from_probs(vec![0.5, 0.4]).is_err());
        assert!(DiscreteDist::from_probs(vec![1.5, -0.5]).is_err());
        assert!(DiscreteDist::new(vec![1, 1], vec![0.5, 0.5]).is_err());
        assert!(DiscreteDist::new(vec![1], vec![0.5, 0.5]).is_err());
        assert!(DiscreteDist::from_probs(vec![]).is_err());
        assert!(DiscreteDist::from_probs(vec![0.5, 0.5 + 1e-13]).is_ok());
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&bern(0.3), &bern(0.3)).unwrap(), 0.0);
        assert!((tv_distance(&bern(0.9), &bern(0.5)).unwrap() - 0.4).abs() < 1e-15);
        let g = DiscreteDist::from_probs(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let h = DiscreteDist::from_probs(vec![0.0, 0.0, 0.25, 0.75]).unwrap();
        assert_eq!(tv_distance(&g, &h).unwrap(), 1.0);
        let other = DiscreteDist::new(vec![5, 6], vec![0.5, 0.5]).unwrap();
        assert!(tv_distance(&bern(0.5), &other).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&bern(0.2), &bern(0.2)).unwrap(), 0.0);
        let expected = 0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln();
        let kl = kl_divergence(&bern(0.9), &bern(0.5)).unwrap();
        assert!((kl - expected).abs() < 1e-15);
        assert!((kl - 0.3681).abs() < 1e-4);
        // 0 ln 0 = 0
        assert!((kl_divergence(&bern(1.0), &bern(0.5)).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(kl_divergence(&bern(0.5), &bern(1.0)).is_err());
    }

    #[test]
    fn gap_examples() {
        let (g, h) = (bern(0.8), bern(0.3));
        assert_eq!(likelihood_gap(&g, &g, &[-1.0, -2.0]).unwrap(), 0.0);
        assert!(likelihood_gap(&g, &h, &[-3.0, -3.0]).unwrap().abs() < 1e-15);
        // 0.5 * (-1) + (-0.5) * (-2) = 0.5
        assert!((likelihood_gap(&g, &h, &[-2.0, -1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(likelihood_gap(&g, &h, &[-1.0]).is_err());
        assert!(likelihood_gap_chain(&g, &h, &[1.0, -1.0]).is_err());
    }

    #[test]
    fn chain_tv_step_needs_nonpositive_logp() {
        // with mixed signs |gap| can reach 2 tv |logp|_inf
        let (g, h) = (bern(1.0), bern(0.0));
        let gap = likelihood_gap(&g, &h, &[-1.0, 1.0]).unwrap();
        assert_eq!(gap, 2.0);
        assert_eq!(tv_distance(&g, &h).unwrap(), 1.0);
    }

    #[test]
    fn ceiling_examples() {
        assert_eq!(auc_ceiling(0.0).unwrap(), 0.5);
        assert_eq!(auc_ceiling(1.0).unwrap(), 1.0);
        assert_eq!(auc_ceiling(0.5).unwrap(), 0.875);
        assert!(auc_ceiling(1.1).is_err());
        assert!(auc_ceiling(f64::NAN).is_err());
    }

    #[test]
    fn separation_examples() {
        let easy = simulate_separation(1.0, 10.0, 1, 1000, 3).unwrap();
        assert!(easy.failure_ratio < 0.01);
        let r = validate_k_bound(1.0, 0.5, 0.05, 4.0, 1000, 3).unwrap();
        assert_eq!(r.k, 48);
        assert!(r.failure_ratio <= 0.10, "{}", r.failure_ratio);
        // K=1, gap 0.1: P(N(0,2) < -0.1) ~ 0.47
        let hard = simulate_separation(1.0, 0.1, 1, 1000, 3).unwrap();
        assert!(hard.failure_ratio > 0.25, "{}", hard.failure_ratio);
        assert!(simulate_separation(1.0, 0.1, 1, 99, 3).is_err());
        assert!(simulate_separation(0.0, 0.1, 1, 100, 3).is_err());
        assert_eq!(simulate_separation(1.0, 0.2, 4, 500, 9).unwrap(), simulate_separation(1.0, 0.2, 4, 500, 9).unwrap());
    }

    #[test]
    fn truncated_normal_stays_in_range() {
        let t = TruncatedNormal::new(4.0);
        let mut rng = rng::seeded(0);
        let xs: Vec<f64> = (0..20_000).map(|_| t.sample(&mut rng)).collect();
        assert!(xs.iter().all(|x| x.abs() <= 6.0));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.05);
        // variance of a normal truncated at 3 sd: sd^2 * 0.9733
        assert!((var - 4.0 * 0.9733).abs() < 0.12, "{var}");
    }

    #[test]
    fn count_auroc_matches_sample_auroc() {
        let mut rng = rng::seeded(5);
        for _ in 0..20 {
            let n = rng.random_range(2..8);
            let g = DiscreteDist::random(n, &mut rng).unwrap();
            let h = DiscreteDist::random(n, &mut rng).unwrap();
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..3) as f64).collect();
            let fi = g.sample_indices(300, &mut rng);
            let ri = h.sample_indices(200, &mut rng);
            let fs: Vec<f64> = fi.iter().map(|&i| scores[i]).collect();
            let rs: Vec<f64> = ri.iter().map(|&i| scores[i]).collect();
            let direct = crate::eval::auroc(&fs, &rs).unwrap();
            let via = auroc_from_counts(&scores, &counts(&fi, n), &counts(&ri, n));
            assert!((direct - via).abs() < 1e-12);
        }
    }

    #[test]
    fn lr_detector_reaches_ceiling_on_disjoint_supports() {
        let g = DiscreteDist::from_probs(vec![0.5, 0.5, 0.0]).unwrap();
        let h = DiscreteDist::from_probs(vec![0.0, 0.0, 1.0]).unwrap();
        let scores = [0.0, 0.0, 1.0];
        let auc = auroc_from_counts(&scores, &[50, 50, 0], &[0, 0, 100]);
        assert_eq!(auc, auc_ceiling(tv_distance(&g, &h).unwrap()).unwrap());
    }

    #[test]
    fn experiments_small() {
        let p = pinsker_experiment(200, 1).unwrap();
        assert_eq!((p.chain_violations, p.pinsker_violations), (0, 0));
        let l = lecam_experiment(5, 4, 2000, 1).unwrap();
        assert_eq!(l.violations, 0);
        let k = run_experiment(Experiment::Kbound, 200, 1).unwrap();
        let json = serde_json::to_value(&k).unwrap();
        assert_eq!(json["experiment"], "kbound");
        assert_eq!(json["k"], 48);
        assert_eq!("lecam".parse::<Experiment>().unwrap(), Experiment::Lecam);
        assert!("x".parse::<Experiment>().is_err());
    }

    fn dist_pair() -> impl Strategy<Value = (DiscreteDist, DiscreteDist)> {
        (2usize..12, any::<u64>()).prop_map(|(n, seed)| {
            let mut rng = rng::seeded(seed);
            (
                DiscreteDist::random(n, &mut rng).unwrap(),
                DiscreteDist::random(n, &mut rng).unwrap(),
            )
        })
    }

    proptest! {
        #[test]
        fn pinsker_inequality((g, h) in dist_pair()) {
            let tv = tv_distance(&g, &h).unwrap();
            let kl = kl_divergence(&g, &h).unwrap();
            prop_assert!(kl >= 2.0 * tv * tv - 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&tv));
        }

        #[test]
        fn zero_iff_equal((g, h) in dist_pair()) {
            prop_assert_eq!(tv_distance(&g, &g).unwrap(), 0.0);
            prop_assert_eq!(kl_divergence(&h, &h).unwrap(), 0.0);
            if g != h {
                prop_assert!(tv_distance(&g, &h).unwrap() > 1e-12);
                prop_assert!(kl_divergence(&g, &h).unwrap() > 0.0);
            }
        }

        #[test]
        fn chain_holds((g, h) in dist_pair(), seed in any::<u64>()) {
            let mut rng = rng::seeded(seed);
            let logp: Vec<f64> = (0..g.len()).map(|_| -rng.random_range(0.0..30.0)).collect();
            let c = likelihood_gap_chain(&g, &h, &logp).unwrap();
            prop_assert!(c.slack() >= -1e-9, "{:?}", c);
        }

        #[test]
        fn ceiling_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(auc_ceiling(lo).unwrap() <= auc_ceiling(hi).unwrap());
            prop_assert_eq!(auc_ceiling(a).unwrap(), 0.5 + a - a * a / 2.0);
        }
    }
}
