//! Popularity-alignment metrics for explanation sets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::data::{CohortLabel, PopularityTable};
use crate::influence::{CounterfactualResult, Method, Status};

pub const PDS_EPSILON: f64 = 1e-10;
pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("need at least 2 bins (got {0})")]
    TooFewBins(usize),
    #[error("value {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("paired test needs at least 2 shared users (got {0})")]
    TooFewPairs(usize),
    #[error("baseline size {size} exceeds history length {history}")]
    SizeTooLarge { size: usize, history: usize },
}

/// Frequency histogram over `bins` equal-width intervals of `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityHistogram {
    pub bins: usize,
    pub mass: Vec<f64>,
}

impl PopularityHistogram {
    pub fn from_values(values: &[f64], bins: usize) -> Result<Self, MetricsError> {
        if bins < 2 {
            return Err(MetricsError::TooFewBins(bins));
        }
        if values.is_empty() {
            return Err(MetricsError::Empty("popularity multiset"));
        }
        let mut counts = vec![0usize; bins];
        for &v in values {
            if !(0.0..=1.0).contains(&v) {
                return Err(MetricsError::OutOfRange(v));
            }
            counts[bin_of(v, bins)] += 1;
        }
        let total = values.len() as f64;
        Ok(Self { bins, mass: counts.into_iter().map(|c| c as f64 / total).collect() })
    }
}

/// Bin index of `v` in `[0, 1]`; the right edge belongs to the last bin.
pub fn bin_of(v: f64, bins: usize) -> usize {
    ((v * bins as f64).floor() as usize).min(bins - 1)
}

/// Chi-squared distance with the explanation histogram in the denominator.
pub fn pds(history_pops: &[f64], cf_pops: &[f64], bins: usize, epsilon: f64) -> Result<f64, MetricsError> {
    let h = PopularityHistogram::from_values(history_pops, bins)?;
    let c = PopularityHistogram::from_values(cf_pops, bins)?;
    Ok(pds_from_histograms(&h.mass, &c.mass, epsilon))
}

pub fn pds_from_histograms(history: &[f64], cf: &[f64], epsilon: f64) -> f64 {
    history.iter().zip(cf).map(|(h, c)| (h - c).powi(2) / (c + epsilon)).sum()
}

/// Squared shift between a user's mean history and explanation popularity.
pub fn user_epd(history_mean: f64, cf_mean: f64) -> f64 {
    (cf_mean - history_mean).powi(2)
}

/// Mean of [`user_epd`] over `(history_mean, cf_mean)` pairs.
pub fn epd(pairs: &[(f64, f64)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty("user pairs"));
    }
    for &(h, c) in pairs {
        for v in [h, c] {
            if !(0.0..=1.0).contains(&v) {
                return Err(MetricsError::OutOfRange(v));
            }
        }
    }
    Ok(pairs.iter().map(|&(h, c)| user_epd(h, c)).sum::<f64>() / pairs.len() as f64)
}

/// The `size` most popular history items, ties by smaller id.
pub fn top_popular_baseline(
    history: &[String],
    popularity: &PopularityTable,
    size: usize,
) -> Result<Vec<String>, MetricsError> {
    let mut unique: Vec<&String> = history.iter().collect();
    unique.sort();
    unique.dedup();
    if size > unique.len() {
        return Err(MetricsError::SizeTooLarge { size, history: unique.len() });
    }
    unique.sort_by(|a, b| popularity.get_or_zero(b).total_cmp(&popularity.get_or_zero(a)).then_with(|| a.cmp(b)));
    Ok(unique.into_iter().take(size).cloned().collect())
}

/// Size-matched baseline results for every found explanation in `accent`.
/// Users without a found explanation are skipped.
pub fn top_popular_results(
    accent: &[CounterfactualResult],
    histories: &BTreeMap<String, Vec<String>>,
    popularity: &PopularityTable,
) -> Vec<CounterfactualResult> {
    accent
        .iter()
        .filter(|r| r.is_found())
        .filter_map(|r| {
            let history = histories.get(&r.user_id)?;
            let set = top_popular_baseline(history, popularity, r.removed_set.len()).ok()?;
            Some(CounterfactualResult {
                user_id: r.user_id.clone(),
                status: Status::Found,
                removed_set: set,
                displaced: r.displaced.clone(),
                replacement: None,
                estimated_gap_trace: Vec::new(),
                method: Method::TopPopular,
            })
        })
        .collect()
}

/// Fraction of results with no explanation; 0 for an empty slice.
pub fn no_cf_rate(results: &[CounterfactualResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().filter(|r| !r.is_found()).count() as f64 / results.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub t_statistic: f64,
    pub p_value: f64,
    pub n: usize,
    /// Set when the differences have zero variance.
    pub degenerate: bool,
}

/// Two-sided paired t-test on per-user values present in both maps.
pub fn paired_epd_test(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Result<PairedTest, MetricsError> {
    let diffs: Vec<f64> = a.iter().filter_map(|(u, x)| b.get(u).map(|y| x - y)).collect();
    let n = diffs.len();
    if n < 2 {
        return Err(MetricsError::TooFewPairs(n));
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    // Differences equal up to rounding count as zero variance.
    if var.sqrt() <= 1e-12 * mean.abs() || var == 0.0 {
        let (t, p) = if mean == 0.0 { (0.0, 1.0) } else { (mean.signum() * f64::INFINITY, 0.0) };
        return Ok(PairedTest { t_statistic: t, p_value: p, n, degenerate: true });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("df >= 1");
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(PairedTest { t_statistic: t, p_value: p, n, degenerate: false })
}

/// Mean normalized rank of `cf` items in `history` sorted by descending
/// popularity (ties by id); 0 is the most popular position.
pub fn mean_normalized_position(history: &[String], cf: &[String], popularity: &PopularityTable) -> f64 {
    let mut sorted: Vec<&String> = history.iter().collect();
    sorted.sort_by(|a, b| popularity.get_or_zero(b).total_cmp(&popularity.get_or_zero(a)).then_with(|| a.cmp(b)));
    if sorted.len() <= 1 || cf.is_empty() {
        return 0.0;
    }
    let denom = (sorted.len() - 1) as f64;
    let total: f64 =
        cf.iter().map(|item| sorted.iter().position(|h| *h == item).map_or(0.0, |r| r as f64 / denom)).sum();
    total / cf.len() as f64
}

/// Equal-count bin per user, ordered by mean history popularity (ties by id).
pub fn assign_user_bins(
    users: &[String],
    histories: &BTreeMap<String, Vec<String>>,
    popularity: &PopularityTable,
    bins: usize,
) -> BTreeMap<String, usize> {
    let mut ranked: Vec<(f64, &String)> = users
        .iter()
        .filter_map(|u| {
            let h = histories.get(u)?;
            Some((popularity.mean_of(h)?, u))
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let n = ranked.len();
    ranked.into_iter().enumerate().map(|(i, (_, u))| (u.clone(), i * bins / n.max(1))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopPositionBin {
    pub cohort: CohortLabel,
    pub bin_index: usize,
    pub method: Method,
    /// Mean over the bin's users of their mean normalized position.
    pub mean_normalized_position: f64,
    /// Mean over the bin's users of their mean explanation popularity.
    pub mean_cf_popularity: f64,
    pub users: usize,
}

/// Per-bin averages for one method; empty bins are omitted.
pub fn pop_position_bins(
    cohort: CohortLabel,
    method: Method,
    results: &[CounterfactualResult],
    histories: &BTreeMap<String, Vec<String>>,
    popularity: &PopularityTable,
    user_bins: &BTreeMap<String, usize>,
) -> Vec<PopPositionBin> {
    let mut acc: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for r in results.iter().filter(|r| r.is_found() && !r.removed_set.is_empty()) {
        let (Some(&bin), Some(history)) = (user_bins.get(&r.user_id), histories.get(&r.user_id)) else {
            continue;
        };
        let x = mean_normalized_position(history, &r.removed_set, popularity);
        let y = popularity.mean_of(&r.removed_set).unwrap_or(0.0);
        let e = acc.entry(bin).or_insert((0.0, 0.0, 0));
        e.0 += x;
        e.1 += y;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(bin_index, (x, y, n))| PopPositionBin {
            cohort,
            bin_index,
            method,
            mean_normalized_position: x / n as f64,
            mean_cf_popularity: y / n as f64,
            users: n,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub method: Method,
    /// `None` for the pooled niche + blockbuster population.
    pub cohort: Option<CohortLabel>,
    /// `None` when no user has a found explanation.
    pub pds: Option<f64>,
    pub epd: Option<f64>,
    pub per_user_epd: BTreeMap<String, f64>,
    pub no_cf_rate: f64,
    pub n_users: usize,
    pub n_found: usize,
}

/// Metrics for one method over one user population. `results` may contain
/// users outside the population; they are ignored.
pub fn bias_report(
    method: Method,
    cohort: Option<CohortLabel>,
    users: &[String],
    results: &[CounterfactualResult],
    histories: &BTreeMap<String, Vec<String>>,
    popularity: &PopularityTable,
    bins: usize,
) -> Result<BiasReport, MetricsError> {
    let by_user: BTreeMap<&str, &CounterfactualResult> = results.iter().map(|r| (r.user_id.as_str(), r)).collect();
    let mut in_scope = Vec::new();
    for u in users {
        if let Some(r) = by_user.get(u.as_str()) {
            in_scope.push((*r).clone());
        }
    }
    let mut history_pops = Vec::new();
    let mut cf_pops = Vec::new();
    let mut per_user_epd = BTreeMap::new();
    for r in in_scope.iter().filter(|r| r.is_found() && !r.removed_set.is_empty()) {
        let Some(history) = histories.get(&r.user_id) else {
            continue;
        };
        history_pops.extend(history.iter().map(|i| popularity.get_or_zero(i)));
        cf_pops.extend(r.removed_set.iter().map(|i| popularity.get_or_zero(i)));
        let h = popularity.mean_of(history).unwrap_or(0.0);
        let c = popularity.mean_of(&r.removed_set).unwrap_or(0.0);
        per_user_epd.insert(r.user_id.clone(), user_epd(h, c));
    }
    let (pds_value, epd_value) = if per_user_epd.is_empty() {
        (None, None)
    } else {
        let mean = per_user_epd.values().sum::<f64>() / per_user_epd.len() as f64;
        (Some(pds(&history_pops, &cf_pops, bins, PDS_EPSILON)?), Some(mean))
    };
    // Top-popular results only exist for users with a found accent result, so
    // the no-CF rate is measured against the population actually attempted.
    Ok(BiasReport {
        method,
        cohort,
        pds: pds_value,
        epd: epd_value,
        n_found: per_user_epd.len(),
        per_user_epd,
        no_cf_rate: no_cf_rate(&in_scope),
        n_users: in_scope.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(pairs: &[(&str, f64)]) -> PopularityTable {
        PopularityTable { values: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(), provenance: "test".into() }
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn found(user: &str, set: &[&str]) -> CounterfactualResult {
        CounterfactualResult {
            user_id: user.into(),
            status: Status::Found,
            removed_set: ids(set),
            displaced: "r".into(),
            replacement: Some("s".into()),
            estimated_gap_trace: vec![-0.1],
            method: Method::Accent,
        }
    }

    fn not_found(user: &str) -> CounterfactualResult {
        CounterfactualResult {
            status: Status::NotFound,
            removed_set: Vec::new(),
            replacement: None,
            ..found(user, &[])
        }
    }

    #[test]
    fn pds_hand_fixture() {
        // P_H = (0.5, 0.5), P_C = (1, 0).
        let v = pds(&[0.1, 0.9], &[0.2], 2, PDS_EPSILON).unwrap();
        assert!((v - (2.5e9 + 0.25)).abs() <= 1e-9 * 2.5e9);
        assert_eq!(pds_from_histograms(&[0.5, 0.5], &[1.0, 0.0], 1e-10), 0.25 / 1.0 + 0.25 / 1e-10);
    }

    #[test]
    fn pds_is_asymmetric() {
        let a = pds(&[0.1, 0.9], &[0.2], 2, PDS_EPSILON).unwrap();
        let b = pds(&[0.2], &[0.1, 0.9], 2, PDS_EPSILON).unwrap();
        // P_H = (1, 0), P_C = (0.5, 0.5).
        assert!((b - 1.0).abs() < 1e-9);
        assert!(a > b);
    }

    #[test]
    fn histogram_edges() {
        let h = PopularityHistogram::from_values(&[0.0, 0.5, 1.0], 2).unwrap();
        assert_eq!(h.mass, vec![1.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(PopularityHistogram::from_values(&[0.5], 1), Err(MetricsError::TooFewBins(1)));
        assert_eq!(PopularityHistogram::from_values(&[], 2), Err(MetricsError::Empty("popularity multiset")));
        assert_eq!(PopularityHistogram::from_values(&[1.5], 2), Err(MetricsError::OutOfRange(1.5)));
    }

    #[test]
    fn epd_fixtures() {
        assert!((epd(&[(0.3, 0.5), (0.2, 0.2)]).unwrap() - 0.02).abs() <= 1e-9);
        assert!((epd(&[(0.1, 0.4)]).unwrap() - 0.09).abs() <= 1e-9);
        assert_eq!(epd(&[(0.3, 0.3), (0.7, 0.7)]).unwrap(), 0.0);
        assert!(epd(&[]).is_err());
    }

    #[test]
    fn baseline_picks_most_popular() {
        let pop = table(&[("a", 0.9), ("b", 0.7), ("c", 0.5), ("d", 0.3), ("e", 0.1)]);
        let h = ids(&["e", "c", "a", "d", "b"]);
        assert_eq!(top_popular_baseline(&h, &pop, 3).unwrap(), ids(&["a", "b", "c"]));
        assert_eq!(top_popular_baseline(&h, &pop, 1).unwrap(), ids(&["a"]));
        let flat = table(&[("x", 0.4), ("y", 0.4), ("z", 0.4)]);
        assert_eq!(top_popular_baseline(&ids(&["z", "y", "x"]), &flat, 2).unwrap(), ids(&["x", "y"]));
        assert!(top_popular_baseline(&h, &pop, 6).is_err());
    }

    #[test]
    fn baseline_results_skip_not_found() {
        let pop = table(&[("a", 0.9), ("b", 0.1), ("c", 0.5)]);
        let hist: BTreeMap<String, Vec<String>> =
            [("u1".to_string(), ids(&["a", "b", "c"])), ("u2".to_string(), ids(&["a", "b"]))].into();
        let out = top_popular_results(&[found("u1", &["b", "c"]), not_found("u2")], &hist, &pop);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].removed_set, ids(&["a", "c"]));
        assert_eq!(out[0].method, Method::TopPopular);
    }

    #[test]
    fn no_cf_rate_counts() {
        let mut rs: Vec<_> = (0..17).map(|i| found(&format!("u{i}"), &["a"])).collect();
        assert_eq!(no_cf_rate(&rs), 0.0);
        rs.extend((0..3).map(|i| not_found(&format!("n{i}"))));
        assert!((no_cf_rate(&rs) - 0.15).abs() < 1e-12);
        assert_eq!(no_cf_rate(&[not_found("x")]), 1.0);
    }

    #[test]
    fn paired_test_hand_statistic() {
        let a: BTreeMap<String, f64> = [("u1", 1.0), ("u2", 2.0), ("u3", 3.0)].map(|(k, v)| (k.to_string(), v)).into();
        let b: BTreeMap<String, f64> = a.keys().map(|k| (k.clone(), 0.0)).collect();
        let r = paired_epd_test(&a, &b).unwrap();
        assert!((r.t_statistic - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.n, 3);
        // Two-sided p for t = 2*sqrt(3) with 2 df: 1 - t / sqrt(t^2 + 2).
        let t = 2.0 * 3f64.sqrt();
        assert!((r.p_value - (1.0 - t / (t * t + 2.0).sqrt())).abs() < 1e-9);
        assert!(!r.degenerate);
    }

    #[test]
    fn paired_test_degenerate_and_empty() {
        let a: BTreeMap<String, f64> = [("u1", 0.2), ("u2", 0.4)].map(|(k, v)| (k.to_string(), v)).into();
        let same = paired_epd_test(&a, &a).unwrap();
        assert!(same.degenerate && same.t_statistic == 0.0 && same.p_value == 1.0);
        let shifted: BTreeMap<String, f64> = a.iter().map(|(k, v)| (k.clone(), v + 0.1)).collect();
        let r = paired_epd_test(&a, &shifted).unwrap();
        assert!(r.degenerate);
        let other: BTreeMap<String, f64> = [("v1".to_string(), 0.1)].into();
        assert_eq!(paired_epd_test(&a, &other), Err(MetricsError::TooFewPairs(0)));
    }

    #[test]
    fn positions_at_extremes() {
        let pop = table(&[("a", 0.9), ("b", 0.7), ("c", 0.5), ("d", 0.3), ("e", 0.1)]);
        let h = ids(&["c", "e", "a", "b", "d"]);
        assert_eq!(mean_normalized_position(&h, &ids(&["a"]), &pop), 0.0);
        assert_eq!(mean_normalized_position(&h, &ids(&["e"]), &pop), 1.0);
        assert_eq!(mean_normalized_position(&h, &ids(&["b", "d"]), &pop), 0.5);
        assert_eq!(mean_normalized_position(&ids(&["a"]), &ids(&["a"]), &pop), 0.0);
    }

    #[test]
    fn two_user_bins_by_hand() {
        let pop = table(&[("a", 0.8), ("b", 0.6), ("c", 0.2), ("d", 0.0)]);
        let hist: BTreeMap<String, Vec<String>> = [
            ("u1".to_string(), ids(&["a", "b", "c"])), // mean 0.5333
            ("u2".to_string(), ids(&["c", "d"])),      // mean 0.1
        ]
        .into();
        let users = ids(&["u1", "u2"]);
        let bins = assign_user_bins(&users, &hist, &pop, 2);
        assert_eq!(bins["u2"], 0);
        assert_eq!(bins["u1"], 1);
        let rs = vec![found("u1", &["b", "c"]), found("u2", &["c"])];
        let out = pop_position_bins(CohortLabel::Niche, Method::Accent, &rs, &hist, &pop, &bins);
        assert_eq!(out.len(), 2);
        // u2: history sorted (c, d), c at rank 0 -> x = 0, y = 0.2.
        assert_eq!((out[0].bin_index, out[0].mean_normalized_position), (0, 0.0));
        assert!((out[0].mean_cf_popularity - 0.2).abs() < 1e-12);
        // u1: sorted (a, b, c), b at 1/2 and c at 2/2 -> x = 0.75, y = 0.4.
        assert!((out[1].mean_normalized_position - 0.75).abs() < 1e-12);
        assert!((out[1].mean_cf_popularity - 0.4).abs() < 1e-12);
    }

    #[test]
    fn equal_count_bins_cover_all_slots() {
        let users: Vec<String> = (0..40).map(|i| format!("u{i:02}")).collect();
        let pop = table(&[("x", 0.5)]);
        let hist: BTreeMap<String, Vec<String>> = users.iter().map(|u| (u.clone(), ids(&["x"]))).collect();
        let bins = assign_user_bins(&users, &hist, &pop, 20);
        let mut counts = [0; 20];
        bins.values().for_each(|&b| counts[b] += 1);
        assert!(counts.iter().all(|&c| c == 2));
    }

    #[test]
    fn report_excludes_not_found_users() {
        let pop = table(&[("a", 0.9), ("b", 0.1), ("c", 0.5)]);
        let hist: BTreeMap<String, Vec<String>> = [
            ("u1".to_string(), ids(&["a", "b"])),
            ("u2".to_string(), ids(&["a", "c"])),
            ("u3".to_string(), ids(&["b", "c"])),
        ]
        .into();
        let rs = vec![found("u1", &["a"]), not_found("u2"), found("u3", &["c"]), found("zz", &["a"])];
        let users = ids(&["u1", "u2", "u3"]);
        let r = bias_report(Method::Accent, Some(CohortLabel::Niche), &users, &rs, &hist, &pop, 20).unwrap();
        assert_eq!((r.n_users, r.n_found), (3, 2));
        assert!((r.no_cf_rate - 1.0 / 3.0).abs() < 1e-12);
        // u1: (0.5 -> 0.9)^2 = 0.16; u3: (0.3 -> 0.5)^2 = 0.04.
        assert!((r.epd.unwrap() - 0.10).abs() < 1e-12);
        let mean: f64 = r.per_user_epd.values().sum::<f64>() / r.per_user_epd.len() as f64;
        assert_eq!(r.epd.unwrap(), mean);
        assert!(r.pds.unwrap() >= 0.0);

        let none = bias_report(Method::Accent, None, &ids(&["u2"]), &rs, &hist, &pop, 20).unwrap();
        assert_eq!((none.pds, none.epd, none.no_cf_rate), (None, None, 1.0));
    }

    proptest! {
        #[test]
        fn pds_of_identical_multisets_is_zero(v in prop::collection::vec(0.0f64..=1.0, 1..60), bins in 2usize..40) {
            prop_assert_eq!(pds(&v, &v, bins, PDS_EPSILON).unwrap(), 0.0);
        }

        #[test]
        fn pds_permutation_and_multiplicity_invariant(
            h in prop::collection::vec(0.0f64..=1.0, 1..40),
            c in prop::collection::vec(0.0f64..=1.0, 1..40),
        ) {
            let base = pds(&h, &c, 20, PDS_EPSILON).unwrap();
            let mut hr = h.clone();
            hr.reverse();
            let doubled: Vec<f64> = c.iter().chain(&c).copied().collect();
            let other = pds(&hr, &doubled, 20, PDS_EPSILON).unwrap();
            prop_assert!((base - other).abs() <= 1e-9 * base.max(1.0));
            prop_assert!(base >= 0.0);
        }

        #[test]
        fn epd_is_mean_of_user_terms(pairs in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..50)) {
            let e = epd(&pairs).unwrap();
            let doubled: Vec<_> = pairs.iter().chain(&pairs).copied().collect();
            prop_assert!((e - epd(&doubled).unwrap()).abs() < 1e-12);
            prop_assert!(e >= 0.0);
        }

        #[test]
        fn baseline_is_subset_of_requested_size(n in 1usize..12, seed in 0u64..1000) {
            let items: Vec<String> = (0..n).map(|i| format!("i{i}")).collect();
            let pop = PopularityTable {
                values: items.iter().enumerate().map(|(k, id)| (id.clone(), ((k as u64 * 7 + seed) % 5) as f64 / 5.0)).collect(),
                provenance: String::new(),
            };
            let size = (seed as usize) % (n + 1);
            let out = top_popular_baseline(&items, &pop, size).unwrap();
            prop_assert_eq!(out.len(), size);
            prop_assert!(out.iter().all(|i| items.contains(i)));
        }
    }
}
