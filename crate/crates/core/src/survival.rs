//! Multi-group log-rank test, chi-square tail probabilities and
//! Kaplan–Meier curves.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::data::SurvivalRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRankResult {
    pub chi_square: f64,
    #[serde(rename = "df")]
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub group_sizes: Vec<usize>,
    #[serde(skip)]
    pub observed: Vec<f64>,
    #[serde(skip)]
    pub expected: Vec<f64>,
}

/// k-group log-rank test of equal survival across the groups given by
/// `assignments` (one label per record).
///
/// Ties are handled with the hypergeometric variance at each distinct event
/// time; samples censored at an event time are still at risk at that time.
/// The statistic is `(O - E)ᵀ V⁺ (O - E)` over the first `k - 1` groups.
pub fn logrank_test(assignments: &[usize], records: &[SurvivalRecord]) -> Result<LogRankResult> {
    if assignments.len() != records.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} assignments for {} survival records",
            assignments.len(),
            records.len()
        )));
    }
    let labels: BTreeMap<usize, usize> = assignments
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    let groups = labels.len();
    if groups < 2 {
        return Err(Error::Survival("log-rank test needs at least two groups".into()));
    }
    let group: Vec<usize> = assignments.iter().map(|a| labels[a]).collect();
    let mut group_sizes = vec![0usize; groups];
    for &g in &group {
        group_sizes[g] += 1;
    }

    let mut event_times: Vec<f64> = records.iter().filter(|r| r.event).map(|r| r.time).collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    if event_times.is_empty() {
        return Err(Error::Survival("no events observed".into()));
    }
    for g in 0..groups {
        let last = records
            .iter()
            .zip(&group)
            .filter(|(_, &gg)| gg == g)
            .map(|(r, _)| r.time)
            .fold(f64::NEG_INFINITY, f64::max);
        if last < event_times[0] {
            return Err(Error::Survival(format!(
                "group {g} has no samples at risk at any event time"
            )));
        }
    }

    let mut observed = vec![0.0; groups];
    let mut expected = vec![0.0; groups];
    let mut cov = DMatrix::<f64>::zeros(groups, groups);
    let mut at_risk = vec![0.0; groups];
    let mut deaths = vec![0.0; groups];
    for &t in &event_times {
        at_risk.iter_mut().for_each(|v| *v = 0.0);
        deaths.iter_mut().for_each(|v| *v = 0.0);
        for (r, &g) in records.iter().zip(&group) {
            if r.time >= t {
                at_risk[g] += 1.0;
            }
            if r.event && r.time == t {
                deaths[g] += 1.0;
            }
        }
        let n: f64 = at_risk.iter().sum();
        let d: f64 = deaths.iter().sum();
        for g in 0..groups {
            observed[g] += deaths[g];
            expected[g] += d * at_risk[g] / n;
        }
        if n > 1.0 {
            let scale = d * (n - d) / (n - 1.0);
            for g in 0..groups {
                for h in 0..groups {
                    let delta = if g == h { 1.0 } else { 0.0 };
                    cov[(g, h)] += scale * (at_risk[g] / n) * (delta - at_risk[h] / n);
                }
            }
        }
    }

    let m = groups - 1;
    let diff = DVector::from_fn(m, |g, _| observed[g] - expected[g]);
    let v = cov.view((0, 0), (m, m)).into_owned();
    let chi_square = pseudo_inverse_quadratic(&v, &diff).max(0.0);
    let degrees_of_freedom = m;
    Ok(LogRankResult {
        chi_square,
        degrees_of_freedom,
        p_value: chi_square_sf(chi_square, degrees_of_freedom)?,
        group_sizes,
        observed,
        expected,
    })
}

/// `zᵀ V⁺ z` for symmetric positive semi-definite `V`.
fn pseudo_inverse_quadratic(v: &DMatrix<f64>, z: &DVector<f64>) -> f64 {
    if z.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    let eig = SymmetricEigen::new(v.clone());
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let cutoff = 1e-10 * top;
    (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > cutoff)
        .map(|i| {
            let proj = eig.eigenvectors.column(i).dot(z);
            proj * proj / eig.eigenvalues[i]
        })
        .sum()
}

const GAMMA_EPS: f64 = 1e-14;
const GAMMA_MAX_ITER: usize = 10_000;

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma `P(a, x)` by its power series.
fn lower_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut denom = a;
    for _ in 0..GAMMA_MAX_ITER {
        denom += 1.0;
        term *= x / denom;
        sum += term;
        if term.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Regularized upper incomplete gamma `Q(a, x)` by its continued fraction
/// (modified Lentz).
fn upper_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn upper_incomplete_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - lower_series(a, x)
    } else {
        upper_fraction(a, x)
    }
}

/// Upper-tail probability of the chi-square distribution.
pub fn chi_square_sf(x: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(Error::InvalidArgument("chi-square needs df >= 1".into()));
    }
    if x.is_nan() || x < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "chi-square statistic must be nonnegative, got {x}"
        )));
    }
    if x == f64::INFINITY {
        return Ok(0.0);
    }
    Ok(upper_incomplete_gamma(df as f64 / 2.0, x / 2.0).clamp(0.0, 1.0))
}

/// Product-limit survival curve: `(0, 1)` followed by one step per distinct
/// event time.
pub fn kaplan_meier(records: &[SurvivalRecord]) -> Result<Vec<(f64, f64)>> {
    if records.is_empty() {
        return Err(Error::Survival("Kaplan-Meier needs at least one record".into()));
    }
    let mut event_times: Vec<f64> = records.iter().filter(|r| r.event).map(|r| r.time).collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    let mut curve = vec![(0.0, 1.0)];
    let mut s = 1.0;
    for t in event_times {
        let n = records.iter().filter(|r| r.time >= t).count() as f64;
        let d = records.iter().filter(|r| r.event && r.time == t).count() as f64;
        s *= 1.0 - d / n;
        curve.push((t, s));
    }
    Ok(curve)
}

/// CSV `time,survival`.
pub fn write_km_csv(curve: &[(f64, f64)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    writeln!(out, "time,survival").map_err(io_err)?;
    for (t, s) in curve {
        writeln!(out, "{t},{s}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use statrs::function::erf::erfc;

    fn rec(t: f64, e: bool) -> SurvivalRecord {
        SurvivalRecord::new("x", t, e)
    }

    fn toy() -> (Vec<usize>, Vec<SurvivalRecord>) {
        let records = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0].map(|t| rec(t, true)).to_vec();
        (vec![0, 0, 0, 1, 1, 1], records)
    }

    #[test]
    fn hand_computed_two_group_tables() {
        // risk tables at t = 1..6: (n, n_A) = (6,3) (5,2) (4,1) (3,0) (2,0) (1,0)
        // E_A = 3/6 + 2/5 + 1/4 = 1.15, V = 1/4 + 6/25 + 3/16 = 0.6775
        let (groups, records) = toy();
        let r = logrank_test(&groups, &records).unwrap();
        assert_abs_diff_eq!(r.expected[0], 1.15, epsilon = 1e-12);
        assert_abs_diff_eq!(r.chi_square, 1.85 * 1.85 / 0.6775, epsilon = 1e-9);
        assert_abs_diff_eq!(r.chi_square, 5.051_660_516_605_166, epsilon = 1e-9);
        assert_abs_diff_eq!(r.p_value, 0.024_602_349_953_641_79, epsilon = 1e-9);
        assert_eq!(r.degrees_of_freedom, 1);
        assert_eq!(r.group_sizes, vec![3, 3]);
    }

    #[test]
    fn identical_groups_give_p_one() {
        let times = [(5.0, true), (8.0, false), (12.0, true), (12.0, true), (20.0, false)];
        let mut records = Vec::new();
        let mut groups = Vec::new();
        for g in 0..2 {
            for &(t, e) in &times {
                records.push(rec(t, e));
                groups.push(g);
            }
        }
        let r = logrank_test(&groups, &records).unwrap();
        assert_eq!(r.chi_square, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn logrank_errors() {
        let (_, records) = toy();
        assert!(logrank_test(&[0; 6], &records).is_err());
        assert!(logrank_test(&[0, 1], &records).is_err());
        let censored = vec![rec(0.0, false), rec(0.0, false), rec(0.0, false)];
        assert!(logrank_test(&[0, 1, 1], &censored).is_err());
        let never_at_risk = vec![rec(5.0, true), rec(6.0, true), rec(1.0, false)];
        assert!(logrank_test(&[0, 0, 1], &never_at_risk).is_err());
    }

    #[test]
    fn three_groups_match_reference() {
        let times = [
            (3.0, true, 0),
            (5.0, true, 0),
            (7.0, false, 0),
            (9.0, true, 0),
            (12.0, true, 0),
            (4.0, true, 1),
            (8.0, true, 1),
            (8.0, true, 1),
            (15.0, false, 1),
            (20.0, true, 1),
            (10.0, false, 2),
            (18.0, true, 2),
            (22.0, true, 2),
            (25.0, false, 2),
            (30.0, true, 2),
        ];
        let records: Vec<_> = times.iter().map(|&(t, e, _)| rec(t, e)).collect();
        let groups: Vec<_> = times.iter().map(|&(_, _, g)| g).collect();
        let r = logrank_test(&groups, &records).unwrap();
        assert_eq!(r.degrees_of_freedom, 2);
        // statsmodels survdiff: (7.984905653945239, 0.018454393127039448)
        assert_abs_diff_eq!(r.chi_square, 7.984_905_653_945_239, epsilon = 1e-9);
        assert_abs_diff_eq!(r.p_value, 0.018_454_393_127_039_448, epsilon = 1e-9);
    }

    #[test]
    fn chi_square_closed_forms() {
        assert_eq!(chi_square_sf(0.0, 3).unwrap(), 1.0);
        assert_abs_diff_eq!(chi_square_sf(2.0 * 2f64.ln(), 2).unwrap(), 0.5, epsilon = 1e-10);
        for x in [0.01, 0.5, 1.0, 3.841459, 10.0, 50.0, 200.0] {
            assert_abs_diff_eq!(chi_square_sf(x, 2).unwrap(), (-x / 2.0).exp(), epsilon = 1e-10);
            assert_abs_diff_eq!(chi_square_sf(x, 1).unwrap(), erfc((x / 2.0).sqrt()), epsilon = 1e-10);
        }
        assert_abs_diff_eq!(chi_square_sf(3.841459, 1).unwrap(), 0.05, epsilon = 1e-8);
        assert!(chi_square_sf(-1.0, 1).is_err());
        assert!(chi_square_sf(1.0, 0).is_err());
    }

    #[test]
    fn chi_square_against_reference_values() {
        // mpmath regularized upper incomplete gamma
        assert_abs_diff_eq!(chi_square_sf(7.0, 5).unwrap(), 0.220_640_307_936_710_8, epsilon = 1e-12);
        assert_abs_diff_eq!(
            chi_square_sf(160.0, 20).unwrap(),
            7.508_767_322_115_22e-24,
            epsilon = 1e-30
        );
    }

    #[test]
    fn chi_square_matches_statrs_on_grid() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        for df in 1..=20 {
            let dist = ChiSquared::new(df as f64).unwrap();
            for i in 0..=400 {
                let x = i as f64 * 0.5;
                let ours = chi_square_sf(x, df).unwrap();
                assert!(
                    (ours - dist.sf(x)).abs() <= 1e-10,
                    "df={df} x={x}: {ours} vs {}",
                    dist.sf(x)
                );
            }
        }
    }

    #[test]
    fn km_all_censored_is_flat() {
        let c = kaplan_meier(&[rec(3.0, false), rec(5.0, false)]).unwrap();
        assert_eq!(c, vec![(0.0, 1.0)]);
    }

    #[test]
    fn km_two_events() {
        let c = kaplan_meier(&[rec(1.0, true), rec(2.0, true)]).unwrap();
        assert_eq!(c, vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.0)]);
    }

    #[test]
    fn km_mixed_instance() {
        // t=1: 5 at risk, 1 death -> 0.8; t=2 censored;
        // t=3: 3 at risk (3E, 3C, 5E), 1 death -> 0.8 * 2/3; t=5: 1 at risk -> 0
        let records = [
            rec(1.0, true),
            rec(2.0, false),
            rec(3.0, true),
            rec(3.0, false),
            rec(5.0, true),
        ];
        let c = kaplan_meier(&records).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c[1], (1.0, 0.8));
        assert_abs_diff_eq!(c[2].1, 0.8 * 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(c[2].0, 3.0);
        assert_eq!(c[3], (5.0, 0.0));
        assert!(kaplan_meier(&[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn logrank_relabel_and_zero_censor_invariance(
            data in proptest::collection::vec((1u32..40, any::<bool>(), 0usize..3), 6..30),
        ) {
            let mut records: Vec<_> = data.iter().map(|&(t, e, _)| rec(t as f64, e)).collect();
            let mut groups: Vec<_> = data.iter().map(|&(_, _, g)| g).collect();
            let Ok(base) = logrank_test(&groups, &records) else { return Ok(()); };
            let relabeled: Vec<_> = groups.iter().map(|g| [7usize, 3, 11][*g]).collect();
            let r = logrank_test(&relabeled, &records).unwrap();
            prop_assert!((r.chi_square - base.chi_square).abs() <= 1e-9 * base.chi_square.max(1.0));
            records.push(rec(0.0, false));
            groups.push(groups[0]);
            let z = logrank_test(&groups, &records).unwrap();
            prop_assert!((z.chi_square - base.chi_square).abs() <= 1e-9 * base.chi_square.max(1.0));
            prop_assert!((z.p_value - base.p_value).abs() <= 1e-9);
        }

        #[test]
        fn chi_square_sf_monotone(x in 0.0f64..150.0, dx in 0.01f64..5.0, df in 1usize..19) {
            let a = chi_square_sf(x, df).unwrap();
            prop_assert!(chi_square_sf(x + dx, df).unwrap() <= a);
            prop_assert!(chi_square_sf(x, df + 1).unwrap() >= a);
        }

        #[test]
        fn km_is_monotone_probability(data in proptest::collection::vec((0u32..50, any::<bool>()), 1..40)) {
            let records: Vec<_> = data.iter().map(|&(t, e)| rec(t as f64, e)).collect();
            let c = kaplan_meier(&records).unwrap();
            prop_assert_eq!(c[0], (0.0, 1.0));
            for w in c.windows(2) {
                prop_assert!(w[1].1 <= w[0].1);
                prop_assert!((0.0..=1.0).contains(&w[1].1));
            }
        }
    }
}
