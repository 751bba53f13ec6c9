use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use super::rank::{mean, variance};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Two-sided Welch t-test of `b` against `a`.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("each group needs at least 2 values"));
    }
    let (va, vb) = (variance(a) / a.len() as f64, variance(b) / b.len() as f64);
    let se2 = va + vb;
    let diff = mean(b) - mean(a);
    if se2 == 0.0 {
        if diff == 0.0 {
            return Err(Error::invalid("both groups have zero variance"));
        }
        return Err(Error::invalid("both groups have zero variance but different means"));
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() as f64 - 1.0) + vb * vb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::numeric(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest { t, df, p })
}

/// `(mean(b) - mean(a)) / pooled SD`.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("each group needs at least 2 values"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / (na + nb - 2.0)).sqrt();
    let diff = mean(b) - mean(a);
    if pooled == 0.0 {
        return if diff == 0.0 { Ok(0.0) } else { Err(Error::invalid("both groups have zero variance")) };
    }
    Ok(diff / pooled)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub p: f64,
}

/// Pearson chi-square test of independence on `[[a, b], [c, d]]`, 1 df, no continuity correction.
pub fn chi_square_2x2(table: [[f64; 2]; 2]) -> Result<ChiSquare> {
    if table.iter().flatten().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid("2×2 counts must be finite and non-negative"));
    }
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    let n = rows[0] + rows[1];
    if rows.contains(&0.0) || cols.contains(&0.0) {
        return Err(Error::invalid("2×2 table has an empty margin"));
    }
    let mut stat = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let e = rows[i] * cols[j] / n;
            stat += (table[i][j] - e).powi(2) / e;
        }
    }
    let p = 1.0 - ChiSquared::new(1.0).expect("1 df").cdf(stat);
    Ok(ChiSquare { statistic: stat, p })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_groups() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(cohens_d(&a, &a).unwrap(), 0.0);
        let t = welch_t(&a, &a).unwrap();
        assert_eq!(t.t, 0.0);
        assert!((t.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn welch_known_value() {
        let r = welch_t(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0, 10.0]).unwrap();
        // reference values from scipy.stats.ttest_ind(..., equal_var=False), sign flipped
        assert!((r.t - 2.2514363231593695).abs() < 1e-12);
        assert!((r.df - 5.520787746170677).abs() < 1e-10);
        assert!((r.p - 0.06913359319239236).abs() < 1e-8);
    }

    #[test]
    fn degenerate_groups() {
        assert!(welch_t(&[1.0, 1.0], &[1.0, 1.0]).is_err());
        assert!(welch_t(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn chi_square_examples() {
        let r = chi_square_2x2([[50.0, 50.0], [50.0, 50.0]]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
        // (10·30 − 20·40)² · 100 / (30 · 70 · 50 · 50)
        let r = chi_square_2x2([[10.0, 20.0], [40.0, 30.0]]).unwrap();
        assert!((r.statistic - 250_000.0 * 100.0 / (30.0 * 70.0 * 50.0 * 50.0)).abs() < 1e-12);
        assert!(chi_square_2x2([[0.0, 0.0], [1.0, 2.0]]).is_err());
    }
}
