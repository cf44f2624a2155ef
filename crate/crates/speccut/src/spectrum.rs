use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kahan::KahanSum;

/// Beyond this value of `a * j` the inverse squared singular value of an
/// exponential spectrum overflows; variance sums return `+inf` instead.
pub const DEFAULT_EXP_GUARD: f64 = 600.0;

/// Singular-value layout of the forward operator, indexed from j = 1.
///
/// `Polynomial` and `Exponential` are the exact reference decays. The
/// scaled variants multiply the reference by the geometric mean of a band
/// `[band_lo, band_hi]` and are flat below `start` (every j < start takes
/// the value at `start`). `Table` holds explicit singular values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Spectrum {
    Polynomial {
        q: f64,
    },
    Exponential {
        a: f64,
    },
    ScaledPolynomial {
        q: f64,
        band_lo: f64,
        band_hi: f64,
        start: usize,
    },
    ScaledExponential {
        a: f64,
        band_lo: f64,
        band_hi: f64,
        start: usize,
    },
    Table {
        values: Vec<f64>,
    },
}

impl Spectrum {
    pub fn polynomial(q: f64) -> Result<Self> {
        let s = Spectrum::Polynomial { q };
        s.validate()?;
        Ok(s)
    }

    pub fn exponential(a: f64) -> Result<Self> {
        let s = Spectrum::Exponential { a };
        s.validate()?;
        Ok(s)
    }

    pub fn scaled_polynomial(q: f64, band_lo: f64, band_hi: f64, start: usize) -> Result<Self> {
        let s = Spectrum::ScaledPolynomial {
            q,
            band_lo,
            band_hi,
            start,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn scaled_exponential(a: f64, band_lo: f64, band_hi: f64, start: usize) -> Result<Self> {
        let s = Spectrum::ScaledExponential {
            a,
            band_lo,
            band_hi,
            start,
        };
        s.validate()?;
        Ok(s)
    }

    /// Explicit singular values; must be positive, finite and non-increasing.
    pub fn table(values: Vec<f64>) -> Result<Self> {
        let s = Spectrum::Table { values };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let check_band = |lo: f64, hi: f64, start: usize| -> Result<()> {
            if !(lo.is_finite() && lo > 0.0 && hi.is_finite() && hi >= lo) {
                return Err(Error::invalid(format!(
                    "spectrum band must satisfy 0 < band_lo <= band_hi, got [{lo}, {hi}]"
                )));
            }
            if start == 0 {
                return Err(Error::invalid("spectrum band start index must be >= 1"));
            }
            Ok(())
        };
        match self {
            Spectrum::Polynomial { q } => {
                if !(q.is_finite() && *q > 0.0) {
                    return Err(Error::invalid(format!("polynomial decay needs q > 0, got {q}")));
                }
            }
            Spectrum::Exponential { a } => {
                if !(a.is_finite() && *a > 0.0) {
                    return Err(Error::invalid(format!("exponential decay needs a > 0, got {a}")));
                }
            }
            Spectrum::ScaledPolynomial {
                q,
                band_lo,
                band_hi,
                start,
            } => {
                if !(q.is_finite() && *q > 0.0) {
                    return Err(Error::invalid(format!("polynomial decay needs q > 0, got {q}")));
                }
                check_band(*band_lo, *band_hi, *start)?;
            }
            Spectrum::ScaledExponential {
                a,
                band_lo,
                band_hi,
                start,
            } => {
                if !(a.is_finite() && *a > 0.0) {
                    return Err(Error::invalid(format!("exponential decay needs a > 0, got {a}")));
                }
                check_band(*band_lo, *band_hi, *start)?;
            }
            Spectrum::Table { values } => {
                if values.is_empty() {
                    return Err(Error::invalid("table spectrum must not be empty"));
                }
                for (i, v) in values.iter().enumerate() {
                    if !(v.is_finite() && *v > 0.0) {
                        return Err(Error::invalid(format!(
                            "table spectrum entry {} must be a positive finite number, got {v}",
                            i + 1
                        )));
                    }
                    if i > 0 && *v > values[i - 1] {
                        return Err(Error::invalid(format!(
                            "table spectrum must be non-increasing, entry {} rises",
                            i + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Number of defined indices, `None` when the spectrum is unbounded.
    pub fn max_index(&self) -> Option<usize> {
        match self {
            Spectrum::Table { values } => Some(values.len()),
            _ => None,
        }
    }

    /// sigma_j^2 for 1-based j.
    pub fn singular_value_sq(&self, j: usize) -> Result<f64> {
        if j == 0 {
            return Err(Error::invalid("singular value index starts at 1"));
        }
        match self {
            Spectrum::Polynomial { q } => Ok((j as f64).powf(-q)),
            Spectrum::Exponential { a } => Ok((-a * j as f64).exp()),
            Spectrum::ScaledPolynomial {
                q,
                band_lo,
                band_hi,
                start,
            } => {
                let factor = (band_lo * band_hi).sqrt();
                Ok(factor * (j.max(*start) as f64).powf(-q))
            }
            Spectrum::ScaledExponential {
                a,
                band_lo,
                band_hi,
                start,
            } => {
                let factor = (band_lo * band_hi).sqrt();
                Ok(factor * (-a * j.max(*start) as f64).exp())
            }
            Spectrum::Table { values } => values
                .get(j - 1)
                .map(|v| v * v)
                .ok_or(Error::TableIndex {
                    index: j,
                    len: values.len(),
                }),
        }
    }

    /// sigma_j for 1-based j.
    pub fn singular_value(&self, j: usize) -> Result<f64> {
        Ok(self.singular_value_sq(j)?.sqrt())
    }

    /// Sum of sigma_j^{-2} over j = 1..=k, the variance accumulated by a
    /// cut-off estimator at level k (up to the delta^2 factor).
    pub fn variance_sum(&self, k: usize) -> Result<f64> {
        self.variance_sum_with_guard(k, DEFAULT_EXP_GUARD)
    }

    /// As `variance_sum`, with an explicit overflow guard: once `a * j`
    /// exceeds `guard` for an exponential-type spectrum the result is
    /// `+inf` rather than a rounded garbage value.
    pub fn variance_sum_with_guard(&self, k: usize, guard: f64) -> Result<f64> {
        if k == 0 {
            return Ok(0.0);
        }
        match self {
            Spectrum::Polynomial { q } => {
                let mut acc = KahanSum::new();
                for j in 1..=k {
                    acc.add((j as f64).powf(*q));
                }
                Ok(acc.total())
            }
            // Exact geometric sum: e^a (e^{ak} - 1) / (e^a - 1).
            Spectrum::Exponential { a } => {
                if a * k as f64 > guard {
                    return Ok(f64::INFINITY);
                }
                Ok(a.exp() * (a * k as f64).exp_m1() / a.exp_m1())
            }
            Spectrum::ScaledPolynomial { .. } => {
                let mut acc = KahanSum::new();
                for j in 1..=k {
                    acc.add(1.0 / self.singular_value_sq(j)?);
                }
                Ok(acc.total())
            }
            Spectrum::ScaledExponential { a, start, .. } => {
                if a * k.max(*start) as f64 > guard {
                    return Ok(f64::INFINITY);
                }
                let mut acc = KahanSum::new();
                for j in 1..=k {
                    acc.add(1.0 / self.singular_value_sq(j)?);
                }
                Ok(acc.total())
            }
            Spectrum::Table { values } => {
                if k > values.len() {
                    return Err(Error::TableIndex {
                        index: k,
                        len: values.len(),
                    });
                }
                let mut acc = KahanSum::new();
                for v in &values[..k] {
                    acc.add(1.0 / (v * v));
                }
                Ok(acc.total())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_value_hand_values() {
        let poly = Spectrum::polynomial(1.0).unwrap();
        assert_eq!(poly.singular_value(4).unwrap(), 0.5);

        let exp = Spectrum::exponential(2.0).unwrap();
        assert!((exp.singular_value(1).unwrap() - (-1.0f64).exp()).abs() < 1e-16);

        let poly2 = Spectrum::polynomial(2.0).unwrap();
        assert!((poly2.singular_value_sq(10).unwrap() - 0.01).abs() < 1e-17);
        assert!((poly2.singular_value(10).unwrap() - 0.1).abs() < 1e-16);
    }

    #[test]
    fn index_zero_is_rejected() {
        let poly = Spectrum::polynomial(1.0).unwrap();
        assert!(poly.singular_value(0).is_err());
    }

    #[test]
    fn variance_sum_hand_values() {
        let poly = Spectrum::polynomial(1.0).unwrap();
        assert_eq!(poly.variance_sum(0).unwrap(), 0.0);
        assert_eq!(poly.variance_sum(3).unwrap(), 6.0);

        let exp = Spectrum::exponential(1.0).unwrap();
        let direct: f64 = (1..=3).map(|j| (j as f64).exp()).sum();
        let got = exp.variance_sum(3).unwrap();
        assert!((got - direct).abs() <= 1e-12 * direct, "{got} vs {direct}");
        assert!((got - 30.192874850577).abs() < 1e-9);
    }

    #[test]
    fn variance_sum_increments_match_singular_values() {
        let spectra = [
            Spectrum::polynomial(1.7).unwrap(),
            Spectrum::exponential(0.9).unwrap(),
            Spectrum::scaled_polynomial(2.0, 0.5, 2.0, 3).unwrap(),
            Spectrum::scaled_exponential(1.1, 0.25, 0.5, 2).unwrap(),
            Spectrum::table(vec![2.0, 1.0, 0.5, 0.5, 0.125]).unwrap(),
        ];
        for s in &spectra {
            for k in 1..=5usize {
                let inc = s.variance_sum(k).unwrap() - s.variance_sum(k - 1).unwrap();
                let direct = 1.0 / s.singular_value_sq(k).unwrap();
                assert!(
                    (inc - direct).abs() <= 1e-12 * direct,
                    "{s:?} k={k}: {inc} vs {direct}"
                );
            }
        }
    }

    #[test]
    fn singular_values_never_increase() {
        let spectra = [
            Spectrum::polynomial(0.5).unwrap(),
            Spectrum::exponential(3.0).unwrap(),
            Spectrum::scaled_polynomial(1.0, 0.1, 10.0, 5).unwrap(),
            Spectrum::scaled_exponential(0.2, 1.0, 4.0, 7).unwrap(),
        ];
        for s in &spectra {
            let mut prev = f64::INFINITY;
            for j in 1..=50 {
                let v = s.singular_value(j).unwrap();
                assert!(v > 0.0 && v <= prev, "{s:?} rises at j={j}");
                prev = v;
            }
        }
    }

    #[test]
    fn unit_band_scaled_polynomial_matches_reference() {
        let plain = Spectrum::polynomial(1.5).unwrap();
        let scaled = Spectrum::scaled_polynomial(1.5, 1.0, 1.0, 4).unwrap();
        for j in 4..=40 {
            assert_eq!(
                plain.singular_value_sq(j).unwrap(),
                scaled.singular_value_sq(j).unwrap()
            );
        }
        // Flat below the start index.
        assert_eq!(
            scaled.singular_value_sq(1).unwrap(),
            plain.singular_value_sq(4).unwrap()
        );
    }

    #[test]
    fn table_bounds_are_enforced() {
        let t = Spectrum::table(vec![1.0, 0.5, 0.25]).unwrap();
        assert_eq!(t.max_index(), Some(3));
        assert_eq!(t.singular_value(2).unwrap(), 0.5);
        assert!(matches!(
            t.singular_value(4),
            Err(Error::TableIndex { index: 4, len: 3 })
        ));
        assert!(t.variance_sum(3).is_ok());
        assert!(t.variance_sum(4).is_err());
    }

    #[test]
    fn variance_sum_overflows_to_sentinel() {
        let exp = Spectrum::exponential(1.0).unwrap();
        assert!(exp.variance_sum(700).unwrap().is_infinite());
        assert!(exp.variance_sum(599).unwrap().is_finite());
        let scaled = Spectrum::scaled_exponential(1.0, 1.0, 1.0, 650).unwrap();
        assert!(scaled.variance_sum(1).unwrap().is_infinite());
    }

    #[test]
    fn constructors_reject_bad_parameters() {
        assert!(Spectrum::polynomial(0.0).is_err());
        assert!(Spectrum::polynomial(f64::NAN).is_err());
        assert!(Spectrum::exponential(-1.0).is_err());
        assert!(Spectrum::scaled_polynomial(1.0, 0.0, 1.0, 1).is_err());
        assert!(Spectrum::scaled_polynomial(1.0, 2.0, 1.0, 1).is_err());
        assert!(Spectrum::scaled_polynomial(1.0, 1.0, 2.0, 0).is_err());
        assert!(Spectrum::table(vec![]).is_err());
        assert!(Spectrum::table(vec![1.0, 0.0]).is_err());
        assert!(Spectrum::table(vec![0.5, 1.0]).is_err());
        assert!(Spectrum::table(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn serde_tagging_round_trips() {
        let s = Spectrum::scaled_exponential(0.5, 0.5, 2.0, 3).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"kind\":\"scaled_exponential\""), "{json}");
        let back: Spectrum = serde_json::from_str(&json).unwrap();
        assert_eq!(s, back);
    }
}
