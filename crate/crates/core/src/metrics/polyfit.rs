use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polynomial in the scaled variable `u = (t - center) / half_width`, valid
/// for `t` in `[t_min, t_max]`.
///
/// Coefficients are in ascending degree. For a fitted curve `u` spans
/// exactly `[-1, 1]` over the domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedCurve {
    pub coefficients: Vec<f64>,
    pub t_min: f64,
    pub t_max: f64,
}

impl FittedCurve {
    fn center(&self) -> f64 {
        0.5 * (self.t_min + self.t_max)
    }

    fn half_width(&self) -> f64 {
        let hw = 0.5 * (self.t_max - self.t_min);
        if hw > 0.0 {
            hw
        } else {
            1.0
        }
    }

    fn to_unit(&self, t: f64) -> f64 {
        (t - self.center()) / self.half_width()
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len().saturating_sub(1)
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t >= self.t_min && t <= self.t_max) {
            return Err(Error::OutOfDomain { t, min: self.t_min, max: self.t_max });
        }
        let u = self.to_unit(t);
        Ok(self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * u + c))
    }

    /// `d/dt` of this curve over the same domain. The chain-rule factor
    /// `du/dt = 1 / half_width` is folded into the coefficients.
    pub fn derivative(&self) -> FittedCurve {
        let k = 1.0 / self.half_width();
        let mut coefficients: Vec<f64> =
            self.coefficients.iter().enumerate().skip(1).map(|(i, &c)| i as f64 * c * k).collect();
        if coefficients.is_empty() {
            coefficients.push(0.0);
        }
        FittedCurve { coefficients, t_min: self.t_min, t_max: self.t_max }
    }

    /// Ascending power-basis coefficients in the original variable `t`.
    pub fn coefficients_in_t(&self) -> Vec<f64> {
        // u = a*t + b
        let a = 1.0 / self.half_width();
        let b = -self.center() * a;
        let n = self.coefficients.len();
        let mut out = vec![0.0; n];
        // powers of (a t + b), expanded incrementally
        let mut power = vec![1.0];
        for (k, &c) in self.coefficients.iter().enumerate() {
            for (i, &p) in power.iter().enumerate() {
                out[i] += c * p;
            }
            if k + 1 < n {
                let mut next = vec![0.0; power.len() + 1];
                for (i, &p) in power.iter().enumerate() {
                    next[i] += b * p;
                    next[i + 1] += a * p;
                }
                power = next;
            }
        }
        out
    }
}

/// Least-squares polynomial fit of `ys` over strictly increasing `ts`.
///
/// The abscissae are mapped affinely onto `[-1, 1]` and the normal equations
/// are solved there.
pub fn lsq_polyfit(ts: &[f64], ys: &[f64], degree: usize) -> Result<FittedCurve> {
    if ts.len() != ys.len() {
        return Err(Error::invalid(format!("{} abscissae but {} ordinates", ts.len(), ys.len())));
    }
    if ts.len() <= degree {
        return Err(Error::TooFewPoints { need: degree + 1, got: ts.len() });
    }
    if ts.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("abscissae must be strictly increasing"));
    }
    if ts.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "lsq_polyfit" });
    }
    let shell = FittedCurve { coefficients: Vec::new(), t_min: ts[0], t_max: ts[ts.len() - 1] };
    let m = degree + 1;
    let mut gram = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    let mut powers = vec![0.0; 2 * m - 1];
    for (&t, &y) in ts.iter().zip(ys) {
        let u = shell.to_unit(t);
        let mut p = 1.0;
        for slot in powers.iter_mut() {
            *slot = p;
            p *= u;
        }
        for i in 0..m {
            rhs[i] += powers[i] * y;
            for j in 0..m {
                gram[i * m + j] += powers[i + j];
            }
        }
    }
    let coefficients = solve(gram, rhs, m)?;
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite { op: "lsq_polyfit" });
    }
    Ok(FittedCurve { coefficients, ..shell })
}

/// Gaussian elimination with partial pivoting on a dense `m x m` system.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>, m: usize) -> Result<Vec<f64>> {
    let scale = (0..m).map(|i| a[i * m + i].abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::Singular);
    }
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&i, &j| a[i * m + col].abs().total_cmp(&a[j * m + col].abs()))
            .expect("non-empty range");
        if a[pivot * m + col].abs() <= scale * 1e-14 {
            return Err(Error::Singular);
        }
        if pivot != col {
            for j in 0..m {
                a.swap(pivot * m + j, col * m + j);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..m {
            let f = a[row * m + col] / a[col * m + col];
            if f == 0.0 {
                continue;
            }
            for j in col..m {
                a[row * m + j] -= f * a[col * m + j];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; m];
    for row in (0..m).rev() {
        let s: f64 = (row + 1..m).map(|j| a[row * m + j] * x[j]).sum();
        x[row] = (b[row] - s) / a[row * m + row];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_quadratic() {
        let ts: Vec<f64> = (0..12).map(f64::from).collect();
        let ys: Vec<f64> = ts.iter().map(|t| t * t).collect();
        let c = lsq_polyfit(&ts, &ys, 2).unwrap().coefficients_in_t();
        for (got, want) in c.iter().zip([0.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-8, "{c:?}");
        }
    }

    #[test]
    fn constant_series_fits_its_mean() {
        let ts: Vec<f64> = (1..=20).map(f64::from).collect();
        let ys = vec![0.37; 20];
        let curve = lsq_polyfit(&ts, &ys, 3).unwrap();
        assert!((curve.coefficients[0] - 0.37).abs() < 1e-12);
        assert!(curve.coefficients[1..].iter().all(|c| c.abs() < 1e-12));
        let c0 = lsq_polyfit(&ts, &ys, 0).unwrap();
        assert!((c0.coefficients[0] - 0.37).abs() < 1e-12);
    }

    #[test]
    fn derivative_of_constant_and_linear() {
        let ts: Vec<f64> = (0..=10).map(f64::from).collect();
        let flat = lsq_polyfit(&ts, &[2.0; 11], 2).unwrap().derivative();
        assert!(flat.coefficients.iter().all(|c| c.abs() < 1e-12));
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 * t).collect();
        let d = lsq_polyfit(&ts, &ys, 1).unwrap().derivative();
        for t in [0.0, 2.5, 7.0, 10.0] {
            assert!((d.eval(t).unwrap() - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(lsq_polyfit(&[0.0, 1.0], &[0.0, 1.0], 2), Err(Error::TooFewPoints { .. })));
        assert!(lsq_polyfit(&[0.0, 0.0, 1.0], &[0.0, 1.0, 2.0], 1).is_err());
        let c = lsq_polyfit(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0], 1).unwrap();
        assert!(matches!(c.eval(2.5), Err(Error::OutOfDomain { .. })));
        assert!(matches!(solve(vec![1.0, 2.0, 2.0, 4.0], vec![1.0, 2.0], 2), Err(Error::Singular)));
    }
}
