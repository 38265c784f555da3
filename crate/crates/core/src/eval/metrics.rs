use crate::error::{Error, Result};

fn check(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::validation("metrics need at least one value"));
    }
    if y.len() != y_hat.len() {
        return Err(Error::validation(format!("length mismatch: {} truths vs {} predictions", y.len(), y_hat.len())));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Root mean squared error.
pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    Ok((y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64).sqrt())
}

/// Running sums for MAE and RMSE over many prediction vectors.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorAccumulator {
    abs: f64,
    sq: f64,
    count: usize,
}

impl ErrorAccumulator {
    pub fn add(&mut self, y: &[f64], y_hat: &[f64]) -> Result<()> {
        check(y, y_hat)?;
        for (a, b) in y.iter().zip(y_hat) {
            let d = a - b;
            self.abs += d.abs();
            self.sq += d * d;
        }
        self.count += y.len();
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mae(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::validation("no predictions accumulated"));
        }
        Ok(self.abs / self.count as f64)
    }

    pub fn rmse(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::validation("no predictions accumulated"));
        }
        Ok((self.sq / self.count as f64).sqrt())
    }
}

/// Arithmetic mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
