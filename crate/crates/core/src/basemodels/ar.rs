//! Autoregressive forecaster fitted by ordinary least squares.
//!
//! Features are the last `order` window entries plus an intercept; the
//! normal equations are solved by Gaussian elimination with partial
//! pivoting. A vanishing pivot means the lag matrix is rank-deficient.

use crate::data::WindowSample;
use crate::error::{Error, Result};

/// Solve A x = b in place; A is n x n row-major.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>, order: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r, &s| a[r * n + col].abs().total_cmp(&a[s * n + col].abs()))
            .unwrap();
        if a[pivot_row * n + col].abs() < 1e-12 * scale {
            return Err(Error::SingularSystem { order });
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            b.swap(col, pivot_row);
        }
        for r in col + 1..n {
            let factor = a[r * n + col] / a[col * n + col];
            for j in col..n {
                a[r * n + j] -= factor * a[col * n + j];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in row + 1..n {
            acc -= a[row * n + j] * x[j];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

/// Fit on pooled samples; returns (coefficients oldest-lag-last, intercept,
/// mean squared residual). Coefficient i multiplies the window entry i
/// steps before the end, so coefficients[0] is the most recent lag.
pub fn fit(train: &[WindowSample], order: usize) -> Result<(Vec<f64>, f64, f64)> {
    for s in train {
        if s.window.len() < order {
            return Err(Error::DimMismatch {
                context: format!("autoregressive({order}) window"),
                expected: order,
                got: s.window.len(),
            });
        }
    }
    let n = order + 1; // + intercept
    let mut xtx = vec![0.0; n * n];
    let mut xty = vec![0.0; n];
    for s in train {
        let w = &s.window;
        let mut feats = Vec::with_capacity(n);
        for lag in 0..order {
            feats.push(w[w.len() - 1 - lag]);
        }
        feats.push(1.0);
        for i in 0..n {
            for j in 0..n {
                xtx[i * n + j] += feats[i] * feats[j];
            }
            xty[i] += feats[i] * s.target;
        }
    }
    let beta = solve(xtx, xty, order)?;
    let coefficients = beta[..order].to_vec();
    let intercept = beta[order];
    let mut sse = 0.0;
    for s in train {
        let pred = predict(&coefficients, intercept, &s.window)?;
        sse += (pred - s.target) * (pred - s.target);
    }
    Ok((coefficients, intercept, sse / train.len() as f64))
}

pub fn predict(coefficients: &[f64], intercept: f64, window: &[f64]) -> Result<f64> {
    if window.len() < coefficients.len() {
        return Err(Error::DimMismatch {
            context: format!("autoregressive({}) window", coefficients.len()),
            expected: coefficients.len(),
            got: window.len(),
        });
    }
    let mut acc = intercept;
    for (lag, c) in coefficients.iter().enumerate() {
        acc += c * window[window.len() - 1 - lag];
    }
    Ok(acc)
}
