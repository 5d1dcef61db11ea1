//! Parametric nuisance fits: weighted logistic regression via iteratively
//! reweighted least squares, and weighted least squares for linear models.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Coefficient bound used as a separation monitor for logistic fits.
pub const SEPARATION_BOUND: f64 = 30.0;

const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coefs: Vec<f64>,
    /// Set when any coefficient hit the separation bound; predictions from a
    /// flagged fit rely on downstream probability clipping.
    pub separation: bool,
}

impl LogisticFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        expit(dot(&self.coefs, row))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn solve_spd(xtwx: DMatrix<f64>, xtwz: DVector<f64>) -> Result<Vec<f64>> {
    let max_diag = (0..xtwx.nrows())
        .map(|i| xtwx[(i, i)])
        .fold(0.0f64, f64::max);
    let chol = xtwx.cholesky().ok_or(Error::SingularDesign)?;
    let min_pivot = (0..chol.l_dirty().nrows())
        .map(|i| chol.l_dirty()[(i, i)])
        .fold(f64::INFINITY, f64::min);
    // rank-deficiency check: a pivot at rounding-noise scale means a
    // numerically singular normal matrix even when Cholesky "succeeds"
    if !(min_pivot * min_pivot > 1e-12 * max_diag) {
        return Err(Error::SingularDesign);
    }
    Ok(chol.solve(&xtwz).iter().copied().collect())
}

/// Weighted logistic regression maximizing the working-independence
/// log-likelihood. Converges when the largest coefficient change drops
/// below 1e-8, capped at 100 iterations.
pub fn fit_logistic(rows: &[(Vec<f64>, f64, f64)]) -> Result<LogisticFit> {
    assert!(!rows.is_empty());
    let p = rows[0].0.len();
    let n_pos = rows.iter().filter(|(_, y, _)| *y > 0.5).count();
    if n_pos == 0 || n_pos == rows.len() {
        // degenerate labels: intercept-only fit pinned at the bound
        let mut coefs = vec![0.0; p];
        coefs[0] = if n_pos == 0 {
            -SEPARATION_BOUND
        } else {
            SEPARATION_BOUND
        };
        return Ok(LogisticFit {
            coefs,
            separation: true,
        });
    }

    let mut beta = vec![0.0; p];
    let mut separation = false;
    for _ in 0..IRLS_MAX_ITER {
        let mut xtwx = DMatrix::<f64>::zeros(p, p);
        let mut xtwz = DVector::<f64>::zeros(p);
        for (x, y, w) in rows {
            let eta = dot(&beta, x).clamp(-SEPARATION_BOUND, SEPARATION_BOUND);
            let mu = expit(eta);
            let var = (mu * (1.0 - mu)).max(1e-10);
            let wi = w * var;
            let z = eta + (y - mu) / var;
            for a in 0..p {
                let xa = x[a];
                xtwz[a] += wi * xa * z;
                for b in a..p {
                    xtwx[(a, b)] += wi * xa * x[b];
                }
            }
        }
        for a in 0..p {
            xtwx[(a, a)] += 1e-10;
            for b in 0..a {
                xtwx[(a, b)] = xtwx[(b, a)];
            }
        }
        let next = solve_spd(xtwx, xtwz)?;
        let delta = beta
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        beta = next;
        if beta.iter().any(|c| c.abs() > SEPARATION_BOUND) {
            separation = true;
            for c in &mut beta {
                *c = c.clamp(-SEPARATION_BOUND, SEPARATION_BOUND);
            }
        }
        if delta < IRLS_TOL {
            break;
        }
    }
    Ok(LogisticFit {
        coefs: beta,
        separation,
    })
}

/// Weighted least squares via the normal equations.
pub fn fit_linear(rows: &[(Vec<f64>, f64, f64)]) -> Result<Vec<f64>> {
    assert!(!rows.is_empty());
    let p = rows[0].0.len();
    let mut xtwx = DMatrix::<f64>::zeros(p, p);
    let mut xtwy = DVector::<f64>::zeros(p);
    for (x, y, w) in rows {
        for a in 0..p {
            let xa = x[a];
            xtwy[a] += w * xa * y;
            for b in a..p {
                xtwx[(a, b)] += w * xa * x[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtwx[(a, b)] = xtwx[(b, a)];
        }
    }
    solve_spd(xtwx, xtwy)
}

pub fn predict_linear(coefs: &[f64], row: &[f64]) -> f64 {
    dot(coefs, row)
}
