//! Solvers on a standardized design `z` (active columns only) and a centered
//! target `yc`. All return coefficients for the columns of `z`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Elastic-net convergence threshold on the largest coefficient change per sweep.
pub const ENET_TOLERANCE: f64 = 1e-7;
pub const ENET_MAX_SWEEPS: usize = 10_000;

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

pub(crate) fn numerical_rank(z: &DMatrix<f64>) -> usize {
    if z.ncols() == 0 || z.nrows() == 0 {
        return 0;
    }
    let sv = z.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let tol = z.nrows().max(z.ncols()) as f64 * f64::EPSILON * smax;
    sv.iter().filter(|&&s| s > tol).count()
}

pub(crate) fn ols(z: &DMatrix<f64>, yc: &[f64]) -> Result<Vec<f64>> {
    let p = z.ncols();
    if p == 0 {
        return Ok(Vec::new());
    }
    let rank = numerical_rank(z);
    if rank < p {
        return Err(Error::RankDeficient { rank, cols: p });
    }
    let qr = z.clone().qr();
    let qty = qr.q().transpose() * DVector::from_column_slice(yc);
    let beta = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { rank, cols: p })?;
    Ok(beta.iter().copied().collect())
}

pub(crate) fn ridge(z: &DMatrix<f64>, yc: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let p = z.ncols();
    if p == 0 {
        return Ok(Vec::new());
    }
    let mut gram = z.transpose() * z;
    for j in 0..p {
        gram[(j, j)] += lambda;
    }
    let rhs = z.transpose() * DVector::from_column_slice(yc);
    let chol = gram.cholesky().ok_or_else(|| Error::RankDeficient {
        rank: numerical_rank(z),
        cols: p,
    })?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

pub(crate) fn check_enet_params(alpha: f64, lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("elastic-net alpha must lie in [0, 1], got {alpha}")));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("elastic-net lambda must be >= 0, got {lambda}")));
    }
    Ok(())
}

/// Coordinate descent starting from `beta` (warm start); returns sweeps used.
pub(crate) fn elastic_net(z: &DMatrix<f64>, yc: &[f64], alpha: f64, lambda: f64, beta: &mut [f64]) -> Result<usize> {
    let (n, p) = z.shape();
    if p == 0 {
        return Ok(0);
    }
    let nf = n as f64;
    let l1 = lambda * alpha;
    let l2 = lambda * (1.0 - alpha);
    let col_sq: Vec<f64> = (0..p).map(|j| z.column(j).norm_squared() / nf).collect();

    let mut r: Vec<f64> = yc.to_vec();
    for j in 0..p {
        if beta[j] != 0.0 {
            for (ri, zij) in r.iter_mut().zip(z.column(j).iter()) {
                *ri -= zij * beta[j];
            }
        }
    }

    let update = |j: usize, beta: &mut [f64], r: &mut [f64]| -> f64 {
        let col = z.column(j);
        let denom = col_sq[j] + l2;
        let old = beta[j];
        let new = if denom > 0.0 {
            let dot: f64 = col.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            let rho = dot / nf + col_sq[j] * old;
            soft_threshold(rho, l1) / denom
        } else {
            0.0
        };
        if new != old {
            let d = new - old;
            for (ri, zij) in r.iter_mut().zip(col.iter()) {
                *ri -= zij * d;
            }
            beta[j] = new;
        }
        (new - old).abs()
    };

    let mut sweeps = 0;
    let mut last_change = f64::INFINITY;
    loop {
        // full pass over all coordinates
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            max_change = max_change.max(update(j, beta, &mut r));
        }
        sweeps += 1;
        last_change = last_change.min(max_change);
        if max_change < ENET_TOLERANCE {
            return Ok(sweeps);
        }
        // iterate on the active set until it settles
        let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
        loop {
            if sweeps >= ENET_MAX_SWEEPS {
                return Err(Error::NonConvergence {
                    iterations: sweeps,
                    max_change,
                });
            }
            let mut inner: f64 = 0.0;
            for &j in &active {
                inner = inner.max(update(j, beta, &mut r));
            }
            sweeps += 1;
            if inner < ENET_TOLERANCE {
                break;
            }
        }
        if sweeps >= ENET_MAX_SWEEPS {
            return Err(Error::NonConvergence {
                iterations: sweeps,
                max_change: last_change,
            });
        }
    }
}

/// Largest KKT violation of an elastic-net solution.
pub(crate) fn kkt_violation(z: &DMatrix<f64>, yc: &[f64], beta: &[f64], alpha: f64, lambda: f64) -> f64 {
    let n = z.nrows() as f64;
    let resid = DVector::from_column_slice(yc) - z * DVector::from_column_slice(beta);
    let mut worst: f64 = 0.0;
    for (j, &b) in beta.iter().enumerate() {
        let grad = -z.column(j).dot(&resid) / n;
        let v = if b != 0.0 {
            (grad + lambda * alpha * b.signum() + lambda * (1.0 - alpha) * b).abs()
        } else {
            (grad.abs() - lambda * alpha).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// Singular triplets of `z` sorted by decreasing singular value.
fn sorted_svd(z: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = z.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s = order.iter().map(|&i| svd.singular_values[i]).collect();
    (u.select_columns(&order), s, vt.select_rows(&order))
}

fn check_components(z: &DMatrix<f64>, k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidInput("n_components must be at least 1".into()));
    }
    let rank = numerical_rank(z);
    if k > rank {
        return Err(Error::TooManyComponents { requested: k, rank });
    }
    Ok(rank)
}

pub(crate) fn pcr(z: &DMatrix<f64>, yc: &[f64], k: usize) -> Result<Vec<f64>> {
    check_components(z, k)?;
    let (u, s, vt) = sorted_svd(z);
    let y = DVector::from_column_slice(yc);
    let mut beta = DVector::zeros(z.ncols());
    for i in 0..k {
        let gamma = u.column(i).dot(&y) / s[i];
        beta += vt.row(i).transpose() * gamma;
    }
    Ok(beta.iter().copied().collect())
}

pub(crate) fn plsr(z: &DMatrix<f64>, yc: &[f64], k: usize) -> Result<Vec<f64>> {
    check_components(z, k)?;
    let p = z.ncols();
    let mut x = z.clone();
    let mut y = DVector::from_column_slice(yc);
    let mut w_mat = DMatrix::zeros(p, k);
    let mut p_mat = DMatrix::zeros(p, k);
    let mut q = DVector::zeros(k);
    let mut first_norm = None;
    for a in 0..k {
        let mut w = x.transpose() * &y;
        let norm = w.norm();
        let scale = *first_norm.get_or_insert(norm);
        if !(norm > 1e-12 * scale) {
            return Err(Error::DegenerateDeflation { component: a + 1 });
        }
        w /= norm;
        let t = &x * &w;
        let tt = t.norm_squared();
        if !(tt > 0.0) {
            return Err(Error::DegenerateDeflation { component: a + 1 });
        }
        let loading = x.transpose() * &t / tt;
        let qa = y.dot(&t) / tt;
        x -= &t * loading.transpose();
        y -= &t * qa;
        w_mat.set_column(a, &w);
        p_mat.set_column(a, &loading);
        q[a] = qa;
    }
    let ptw = p_mat.transpose() * &w_mat;
    let inner = ptw
        .lu()
        .solve(&q)
        .ok_or(Error::DegenerateDeflation { component: k })?;
    Ok((w_mat * inner).iter().copied().collect())
}
