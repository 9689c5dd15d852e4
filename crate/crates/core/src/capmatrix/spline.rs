//! Cubic smoothing spline (Reinsch form) with the penalty chosen by
//! generalized cross-validation.
//!
//! Minimizes `Σ (y_i − g(x_i))² + λ ∫ g''(x)² dx` over natural cubic splines
//! with knots at the data abscissae. All linear algebra is banded: the
//! pentadiagonal system `(R + λ QᵀQ) γ = Qᵀ y` is solved by LDLᵀ and the trace
//! of the hat matrix comes from the in-band elements of the inverse.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SmoothingSpline {
    x: Vec<f64>,
    /// Fitted values at the knots.
    g: Vec<f64>,
    /// Second derivatives at the knots (zero at both ends).
    gamma: Vec<f64>,
    pub lambda: f64,
    pub gcv: f64,
}

/// Banded pieces shared by every λ.
struct Bands {
    h: Vec<f64>,
    // columns of Q: rows k, k+1, k+2 of column k
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    // QᵀQ, symmetric pentadiagonal
    m0: Vec<f64>,
    m1: Vec<f64>,
    m2: Vec<f64>,
    // R, symmetric tridiagonal
    r0: Vec<f64>,
    r1: Vec<f64>,
    qty: Vec<f64>,
}

impl Bands {
    fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let m = n - 2;
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let a: Vec<f64> = (0..m).map(|k| 1.0 / h[k]).collect();
        let c: Vec<f64> = (0..m).map(|k| 1.0 / h[k + 1]).collect();
        let b: Vec<f64> = (0..m).map(|k| -a[k] - c[k]).collect();
        let m0 = (0..m).map(|k| a[k] * a[k] + b[k] * b[k] + c[k] * c[k]).collect();
        let m1 = (0..m)
            .map(|k| if k + 1 < m { b[k] * a[k + 1] + c[k] * b[k + 1] } else { 0.0 })
            .collect();
        let m2 = (0..m).map(|k| if k + 2 < m { c[k] * a[k + 2] } else { 0.0 }).collect();
        let r0 = (0..m).map(|k| (h[k] + h[k + 1]) / 3.0).collect();
        let r1 = (0..m).map(|k| if k + 1 < m { h[k + 1] / 3.0 } else { 0.0 }).collect();
        let qty = (0..m)
            .map(|k| a[k] * y[k] + b[k] * y[k + 1] + c[k] * y[k + 2])
            .collect();
        Self {
            h,
            a,
            b,
            c,
            m0,
            m1,
            m2,
            r0,
            r1,
            qty,
        }
    }

    fn trace_ratio(&self) -> f64 {
        let tr_r: f64 = self.r0.iter().sum();
        let tr_m: f64 = self.m0.iter().sum();
        tr_r / tr_m
    }
}

/// LDLᵀ factorization of a symmetric pentadiagonal matrix.
struct Ldl {
    d: Vec<f64>,
    l1: Vec<f64>,
    l2: Vec<f64>,
}

impl Ldl {
    fn factor(b0: &[f64], b1: &[f64], b2: &[f64]) -> Option<Self> {
        let m = b0.len();
        let mut d = vec![0.0; m];
        let mut l1 = vec![0.0; m];
        let mut l2 = vec![0.0; m];
        for i in 0..m {
            let mut di = b0[i];
            if i >= 1 {
                di -= l1[i - 1] * l1[i - 1] * d[i - 1];
            }
            if i >= 2 {
                di -= l2[i - 2] * l2[i - 2] * d[i - 2];
            }
            if !(di > 0.0) || !di.is_finite() {
                return None;
            }
            d[i] = di;
            if i + 1 < m {
                let mut v = b1[i];
                if i >= 1 {
                    v -= l2[i - 1] * l1[i - 1] * d[i - 1];
                }
                l1[i] = v / di;
            }
            if i + 2 < m {
                l2[i] = b2[i] / di;
            }
        }
        Some(Self { d, l1, l2 })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let m = rhs.len();
        let mut z = rhs.to_vec();
        for i in 0..m {
            if i >= 1 {
                z[i] -= self.l1[i - 1] * z[i - 1];
            }
            if i >= 2 {
                z[i] -= self.l2[i - 2] * z[i - 2];
            }
        }
        for (zi, di) in z.iter_mut().zip(&self.d) {
            *zi /= di;
        }
        for i in (0..m).rev() {
            if i + 1 < m {
                z[i] -= self.l1[i] * z[i + 1];
            }
            if i + 2 < m {
                z[i] -= self.l2[i] * z[i + 2];
            }
        }
        z
    }

    /// In-band elements of the inverse: (diagonal, first, second off-diagonal).
    fn band_inverse(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = self.d.len();
        let mut s0 = vec![0.0; m];
        let mut s1 = vec![0.0; m];
        let mut s2 = vec![0.0; m];
        for i in (0..m).rev() {
            let la = if i + 1 < m { self.l1[i] } else { 0.0 };
            let lb = if i + 2 < m { self.l2[i] } else { 0.0 };
            let s11 = if i + 1 < m { s0[i + 1] } else { 0.0 };
            let s22 = if i + 2 < m { s0[i + 2] } else { 0.0 };
            let s12 = if i + 2 < m { s1[i + 1] } else { 0.0 };
            if i + 2 < m {
                s2[i] = -(la * s12 + lb * s22);
            }
            if i + 1 < m {
                s1[i] = -(la * s11 + lb * s12);
            }
            s0[i] = 1.0 / self.d[i] - la * s1[i] - lb * s2[i];
        }
        (s0, s1, s2)
    }
}

struct Candidate {
    g: Vec<f64>,
    gamma: Vec<f64>,
    gcv: f64,
}

impl SmoothingSpline {
    /// Fit with a fixed penalty.
    pub fn fit(x: &[f64], y: &[f64], lambda: f64) -> Result<Self> {
        validate(x, y)?;
        if !(lambda >= 0.0) {
            return Err(Error::InvalidInput("smoothing penalty must be non-negative".into()));
        }
        let bands = Bands::new(x, y);
        let cand = solve(&bands, y, lambda)
            .ok_or_else(|| Error::InvalidInput("smoothing spline system is singular".into()))?;
        Ok(Self::from_candidate(x, cand, lambda))
    }

    /// Fit with the penalty minimizing the GCV score, searched on a log scale.
    pub fn fit_gcv(x: &[f64], y: &[f64]) -> Result<Self> {
        validate(x, y)?;
        let bands = Bands::new(x, y);
        let scale = bands.trace_ratio();
        let eval = |t: f64| solve(&bands, y, scale * 10f64.powf(t)).map(|c| c.gcv).unwrap_or(f64::INFINITY);

        let (lo, hi, steps) = (-10.0, 4.0, 57);
        let ts: Vec<f64> = (0..steps)
            .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
            .collect();
        let scores: Vec<f64> = ts.iter().map(|&t| eval(t)).collect();
        let best = scores
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        // golden-section refinement in the bracketing interval
        let mut a = ts[best.saturating_sub(1)];
        let mut b = ts[(best + 1).min(steps - 1)];
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        let (mut fc, mut fd) = (eval(c), eval(d));
        for _ in 0..40 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - phi * (b - a);
                fc = eval(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + phi * (b - a);
                fd = eval(d);
            }
        }
        let t = if fc.min(fd) <= scores[best] { 0.5 * (a + b) } else { ts[best] };
        let lambda = scale * 10f64.powf(t);
        let cand = solve(&bands, y, lambda)
            .ok_or_else(|| Error::InvalidInput("smoothing spline system is singular".into()))?;
        Ok(Self::from_candidate(x, cand, lambda))
    }

    fn from_candidate(x: &[f64], cand: Candidate, lambda: f64) -> Self {
        Self {
            x: x.to_vec(),
            g: cand.g,
            gamma: cand.gamma,
            lambda,
            gcv: cand.gcv,
        }
    }

    pub fn fitted(&self) -> &[f64] {
        &self.g
    }

    /// Value of the natural cubic spline at `t`, linear beyond the end knots.
    pub fn evaluate(&self, t: f64) -> f64 {
        let x = &self.x;
        let n = x.len();
        if t <= x[0] {
            let slope = (self.g[1] - self.g[0]) / (x[1] - x[0]) - (x[1] - x[0]) * self.gamma[1] / 6.0;
            return self.g[0] + (t - x[0]) * slope;
        }
        if t >= x[n - 1] {
            let h = x[n - 1] - x[n - 2];
            let slope = (self.g[n - 1] - self.g[n - 2]) / h + h * self.gamma[n - 2] / 6.0;
            return self.g[n - 1] + (t - x[n - 1]) * slope;
        }
        let i = x.partition_point(|&v| v <= t) - 1;
        let h = x[i + 1] - x[i];
        let dl = t - x[i];
        let dr = x[i + 1] - t;
        (dl * self.g[i + 1] + dr * self.g[i]) / h
            - dl * dr / 6.0 * ((1.0 + dl / h) * self.gamma[i + 1] + (1.0 + dr / h) * self.gamma[i])
    }
}

fn validate(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 4 {
        return Err(Error::TooFewPoints {
            needed: 4,
            got: x.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("smoothing spline input".into()));
    }
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("spline abscissae must be strictly increasing".into()));
    }
    Ok(())
}

fn solve(bands: &Bands, y: &[f64], lambda: f64) -> Option<Candidate> {
    let n = y.len();
    let m = n - 2;
    let b0: Vec<f64> = (0..m).map(|k| bands.r0[k] + lambda * bands.m0[k]).collect();
    let b1: Vec<f64> = (0..m).map(|k| bands.r1[k] + lambda * bands.m1[k]).collect();
    let b2: Vec<f64> = (0..m).map(|k| lambda * bands.m2[k]).collect();
    let ldl = Ldl::factor(&b0, &b1, &b2)?;
    let gamma_inner = ldl.solve(&bands.qty);

    // g = y − λ Q γ
    let mut g = y.to_vec();
    for k in 0..m {
        let gk = lambda * gamma_inner[k];
        g[k] -= bands.a[k] * gk;
        g[k + 1] -= bands.b[k] * gk;
        g[k + 2] -= bands.c[k] * gk;
    }
    let rss: f64 = y.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum();

    // tr(I − A) = λ tr(B⁻¹ QᵀQ)
    let (s0, s1, s2) = ldl.band_inverse();
    let mut tr = 0.0;
    for k in 0..m {
        tr += s0[k] * bands.m0[k] + 2.0 * s1[k] * bands.m1[k] + 2.0 * s2[k] * bands.m2[k];
    }
    let df_resid = lambda * tr;
    let gcv = if df_resid > 0.0 {
        n as f64 * rss / (df_resid * df_resid)
    } else {
        f64::INFINITY
    };

    let mut gamma = vec![0.0; n];
    gamma[1..n - 1].copy_from_slice(&gamma_inner);
    let _ = &bands.h;
    Some(Candidate { g, gamma, gcv })
}
