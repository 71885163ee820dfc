//! Conjugate gradients, Lanczos condition estimation, and the
//! Crank-Nicolson time marcher with Rannacher startup.

use crate::operator::{OperatorError, SparseOperator};
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("conjugate gradient did not reach tolerance: relative residual {residual:.3e} after {iterations} iterations")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },
    #[error("time march failed at step {step} ({scheme}): {source}")]
    March {
        step: usize,
        scheme: &'static str,
        #[source]
        source: Box<SolveError>,
    },
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Outcome of one conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
    /// Extremal Ritz values of the CG tridiagonal; estimates of the extreme
    /// eigenvalues of the operator over the Krylov space explored.
    pub ritz: (f64, f64),
    /// False when the iteration budget ran out; the best iterate is still
    /// returned.
    pub converged: bool,
}

/// Conjugate gradients with a relative-residual stopping rule.
///
/// `x0` selects the initial guess (`None` means a cold start from zero).
/// The Ritz values are read off the Lanczos tridiagonal implied by the CG
/// step and search-direction coefficients.
pub fn cg_solve<A>(
    apply: A,
    rhs: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgReport), SolveError>
where
    A: Fn(&[f64]) -> Vec<f64>,
{
    let n = rhs.len();
    let rhs_norm = norm(rhs);
    let mut x = match x0 {
        Some(g) => g.to_vec(),
        None => vec![0.0; n],
    };
    if rhs_norm == 0.0 {
        return Ok((
            vec![0.0; n],
            CgReport {
                iterations: 0,
                relative_residual: 0.0,
                ritz: (0.0, 0.0),
                converged: true,
            },
        ));
    }
    let mut r: Vec<f64> = match x0 {
        Some(_) => {
            let ax = apply(&x);
            rhs.iter().zip(&ax).map(|(b, a)| b - a).collect()
        }
        None => rhs.to_vec(),
    };
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut iterations = 0usize;
    while rr.sqrt() > tol * rhs_norm && iterations < max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            return Err(SolveError::NonFinite {
                context: "conjugate gradient curvature",
            });
        }
        let alpha = rr / pap;
        for ((xi, ri), (&pi, &api)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
            *xi += alpha * pi;
            *ri -= alpha * api;
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        alphas.push(alpha);
        betas.push(beta);
        rr = rr_next;
        iterations += 1;
    }
    let relative_residual = rr.sqrt() / rhs_norm;
    if !relative_residual.is_finite() {
        return Err(SolveError::NonFinite {
            context: "conjugate gradient residual",
        });
    }
    let ritz = ritz_extremes(&alphas, &betas);
    Ok((
        x,
        CgReport {
            iterations,
            relative_residual,
            ritz,
            converged: relative_residual <= tol,
        },
    ))
}

/// Extremal eigenvalues of the Lanczos tridiagonal reconstructed from the
/// CG coefficients: diag_j = 1/alpha_j + beta_{j-1}/alpha_{j-1},
/// offdiag_j = sqrt(beta_j)/alpha_j.
fn ritz_extremes(alphas: &[f64], betas: &[f64]) -> (f64, f64) {
    let m = alphas.len();
    if m == 0 {
        return (0.0, 0.0);
    }
    let mut t = DMatrix::zeros(m, m);
    for j in 0..m {
        let mut diag = 1.0 / alphas[j];
        if j > 0 {
            diag += betas[j - 1] / alphas[j - 1];
        }
        t[(j, j)] = diag;
        if j + 1 < m {
            let off = betas[j].sqrt() / alphas[j];
            t[(j, j + 1)] = off;
            t[(j + 1, j)] = off;
        }
    }
    let eigen = t.symmetric_eigenvalues();
    let lo = eigen.iter().cloned().fold(f64::MAX, f64::min);
    let hi = eigen.iter().cloned().fold(f64::MIN, f64::max);
    (lo, hi)
}

/// Condition-number estimate from Lanczos with full re-orthogonalization.
/// At least 50 steps are taken (the full dimension if smaller), which is
/// plenty for the extremal eigenvalues of the uniformly conditioned
/// operators studied here.
pub fn estimate_condition<A>(apply: A, n: usize) -> f64
where
    A: Fn(&[f64]) -> Vec<f64>,
{
    let steps = n.min(60).max(n.min(50));
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(steps);
    // Deterministic pseudo-random start (splitmix64 stream).
    let mut state = 0x243f6a8885a308d3u64;
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            state = state.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            z ^= z >> 31;
            (z as f64 / u64::MAX as f64) * 2.0 - 1.0
        })
        .collect();
    let nv = norm(&v);
    for vi in v.iter_mut() {
        *vi /= nv;
    }
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut beta = 0.0f64;
    let mut v_prev = vec![0.0; n];
    for _ in 0..steps {
        q.push(v.clone());
        let mut w = apply(&v);
        let alpha = dot(&w, &v);
        for ((wi, &vi), &vp) in w.iter_mut().zip(&v).zip(&v_prev) {
            *wi -= alpha * vi + beta * vp;
        }
        // Full re-orthogonalization against the stored Lanczos vectors.
        for qv in &q {
            let c = dot(&w, qv);
            for (wi, &qi) in w.iter_mut().zip(qv) {
                *wi -= c * qi;
            }
        }
        alphas.push(alpha);
        let b = norm(&w);
        if b < 1e-14 {
            break;
        }
        betas.push(b);
        v_prev = v;
        v = w;
        for vi in v.iter_mut() {
            *vi /= b;
        }
        beta = b;
    }
    let m = alphas.len();
    let mut t = DMatrix::zeros(m, m);
    for j in 0..m {
        t[(j, j)] = alphas[j];
        if j + 1 < m {
            t[(j, j + 1)] = betas[j];
            t[(j + 1, j)] = betas[j];
        }
    }
    let eigen = t.symmetric_eigenvalues();
    let lo = eigen.iter().cloned().fold(f64::MAX, f64::min);
    let hi = eigen.iter().cloned().fold(f64::MIN, f64::max);
    hi / lo
}

/// Time-march configuration. `steps` is the total number of Crank-Nicolson
/// sized steps `tau = T / steps`; the first two are replaced by four
/// implicit-Euler half-steps (Rannacher startup).
#[derive(Debug, Clone)]
pub struct MarchConfig {
    pub steps: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Start each CG solve from the previous time level instead of zero.
    /// Off by default: cold starts reproduce the reference iteration counts.
    pub warm_start: bool,
}

impl MarchConfig {
    pub fn new(steps: usize) -> Self {
        Self {
            steps,
            tol: 1e-10,
            max_iter: 500,
            warm_start: false,
        }
    }
}

/// Per-step solver diagnostics.
#[derive(Debug, Clone)]
pub struct StepLog {
    pub step: usize,
    pub scheme: &'static str,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Marches the coefficient vector from the payoff projection to maturity:
/// four implicit-Euler half-steps, then Crank-Nicolson to the final time.
/// The operator's `tau` must equal `T / cfg.steps`.
pub fn march(
    op: &SparseOperator,
    c0: &[f64],
    cfg: &MarchConfig,
) -> Result<(Vec<f64>, Vec<StepLog>), SolveError> {
    let mut c = c0.to_vec();
    let mut logs = Vec::new();
    let tau = op.coeffs.tau;
    let euler_half_steps = 4.min(2 * cfg.steps);
    let cn_steps = cfg.steps - euler_half_steps / 2;

    let mut step = 0usize;
    for _ in 0..euler_half_steps {
        let rhs: Vec<f64> = c.iter().map(|&x| 2.0 / tau * x).collect();
        let guess = cfg.warm_start.then_some(c.as_slice());
        let (next, report) = cg_solve(
            |v| op.apply_euler_half(v).expect("operator dimensions fixed"),
            &rhs,
            guess,
            cfg.tol,
            cfg.max_iter,
        )
        .map_err(|e| SolveError::March {
            step,
            scheme: "implicit-euler",
            source: Box::new(e),
        })?;
        if !report.converged {
            return Err(SolveError::March {
                step,
                scheme: "implicit-euler",
                source: Box::new(SolveError::NotConverged {
                    iterations: report.iterations,
                    residual: report.relative_residual,
                }),
            });
        }
        logs.push(StepLog {
            step,
            scheme: "implicit-euler",
            iterations: report.iterations,
            relative_residual: report.relative_residual,
        });
        c = next;
        step += 1;
    }
    for _ in 0..cn_steps {
        let rhs = op.apply_rhs(&c)?;
        let guess = cfg.warm_start.then_some(c.as_slice());
        let (next, report) = cg_solve(
            |v| op.apply(v).expect("operator dimensions fixed"),
            &rhs,
            guess,
            cfg.tol,
            cfg.max_iter,
        )
        .map_err(|e| SolveError::March {
            step,
            scheme: "crank-nicolson",
            source: Box::new(e),
        })?;
        if !report.converged {
            return Err(SolveError::March {
                step,
                scheme: "crank-nicolson",
                source: Box::new(SolveError::NotConverged {
                    iterations: report.iterations,
                    residual: report.relative_residual,
                }),
            });
        }
        logs.push(StepLog {
            step,
            scheme: "crank-nicolson",
            iterations: report.iterations,
            relative_residual: report.relative_residual,
        });
        c = next;
        step += 1;
    }
    Ok((c, logs))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
