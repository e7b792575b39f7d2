//! Matrix-free kernels for symmetric operators: restarted Lanczos for the top
//! eigenpair, Krylov evaluation of matrix functions, conjugate gradients and a
//! tridiagonal solver.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{PamError, Result};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn scale(v: &mut [f64], s: f64) {
    v.iter_mut().for_each(|x| *x *= s);
}

/// Orthonormal Krylov basis of a symmetric operator with its tridiagonal
/// projection `T = Qᵀ A Q`.
pub struct Krylov {
    n: usize,
    basis: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    start_norm: f64,
    /// `β_m`, the coupling to the first discarded direction.
    residual_beta: f64,
}

impl Krylov {
    /// Runs up to `m` Lanczos steps from `v` with full reorthogonalization,
    /// stopping early on an invariant subspace.
    pub fn build(op: &mut impl FnMut(&[f64], &mut [f64]), v: &[f64], m: usize) -> Self {
        let n = v.len();
        let start_norm = norm(v);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut alpha = Vec::with_capacity(m);
        let mut beta = Vec::with_capacity(m);
        let mut residual_beta = 0.0;
        if start_norm == 0.0 || n == 0 {
            return Self { n, basis, alpha, beta, start_norm, residual_beta };
        }
        let mut q: Vec<f64> = v.iter().map(|x| x / start_norm).collect();
        let mut w = vec![0.0; n];
        for k in 0..m.min(n) {
            op(&q, &mut w);
            let a = dot(&w, &q);
            axpy(-a, &q, &mut w);
            if let Some(prev) = basis.last() {
                axpy(-beta[k - 1], prev, &mut w);
            }
            // two passes of classical Gram-Schmidt against the whole basis
            for _ in 0..2 {
                for b in basis.iter().chain(std::iter::once(&q)) {
                    let c = dot(&w, b);
                    axpy(-c, b, &mut w);
                }
            }
            alpha.push(a);
            basis.push(q);
            let b = norm(&w);
            let scale_ref = a.abs().max(beta.last().copied().unwrap_or(0.0)).max(1e-300);
            if b <= 1e-13 * scale_ref || k + 1 == m.min(n) {
                residual_beta = if k + 1 == m.min(n) && b > 1e-13 * scale_ref { b } else { 0.0 };
                break;
            }
            beta.push(b);
            q = w.iter().map(|x| x / b).collect();
        }
        beta.truncate(alpha.len().saturating_sub(1));
        Self { n, basis, alpha, beta, start_norm, residual_beta }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// Eigen-decomposition of the projected tridiagonal matrix.
    pub fn ritz(&self) -> (Vec<f64>, DMatrix<f64>) {
        let m = self.dim();
        let mut t = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = self.alpha[i];
            if i + 1 < m {
                t[(i, i + 1)] = self.beta[i];
                t[(i + 1, i)] = self.beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    }

    /// `‖v‖ Q f(T) e_1`, the Krylov approximation of `f(A) v`, together with
    /// the a-posteriori estimate `‖v‖ β_m |e_mᵀ f(T) e_1|`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> (Vec<f64>, f64) {
        let m = self.dim();
        let mut out = vec![0.0; self.n];
        if m == 0 {
            return (out, 0.0);
        }
        let (vals, vecs) = self.ritz();
        let coef: Vec<f64> = (0..m).map(|i| (0..m).map(|k| vecs[(i, k)] * f(vals[k]) * vecs[(0, k)]).sum::<f64>()).collect();
        for (c, q) in coef.iter().zip(&self.basis) {
            axpy(self.start_norm * c, q, &mut out);
        }
        let err = self.start_norm * self.residual_beta * coef[m - 1].abs();
        (out, err)
    }
}

/// Outcome of [`lanczos_top`].
#[derive(Debug, Clone)]
pub struct TopPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    pub matvecs: usize,
    pub history: Vec<f64>,
}

/// Largest eigenpair of a symmetric operator by explicitly restarted Lanczos.
/// Stops once `‖Ax - θx‖ ≤ tol (|θ| + 1)`.
pub fn lanczos_top(op: &mut impl FnMut(&[f64], &mut [f64]), start: &[f64], tol: f64, max_matvecs: usize) -> Result<TopPair> {
    let n = start.len();
    let m = n.clamp(1, 60);
    let mut x = start.to_vec();
    let nx = norm(&x);
    scale(&mut x, 1.0 / nx);
    let mut matvecs = 0;
    let mut history = Vec::new();
    let mut ax = vec![0.0; n];
    loop {
        let kr = Krylov::build(op, &x, m);
        matvecs += kr.dim();
        let (vals, vecs) = kr.ritz();
        let top = (0..vals.len()).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).expect("nonempty Krylov space");
        let mut y = vec![0.0; n];
        for (i, q) in kr.basis.iter().enumerate() {
            axpy(vecs[(i, top)], q, &mut y);
        }
        let ny = norm(&y);
        scale(&mut y, 1.0 / ny);
        op(&y, &mut ax);
        matvecs += 1;
        let theta = dot(&ax, &y);
        axpy(-theta, &y, &mut ax);
        let res = norm(&ax);
        history.push(res);
        if res <= tol * (theta.abs() + 1.0) {
            return Ok(TopPair { value: theta, vector: y, residual: res, matvecs, history });
        }
        if matvecs >= max_matvecs {
            return Err(PamError::NoConvergence { what: "restarted Lanczos", iterations: matvecs, residual: res, history });
        }
        x = y;
    }
}

/// `e^{τA} v` for a symmetric operator with `‖A‖ ≤ norm_bound`, by Krylov
/// projection on substeps short enough that 40 Lanczos vectors resolve them.
pub fn expm_apply(op: &mut impl FnMut(&[f64], &mut [f64]), v: &[f64], tau: f64, norm_bound: f64, tol: f64) -> Vec<f64> {
    let substeps = ((tau * norm_bound) / 8.0).ceil().max(1.0) as usize;
    let h = tau / substeps as f64;
    let mut cur = v.to_vec();
    for _ in 0..substeps {
        let mut m = 12;
        loop {
            let kr = Krylov::build(op, &cur, m);
            let (next, err) = kr.apply(|l| (h * l).exp());
            if err <= tol * norm(&next).max(1e-300) || kr.dim() < m || m >= 80 {
                cur = next;
                break;
            }
            m += 12;
        }
    }
    cur
}

/// `e^{τA} v` by a truncated Taylor series, with `τ` split so that every
/// substep has `h‖A‖ ≤ 1`. Terms are summed until the last one is below
/// `tol` relative to the partial sum. Cheap for short intervals where a
/// Krylov basis would be overkill.
pub fn taylor_expm_apply(op: &mut impl FnMut(&[f64], &mut [f64]), v: &[f64], tau: f64, norm_bound: f64, tol: f64) -> Vec<f64> {
    let substeps = (tau * norm_bound).ceil().max(1.0) as usize;
    let h = tau / substeps as f64;
    let mut cur = v.to_vec();
    let mut term = vec![0.0; v.len()];
    let mut next = vec![0.0; v.len()];
    for _ in 0..substeps {
        term.copy_from_slice(&cur);
        for k in 1..60 {
            op(&term, &mut next);
            let c = h / k as f64;
            next.iter_mut().for_each(|x| *x *= c);
            std::mem::swap(&mut term, &mut next);
            axpy(1.0, &term, &mut cur);
            if norm(&term) <= tol * norm(&cur) {
                break;
            }
        }
    }
    cur
}

/// `φ₁(z) = (e^z - 1)/z`.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        1.0 + z / 2.0 + z * z / 6.0
    } else {
        z.exp_m1() / z
    }
}

/// `φ₂(z) = (e^z - 1 - z)/z²`.
pub fn phi2(z: f64) -> f64 {
    if z.abs() < 0.1 {
        let mut term = 0.5;
        let mut sum = 0.5;
        for k in 3..14 {
            term *= z / k as f64;
            sum += term;
        }
        sum
    } else {
        (z.exp_m1() - z) / (z * z)
    }
}

/// Conjugate gradients for a symmetric positive definite operator.
pub fn conjugate_gradient(
    op: &mut impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = b.len();
    let mut ax = vec![0.0; n];
    op(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = rel_tol * norm(b).max(1e-300);
    for it in 0..max_iter {
        if rr.sqrt() <= target {
            return Ok(it);
        }
        op(&p, &mut ax);
        let alpha = rr / dot(&p, &ax);
        axpy(alpha, &p, x);
        axpy(-alpha, &ax, &mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
    }
    if rr.sqrt() <= target {
        Ok(max_iter)
    } else {
        Err(PamError::NoConvergence { what: "conjugate gradients", iterations: max_iter, residual: rr.sqrt(), history: vec![] })
    }
}

/// Solves the tridiagonal system `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]`
/// by the Thomas algorithm (no pivoting).
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return None;
    }
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return None;
        }
        c[i] = if i + 1 < n { upper[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_op(n: usize) -> impl FnMut(&[f64], &mut [f64]) {
        move |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let l = if i > 0 { x[i - 1] } else { 0.0 };
                let r = if i + 1 < n { x[i + 1] } else { 0.0 };
                y[i] = l + r - 2.0 * x[i];
            }
        }
    }

    #[test]
    fn lanczos_finds_dirichlet_chain_top() {
        let n = 200;
        let mut op = chain_op(n);
        let start = vec![1.0; n];
        let top = lanczos_top(&mut op, &start, 1e-11, 200_000).unwrap();
        let exact = -2.0 * (1.0 - (std::f64::consts::PI / (n as f64 + 1.0)).cos());
        assert!((top.value - exact).abs() < 1e-12, "{} vs {}", top.value, exact);
    }

    #[test]
    fn expm_matches_dense() {
        let n = 30;
        let mut op = chain_op(n);
        let v: Vec<f64> = (0..n).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let got = expm_apply(&mut op, &v, 3.0, 4.0, 1e-13);
        let taylor = taylor_expm_apply(&mut op, &v, 3.0, 4.0, 1e-15);
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = -2.0;
            if i + 1 < n {
                a[(i, i + 1)] = 1.0;
                a[(i + 1, i)] = 1.0;
            }
        }
        let eig = SymmetricEigen::new(a);
        let q = &eig.eigenvectors;
        let vv = nalgebra::DVector::from_vec(v);
        let c = q.transpose() * vv;
        let ec = nalgebra::DVector::from_iterator(n, (0..n).map(|k| (3.0 * eig.eigenvalues[k]).exp() * c[k]));
        let want = q * ec;
        for i in 0..n {
            assert!((got[i] - want[i]).abs() < 1e-11);
            assert!((taylor[i] - want[i]).abs() < 1e-11);
        }
    }

    #[test]
    fn phi_functions_are_continuous() {
        for z in [-1e-6, 1e-6, -0.099999, 0.1, 0.100001, -3.0, 2.0] {
            let h = 1e-7;
            assert!((phi1(z) - phi1(z + h)).abs() < 1e-6);
            assert!((phi2(z) - phi2(z + h)).abs() < 1e-6);
        }
        assert!((phi1(1.0) - (1f64.exp() - 1.0)).abs() < 1e-14);
        assert!((phi2(1.0) - (1f64.exp() - 2.0)).abs() < 1e-14);
    }

    #[test]
    fn cg_and_thomas_agree() {
        let n = 50;
        let mut op = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let l = if i > 0 { x[i - 1] } else { 0.0 };
                let r = if i + 1 < n { x[i + 1] } else { 0.0 };
                y[i] = 3.0 * x[i] - l - r;
            }
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; n];
        conjugate_gradient(&mut op, &b, &mut x, 1e-13, 500).unwrap();
        let t = solve_tridiagonal(&vec![-1.0; n], &vec![3.0; n], &vec![-1.0; n], &b).unwrap();
        for i in 0..n {
            assert!((x[i] - t[i]).abs() < 1e-11);
        }
    }
}
