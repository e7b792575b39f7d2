//! Exponentially scaled modified Bessel functions `e^{-x} I_n(x)` and
//! quadrature helpers.

/// `e^{-x} I_n(x)` for `n = 0..=nmax`, `x ≥ 0`, by Miller's backward
/// recurrence normalized with `Σ_{n∈Z} e^{-x} I_n(x) = 1`.
pub fn scaled_bessel_i_all(x: f64, nmax: usize) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    if x > 700.0 && nmax == 0 {
        out[0] = scaled_bessel_i0(x);
        return out;
    }
    let start = nmax.max(x as usize) + 40 + (8.0 * x.sqrt()) as usize;
    let mut next = 0.0f64; // I_{n+1}
    let mut cur = 1e-300f64; // I_n
    let mut sum = 0.0;
    for n in (1..=start).rev() {
        let prev = (2.0 * n as f64 / x) * cur + next;
        next = cur;
        cur = prev;
        if n - 1 <= nmax {
            out[n - 1] = cur;
        }
        if n > 1 {
            sum += 2.0 * cur;
        }
        if cur > 1e250 {
            let s = 1e-250;
            cur *= s;
            next *= s;
            sum *= s;
            out.iter_mut().for_each(|v| *v *= s);
        }
    }
    sum += cur;
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// `e^{-x} I_0(x)` for `x ≥ 0`.
pub fn scaled_bessel_i0(x: f64) -> f64 {
    if x <= 30.0 {
        return scaled_bessel_i_all(x, 0)[0];
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        let kf = k as f64;
        term *= (2.0 * kf - 1.0).powi(2) / (8.0 * kf * x);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum / (2.0 * std::f64::consts::PI * x).sqrt()
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &mut impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// `log ∫_R exp(g(u)) du` for a strictly concave `g` with derivative `dg` and
/// second derivative `d2g`, integrated around the mode in standardized units.
pub fn log_laplace_integral(g: impl Fn(f64) -> f64, dg: impl Fn(f64) -> f64, d2g: impl Fn(f64) -> f64, rel_tol: f64) -> f64 {
    // bracket the mode: dg is decreasing
    let (mut lo, mut hi) = (-1.0, 1.0);
    while dg(lo) < 0.0 {
        lo = 2.0 * lo - 1.0;
    }
    while dg(hi) > 0.0 {
        hi = 2.0 * hi + 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dg(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * (1.0 + mid.abs()) {
            break;
        }
    }
    let mode = 0.5 * (lo + hi);
    let gmax = g(mode);
    let sigma = 1.0 / (-d2g(mode)).sqrt();
    let mut h = |z: f64| (g(mode + sigma * z) - gmax).exp();
    let edge = |h: &mut dyn FnMut(f64) -> f64, z: f64| h(z) < 1e-20;
    let mut zl = -8.0;
    while !edge(&mut h, zl) {
        zl *= 1.5;
    }
    let mut zr = 8.0;
    while !edge(&mut h, zr) {
        zr *= 1.5;
    }
    let mut total = 0.0;
    // panels of unit width keep the recursion shallow
    let mut a = zl;
    while a < zr {
        let b = (a + 1.0).min(zr);
        total += adaptive_simpson(&mut h, a, b, rel_tol * 0.05 * (b - a) / (zr - zl));
        a = b;
    }
    gmax + sigma.ln() + total.ln()
}
