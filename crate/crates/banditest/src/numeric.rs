//! Shared numeric helpers: stable log-sum-exp, Gauss-Legendre nodes,
//! adaptive Gauss-Kronrod quadrature in the log domain, golden-section
//! maximisation, Euclidean simplex projection and a log normal CDF.

use once_cell::sync::Lazy;

use crate::error::{Error, Result};

/// log(exp(a) + exp(b)) without overflow.
#[inline]
pub fn logsumexp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// log of the sum of exponentials over a slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Nodes and weights of an n-point Gauss-Legendre rule on [-1, 1],
/// computed by Newton iteration on the Legendre recurrence.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    let nf = n as f64;
    for i in 0..n {
        // Chebyshev-style initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0_f64, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0_f64, x);
        for k in 2..=n {
            let kf = k as f64;
            let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
        }
        let dp = nf * (x * p1 - p0) / (x * x - 1.0);
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

/// 64-point Gauss-Legendre rule, used for the Hessian-integral KL form.
pub static GL64: Lazy<Vec<(f64, f64)>> = Lazy::new(|| gauss_legendre(64));

/// Integrate `f` over [a, b] with the 64-point rule.
pub fn integrate_gl64<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    let c = 0.5 * (b - a);
    let d = 0.5 * (b + a);
    GL64.iter().map(|&(x, w)| w * f(c * x + d)).sum::<f64>() * c
}

// Gauss-Kronrod 7-15 pair on [-1, 1] (Kronrod nodes; the embedded Gauss-7
// rule uses every other node). Standard tabulated values.
const GK_NODES: [f64; 15] = [
    -0.991455371120813,
    -0.949107912342759,
    -0.864864423359769,
    -0.741531185599394,
    -0.586087235467691,
    -0.405845151377397,
    -0.207784955007898,
    0.0,
    0.207784955007898,
    0.405845151377397,
    0.586087235467691,
    0.741531185599394,
    0.864864423359769,
    0.949107912342759,
    0.991455371120813,
];
const GK_WEIGHTS: [f64; 15] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
    0.204432940075298,
    0.190350578064785,
    0.169004726639267,
    0.140653259715525,
    0.104790010322250,
    0.063092092629979,
    0.022935322010529,
];
const G7_WEIGHTS: [f64; 7] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
    0.381830050505119,
    0.279705391489277,
    0.129484966168870,
];

/// One Gauss-Kronrod panel of a *log-domain* integrand: returns
/// (log K15 estimate, log |K15 - G7| error proxy).
fn gk_panel_log<F: Fn(f64) -> f64>(a: f64, b: f64, log_f: &F) -> (f64, f64) {
    let c = 0.5 * (b - a);
    let d = 0.5 * (b + a);
    let log_c = c.ln();
    let mut k_terms = [f64::NEG_INFINITY; 15];
    let mut g_terms = [f64::NEG_INFINITY; 7];
    let mut g_idx = 0;
    for (i, (&x, &w)) in GK_NODES.iter().zip(GK_WEIGHTS.iter()).enumerate() {
        let lf = log_f(c * x + d);
        k_terms[i] = lf + w.ln();
        if i % 2 == 1 {
            g_terms[g_idx] = lf + G7_WEIGHTS[g_idx].ln();
            g_idx += 1;
        }
    }
    let log_k = logsumexp(&k_terms) + log_c;
    let log_g = logsumexp(&g_terms) + log_c;
    // |K - G| in log domain: log|exp(k) - exp(g)|.
    let (hi, lo) = if log_k > log_g { (log_k, log_g) } else { (log_g, log_k) };
    let log_err = if hi == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        hi + (-((lo - hi).exp())).ln_1p()
    };
    (log_k, log_err)
}

/// Adaptive Gauss-Kronrod integration of exp(log_f) over [a, b], carried out
/// entirely in the log domain. Returns log of the integral. `rel_tol` is the
/// relative tolerance on the integral value.
pub fn integrate_log_adaptive<F: Fn(f64) -> f64>(a: f64, b: f64, rel_tol: f64, log_f: &F) -> Result<f64> {
    if !(a < b) {
        return Err(Error::Quadrature(format!("bad interval [{a}, {b}]")));
    }
    // Work list of panels; refine the worst until the summed error proxy is
    // small relative to the running total.
    let mut panels: Vec<(f64, f64, f64, f64)> = Vec::new(); // (a, b, log_val, log_err)
    let (v, e) = gk_panel_log(a, b, log_f);
    panels.push((a, b, v, e));
    for _ in 0..2000 {
        let total = logsumexp(&panels.iter().map(|p| p.2).collect::<Vec<_>>());
        let err = logsumexp(&panels.iter().map(|p| p.3).collect::<Vec<_>>());
        if err == f64::NEG_INFINITY || err < total + rel_tol.ln() {
            return Ok(total);
        }
        // Split the panel with the largest error.
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .unwrap();
        let (pa, pb, _, _) = panels.swap_remove(idx);
        let mid = 0.5 * (pa + pb);
        if mid <= pa || mid >= pb {
            // Interval exhausted at f64 resolution; accept what we have.
            let (v1, _) = gk_panel_log(pa, pb, log_f);
            panels.push((pa, pb, v1, f64::NEG_INFINITY));
            continue;
        }
        let (v1, e1) = gk_panel_log(pa, mid, log_f);
        let (v2, e2) = gk_panel_log(mid, pb, log_f);
        panels.push((pa, mid, v1, e1));
        panels.push((mid, pb, v2, e2));
    }
    Err(Error::Quadrature("panel budget exhausted".into()))
}

/// Golden-section search for the maximum of a unimodal function on [a, b].
/// Returns (argmax, max). `tol` is the absolute x tolerance.
pub fn golden_section_max<F: Fn(f64) -> f64>(mut a: f64, mut b: f64, tol: f64, f: F) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Euclidean projection of `v` onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i as f64 + 1.0);
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect::<Vec<_>>()
}

/// log of the standard normal CDF, accurate deep in the lower tail.
pub fn log_normal_cdf(z: f64) -> f64 {
    if z > 8.0 {
        // 1 - Phi(z) is tiny; ln(1 - eps) = -eps to machine precision.
        return -0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2);
    }
    if z > -37.0 {
        let half_erfc = 0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2);
        if half_erfc > 0.0 {
            return half_erfc.ln();
        }
    }
    // Asymptotic expansion of ln Phi(z) for z << 0.
    let z2 = z * z;
    -0.5 * z2 - 0.5 * (2.0 * std::f64::consts::PI).ln() - (-z).ln() + (-1.0 / z2).ln_1p()
}
