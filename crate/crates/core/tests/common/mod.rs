#![allow(dead_code)]

use aclsim_core::linalg::Operator;

/// Eigenvalues of a real symmetric matrix (row-major) by cyclic Jacobi
/// rotations, ascending.
pub fn jacobi_eigenvalues(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Eigenvalues of a Hermitian operator through the real embedding
/// `[[A, -B], [B, A]]`, which repeats every eigenvalue twice. Returns one
/// copy of each, ascending.
pub fn hermitian_eigenvalues_via_embedding(op: &Operator) -> Vec<f64> {
    let n = op.dim();
    let m = 2 * n;
    let mut a = vec![0.0; m * m];
    for i in 0..n {
        for j in 0..n {
            let z = op.get(i, j);
            a[i * m + j] = z.re;
            a[(i + n) * m + j + n] = z.re;
            a[i * m + j + n] = -z.im;
            a[(i + n) * m + j] = z.im;
        }
    }
    jacobi_eigenvalues(a, m).into_iter().step_by(2).collect()
}

/// Largest root of the physicists' Hermite polynomial `H_n`, by Newton
/// iteration on the scaled recurrence, started above the asymptotic bound.
pub fn largest_hermite_root(n: usize) -> f64 {
    // p_k = H_k / sqrt(2^k k!) keeps the values bounded.
    let eval = |x: f64| {
        let (mut p0, mut p1) = (0.0_f64, 1.0_f64);
        for k in 0..n {
            let p2 = (2.0 / (k as f64 + 1.0)).sqrt() * x * p1
                - (k as f64 / (k as f64 + 1.0)).sqrt() * p0;
            p0 = p1;
            p1 = p2;
        }
        // p_n and p_{n-1}; H_n' = 2n H_{n-1} gives p_n' = sqrt(2n) p_{n-1}.
        (p1, (2.0 * n as f64).sqrt() * p0)
    };
    let mut x = (2.0 * n as f64 + 1.0).sqrt();
    for _ in 0..200 {
        let (p, dp) = eval(x);
        let step = p / dp;
        x -= step;
        if step.abs() < 1e-15 * x.abs() {
            break;
        }
    }
    x
}

/// Pearson chi-square of `values` against the semicircle density of radius
/// `radius`, over `bins` equal bins spanning `[-radius, radius]`. Values
/// outside the support are folded into the edge bins.
pub fn semicircle_chi2(values: &[f64], radius: f64, bins: usize) -> f64 {
    let mut counts = vec![0usize; bins];
    let width = 2.0 * radius / bins as f64;
    for &v in values {
        let k = ((v + radius) / width).floor();
        counts[k.clamp(0.0, bins as f64 - 1.0) as usize] += 1;
    }
    // Cumulative semicircle: F(x) = 1/2 + (x sqrt(1-x^2) + asin x) / pi, x = v/R.
    let cdf = |v: f64| {
        let x = (v / radius).clamp(-1.0, 1.0);
        0.5 + (x * (1.0 - x * x).sqrt() + x.asin()) / std::f64::consts::PI
    };
    let total = values.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let lo = -radius + k as f64 * width;
            let expected = total * (cdf(lo + width) - cdf(lo));
            (c as f64 - expected).powi(2) / expected
        })
        .sum()
}

/// Upper 1% point of the chi-square distribution with 19 degrees of freedom.
pub const CHI2_19_P01: f64 = 36.191;
