//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use imdd::air::TruncatedModel;
use imdd::equalizer::MlpParams;

/// Gauss-Hermite nodes and weights for `int exp(-t^2) f(t) dt`, by Newton
/// iteration on the orthonormal Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2 - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Mutual information in bits of equiprobable `levels` over real AWGN with
/// standard deviation `sigma`, by Gauss-Hermite quadrature.
pub fn awgn_mi_quadrature(levels: &[f64], sigma: f64, nodes: usize) -> f64 {
    let (t, w) = gauss_hermite(nodes);
    let m = levels.len() as f64;
    let mut acc = 0.0;
    for &xi in levels {
        for (tk, wk) in t.iter().zip(&w) {
            let n = std::f64::consts::SQRT_2 * sigma * tk;
            let s: f64 = levels
                .iter()
                .map(|&xj| (-((xi - xj + n).powi(2) - n * n) / (2.0 * sigma * sigma)).exp())
                .sum();
            acc += wk / std::f64::consts::PI.sqrt() * (s / m).log2();
        }
    }
    -acc / m
}

/// Brute-force quantities for one frame of a truncated model, summing over
/// every input sequence including the unknown `nu` preceding symbols.
pub struct Enumeration {
    /// `ln p(y)` under iid uniform inputs.
    pub log_evidence: f64,
    /// `ln p(y | x)` with the preceding symbols marginalized.
    pub log_likelihood: f64,
    /// `p(x_k | y)` for every position and symbol.
    pub marginals: Vec<Vec<f64>>,
}

pub fn enumerate_frame(model: &TruncatedModel, received: &[f64], symbols: &[usize]) -> Enumeration {
    let m = model.alphabet.order();
    let nu = model.memory();
    let n = received.len();
    let total = n + nu;
    let count = m.pow(total as u32);
    let var = model.noise_variance;
    let log_norm = -0.5 * (2.0 * std::f64::consts::PI * var).ln();
    // seq[0..nu] are x_{-nu}..x_{-1}, seq[nu + k] is x_k.
    let mut seq = vec![0usize; total];
    let mut logs = Vec::with_capacity(count);
    for idx in 0..count {
        let mut r = idx;
        for s in seq.iter_mut() {
            *s = r % m;
            r /= m;
        }
        let mut ll = 0.0;
        for k in 0..n {
            let window: Vec<usize> = (0..=nu).map(|j| seq[nu + k - j]).collect();
            let mu = model.mean_output(&window);
            ll += log_norm - (received[k] - mu).powi(2) / (2.0 * var);
        }
        logs.push((seq.clone(), ll));
    }
    let max = logs.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut z_given = 0.0;
    let mut marg = vec![vec![0.0; m]; n];
    for (s, ll) in &logs {
        let p = (ll - max).exp();
        z += p;
        for k in 0..n {
            marg[k][s[nu + k]] += p;
        }
        if s[nu..] == *symbols {
            z_given += p;
        }
    }
    for row in &mut marg {
        row.iter_mut().for_each(|v| *v /= z);
    }
    let ln_m = (m as f64).ln();
    Enumeration {
        log_evidence: max + z.ln() - total as f64 * ln_m,
        log_likelihood: max + z_given.ln() - nu as f64 * ln_m,
        marginals: marg,
    }
}

/// Scalar-loop forward pass: ReLU hidden layers, softmax output.
pub fn naive_forward(p: &MlpParams, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let layers = p.layers();
    for (li, layer) in layers.iter().enumerate() {
        let (rows, cols) = layer.weights.dim();
        let mut z = vec![0.0; rows];
        for r in 0..rows {
            let mut s = layer.bias[r];
            for c in 0..cols {
                s += layer.weights[(r, c)] * a[c];
            }
            z[r] = if li + 1 < layers.len() { s.max(0.0) } else { s };
        }
        a = z;
    }
    let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = a.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}
