//! Straight-line reference evaluations used by unit tests.

/// `W x` for a row-major `[rows, x.len()]` matrix, by explicit loops.
pub fn mv(w: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    let rows = w.len() / cols;
    let mut out = vec![0.0; rows];
    for r in 0..rows {
        let mut acc = 0.0;
        for c in 0..cols {
            acc += w[r * cols + c] * x[c];
        }
        out[r] = acc;
    }
    out
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One LSTM step with gates (i, f, g, o) stacked in `w` over the input `[x, h]`.
pub fn lstm(w: &[f64], b: &[f64], x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let input: Vec<f64> = x.iter().chain(h).cloned().collect();
    let z = add(&mv(w, &input), b);
    let mut h2 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    for k in 0..n {
        let i = sigmoid(z[k]);
        let f = sigmoid(z[n + k]);
        let g = z[2 * n + k].tanh();
        let o = sigmoid(z[3 * n + k]);
        c2[k] = f * c[k] + i * g;
        h2[k] = o * c2[k].tanh();
    }
    (h2, c2)
}

/// Additive attention `softmax_i(w · tanh(W_k k_i + q))` and the weighted sum of `values`.
pub fn attend(keys: &[Vec<f64>], q: &[f64], w: &[f64], values: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let scores: Vec<f64> = keys
        .iter()
        .map(|k| {
            let act: Vec<f64> = k.iter().zip(q).map(|(a, b)| (a + b).tanh()).collect();
            dot(&act, w)
        })
        .collect();
    let alpha = softmax(&scores);
    let mut out = vec![0.0; values[0].len()];
    for (a, v) in alpha.iter().zip(values) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += a * x;
        }
    }
    (alpha, out)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
