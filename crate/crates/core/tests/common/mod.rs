//! Independent reference implementations used by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn identity(n: usize) -> Dense {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn kron(a: &Dense, b: &Dense) -> Dense {
    let (ra, ca, rb, cb) = (a.len(), a[0].len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; ca * cb]; ra * rb];
    for i in 0..ra {
        for j in 0..ca {
            for k in 0..rb {
                for l in 0..cb {
                    out[i * rb + k][j * cb + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            out[i][j] = (0..k).map(|t| a[i][t] * b[t][j]).sum();
        }
    }
    out
}

pub fn matvec(a: &Dense, x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(a, x)| a * x).sum())
        .collect()
}

/// `I ⊗ ... ⊗ g ⊗ ... ⊗ I` with `g` on qubit `q`, qubit 0 leftmost.
pub fn embed(n: usize, q: usize, g: &Dense) -> Dense {
    let id = identity(2);
    let mut out = vec![vec![1.0]];
    for k in 0..n {
        out = kron(&out, if k == q { g } else { &id });
    }
    out
}

pub fn ry(theta: f64) -> Dense {
    let (s, c) = (theta / 2.0).sin_cos();
    vec![vec![c, -s], vec![s, c]]
}

/// `|0><0| ⊗ I + |1><1| ⊗ X` on (control, target), built as a sum of
/// Kronecker products.
pub fn cnot(n: usize, control: usize, target: usize) -> Dense {
    let p0 = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
    let p1 = vec![vec![0.0, 0.0], vec![0.0, 1.0]];
    let x = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    let a = embed(n, control, &p0);
    let mut b = embed(n, control, &p1);
    b = matmul(&b, &embed(n, target, &x));
    a.iter()
        .zip(&b)
        .map(|(r1, r2)| r1.iter().zip(r2).map(|(x, y)| x + y).collect())
        .collect()
}

/// Full circuit unitary as a product of dense gate matrices.
pub fn dense_unitary(n: usize, layers: usize, theta: &[f64]) -> Dense {
    let mut u = identity(1 << n);
    for l in 0..layers {
        for q in 0..n {
            u = matmul(&embed(n, q, &ry(theta[l * n + q])), &u);
        }
        for q in 0..n.saturating_sub(1) {
            u = matmul(&cnot(n, q, q + 1), &u);
        }
    }
    u
}

/// First column of the unitary: the state reached from `|0...0>`.
pub fn dense_state(n: usize, layers: usize, theta: &[f64]) -> Vec<f64> {
    dense_unitary(n, layers, theta).iter().map(|row| row[0]).collect()
}

pub fn dense_probs(n: usize, layers: usize, theta: &[f64]) -> Vec<f64> {
    dense_state(n, layers, theta).iter().map(|a| a * a).collect()
}

/// Haversine great-circle distance.
pub fn haversine(lat1: f64, lon1: f64, lat2: f64, lon2: f64, r: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * r * h.sqrt().min(1.0).asin()
}

/// Layer-by-layer dense MLP: weights row-major `out x in`, then biases,
/// tanh hidden layers, linear output times `gain`.
pub fn mlp_oracle(dims: &[usize], params: &[f64], x: &[f64], gain: f64) -> Vec<f64> {
    let mut offset = 0;
    let mut h = x.to_vec();
    let layers = dims.len() - 1;
    for l in 0..layers {
        let (fin, fout) = (dims[l], dims[l + 1]);
        let w: Dense = (0..fout)
            .map(|o| params[offset + o * fin..offset + (o + 1) * fin].to_vec())
            .collect();
        let b = &params[offset + fin * fout..offset + fin * fout + fout];
        offset += fin * fout + fout;
        let z: Vec<f64> = matvec(&w, &h).iter().zip(b).map(|(z, b)| z + b).collect();
        h = if l + 1 == layers {
            z.iter().map(|v| gain * v).collect()
        } else {
            z.iter().map(|v| v.tanh()).collect()
        };
    }
    assert_eq!(offset, params.len());
    h
}

pub fn mlp_param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Composed generation oracle: dense circuit probabilities, then the
/// mapping MLP oracle per chunk, concatenated and truncated to `m`.
pub fn generation_oracle(
    n: usize,
    layers: usize,
    theta: &[f64],
    mapping_dims: &[usize],
    mapping_params: &[f64],
    gain: f64,
    m: usize,
) -> Vec<f64> {
    let probs = dense_probs(n, layers, theta);
    let chunk = *mapping_dims.last().unwrap();
    let n_ch = m.div_ceil(chunk);
    let mut out = Vec::new();
    for (i, p) in probs.iter().enumerate().take(n_ch) {
        let mut x: Vec<f64> = (0..n).map(|q| ((i >> (n - 1 - q)) & 1) as f64).collect();
        x.push(*p);
        out.extend(mlp_oracle(mapping_dims, mapping_params, &x, gain));
    }
    out.truncate(m);
    out
}

/// Central differences with step `h`.
pub fn central_diff(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|b|, floor)` over two vectors.
pub fn max_rel(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}

/// Numerical rank by Gaussian elimination with partial pivoting.
pub fn numerical_rank(mut a: Dense, tol: f64) -> usize {
    let rows = a.len();
    let cols = a[0].len();
    let mut rank = 0;
    for c in 0..cols {
        if rank == rows {
            break;
        }
        let pivot = (rank..rows)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        if a[pivot][c].abs() <= tol {
            continue;
        }
        a.swap(rank, pivot);
        for r in rank + 1..rows {
            let f = a[r][c] / a[rank][c];
            for k in c..cols {
                a[r][k] -= f * a[rank][k];
            }
        }
        rank += 1;
    }
    rank
}

/// Minimum within-cluster sum of squares for 1-D `values` split into at
/// most `c` groups, by trying every contiguous partition of the sorted
/// values (optimal 1-D clusters are contiguous).
pub fn brute_force_sse(values: &[f64], c: usize) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    fn sse(s: &[f64]) -> f64 {
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        s.iter().map(|x| (x - mean).powi(2)).sum()
    }
    fn best(v: &[f64], c: usize) -> f64 {
        if c == 1 || v.len() <= 1 {
            return sse(v);
        }
        let mut b = sse(v);
        for cut in 1..v.len() {
            b = b.min(sse(&v[..cut]) + best(&v[cut..], c - 1));
        }
        b
    }
    best(&v, c)
}
