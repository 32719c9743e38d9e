//! Classical compression baselines: one-shot magnitude pruning and k-means
//! weight sharing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneMask {
    /// `true` keeps the weight.
    pub mask: Vec<bool>,
    pub sparsity: f64,
}

impl PruneMask {
    pub fn kept(&self) -> usize {
        self.mask.iter().filter(|&&k| k).count()
    }

    /// Zero every pruned entry of `values` in place.
    pub fn apply(&self, values: &mut [f64]) {
        for (v, &keep) in values.iter_mut().zip(&self.mask) {
            if !keep {
                *v = 0.0;
            }
        }
    }
}

/// Number of weights removed at this sparsity.
pub fn pruned_count(m: usize, sparsity: f64) -> usize {
    (sparsity * m as f64).floor() as usize
}

/// Zero the `floor(sparsity * m)` smallest-magnitude entries. Equal
/// magnitudes prune the lower index first.
pub fn prune_magnitude(a: &[f64], sparsity: f64) -> Result<PruneMask> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::invalid(format!("sparsity {sparsity} outside [0, 1)")));
    }
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| a[i].abs().total_cmp(&a[j].abs()).then(i.cmp(&j)));
    let mut mask = vec![true; a.len()];
    for &i in order.iter().take(pruned_count(a.len(), sparsity)) {
        mask[i] = false;
    }
    Ok(PruneMask { mask, sparsity })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareCodebook {
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
}

impl ShareCodebook {
    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn reconstruct(&self) -> Vec<f64> {
        self.assignments.iter().map(|&c| self.centroids[c]).collect()
    }

    /// Tied-weight gradient: each centroid gets the mean of its members'
    /// gradients. Empty clusters get zero.
    pub fn centroid_grad(&self, grad_a: &[f64]) -> Result<Vec<f64>> {
        check_len("parameter gradient", self.assignments.len(), grad_a.len())?;
        let c = self.centroids.len();
        let mut sum = vec![0.0; c];
        let mut count = vec![0usize; c];
        for (&k, g) in self.assignments.iter().zip(grad_a) {
            sum[k] += g;
            count[k] += 1;
        }
        Ok(sum
            .iter()
            .zip(&count)
            .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
            .collect())
    }
}

fn nearest(centroids: &[f64], v: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centroids.iter().enumerate() {
        let d = (v - c).abs();
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

/// 1-D k-means over parameter values: k-means++ seeding, then Lloyd
/// iterations until the largest centroid move is below [`KMEANS_TOL`] or
/// [`KMEANS_MAX_ITER`] is reached.
pub fn weight_share(a: &[f64], clusters: usize, seed: u64) -> Result<ShareCodebook> {
    let m = a.len();
    if clusters < 1 || clusters > m {
        return Err(Error::invalid(format!(
            "cluster count {clusters} outside [1, {m}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; m];
    let first = rng.gen_range(0..m);
    chosen[first] = true;
    let mut centroids = vec![a[first]];
    let mut d2: Vec<f64> = a.iter().map(|v| (v - a[first]).powi(2)).collect();
    while centroids.len() < clusters {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if *d > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the final sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // every value already coincides with a centroid
            chosen.iter().position(|&c| !c).unwrap()
        };
        chosen[pick] = true;
        centroids.push(a[pick]);
        for (d, v) in d2.iter_mut().zip(a) {
            *d = d.min((v - a[pick]).powi(2));
        }
    }

    let mut assignments: Vec<usize> = a.iter().map(|&v| nearest(&centroids, v)).collect();
    for _ in 0..KMEANS_MAX_ITER {
        let mut sum = vec![0.0; clusters];
        let mut count = vec![0usize; clusters];
        for (&k, v) in assignments.iter().zip(a) {
            sum[k] += v;
            count[k] += 1;
        }
        let mut shift: f64 = 0.0;
        for k in 0..clusters {
            if count[k] > 0 {
                let next = sum[k] / count[k] as f64;
                shift = shift.max((next - centroids[k]).abs());
                centroids[k] = next;
            }
        }
        assignments = a.iter().map(|&v| nearest(&centroids, v)).collect();
        if shift < KMEANS_TOL {
            break;
        }
    }
    Ok(ShareCodebook {
        centroids,
        assignments,
    })
}

/// What each training mode actually optimises.
#[derive(Debug, Clone, Copy)]
pub enum MethodState<'a> {
    Full { m: usize },
    Pruned(&'a PruneMask),
    Shared(&'a ShareCodebook),
    /// QT / QPA: circuit angles, mapping weights, plus any directly trained
    /// classical parameters (QPA's classical LoRA factors).
    Hybrid {
        circuit_params: usize,
        mapping_params: usize,
        classical_params: usize,
    },
}

pub fn trainable_count(state: MethodState<'_>) -> usize {
    match state {
        MethodState::Full { m } => m,
        MethodState::Pruned(mask) => mask.kept(),
        MethodState::Shared(book) => book.num_clusters(),
        MethodState::Hybrid {
            circuit_params,
            mapping_params,
            classical_params,
        } => circuit_params + mapping_params + classical_params,
    }
}
