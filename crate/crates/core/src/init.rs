//! Starting partitions: k-means++ on the mean-imputed data, or random soft
//! assignments. Random draws are taken in a canonical row order, so a
//! permutation of the input rows yields the same starts.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// RNG for one start: stream `start` of the ChaCha generator keyed by `seed`.
pub fn start_rng(seed: u64, start: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(start as u64);
    rng
}

/// Row-major copy with missing cells replaced by observed column means.
pub fn mean_impute(ds: &Dataset) -> Vec<f64> {
    let (n, d) = (ds.n(), ds.d());
    let means: Vec<f64> = (0..d)
        .map(|j| {
            let (sum, count) = (0..n)
                .filter_map(|i| ds.get(i, j))
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        })
        .collect();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            out.push(ds.get(i, j).unwrap_or(means[j]));
        }
    }
    out
}

/// Row indices sorted by (mask, observed values) so that random draws do not
/// depend on the order rows were supplied in.
pub fn canonical_order(ds: &Dataset) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ds.n()).collect();
    order.sort_by(|&a, &b| {
        let key = |i: usize| (0..ds.d()).map(move |j| ds.get(i, j));
        for (x, y) in key(a).zip(key(b)) {
            let ord = match (x, y) {
                (None, None) => Ordering::Equal,
                (None, Some(_)) => Ordering::Less,
                (Some(_), None) => Ordering::Greater,
                (Some(x), Some(y)) => x.total_cmp(&y),
            };
            if ord != Ordering::Equal {
                return ord;
            }
        }
        a.cmp(&b)
    });
    order
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Hard k-means labels from `restarts` k-means++ seedings, keeping the run
/// with the smallest within-cluster sum of squares. `order` fixes the row
/// order used for random draws.
pub fn kmeans_labels(
    data: &[f64],
    d: usize,
    k: usize,
    restarts: usize,
    order: &[usize],
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let n = data.len() / d;
    if n < k {
        return Err(Error::Contract(format!("{n} rows cannot seed {k} clusters")));
    }
    let row = |i: usize| &data[i * d..(i + 1) * d];
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts {
        let mut centers: Vec<Vec<f64>> = vec![row(order[rng.random_range(0..n)]).to_vec()];
        let mut d2: Vec<f64> = order.iter().map(|&i| sq_dist(row(i), &centers[0])).collect();
        while centers.len() < k {
            let total: f64 = d2.iter().sum();
            let pick = if total > 0.0 {
                let mut target = rng.random::<f64>() * total;
                let mut chosen = n - 1;
                for (pos, &w) in d2.iter().enumerate() {
                    if target < w {
                        chosen = pos;
                        break;
                    }
                    target -= w;
                }
                chosen
            } else {
                rng.random_range(0..n)
            };
            centers.push(row(order[pick]).to_vec());
            let c = centers.last().unwrap();
            for (pos, &i) in order.iter().enumerate() {
                d2[pos] = d2[pos].min(sq_dist(row(i), c));
            }
        }

        let mut labels = vec![0usize; n];
        for _ in 0..100 {
            let mut changed = false;
            for i in 0..n {
                let mut best_c = 0;
                let mut best_d = f64::INFINITY;
                for (c, center) in centers.iter().enumerate() {
                    let dist = sq_dist(row(i), center);
                    if dist < best_d {
                        best_d = dist;
                        best_c = c;
                    }
                }
                if labels[i] != best_c {
                    labels[i] = best_c;
                    changed = true;
                }
            }
            let mut sums = vec![vec![0.0; d]; k];
            let mut counts = vec![0usize; k];
            for i in 0..n {
                counts[labels[i]] += 1;
                for (s, v) in sums[labels[i]].iter_mut().zip(row(i)) {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                }
            }
            if !changed {
                break;
            }
        }
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        if counts.contains(&0) {
            continue;
        }
        let inertia: f64 = (0..n).map(|i| sq_dist(row(i), &centers[labels[i]])).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    best.map(|(_, l)| l)
        .ok_or_else(|| Error::Contract("every k-means restart left a cluster empty".into()))
}

/// Hard partition as an n×k indicator matrix.
pub fn one_hot(labels: &[usize], k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(labels.len(), k, |i, g| if labels[i] == g { 1.0 } else { 0.0 })
}

/// Rows drawn from a flat Dirichlet, assigned in canonical order.
pub fn random_soft(n: usize, k: usize, order: &[usize], rng: &mut impl Rng) -> DMatrix<f64> {
    let gamma = Gamma::new(1.0, 1.0).expect("valid gamma");
    let mut z = DMatrix::zeros(n, k);
    for &i in order {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng) + 1e-12).collect();
        let total: f64 = draws.iter().sum();
        for (g, v) in draws.into_iter().enumerate() {
            z[(i, g)] = v / total;
        }
    }
    z
}

/// Weighted moments of the imputed data under soft assignment `z`:
/// proportions, means and covariances with a small diagonal floor.
pub fn weighted_moments(
    data: &[f64],
    d: usize,
    z: &DMatrix<f64>,
) -> Result<(Vec<f64>, Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
    let n = z.nrows();
    let k = z.ncols();
    let row = |i: usize| DVector::from_column_slice(&data[i * d..(i + 1) * d]);

    let grand: DVector<f64> = (0..n).fold(DVector::zeros(d), |acc, i| acc + row(i)) / n as f64;
    let total_trace: f64 = (0..n).map(|i| (row(i) - &grand).norm_squared()).sum::<f64>() / n as f64;
    let floor = 1e-6 * (total_trace / d as f64).max(f64::MIN_POSITIVE);

    let mut pi = Vec::with_capacity(k);
    let mut mus = Vec::with_capacity(k);
    let mut sigmas = Vec::with_capacity(k);
    for g in 0..k {
        let mass: f64 = z.column(g).sum();
        if !(mass > 0.0) {
            return Err(Error::EmptyComponent {
                component: g,
                mass,
                threshold: 0.0,
            });
        }
        let mu = (0..n).fold(DVector::zeros(d), |acc, i| acc + row(i) * z[(i, g)]) / mass;
        let mut s = DMatrix::zeros(d, d);
        for i in 0..n {
            let e = row(i) - &mu;
            s.ger(z[(i, g)], &e, &e, 1.0);
        }
        s /= mass;
        for j in 0..d {
            s[(j, j)] += floor;
        }
        pi.push(mass / n as f64);
        mus.push(mu);
        sigmas.push(s);
    }
    Ok((pi, mus, sigmas))
}

/// Initial soft assignment for start `start`: k-means++ for start 0, a
/// random soft partition otherwise.
pub fn initial_assignment(
    ds: &Dataset,
    imputed: &[f64],
    k: usize,
    start: usize,
    seed: u64,
    kmeans_restarts: usize,
) -> Result<DMatrix<f64>> {
    let order = canonical_order(ds);
    let mut rng = start_rng(seed, start);
    if start == 0 || k == 1 {
        let labels = kmeans_labels(imputed, ds.d(), k, kmeans_restarts, &order, &mut rng)?;
        Ok(one_hot(&labels, k))
    } else {
        Ok(random_soft(ds.n(), k, &order, &mut rng))
    }
}
