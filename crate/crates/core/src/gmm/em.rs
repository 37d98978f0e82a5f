//! Expectation-maximization for a single Gaussian mixture.

use alloc::vec;
use alloc::vec::Vec;

use super::{log_sum_exp, Covariance, CovarianceKind, GaussianComponent, GmmError, TrainingConfig};
use crate::linalg;
use crate::rng::SeededRng;

/// Per-iteration diagnostics of one EM run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmTrace {
    /// Total log-likelihood of the parameters at each E step, starting with
    /// the initialization.
    pub log_likelihood: Vec<f64>,
    /// Largest `|Σ_k r_nk - 1|` over samples at each E step.
    pub responsibility_error: Vec<f64>,
    pub converged: bool,
}

impl EmTrace {
    pub fn iterations(&self) -> usize {
        self.log_likelihood.len().saturating_sub(1)
    }

    /// Largest drop between consecutive log-likelihoods (0 when monotone).
    pub fn max_decrease(&self) -> f64 {
        self.log_likelihood.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
    }
}

/// Fits a `k`-component mixture to `samples`.
///
/// Means are seeded by k-means++, covariances start at the pooled sample
/// covariance and weights at `1/k`. E and M steps alternate until the total
/// log-likelihood changes by less than the configured tolerance or the
/// iteration cap is reached.
pub fn em_fit(
    samples: &[&[f64]],
    k: usize,
    config: &TrainingConfig,
    rng: &mut SeededRng,
) -> Result<(Vec<GaussianComponent>, EmTrace), GmmError> {
    let n = samples.len();
    if k == 0 {
        return Err(GmmError::InvalidConfig("components_per_class must be at least 1"));
    }
    if n < k + 1 {
        return Err(GmmError::InsufficientSamples { label: Default::default(), count: n, needed: k + 1 });
    }
    let dim = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
        return Err(GmmError::DimensionMismatch { expected: dim, got: bad.len() });
    }

    let mut components = initialize(samples, k, config, rng)?;
    let mut trace = EmTrace::default();
    let mut resp = vec![0.0; n * k];
    let mut terms = vec![0.0; k];

    for iter in 0..=config.max_iterations {
        // E step
        let mut total = 0.0;
        let mut worst = 0.0f64;
        for (i, x) in samples.iter().enumerate() {
            for (j, c) in components.iter().enumerate() {
                let lp =
                    c.log_pdf(x).ok_or(GmmError::SingularCovariance { label: Default::default(), component: j })?;
                terms[j] = libm::log(c.weight) + lp;
            }
            let lse = log_sum_exp(&terms);
            total += lse;
            let row = &mut resp[i * k..(i + 1) * k];
            let mut sum = 0.0;
            for (r, t) in row.iter_mut().zip(&terms) {
                *r = libm::exp(t - lse);
                sum += *r;
            }
            worst = worst.max((sum - 1.0).abs());
        }
        let previous = trace.log_likelihood.last().copied();
        trace.log_likelihood.push(total);
        trace.responsibility_error.push(worst);
        if previous.is_some_and(|p| (total - p).abs() < config.log_likelihood_tolerance) {
            trace.converged = true;
            break;
        }
        if iter == config.max_iterations {
            break;
        }
        maximize(samples, &resp, &mut components, config)?;
    }
    Ok((components, trace))
}

fn initialize(
    samples: &[&[f64]],
    k: usize,
    config: &TrainingConfig,
    rng: &mut SeededRng,
) -> Result<Vec<GaussianComponent>, GmmError> {
    let dim = samples[0].len();
    let centers = kmeans_pp(samples, k, rng);
    let uniform = vec![1.0; samples.len()];
    let mean = weighted_mean(samples, &uniform, 1, 0);
    let covariance = weighted_covariance(samples, &uniform, 1, 0, &mean, samples.len() as f64, config)
        .ok_or(GmmError::SingularCovariance { label: Default::default(), component: 0 })?;
    debug_assert_eq!(mean.len(), dim);
    Ok(centers
        .into_iter()
        .map(|c| GaussianComponent {
            weight: 1.0 / k as f64,
            mean: samples[c].to_vec(),
            covariance: covariance.clone(),
        })
        .collect())
}

/// k-means++ seeding: the first center uniformly, each further one with
/// probability proportional to its squared distance to the nearest chosen
/// center. Falls back to uniform draws when all remaining distances are zero.
fn kmeans_pp(samples: &[&[f64]], k: usize, rng: &mut SeededRng) -> Vec<usize> {
    let n = samples.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(rng.below(n));
    let mut d2: Vec<f64> = samples.iter().map(|x| sq_dist(x, samples[centers[0]])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.next_f64() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.below(n)
        };
        centers.push(next);
        for (i, x) in samples.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, samples[next]));
        }
    }
    centers
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn weighted_mean(samples: &[&[f64]], resp: &[f64], k: usize, j: usize) -> Vec<f64> {
    let dim = samples[0].len();
    let mut mean = vec![0.0; dim];
    let mut nk = 0.0;
    for (i, x) in samples.iter().enumerate() {
        let r = resp[i * k + j];
        nk += r;
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += r * v;
        }
    }
    for m in &mut mean {
        *m /= nk;
    }
    mean
}

/// Biased weighted covariance, regularized as the constrained maximizer of the
/// M-step objective: diagonal variances are clamped to the variance floor,
/// full matrices have their eigenvalues raised to at least `ridge_lambda`.
/// Both constraints are fixed sets, so EM stays monotone.
fn weighted_covariance(
    samples: &[&[f64]],
    resp: &[f64],
    k: usize,
    j: usize,
    mean: &[f64],
    nk: f64,
    config: &TrainingConfig,
) -> Option<Covariance> {
    let dim = mean.len();
    match config.covariance_kind {
        CovarianceKind::Diagonal => {
            let mut var = vec![0.0; dim];
            for (i, x) in samples.iter().enumerate() {
                let r = resp[i * k + j];
                for d in 0..dim {
                    let dx = x[d] - mean[d];
                    var[d] += r * dx * dx;
                }
            }
            for v in &mut var {
                *v = (*v / nk).max(config.variance_floor);
            }
            Some(Covariance::Diagonal(var))
        }
        CovarianceKind::Full => {
            let mut cov = vec![0.0; dim * dim];
            let mut dx = vec![0.0; dim];
            for (i, x) in samples.iter().enumerate() {
                let r = resp[i * k + j];
                for d in 0..dim {
                    dx[d] = x[d] - mean[d];
                }
                for a in 0..dim {
                    for b in 0..=a {
                        cov[a * dim + b] += r * dx[a] * dx[b];
                    }
                }
            }
            for a in 0..dim {
                for b in 0..=a {
                    let v = cov[a * dim + b] / nk;
                    cov[a * dim + b] = v;
                    cov[b * dim + a] = v;
                }
            }
            let cov = linalg::floor_eigenvalues(&cov, dim, config.ridge_lambda.max(config.variance_floor));
            linalg::cholesky(&cov, dim)?;
            Some(Covariance::Full(cov))
        }
    }
}

fn maximize(
    samples: &[&[f64]],
    resp: &[f64],
    components: &mut [GaussianComponent],
    config: &TrainingConfig,
) -> Result<(), GmmError> {
    let k = components.len();
    let n = samples.len() as f64;
    for (j, comp) in components.iter_mut().enumerate() {
        let nk: f64 = (0..samples.len()).map(|i| resp[i * k + j]).sum();
        if !(nk > 1e-300) {
            // no sample claims this component any more; keep its shape and
            // give it a vanishing weight instead of dividing by zero
            comp.weight = f64::MIN_POSITIVE;
            continue;
        }
        let mean = weighted_mean(samples, resp, k, j);
        let covariance = weighted_covariance(samples, resp, k, j, &mean, nk, config)
            .ok_or(GmmError::SingularCovariance { label: Default::default(), component: j })?;
        comp.weight = nk / n;
        comp.mean = mean;
        comp.covariance = covariance;
    }
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in components.iter_mut() {
        c.weight /= total;
    }
    Ok(())
}
