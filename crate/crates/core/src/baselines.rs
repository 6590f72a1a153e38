//! Comparison estimators: the exhaustive least-squares oracle over all
//! permutations, singular value thresholding on an unfolding, and the
//! constant-block estimator driven by spectral k-means.

use itertools::Itertools;
use rand::Rng;
use rayon::prelude::*;

use crate::blockpoly::{evaluate_model, fit_block_polynomial, residual_sum_of_squares};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, STREAM_KMEANS};
use crate::tensor::{strides_of, DenseTensor, ModePermutations};

/// Largest symmetric dimension the exhaustive search accepts (d! candidates).
pub const EXHAUSTIVE_MAX_DIM: usize = 8;

/// Result of the exhaustive least-squares search.
#[derive(Debug, Clone)]
pub struct ExhaustiveFit {
    /// Globally optimal signal estimate (sorted frame).
    pub estimate: DenseTensor,
    /// The optimal shared permutation, lexicographically smallest on ties.
    pub perm: Vec<usize>,
    /// Residual sum of squares at the optimum.
    pub objective: f64,
}

impl ExhaustiveFit {
    pub fn estimate_in_observation_order(&self, order: usize) -> Result<DenseTensor> {
        let perms = ModePermutations::shared(self.perm.clone(), order)?;
        self.estimate.apply_permutation(&perms)
    }
}

/// Globally optimal block-polynomial fit over all shared permutations.
///
/// Enumerates every permutation of `[d]` in lexicographic order, fits the
/// block polynomial to the correspondingly sorted tensor, and keeps the
/// smallest residual (first permutation wins ties). Only the symmetric
/// single-permutation model is searched; refuses `d > 8`.
pub fn exhaustive_lse(y: &DenseTensor, blocks: &[usize], degree: usize) -> Result<ExhaustiveFit> {
    let d = y.dims()[0];
    if y.dims().iter().any(|&x| x != d) {
        return Err(Error::Shape(
            "exhaustive search requires a symmetric (equal-dims) tensor".into(),
        ));
    }
    if d > EXHAUSTIVE_MAX_DIM {
        return Err(Error::Refused(format!(
            "exhaustive search over {d}! permutations is infeasible; d must be <= {EXHAUSTIVE_MAX_DIM}"
        )));
    }
    let m = y.order();
    let perms: Vec<Vec<usize>> = (1..=d).permutations(d).collect();
    let best = perms
        .par_iter()
        .enumerate()
        .map(|(idx, perm)| {
            let obj = permutation_objective(y, perm, blocks, degree)?;
            Ok((obj, idx))
        })
        .reduce(
            || Ok::<(f64, usize), Error>((f64::INFINITY, usize::MAX)),
            |a, b| match (a, b) {
                (Err(e), _) | (_, Err(e)) => Err(e),
                (Ok(x), Ok(y)) => Ok(if (y.0, y.1) < (x.0, x.1) { y } else { x }),
            },
        )?;
    let (objective, idx) = best;
    let perm = perms[idx].clone();
    let sorted = sort_by_shared_perm(y, &perm, m)?;
    let model = fit_block_polynomial(&sorted, blocks, degree)?;
    let estimate = evaluate_model(&model);
    Ok(ExhaustiveFit {
        estimate,
        perm,
        objective,
    })
}

fn sort_by_shared_perm(y: &DenseTensor, perm: &[usize], m: usize) -> Result<DenseTensor> {
    let perms = ModePermutations::shared(perm.to_vec(), m)?;
    y.apply_permutation(&perms.inverse())
}

fn permutation_objective(
    y: &DenseTensor,
    perm: &[usize],
    blocks: &[usize],
    degree: usize,
) -> Result<f64> {
    let sorted = sort_by_shared_perm(y, perm, y.order())?;
    let model = fit_block_polynomial(&sorted, blocks, degree)?;
    residual_sum_of_squares(&sorted, &evaluate_model(&model))
}

/// Singular-value cutoff rule for [`spectral_usvt`].
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdRule {
    /// Absolute cutoff.
    Fixed(f64),
    /// Candidate cutoffs; the true-MSE minimizer is returned (needs truth).
    Grid(Vec<f64>),
    /// Evenly spaced cutoffs from 0 to the top singular value (needs truth).
    OracleGrid(usize),
    /// `2.02 * sigma_hat * sqrt(max dim of the unfolding)` with `sigma_hat`
    /// from the median absolute deviation of successive entry differences.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralConfig {
    /// Unfolding mode, 1-based.
    pub mode: usize,
    pub threshold: ThresholdRule,
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = match &self.threshold {
            ThresholdRule::Fixed(t) => t.is_finite() && *t >= 0.0,
            ThresholdRule::Grid(ts) => {
                !ts.is_empty() && ts.iter().all(|t| t.is_finite() && *t >= 0.0)
            }
            ThresholdRule::OracleGrid(n) => *n >= 1,
            ThresholdRule::Auto => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "thresholds must be finite and >= 0".into(),
            ))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralFit {
    pub estimate: DenseTensor,
    /// The cutoff actually applied.
    pub threshold: f64,
}

/// Universal singular value thresholding on an unfolding.
///
/// Unfolds along `cfg.mode`, zeroes all singular values below the cutoff and
/// refolds. Masked entries are imputed with the global observed mean before
/// the decomposition. Grid rules pick the cutoff minimizing true MSE against
/// `truth` (simulation-only oracle tuning).
pub fn spectral_usvt(
    y: &DenseTensor,
    cfg: &SpectralConfig,
    truth: Option<&DenseTensor>,
) -> Result<SpectralFit> {
    cfg.validate()?;
    let filled = impute_observed_mean(y);
    let mat = filled.unfold(cfg.mode)?;
    let svd = mat.clone().svd(true, true);
    let reconstruct = |cutoff: f64| -> Result<DenseTensor> {
        let u = svd.u.as_ref().expect("u requested");
        let v_t = svd.v_t.as_ref().expect("v_t requested");
        let mut scaled = u.clone();
        for (c, &s) in svd.singular_values.iter().enumerate() {
            let keep = if s >= cutoff { s } else { 0.0 };
            scaled.column_mut(c).scale_mut(keep);
        }
        let rec = scaled * v_t;
        DenseTensor::refold(&rec, y.dims(), cfg.mode)
    };

    let candidates: Vec<f64> = match &cfg.threshold {
        ThresholdRule::Fixed(t) => vec![*t],
        ThresholdRule::Grid(ts) => ts.clone(),
        ThresholdRule::OracleGrid(n) => {
            let top = svd.singular_values.max();
            // Slightly past the top so the all-zero reconstruction is a
            // candidate too.
            (0..=*n).map(|i| top * 1.0001 * i as f64 / *n as f64).collect()
        }
        ThresholdRule::Auto => {
            let sigma_hat = sigma_mad(&filled);
            let maxdim = mat.nrows().max(mat.ncols());
            vec![2.02 * sigma_hat * (maxdim as f64).sqrt()]
        }
    };

    if candidates.len() == 1 {
        return Ok(SpectralFit {
            estimate: reconstruct(candidates[0])?,
            threshold: candidates[0],
        });
    }
    let truth = truth.ok_or_else(|| {
        Error::InvalidArgument("threshold grid selection requires the true signal".into())
    })?;
    let mut best: Option<(f64, f64, DenseTensor)> = None;
    for &t in &candidates {
        let est = reconstruct(t)?;
        let mse = est.mse(truth)?;
        let better = match &best {
            None => true,
            Some((best_mse, _, _)) => mse < *best_mse,
        };
        if better {
            best = Some((mse, t, est));
        }
    }
    let (_, threshold, estimate) = best.expect("nonempty grid");
    Ok(SpectralFit {
        estimate,
        threshold,
    })
}

fn impute_observed_mean(y: &DenseTensor) -> DenseTensor {
    match y.mask() {
        None => y.clone(),
        Some(mask) => {
            let mean = y.observed_mean().unwrap_or(0.0);
            let values: Vec<f64> = y
                .values()
                .iter()
                .zip(mask.iter())
                .map(|(&v, &obs)| if obs { v } else { mean })
                .collect();
            DenseTensor::new(y.dims().to_vec(), values).expect("imputed values finite")
        }
    }
}

/// Robust noise scale from successive differences of observed entries:
/// `median(|diff - median(diff)|) / (0.6745 * sqrt(2))`.
fn sigma_mad(y: &DenseTensor) -> f64 {
    let mut diffs: Vec<f64> = y.values().windows(2).map(|w| w[1] - w[0]).collect();
    if diffs.is_empty() {
        return 0.0;
    }
    let med = median_inplace(&mut diffs);
    let mut abs: Vec<f64> = diffs.iter().map(|d| (d - med).abs()).collect();
    let mad = median_inplace(&mut abs);
    mad / (0.674_489_750_196_082 * std::f64::consts::SQRT_2)
}

fn median_inplace(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Constant-block fit with spectrally initialized k-means clusterings.
#[derive(Debug, Clone)]
pub struct BlockLseFit {
    pub estimate: DenseTensor,
    /// Learned per-mode cluster labels, 0-based.
    pub clusterings: Vec<Vec<usize>>,
}

/// Left singular vectors of every mode's unfolding, reusable across block
/// counts (the factorization does not depend on `k`).
#[derive(Debug, Clone)]
pub struct ModeFeatures {
    u: Vec<nalgebra::DMatrix<f64>>,
}

/// Factor each mode's (mean-imputed) unfolding once.
pub fn mode_features(y: &DenseTensor) -> Result<ModeFeatures> {
    let filled = impute_observed_mean(y);
    let u = (1..=y.order())
        .map(|mode| {
            let mat = filled.unfold(mode)?;
            let svd = mat.svd(true, false);
            Ok(svd.u.expect("u requested"))
        })
        .collect::<Result<_>>()?;
    Ok(ModeFeatures { u })
}

/// Block-mean estimator on learned (non-canonical) per-mode partitions.
///
/// Per mode: k-means (seeded k-means++ with 50 restarts) on the rows of the
/// leading left singular vectors of that mode's unfolding, then block
/// averaging of observed entries under the learned partition. Empty blocks
/// fall back to the global observed mean.
pub fn constant_block_lse(y: &DenseTensor, blocks: &[usize], seed: u64) -> Result<BlockLseFit> {
    let features = mode_features(y)?;
    constant_block_lse_with_features(y, &features, blocks, seed)
}

/// [`constant_block_lse`] with precomputed unfolding factors; use when
/// sweeping a grid of block counts on the same tensor.
pub fn constant_block_lse_with_features(
    y: &DenseTensor,
    features: &ModeFeatures,
    blocks: &[usize],
    seed: u64,
) -> Result<BlockLseFit> {
    if blocks.len() != y.order() {
        return Err(Error::Shape(format!(
            "{} block counts for an order-{} tensor",
            blocks.len(),
            y.order()
        )));
    }
    for (a, (&k, &d)) in blocks.iter().zip(y.dims().iter()).enumerate() {
        if k == 0 || k > d {
            return Err(Error::InvalidArgument(format!(
                "mode {}: block count {k} must satisfy 1 <= k <= {d}",
                a + 1
            )));
        }
    }
    let m = y.order();
    let clusterings: Vec<Vec<usize>> = (0..m)
        .map(|a| {
            let d = y.dims()[a];
            let k = blocks[a];
            if k == 1 {
                return Ok(vec![0usize; d]);
            }
            if k == d {
                return Ok((0..d).collect());
            }
            let u = &features.u[a];
            if u.nrows() != d {
                return Err(Error::Shape(
                    "mode features do not match the tensor dims".into(),
                ));
            }
            let feats = k.min(u.ncols());
            let points: Vec<Vec<f64>> = (0..d)
                .map(|r| (0..feats).map(|c| u[(r, c)]).collect())
                .collect();
            let mut rng = derive_rng(seed, &[STREAM_KMEANS, a as u64]);
            Ok(kmeans(&points, k, 50, &mut rng))
        })
        .collect::<Result<_>>()?;

    // Block means over observed entries.
    let block_strides = strides_of(blocks);
    let total_blocks: usize = blocks.iter().product();
    let mut sums = vec![0.0f64; total_blocks];
    let mut counts = vec![0usize; total_blocks];
    let dims = y.dims();
    let mut idx = vec![0usize; m];
    for flat in 0..y.len() {
        if y.is_observed(flat) {
            let bid: usize = (0..m)
                .map(|a| clusterings[a][idx[a]] * block_strides[a])
                .sum();
            sums[bid] += y.values()[flat];
            counts[bid] += 1;
        }
        for a in (0..m).rev() {
            idx[a] += 1;
            if idx[a] < dims[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    let global = y.observed_mean().unwrap_or(0.0);
    let means: Vec<f64> = sums
        .iter()
        .zip(counts.iter())
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { global })
        .collect();

    let mut values = vec![0.0f64; y.len()];
    let mut idx = vec![0usize; m];
    for value in values.iter_mut() {
        let bid: usize = (0..m)
            .map(|a| clusterings[a][idx[a]] * block_strides[a])
            .sum();
        *value = means[bid];
        for a in (0..m).rev() {
            idx[a] += 1;
            if idx[a] < dims[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Ok(BlockLseFit {
        estimate: DenseTensor::new(dims.to_vec(), values)?,
        clusterings,
    })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd k-means with k-means++ seeding; returns 0-based labels of the best
/// of `restarts` runs by within-cluster sum of squares.
fn kmeans<R: Rng>(points: &[Vec<f64>], k: usize, restarts: usize, rng: &mut R) -> Vec<usize> {
    let n = points.len();
    debug_assert!(k >= 1 && k <= n);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts {
        let (wcss, labels) = kmeans_once(points, k, rng);
        let better = match &best {
            None => true,
            Some((b, _)) => wcss < *b,
        };
        if better {
            best = Some((wcss, labels));
        }
    }
    best.expect("at least one restart").1
}

fn kmeans_once<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> (f64, Vec<usize>) {
    let n = points.len();
    let f = points[0].len();

    // k-means++ seeding.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            let d = dist2(p, centers.last().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }

    let mut labels = vec![0usize; n];
    for _iter in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best_c = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = dist2(p, center);
                if d < best_d {
                    best_d = d;
                    best_c = c;
                }
            }
            if labels[i] != best_c {
                labels[i] = best_c;
                changed = true;
            }
        }
        if !changed && _iter > 0 {
            break;
        }
        // Recompute centers; an emptied cluster is reseeded at the point
        // farthest from its current center.
        let mut sums = vec![vec![0.0f64; f]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, &x) in sums[labels[i]].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&i, &j| {
                        dist2(&points[i], &centers[labels[i]])
                            .total_cmp(&dist2(&points[j], &centers[labels[j]]))
                    })
                    .unwrap();
                centers[c] = points[far].clone();
                labels[far] = c;
                counts[c] = 1;
            } else {
                for (s, sum) in centers[c].iter_mut().zip(sums[c].iter()) {
                    *s = sum / counts[c] as f64;
                }
            }
        }
    }
    let wcss: f64 = points
        .iter()
        .zip(labels.iter())
        .map(|(p, &c)| dist2(p, &centers[c]))
        .sum();
    (wcss, labels)
}
