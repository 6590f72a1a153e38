//! The two-stage Borda count estimator: slice-average scores, sorting-based
//! permutation estimation, block-polynomial fitting of the sorted tensor,
//! closed-form hyperparameter defaults, and cross-validated tuning.

use rand::Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::blockpoly::{
    evaluate_model, fit_block_polynomial, residual_sum_of_squares, BlockPolynomialModel,
};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, STREAM_CV};
use crate::tensor::{DenseTensor, ModePermutations};

/// Empirical score of one mode: per-slice observed means and their stable
/// ascending argsort.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreProfile {
    mode: usize,
    tau: Vec<f64>,
    sort_order: Vec<usize>,
}

impl ScoreProfile {
    pub fn mode(&self) -> usize {
        self.mode
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    /// 1-based index of the r-th smallest score; ties keep original order.
    pub fn sort_order(&self) -> &[usize] {
        &self.sort_order
    }
}

/// Slice-average score along `mode` (1-based): `tau(i)` is the mean of all
/// observed entries whose mode index equals `i`. A slice with no observed
/// entries scores at the global observed mean so it sorts neutrally.
pub fn score(y: &DenseTensor, mode: usize) -> Result<ScoreProfile> {
    let a = y.check_mode(mode)?;
    let d = y.dims()[a];
    let stride = y.strides()[a];
    let mut sums = vec![0.0f64; d];
    let mut counts = vec![0usize; d];
    let mut total = 0.0;
    let mut total_count = 0usize;
    for flat in 0..y.len() {
        if y.is_observed(flat) {
            let i = (flat / stride) % d;
            let v = y.values()[flat];
            sums[i] += v;
            counts[i] += 1;
            total += v;
            total_count += 1;
        }
    }
    let global = if total_count > 0 {
        total / total_count as f64
    } else {
        0.0
    };
    let tau: Vec<f64> = sums
        .iter()
        .zip(counts.iter())
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { global })
        .collect();
    let mut sort_order: Vec<usize> = (1..=d).collect();
    sort_order.sort_by(|&i, &j| tau[i - 1].total_cmp(&tau[j - 1]));
    Ok(ScoreProfile {
        mode,
        tau,
        sort_order,
    })
}

/// The sorting permutation `pi_hat`: `tau o pi_hat^{-1}` is nondecreasing,
/// with ties broken by ascending original index.
pub fn sort_permutation(profile: &ScoreProfile) -> Vec<usize> {
    let d = profile.sort_order.len();
    let mut perm = vec![0usize; d];
    for (r, &idx) in profile.sort_order.iter().enumerate() {
        perm[idx - 1] = r + 1;
    }
    perm
}

/// How permutations are estimated across modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PermutationStrategy {
    /// One permutation from the mode-1 score, shared by all modes. Requires
    /// equal dims; intended for symmetric signals.
    Shared,
    /// An independent score and permutation per mode.
    PerMode,
}

/// Estimate `pi_hat` for every mode under the given strategy.
pub fn estimate_permutations(
    y: &DenseTensor,
    strategy: PermutationStrategy,
) -> Result<ModePermutations> {
    match strategy {
        PermutationStrategy::Shared => {
            let d = y.dims()[0];
            if y.dims().iter().any(|&x| x != d) {
                return Err(Error::Shape(
                    "shared permutation strategy requires equal dims".into(),
                ));
            }
            let perm = sort_permutation(&score(y, 1)?);
            ModePermutations::shared(perm, y.order())
        }
        PermutationStrategy::PerMode => {
            let perms = (1..=y.order())
                .map(|mode| Ok(sort_permutation(&score(y, mode)?)))
                .collect::<Result<Vec<_>>>()?;
            ModePermutations::new(perms)
        }
    }
}

/// Output of the two-stage estimator.
#[derive(Debug, Clone)]
pub struct BordaFit {
    /// Estimated mode permutations `pi_hat`.
    pub perms: ModePermutations,
    /// Fitted block-polynomial model of the sorted observation.
    pub model: BlockPolynomialModel,
    /// `Theta_hat`: the model evaluated on the grid (sorted frame).
    pub estimate: DenseTensor,
    /// Sum of squared residuals of the fit on the sorted observation.
    pub objective: f64,
}

impl BordaFit {
    /// `Theta_hat o pi_hat`, the estimate aligned with the observation frame
    /// (the quantity compared against `Theta o pi`).
    pub fn estimate_in_observation_order(&self) -> Result<DenseTensor> {
        self.estimate.apply_permutation(&self.perms)
    }
}

/// Sort the observation by its score permutations, then fit a block-wise
/// polynomial to the sorted tensor.
pub fn borda_denoise(
    y: &DenseTensor,
    blocks: &[usize],
    degree: usize,
    strategy: PermutationStrategy,
) -> Result<BordaFit> {
    let perms = estimate_permutations(y, strategy)?;
    let sorted = y.apply_permutation(&perms.inverse())?;
    let model = fit_block_polynomial(&sorted, blocks, degree)?;
    let estimate = evaluate_model(&model);
    let objective = residual_sum_of_squares(&sorted, &estimate)?;
    Ok(BordaFit {
        perms,
        model,
        estimate,
        objective,
    })
}

/// Which rule produced a hyperparameter plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HyperparameterRule {
    /// Smoothness-only optimum (no monotonicity input).
    SmoothnessOnly,
    /// Monotonicity-aware optimum using the score exponent `beta`.
    MonotonicityAware,
    /// Selected by cross-validation.
    CrossValidated,
}

/// A resolved `(k, degree)` choice together with the inputs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HyperparameterPlan {
    pub degree_star: usize,
    pub blocks_star: Vec<usize>,
    #[serde(serialize_with = "ser_maybe_inf")]
    pub alpha_used: Option<f64>,
    #[serde(serialize_with = "ser_maybe_inf")]
    pub beta_used: Option<f64>,
    pub rule: HyperparameterRule,
}

fn ser_maybe_inf<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        None => s.serialize_none(),
        Some(x) if x.is_infinite() => s.serialize_str("inf"),
        Some(x) => s.serialize_f64(*x),
    }
}

/// Degree cap beyond which extra smoothness stops helping: `(m-2)(m+1)/2`,
/// clamped at zero.
fn degree_cap(m: usize) -> usize {
    let m = m as i64;
    (((m - 2) * (m + 1)) / 2).max(0) as usize
}

/// Monotonicity constant `c(alpha, beta, m)`; infinite when the clamped
/// denominator vanishes.
pub fn monotonicity_constant(alpha: f64, beta: f64, m: usize) -> f64 {
    let m = m as f64;
    let s = (m - 1.0) * beta * alpha.min(1.0);
    let denom = 2.0 * (m - s);
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        m * s / denom
    }
}

/// Closed-form `(k*, degree*)` defaults.
///
/// Without `beta`: `degree* = min(floor(alpha), (m-2)(m+1)/2)`. With `beta`:
/// `degree* = min(floor(alpha), floor(c(alpha, beta, m)))`. Per mode,
/// `k* = round(d^(m / (m + 2 min(alpha, degree* + 1))))` clipped to `[1, d]`.
pub fn optimal_hyperparameters(
    dims: &[usize],
    alpha: f64,
    beta: Option<f64>,
) -> Result<HyperparameterPlan> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "alpha must be >= 0, got {alpha}"
        )));
    }
    if let Some(b) = beta {
        if b.is_nan() || b < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "beta must be >= 0, got {b}"
            )));
        }
    }
    if dims.is_empty() {
        return Err(Error::Shape("empty dims".into()));
    }
    let m = dims.len();
    let cap = match beta {
        None => degree_cap(m) as f64,
        Some(b) => monotonicity_constant(alpha, b, m).floor(),
    };
    let degree_star = alpha.floor().min(cap).max(0.0);
    let degree_star = if degree_star.is_finite() {
        degree_star as usize
    } else {
        // Both floor(alpha) and the cap are infinite only in the beta branch;
        // fall back to the smoothness cap.
        degree_cap(m)
    };
    let exponent = m as f64 / (m as f64 + 2.0 * alpha.min(degree_star as f64 + 1.0));
    let blocks_star = dims
        .iter()
        .map(|&d| {
            let k = (d as f64).powf(exponent).round() as usize;
            k.clamp(1, d)
        })
        .collect();
    Ok(HyperparameterPlan {
        degree_star,
        blocks_star,
        alpha_used: Some(alpha),
        beta_used: beta,
        rule: if beta.is_some() {
            HyperparameterRule::MonotonicityAware
        } else {
            HyperparameterRule::SmoothnessOnly
        },
    })
}

/// Normalized maximum displacement `max_i |pi(i) - pi_hat(i)| / d`.
pub fn permutation_loss(truth: &[usize], estimate: &[usize]) -> Result<f64> {
    if truth.len() != estimate.len() || truth.is_empty() {
        return Err(Error::Shape(format!(
            "permutation lengths differ: {} vs {}",
            truth.len(),
            estimate.len()
        )));
    }
    let d = truth.len();
    let max_disp = truth
        .iter()
        .zip(estimate.iter())
        .map(|(&a, &b)| a.abs_diff(b))
        .max()
        .unwrap_or(0);
    Ok(max_disp as f64 / d as f64)
}

/// Mask a random fraction of `y`'s observed entries.
///
/// Returns the training tensor (holdout marked unobserved) and the flat
/// offsets of the held-out entries. Errors when the holdout would leave no
/// training data.
pub fn holdout_split<R: Rng>(
    y: &DenseTensor,
    fraction: f64,
    rng: &mut R,
) -> Result<(DenseTensor, Vec<usize>)> {
    if fraction.is_nan() || fraction <= 0.0 || fraction >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction must be in (0, 1), got {fraction}"
        )));
    }
    let mut observed: Vec<usize> = (0..y.len()).filter(|&i| y.is_observed(i)).collect();
    let n_obs = observed.len();
    if n_obs == 0 {
        return Err(Error::InvalidArgument("no observed entries".into()));
    }
    let n_hold = ((fraction * n_obs as f64).round() as usize).max(1);
    if n_hold >= n_obs {
        return Err(Error::Domain(
            "holdout leaves an empty training set".into(),
        ));
    }
    for i in 0..n_hold {
        let j = rng.gen_range(i..n_obs);
        observed.swap(i, j);
    }
    let holdout = observed[..n_hold].to_vec();
    let mut mask: Vec<bool> = match y.mask() {
        Some(m) => m.to_vec(),
        None => vec![true; y.len()],
    };
    for &flat in &holdout {
        mask[flat] = false;
    }
    let train = y.with_replaced_mask(mask)?;
    Ok((train, holdout))
}

/// Mean squared prediction error of `pred` against `truth` over `flats`.
pub fn heldout_mse(pred: &DenseTensor, truth: &DenseTensor, flats: &[usize]) -> Result<f64> {
    if pred.dims() != truth.dims() {
        return Err(Error::Shape("held-out shapes differ".into()));
    }
    if flats.is_empty() {
        return Err(Error::InvalidArgument("empty holdout".into()));
    }
    let mut sum = 0.0;
    for &flat in flats {
        let d = pred.values()[flat] - truth.values()[flat];
        sum += d * d;
    }
    Ok(sum / flats.len() as f64)
}

/// One evaluated cross-validation cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvCell {
    pub blocks: Vec<usize>,
    pub degree: usize,
    pub fold_mse: Vec<f64>,
    pub mean_mse: f64,
}

/// Grid search over `(blocks, degree)` by repeated random holdout.
///
/// Each fold masks the same `holdout_fraction` of observed entries for every
/// cell (fold masks are derived from `(master_seed, fold)`, so cells are
/// compared on identical splits and may be evaluated in parallel). Returns
/// the plan minimizing mean held-out MSE, ties broken toward smaller degree
/// and then smaller blocks, plus the full table.
pub fn cross_validate(
    y: &DenseTensor,
    k_grid: &[Vec<usize>],
    l_grid: &[usize],
    holdout_fraction: f64,
    folds: usize,
    master_seed: u64,
    strategy: PermutationStrategy,
) -> Result<(HyperparameterPlan, Vec<CvCell>)> {
    if k_grid.is_empty() || l_grid.is_empty() {
        return Err(Error::InvalidArgument("empty hyperparameter grid".into()));
    }
    if folds == 0 {
        return Err(Error::InvalidArgument("folds must be >= 1".into()));
    }
    let splits: Vec<(DenseTensor, Vec<usize>)> = (0..folds)
        .map(|f| {
            let mut rng = derive_rng(master_seed, &[STREAM_CV, f as u64]);
            holdout_split(y, holdout_fraction, &mut rng)
        })
        .collect::<Result<_>>()?;

    let mut cells: Vec<(Vec<usize>, usize)> = Vec::new();
    for &l in l_grid {
        for k in k_grid {
            cells.push((k.clone(), l));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..folds).map(move |f| (c, f)))
        .collect();
    let mses: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (blocks, degree) = &cells[c];
            let (train, holdout) = &splits[f];
            let fit = borda_denoise(train, blocks, *degree, strategy)?;
            let pred = fit.estimate_in_observation_order()?;
            heldout_mse(&pred, y, holdout)
        })
        .collect();

    let mut table: Vec<CvCell> = Vec::with_capacity(cells.len());
    for (c, (blocks, degree)) in cells.iter().enumerate() {
        let mut fold_mse = Vec::with_capacity(folds);
        for f in 0..folds {
            match &mses[c * folds + f] {
                Ok(v) => fold_mse.push(*v),
                Err(e) => {
                    return Err(Error::InvalidArgument(format!(
                        "cv cell (k={blocks:?}, degree={degree}) failed: {e}"
                    )))
                }
            }
        }
        let mean_mse = fold_mse.iter().sum::<f64>() / folds as f64;
        table.push(CvCell {
            blocks: blocks.clone(),
            degree: *degree,
            fold_mse,
            mean_mse,
        });
    }

    let mut order: Vec<usize> = (0..table.len()).collect();
    order.sort_by(|&i, &j| {
        (table[i].degree, &table[i].blocks).cmp(&(table[j].degree, &table[j].blocks))
    });
    let mut best = order[0];
    for &i in &order[1..] {
        if table[i].mean_mse < table[best].mean_mse {
            best = i;
        }
    }
    let plan = HyperparameterPlan {
        degree_star: table[best].degree,
        blocks_star: table[best].blocks.clone(),
        alpha_used: None,
        beta_used: None,
        rule: HyperparameterRule::CrossValidated,
    };
    Ok((plan, table))
}
