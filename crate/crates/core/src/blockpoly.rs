//! Canonical clusterings, the block-wise polynomial tensor class, and masked
//! per-block least-squares fitting.
//!
//! A fitted model is piecewise polynomial on the m-way partition induced by
//! per-mode canonical clusterings: within each block, a polynomial of total
//! degree <= `degree` in the scaled index coordinates. Per-block coefficients
//! are solved independently (and in parallel) by least squares, with the
//! minimum-norm solution on rank deficiency.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{evaluate_signal, GenerativeFunction};
use crate::tensor::{strides_of, DenseTensor};

/// Deterministic partition of `[d]` into `k` contiguous, near-equal clusters:
/// `z(i) = ceil(k*i/d)` with 1-based indices and cluster labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalClustering {
    d: usize,
    k: usize,
    assignment: Vec<usize>,
}

impl CanonicalClustering {
    pub fn new(d: usize, k: usize) -> Result<Self> {
        if k == 0 || k > d {
            return Err(Error::InvalidArgument(format!(
                "cluster count {k} must satisfy 1 <= k <= d = {d}"
            )));
        }
        let assignment = (1..=d).map(|i| (k * i).div_ceil(d)).collect();
        Ok(CanonicalClustering { d, k, assignment })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Cluster label of index `i` (both 1-based).
    pub fn cluster_of(&self, i: usize) -> usize {
        self.assignment[i - 1]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Inclusive 1-based index range of cluster `j`.
    pub fn bounds(&self, j: usize) -> (usize, usize) {
        debug_assert!(j >= 1 && j <= self.k);
        let lo = (self.d * (j - 1)) / self.k + 1;
        let hi = (self.d * j) / self.k;
        (lo, hi)
    }

    pub fn sizes(&self) -> Vec<usize> {
        (1..=self.k)
            .map(|j| {
                let (lo, hi) = self.bounds(j);
                hi - lo + 1
            })
            .collect()
    }
}

/// `C(n, r)` without overflow for the small arguments used here.
pub fn binomial(n: usize, r: usize) -> usize {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc = 1usize;
    for i in 0..r {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// All exponent multi-indices `(a_1,..,a_m)` with total degree <= `degree`,
/// in graded order (total degree ascending, lexicographic descending within
/// a grade). The count is `C(degree + m, m)`.
pub fn monomial_basis(m: usize, degree: usize) -> Vec<Vec<usize>> {
    fn grade(m: usize, total: usize, out: &mut Vec<Vec<usize>>, prefix: &mut Vec<usize>) {
        if m == 1 {
            prefix.push(total);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for a in (0..=total).rev() {
            prefix.push(a);
            grade(m - 1, total - a, out, prefix);
            prefix.pop();
        }
    }
    let mut out = Vec::with_capacity(binomial(degree + m, m));
    for t in 0..=degree {
        grade(m, t, &mut out, &mut Vec::new());
    }
    out
}

/// A fitted member of the block-`k` degree-`l` polynomial tensor class.
///
/// Each block's polynomial is expressed in local coordinates
/// `x_a = (i_a - c_a) / d_a` centered at the block's grid midpoint `c`
/// (stored normalized as `anchor = c / d`). `coefficients[bid]` aligns with
/// `basis`; `bid` runs row-major over per-mode block labels. The record
/// serializes to JSON bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPolynomialModel {
    dims: Vec<usize>,
    blocks: Vec<usize>,
    degree: usize,
    basis: Vec<Vec<usize>>,
    anchors: Vec<Vec<f64>>,
    coefficients: Vec<Vec<f64>>,
}

impl BlockPolynomialModel {
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn basis(&self) -> &[Vec<usize>] {
        &self.basis
    }

    pub fn anchors(&self) -> &[Vec<f64>] {
        &self.anchors
    }

    pub fn coefficients(&self) -> &[Vec<f64>] {
        &self.coefficients
    }

    pub fn clusterings(&self) -> Result<Vec<CanonicalClustering>> {
        self.dims
            .iter()
            .zip(self.blocks.iter())
            .map(|(&d, &k)| CanonicalClustering::new(d, k))
            .collect()
    }
}

fn validate_blocks(dims: &[usize], blocks: &[usize]) -> Result<()> {
    if blocks.len() != dims.len() {
        return Err(Error::Shape(format!(
            "{} block counts for an order-{} tensor",
            blocks.len(),
            dims.len()
        )));
    }
    for (a, (&k, &d)) in blocks.iter().zip(dims.iter()).enumerate() {
        if k == 0 || k > d {
            return Err(Error::InvalidArgument(format!(
                "mode {}: block count {k} must satisfy 1 <= k <= {d}",
                a + 1
            )));
        }
    }
    Ok(())
}

/// Masked block-wise polynomial least squares on an already-sorted tensor.
///
/// For every block the coefficients minimize the sum of squared residuals
/// over the block's observed entries; rank-deficient local designs get the
/// minimum-norm solution, and blocks with no observed entries fall back to a
/// constant at the global observed mean.
pub fn fit_block_polynomial(
    y: &DenseTensor,
    blocks: &[usize],
    degree: usize,
) -> Result<BlockPolynomialModel> {
    validate_blocks(y.dims(), blocks)?;
    let m = y.order();
    let dims = y.dims().to_vec();
    let clusterings: Vec<CanonicalClustering> = dims
        .iter()
        .zip(blocks.iter())
        .map(|(&d, &k)| CanonicalClustering::new(d, k))
        .collect::<Result<_>>()?;
    let basis = monomial_basis(m, degree);
    let global_mean = y.observed_mean().unwrap_or(0.0);
    let total_blocks: usize = blocks.iter().product();
    let block_strides = strides_of(blocks);

    let fits: Vec<(Vec<f64>, Vec<f64>)> = (0..total_blocks)
        .into_par_iter()
        .map(|bid| {
            let labels: Vec<usize> = (0..m)
                .map(|a| (bid / block_strides[a]) % blocks[a] + 1)
                .collect();
            let ranges: Vec<(usize, usize)> = labels
                .iter()
                .zip(clusterings.iter())
                .map(|(&j, z)| z.bounds(j))
                .collect();
            fit_one_block(y, &ranges, &basis, degree, global_mean)
        })
        .collect();

    let (anchors, coefficients) = fits.into_iter().unzip();
    Ok(BlockPolynomialModel {
        dims,
        blocks: blocks.to_vec(),
        degree,
        basis,
        anchors,
        coefficients,
    })
}

/// Fit a single block; returns `(anchor, coefficients)` in the stored
/// `(i - c)/d` parameterization.
fn fit_one_block(
    y: &DenseTensor,
    ranges: &[(usize, usize)],
    basis: &[Vec<usize>],
    degree: usize,
    global_mean: f64,
) -> (Vec<f64>, Vec<f64>) {
    let m = ranges.len();
    let dims = y.dims();
    let strides = y.strides();
    let p = basis.len();

    let centers: Vec<f64> = ranges.iter().map(|&(lo, hi)| (lo + hi) as f64 / 2.0).collect();
    let anchor: Vec<f64> = centers
        .iter()
        .zip(dims.iter())
        .map(|(&c, &d)| c / d as f64)
        .collect();
    // Internal solves use half-width-scaled coordinates u in [-1, 1] for
    // conditioning; coefficients are rescaled to the (i - c)/d contract below.
    let scales: Vec<f64> = ranges
        .iter()
        .map(|&(lo, hi)| if hi > lo { (hi - lo) as f64 / 2.0 } else { 1.0 })
        .collect();
    let widths: Vec<usize> = ranges.iter().map(|&(lo, hi)| hi - lo + 1).collect();
    let offsets: Vec<Vec<usize>> = (0..m)
        .map(|a| {
            (0..widths[a])
                .map(|pos| strides[a] * (ranges[a].0 - 1 + pos))
                .collect()
        })
        .collect();

    // Degree 0: the masked block mean, kept as plain sum/count so the fit
    // equals per-block means exactly.
    if degree == 0 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for_each_block_entry(&widths, &offsets, |flat| {
            if y.is_observed(flat) {
                sum += y.values()[flat];
                count += 1;
            }
        });
        let value = if count > 0 {
            sum / count as f64
        } else {
            global_mean
        };
        return (anchor, vec![value]);
    }

    // Power tables: pows[a][pos][t] = u_a^t.
    let pows: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|a| {
            (0..widths[a])
                .map(|pos| {
                    let u = ((ranges[a].0 + pos) as f64 - centers[a]) / scales[a];
                    let mut row = vec![1.0f64; degree + 1];
                    for t in 1..=degree {
                        row[t] = row[t - 1] * u;
                    }
                    row
                })
                .collect()
        })
        .collect();

    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut phi = vec![0.0f64; p];
    let mut count = 0usize;
    let mut pos = vec![0usize; m];
    let total: usize = widths.iter().product();
    for _ in 0..total {
        let flat: usize = (0..m).map(|a| offsets[a][pos[a]]).sum();
        if y.is_observed(flat) {
            count += 1;
            for (e, exps) in basis.iter().enumerate() {
                let mut v = 1.0;
                for a in 0..m {
                    v *= pows[a][pos[a]][exps[a]];
                }
                phi[e] = v;
            }
            let yv = y.values()[flat];
            for r in 0..p {
                let pr = phi[r];
                rhs[r] += pr * yv;
                for c in r..p {
                    gram[(r, c)] += pr * phi[c];
                }
            }
        }
        for a in (0..m).rev() {
            pos[a] += 1;
            if pos[a] < widths[a] {
                break;
            }
            pos[a] = 0;
        }
    }

    if count == 0 {
        let mut coeffs = vec![0.0f64; p];
        coeffs[0] = global_mean;
        return (anchor, coeffs);
    }

    for r in 0..p {
        for c in 0..r {
            gram[(r, c)] = gram[(c, r)];
        }
    }
    let gamma = solve_min_norm(gram, rhs);

    // Rescale from u = (i - c)/s to the stored x = (i - c)/d coordinates.
    let coeffs: Vec<f64> = basis
        .iter()
        .zip(gamma.iter())
        .map(|(exps, &g)| {
            let mut factor = 1.0;
            for a in 0..m {
                for _ in 0..exps[a] {
                    factor *= dims[a] as f64 / scales[a];
                }
            }
            g * factor
        })
        .collect();
    (anchor, coeffs)
}

/// Minimum-norm least-squares solution from the normal equations: eigenvalues
/// below `1e-10 * lambda_max` are treated as rank deficiency and dropped.
fn solve_min_norm(gram: DMatrix<f64>, rhs: DVector<f64>) -> DVector<f64> {
    let p = rhs.len();
    let eig = gram.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |acc, &l| acc.max(l));
    if max_ev <= 0.0 {
        return DVector::zeros(p);
    }
    let tol = max_ev * 1e-10;
    let projected = eig.eigenvectors.transpose() * rhs;
    let scaled = DVector::from_iterator(
        p,
        projected
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(&v, &l)| if l > tol { v / l } else { 0.0 }),
    );
    eig.eigenvectors * scaled
}

fn for_each_block_entry<F: FnMut(usize)>(widths: &[usize], offsets: &[Vec<usize>], mut f: F) {
    let m = widths.len();
    let total: usize = widths.iter().product();
    let mut pos = vec![0usize; m];
    for _ in 0..total {
        let flat: usize = (0..m).map(|a| offsets[a][pos[a]]).sum();
        f(flat);
        for a in (0..m).rev() {
            pos[a] += 1;
            if pos[a] < widths[a] {
                break;
            }
            pos[a] = 0;
        }
    }
}

/// Evaluate a fitted model on its full grid (no mask on the output).
pub fn evaluate_model(model: &BlockPolynomialModel) -> DenseTensor {
    let m = model.dims.len();
    let dims = &model.dims;
    let n: usize = dims.iter().product();
    let degree = model.degree;
    let block_strides = strides_of(&model.blocks);
    let clusterings = model.clusterings().expect("stored blocks are valid");

    // Per-mode tables: cluster label (0-based) and powers of x = (i - c)/d.
    let labels: Vec<Vec<usize>> = clusterings
        .iter()
        .map(|z| z.assignment().iter().map(|&j| j - 1).collect())
        .collect();
    let pows: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|a| {
            let z = &clusterings[a];
            (0..dims[a])
                .map(|i| {
                    let j = labels[a][i] + 1;
                    let (lo, hi) = z.bounds(j);
                    let c = (lo + hi) as f64 / 2.0;
                    let x = ((i + 1) as f64 - c) / dims[a] as f64;
                    let mut row = vec![1.0f64; degree + 1];
                    for t in 1..=degree {
                        row[t] = row[t - 1] * x;
                    }
                    row
                })
                .collect()
        })
        .collect();

    let mut values = vec![0.0f64; n];
    let mut idx = vec![0usize; m];
    for value in values.iter_mut() {
        let bid: usize = (0..m).map(|a| labels[a][idx[a]] * block_strides[a]).sum();
        let coeffs = &model.coefficients[bid];
        let mut acc = 0.0;
        for (exps, &coeff) in model.basis.iter().zip(coeffs.iter()) {
            let mut v = coeff;
            for a in 0..m {
                v *= pows[a][idx[a]][exps[a]];
            }
            acc += v;
        }
        *value = acc;
        for a in (0..m).rev() {
            idx[a] += 1;
            if idx[a] < dims[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    DenseTensor::new(dims.clone(), values).expect("model evaluation is finite")
}

/// Sum of squared residuals over `y`'s observed entries, in row-major order.
pub fn residual_sum_of_squares(y: &DenseTensor, fitted: &DenseTensor) -> Result<f64> {
    if y.dims() != fitted.dims() {
        return Err(Error::Shape("residual shapes differ".into()));
    }
    let mut rss = 0.0;
    for i in 0..y.len() {
        if y.is_observed(i) {
            let r = y.values()[i] - fitted.values()[i];
            rss += r * r;
        }
    }
    Ok(rss)
}

/// Noiseless block-polynomial approximation error of a generative function:
/// the MSE of the least-squares fit to the exact signal tensor (an upper
/// bound realization of the class infimum).
pub fn approximation_error(
    f: &GenerativeFunction,
    dims: &[usize],
    blocks: &[usize],
    degree: usize,
) -> Result<f64> {
    let theta = evaluate_signal(f, dims)?;
    let model = fit_block_polynomial(&theta, blocks, degree)?;
    let fitted = evaluate_model(&model);
    theta.mse(&fitted)
}
