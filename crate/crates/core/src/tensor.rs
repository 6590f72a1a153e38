//! Dense order-`m` tensor storage, permutation algebra, norms and losses.
//!
//! Tensors are stored flat in row-major order (last mode fastest). An optional
//! boolean mask marks observed entries; masked-out entries are excluded from
//! norms, losses and downstream fits. Permutations follow the paper-style
//! 1-based convention in all public semantics; flat offsets are internal.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Dense order-`m` real tensor with per-mode dimensions and optional
/// observation mask (`true` = observed).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl DenseTensor {
    /// Fully observed tensor from row-major values.
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        Self::build(dims, values, None)
    }

    /// Tensor with an observation mask of the same shape.
    pub fn with_mask(dims: Vec<usize>, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        Self::build(dims, values, Some(mask))
    }

    fn build(dims: Vec<usize>, values: Vec<f64>, mask: Option<Vec<bool>>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Shape("tensor order must be at least 1".into()));
        }
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero dimension in {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if values.len() != n {
            return Err(Error::Shape(format!(
                "value length {} does not match product of dims {:?}",
                values.len(),
                dims
            )));
        }
        if let Some(m) = &mask {
            if m.len() != n {
                return Err(Error::Shape(format!(
                    "mask length {} does not match product of dims {:?}",
                    m.len(),
                    dims
                )));
            }
        }
        let observed_finite = match &mask {
            None => values.iter().all(|v| v.is_finite()),
            Some(m) => values
                .iter()
                .zip(m.iter())
                .all(|(v, &obs)| !obs || v.is_finite()),
        };
        if !observed_finite {
            return Err(Error::Domain(
                "non-finite value at an observed position".into(),
            ));
        }
        Ok(DenseTensor { dims, values, mask })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![0.0; n])
    }

    pub fn constant(dims: Vec<usize>, c: f64) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![c; n])
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    /// Row-major strides (last mode has stride 1).
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.dims)
    }

    /// Flat offset of a 0-based multi-index.
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order());
        let strides = self.strides();
        idx.iter().zip(strides.iter()).map(|(i, s)| i * s).sum()
    }

    /// 0-based multi-index of a flat offset.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let strides = self.strides();
        let mut idx = vec![0usize; self.order()];
        for (a, &s) in strides.iter().enumerate() {
            idx[a] = flat / s;
            flat %= s;
        }
        idx
    }

    /// Value at a 0-based multi-index.
    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.flat_index(idx)]
    }

    pub fn is_observed(&self, flat: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[flat])
    }

    pub fn observed_count(&self) -> usize {
        match &self.mask {
            None => self.values.len(),
            Some(m) => m.iter().filter(|&&b| b).count(),
        }
    }

    /// Replace the observation mask (same shape required).
    pub fn with_replaced_mask(&self, mask: Vec<bool>) -> Result<Self> {
        Self::with_mask(self.dims.clone(), self.values.clone(), mask)
    }

    /// Mean of all observed entries; `None` when nothing is observed.
    pub fn observed_mean(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (i, v) in self.values.iter().enumerate() {
            if self.is_observed(i) {
                sum += v;
                count += 1;
            }
        }
        (count > 0).then(|| sum / count as f64)
    }

    /// Rearranged tensor `O` with `O(i_1,..,i_m) = T(p_1(i_1),..,p_m(i_m))`,
    /// mask permuted identically.
    pub fn apply_permutation(&self, p: &ModePermutations) -> Result<DenseTensor> {
        p.check_dims(&self.dims)?;
        let strides = self.strides();
        // Per-mode source-offset tables: off[a][i] = stride_a * (p_a(i+1) - 1).
        let offsets: Vec<Vec<usize>> = p
            .perms
            .iter()
            .zip(strides.iter())
            .map(|(perm, &s)| perm.iter().map(|&img| s * (img - 1)).collect())
            .collect();
        let m = self.order();
        let n = self.len();
        let mut values = vec![0.0f64; n];
        let mut mask = self.mask.as_ref().map(|_| vec![false; n]);
        let mut idx = vec![0usize; m];
        for flat in 0..n {
            let src: usize = (0..m).map(|a| offsets[a][idx[a]]).sum();
            values[flat] = self.values[src];
            if let (Some(out), Some(src_mask)) = (&mut mask, &self.mask) {
                out[flat] = src_mask[src];
            }
            // Row-major increment.
            for a in (0..m).rev() {
                idx[a] += 1;
                if idx[a] < self.dims[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(DenseTensor {
            dims: self.dims.clone(),
            values,
            mask,
        })
    }

    /// Frobenius norm over observed entries.
    pub fn frobenius_norm(&self) -> f64 {
        let mut sum = 0.0;
        for (i, v) in self.values.iter().enumerate() {
            if self.is_observed(i) {
                sum += v * v;
            }
        }
        sum.sqrt()
    }

    /// Mean squared difference over jointly observed entries.
    ///
    /// Without masks this is the plain `(prod dims)^{-1} ||A - B||^2`; with
    /// masks the divisor is the jointly observed count.
    pub fn mse(&self, other: &DenseTensor) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "mse requires identical shapes, got {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..self.len() {
            if self.is_observed(i) && other.is_observed(i) {
                let d = self.values[i] - other.values[i];
                sum += d * d;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::InvalidArgument(
                "mse undefined: no jointly observed entries".into(),
            ));
        }
        Ok(sum / count as f64)
    }

    /// Mode-`mode` unfolding (1-based mode), `d_mode x prod(other dims)`.
    ///
    /// Column order is fixed: row-major over the remaining modes in ascending
    /// mode order. This layout is part of the file/API contract; `refold`
    /// inverts it exactly. Masks are ignored here -- impute before unfolding
    /// when entries are missing.
    pub fn unfold(&self, mode: usize) -> Result<DMatrix<f64>> {
        let a = self.check_mode(mode)?;
        let rows = self.dims[a];
        let cols = self.len() / rows;
        let col_strides = column_strides(&self.dims, a);
        let strides = self.strides();
        let mut out = DMatrix::zeros(rows, cols);
        let m = self.order();
        let mut idx = vec![0usize; m];
        for flat in 0..self.len() {
            let r = (flat / strides[a]) % rows;
            let mut c = 0usize;
            for (b, &i) in idx.iter().enumerate() {
                if b != a {
                    c += i * col_strides[b];
                }
            }
            out[(r, c)] = self.values[flat];
            for b in (0..m).rev() {
                idx[b] += 1;
                if idx[b] < self.dims[b] {
                    break;
                }
                idx[b] = 0;
            }
        }
        Ok(out)
    }

    /// Inverse of [`DenseTensor::unfold`]; rebuilds a tensor of shape `dims`
    /// from its mode-`mode` unfolding. The result carries no mask.
    pub fn refold(mat: &DMatrix<f64>, dims: &[usize], mode: usize) -> Result<DenseTensor> {
        if dims.is_empty() {
            return Err(Error::Shape("refold requires at least one mode".into()));
        }
        let a = mode
            .checked_sub(1)
            .filter(|&a| a < dims.len())
            .ok_or(Error::ModeOutOfRange {
                mode,
                order: dims.len(),
            })?;
        let n: usize = dims.iter().product();
        if mat.nrows() != dims[a] || mat.ncols() != n / dims[a] {
            return Err(Error::Shape(format!(
                "unfolding of shape {}x{} does not match dims {:?} at mode {}",
                mat.nrows(),
                mat.ncols(),
                dims,
                mode
            )));
        }
        let col_strides = column_strides(dims, a);
        let strides = strides_of(dims);
        let m = dims.len();
        let mut values = vec![0.0f64; n];
        let mut idx = vec![0usize; m];
        for (flat, value) in values.iter_mut().enumerate() {
            let r = (flat / strides[a]) % dims[a];
            let mut c = 0usize;
            for (b, &i) in idx.iter().enumerate() {
                if b != a {
                    c += i * col_strides[b];
                }
            }
            *value = mat[(r, c)];
            for b in (0..m).rev() {
                idx[b] += 1;
                if idx[b] < dims[b] {
                    break;
                }
                idx[b] = 0;
            }
        }
        DenseTensor::new(dims.to_vec(), values)
    }

    /// Entrywise map of observed values; mask preserved.
    pub fn map_values<F: Fn(f64) -> f64>(&self, f: F) -> Result<DenseTensor> {
        let values = self.values.iter().map(|&v| f(v)).collect();
        Self::build(self.dims.clone(), values, self.mask.clone())
    }

    pub(crate) fn check_mode(&self, mode: usize) -> Result<usize> {
        mode.checked_sub(1)
            .filter(|&a| a < self.order())
            .ok_or(Error::ModeOutOfRange {
                mode,
                order: self.order(),
            })
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

pub(crate) fn strides_of(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; dims.len()];
    for a in (0..dims.len().saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * dims[a + 1];
    }
    strides
}

/// Row-major strides over the modes other than `skip`, in ascending mode
/// order, for unfolding column computation.
fn column_strides(dims: &[usize], skip: usize) -> Vec<usize> {
    let mut strides = vec![0usize; dims.len()];
    let mut acc = 1usize;
    for b in (0..dims.len()).rev() {
        if b == skip {
            continue;
        }
        strides[b] = acc;
        acc *= dims[b];
    }
    strides
}

/// One 1-based bijection per mode: `perms[a][i-1] = pi_a(i)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModePermutations {
    perms: Vec<Vec<usize>>,
}

impl ModePermutations {
    pub fn new(perms: Vec<Vec<usize>>) -> Result<Self> {
        if perms.is_empty() {
            return Err(Error::Permutation("no modes".into()));
        }
        for (a, perm) in perms.iter().enumerate() {
            validate_perm(perm).map_err(|e| {
                Error::Permutation(format!("mode {}: {}", a + 1, e))
            })?;
        }
        Ok(ModePermutations { perms })
    }

    /// Identity permutations for the given dims.
    pub fn identity(dims: &[usize]) -> Self {
        ModePermutations {
            perms: dims.iter().map(|&d| (1..=d).collect()).collect(),
        }
    }

    /// The same bijection repeated over `m` modes (symmetric case).
    pub fn shared(perm: Vec<usize>, m: usize) -> Result<Self> {
        validate_perm(&perm).map_err(Error::Permutation)?;
        Ok(ModePermutations {
            perms: vec![perm; m],
        })
    }

    pub fn order(&self) -> usize {
        self.perms.len()
    }

    pub fn perms(&self) -> &[Vec<usize>] {
        &self.perms
    }

    pub fn perm(&self, mode: usize) -> &[usize] {
        &self.perms[mode - 1]
    }

    /// Mode-wise inverse: composing with it yields the identity per mode.
    pub fn inverse(&self) -> ModePermutations {
        ModePermutations {
            perms: self.perms.iter().map(|p| invert_perm(p)).collect(),
        }
    }

    /// Mode-wise composition `self o other`, i.e. `i -> self(other(i))`.
    pub fn compose(&self, other: &ModePermutations) -> Result<ModePermutations> {
        if self.order() != other.order() {
            return Err(Error::Permutation("order mismatch in composition".into()));
        }
        let perms = self
            .perms
            .iter()
            .zip(other.perms.iter())
            .map(|(p, q)| {
                if p.len() != q.len() {
                    return Err(Error::Permutation("length mismatch in composition".into()));
                }
                Ok(q.iter().map(|&i| p[i - 1]).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModePermutations { perms })
    }

    pub(crate) fn check_dims(&self, dims: &[usize]) -> Result<()> {
        if self.order() != dims.len() {
            return Err(Error::Shape(format!(
                "{} permutations for an order-{} tensor",
                self.order(),
                dims.len()
            )));
        }
        for (a, (perm, &d)) in self.perms.iter().zip(dims.iter()).enumerate() {
            if perm.len() != d {
                return Err(Error::Shape(format!(
                    "mode {}: permutation length {} does not match dim {}",
                    a + 1,
                    perm.len(),
                    d
                )));
            }
        }
        Ok(())
    }
}

fn validate_perm(perm: &[usize]) -> std::result::Result<(), String> {
    if perm.is_empty() {
        return Err("empty permutation".into());
    }
    let d = perm.len();
    let mut seen = vec![false; d];
    for &img in perm {
        if img == 0 || img > d {
            return Err(format!("image {img} outside 1..={d}"));
        }
        if seen[img - 1] {
            return Err(format!("duplicate image {img}"));
        }
        seen[img - 1] = true;
    }
    Ok(())
}

/// Inverse of a single 1-based bijection.
pub fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (i, &img) in perm.iter().enumerate() {
        inv[img - 1] = i + 1;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn tensor_1d(values: &[f64]) -> DenseTensor {
        DenseTensor::new(vec![values.len()], values.to_vec()).unwrap()
    }

    fn random_tensor(dims: &[usize], seed: u64) -> DenseTensor {
        let mut rng = crate::rng::derive_rng(seed, &[1]);
        let n: usize = dims.iter().product();
        let values = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseTensor::new(dims.to_vec(), values).unwrap()
    }

    fn random_perm(d: usize, seed: u64) -> Vec<usize> {
        let mut rng = crate::rng::derive_rng(seed, &[2]);
        let mut p: Vec<usize> = (1..=d).collect();
        for i in (1..d).rev() {
            let j = rng.gen_range(0..=i);
            p.swap(i, j);
        }
        p
    }

    #[test]
    fn construction_rejects_bad_shapes() {
        assert!(DenseTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(DenseTensor::with_mask(vec![2], vec![0.0, 0.0], vec![true]).is_err());
        assert!(DenseTensor::new(vec![2], vec![f64::NAN, 0.0]).is_err());
        // A masked-out non-finite entry is allowed.
        assert!(
            DenseTensor::with_mask(vec![2], vec![f64::NAN, 0.0], vec![false, true]).is_ok()
        );
    }

    #[test]
    fn identity_permutation_is_identity_map() {
        let t = random_tensor(&[3, 4, 2], 7);
        let id = ModePermutations::identity(t.dims());
        let out = t.apply_permutation(&id).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn permutation_definition_unrolled_1d() {
        let t = tensor_1d(&[10.0, 20.0, 30.0]);
        let p = ModePermutations::new(vec![vec![3, 1, 2]]).unwrap();
        let out = t.apply_permutation(&p).unwrap();
        assert_eq!(out.values(), &[30.0, 10.0, 20.0]);
    }

    #[test]
    fn permutation_composition_matches_bruteforce() {
        // (T o p1) o p2 = T o (p1 o p2), checked entrywise on a 3x3x3 tensor.
        let t = random_tensor(&[3, 3, 3], 11);
        let p1 = ModePermutations::new(vec![
            random_perm(3, 21),
            random_perm(3, 22),
            random_perm(3, 23),
        ])
        .unwrap();
        let p2 = ModePermutations::new(vec![
            random_perm(3, 31),
            random_perm(3, 32),
            random_perm(3, 33),
        ])
        .unwrap();
        let lhs = t
            .apply_permutation(&p1)
            .unwrap()
            .apply_permutation(&p2)
            .unwrap();
        let rhs = t.apply_permutation(&p1.compose(&p2).unwrap()).unwrap();
        // Brute-force oracle over all 27 entries.
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let src = [
                        p1.perm(1)[p2.perm(1)[i] - 1] - 1,
                        p1.perm(2)[p2.perm(2)[j] - 1] - 1,
                        p1.perm(3)[p2.perm(3)[k] - 1] - 1,
                    ];
                    let expect = t.get(&src);
                    assert_eq!(lhs.get(&[i, j, k]), expect);
                    assert_eq!(rhs.get(&[i, j, k]), expect);
                }
            }
        }
    }

    #[test]
    fn inverse_permutation_examples() {
        let id = ModePermutations::identity(&[4]);
        assert_eq!(id.inverse(), id);
        assert_eq!(invert_perm(&[3, 1, 2]), vec![2, 3, 1]);
        let p = random_perm(50, 5);
        let q = invert_perm(&p);
        let composed: Vec<usize> = (0..50).map(|i| p[q[i] - 1]).collect();
        assert_eq!(composed, (1..=50).collect::<Vec<_>>());
    }

    #[test]
    fn permutation_rejects_non_bijections() {
        assert!(ModePermutations::new(vec![vec![1, 1, 3]]).is_err());
        assert!(ModePermutations::new(vec![vec![0, 1]]).is_err());
        assert!(ModePermutations::new(vec![vec![1, 3]]).is_err());
        let t = tensor_1d(&[1.0, 2.0]);
        let p = ModePermutations::new(vec![vec![1, 2, 3]]).unwrap();
        assert!(t.apply_permutation(&p).is_err());
    }

    #[test]
    fn frobenius_norm_examples() {
        assert_eq!(DenseTensor::zeros(vec![3, 3]).unwrap().frobenius_norm(), 0.0);
        let t = DenseTensor::new(vec![2, 2], vec![1.0; 4]).unwrap();
        assert_eq!(t.frobenius_norm(), 2.0);
        // Naive summation oracle on a random 4x4x4 tensor.
        let t = random_tensor(&[4, 4, 4], 13);
        let naive: f64 = t.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((t.frobenius_norm() - naive).abs() <= 1e-12 * naive.max(1.0));
    }

    #[test]
    fn mse_examples() {
        let a = tensor_1d(&[0.0, 0.0]);
        let b = tensor_1d(&[1.0, 1.0]);
        assert_eq!(a.mse(&a).unwrap(), 0.0);
        assert_eq!(a.mse(&b).unwrap(), 1.0);
        assert!(a.mse(&tensor_1d(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn mse_is_permutation_invariant() {
        let a = random_tensor(&[3, 3, 3], 17);
        let b = random_tensor(&[3, 3, 3], 19);
        let p = ModePermutations::new(vec![
            random_perm(3, 41),
            random_perm(3, 42),
            random_perm(3, 43),
        ])
        .unwrap();
        let base = a.mse(&b).unwrap();
        let permuted = a
            .apply_permutation(&p)
            .unwrap()
            .mse(&b.apply_permutation(&p).unwrap())
            .unwrap();
        assert!((base - permuted).abs() <= 1e-15);
    }

    #[test]
    fn mse_respects_masks() {
        let a = DenseTensor::with_mask(
            vec![4],
            vec![1.0, 2.0, 3.0, 4.0],
            vec![true, true, false, true],
        )
        .unwrap();
        let b = DenseTensor::with_mask(
            vec![4],
            vec![1.0, 0.0, 0.0, 4.0],
            vec![true, false, true, true],
        )
        .unwrap();
        // Jointly observed: positions 0 and 3, both equal.
        assert_eq!(a.mse(&b).unwrap(), 0.0);
        let all_masked = DenseTensor::with_mask(vec![2], vec![0.0; 2], vec![false, false]).unwrap();
        assert!(all_masked.mse(&all_masked).is_err());
    }

    #[test]
    fn norm_equals_mse_times_count() {
        let t = random_tensor(&[5, 4], 23);
        let zero = DenseTensor::zeros(vec![5, 4]).unwrap();
        let lhs = t.frobenius_norm().powi(2);
        let rhs = t.mse(&zero).unwrap() * t.observed_count() as f64;
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1.0));
    }

    #[test]
    fn unfold_matrix_modes() {
        let t = DenseTensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let m1 = t.unfold(1).unwrap();
        assert_eq!(m1.nrows(), 2);
        assert_eq!(m1[(0, 2)], 3.0);
        assert_eq!(m1[(1, 0)], 4.0);
        let m2 = t.unfold(2).unwrap();
        assert_eq!(m2.nrows(), 3);
        assert_eq!(m2[(2, 0)], 3.0);
        assert_eq!(m2[(0, 1)], 4.0);
        assert_eq!(m2, m1.transpose());
        assert!(t.unfold(0).is_err());
        assert!(t.unfold(3).is_err());
    }

    #[test]
    fn unfold_refold_roundtrip() {
        let t = random_tensor(&[2, 3, 4], 29);
        for mode in 1..=3 {
            let mat = t.unfold(mode).unwrap();
            let back = DenseTensor::refold(&mat, t.dims(), mode).unwrap();
            assert_eq!(back.values(), t.values());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn prop_unfold_refold_bijective(
            dims in proptest::collection::vec(1usize..5, 1..4),
            mode_pick in 0usize..4,
            seed in 0u64..1000,
        ) {
            let t = random_tensor(&dims, seed);
            let mode = mode_pick % dims.len() + 1;
            let mat = t.unfold(mode).unwrap();
            let back = DenseTensor::refold(&mat, t.dims(), mode).unwrap();
            prop_assert_eq!(back.values(), t.values());
        }

        #[test]
        fn prop_mse_symmetric_and_definite(
            dims in proptest::collection::vec(1usize..5, 1..4),
            sa in 0u64..500,
            sb in 0u64..500,
        ) {
            let a = random_tensor(&dims, sa);
            let b = random_tensor(&dims, sb);
            let ab = a.mse(&b).unwrap();
            let ba = b.mse(&a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(a.mse(&a).unwrap(), 0.0);
            if ab == 0.0 {
                prop_assert_eq!(a.values(), b.values());
            }
        }

        #[test]
        fn prop_composition_associative(
            d in 1usize..6,
            s1 in 0u64..500,
            s2 in 0u64..500,
            st in 0u64..500,
        ) {
            let t = random_tensor(&[d, d], st);
            let p1 = ModePermutations::new(vec![random_perm(d, s1), random_perm(d, s1 + 7)]).unwrap();
            let p2 = ModePermutations::new(vec![random_perm(d, s2), random_perm(d, s2 + 7)]).unwrap();
            let lhs = t.apply_permutation(&p1).unwrap().apply_permutation(&p2).unwrap();
            let rhs = t.apply_permutation(&p1.compose(&p2).unwrap()).unwrap();
            prop_assert_eq!(lhs.values(), rhs.values());
        }
    }
}
