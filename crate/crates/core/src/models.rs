//! Generative functions, signal synthesis on the grid, permutation sampling
//! and noise injection.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

type EvalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// An evaluable map `f: [0,1]^m -> R` with smoothness metadata.
///
/// `alpha` (Hoelder exponent, `f64::INFINITY` allowed) and `lipschitz` are
/// informational: they feed hyperparameter defaults and are never inferred
/// from data. `beta`, when present, records that the averaged slice score of
/// `f` increases at that monotonicity rate.
#[derive(Clone)]
pub struct GenerativeFunction {
    name: String,
    arity: usize,
    alpha: f64,
    lipschitz: f64,
    beta: Option<f64>,
    eval: EvalFn,
}

impl fmt::Debug for GenerativeFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenerativeFunction")
            .field("name", &self.name)
            .field("arity", &self.arity)
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .finish()
    }
}

impl GenerativeFunction {
    pub fn new<F>(
        name: impl Into<String>,
        arity: usize,
        alpha: f64,
        lipschitz: f64,
        beta: Option<f64>,
        eval: F,
    ) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if arity == 0 {
            return Err(Error::InvalidArgument("arity must be at least 1".into()));
        }
        if alpha.is_nan() || alpha < 0.0 {
            return Err(Error::InvalidArgument("alpha must be >= 0".into()));
        }
        if lipschitz.is_nan() || lipschitz <= 0.0 {
            return Err(Error::InvalidArgument("lipschitz must be > 0".into()));
        }
        if let Some(b) = beta {
            if b.is_nan() || b < 0.0 {
                return Err(Error::InvalidArgument("beta must be >= 0".into()));
            }
        }
        Ok(GenerativeFunction {
            name: name.into(),
            arity,
            alpha,
            lipschitz,
            beta,
            eval: Arc::new(eval),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn beta(&self) -> Option<f64> {
        self.beta
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.arity);
        (self.eval)(x)
    }

    /// Parse a small arithmetic expression (`+ - * /`, `exp`, `log`, `ln`,
    /// `sqrt`, n-ary `max`/`min`, numeric constants) into a generative
    /// function. Variables are `x1..xm`; for arity <= 3 the aliases
    /// `x`, `y`, `z` also work.
    pub fn from_expression(expr: &str, arity: usize) -> Result<Self> {
        if arity == 0 || arity > 8 {
            return Err(Error::InvalidArgument(
                "expression arity must be in 1..=8".into(),
            ));
        }
        let parsed: meval::Expr = expr
            .parse()
            .map_err(|e| Error::Data(format!("cannot parse expression {expr:?}: {e}")))?;
        let numbered: Vec<String> = (1..=arity).map(|a| format!("x{a}")).collect();
        let aliases: Vec<String> = ["x", "y", "z"]
            .iter()
            .take(arity)
            .map(|s| s.to_string())
            .collect();
        // Probe once to pick a variable naming; unknown variables error here.
        let probe = vec![0.5f64; arity];
        let names = if eval_expression(&parsed, &numbered, &probe).is_ok() {
            numbered
        } else if arity <= 3 {
            eval_expression(&parsed, &aliases, &probe)
                .map_err(|e| Error::Data(format!("cannot bind expression {expr:?}: {e}")))?;
            aliases
        } else {
            return Err(Error::Data(format!(
                "expression {expr:?} does not use variables x1..x{arity}"
            )));
        };
        Ok(GenerativeFunction {
            name: format!("expr:{expr}"),
            arity,
            alpha: f64::INFINITY,
            lipschitz: 1.0,
            beta: None,
            eval: Arc::new(move |x: &[f64]| {
                eval_expression(&parsed, &names, x).unwrap_or(f64::NAN)
            }),
        })
    }
}

/// Evaluate a parsed expression at one point. The context is rebuilt per
/// call because meval's bound closures are not `Send`; it adds standard math
/// plus n-ary `max`/`min` and `log` as the natural logarithm.
fn eval_expression(
    parsed: &meval::Expr,
    names: &[String],
    x: &[f64],
) -> std::result::Result<f64, meval::Error> {
    let mut ctx = meval::Context::new();
    ctx.funcn(
        "max",
        |xs: &[f64]| xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        1..,
    )
    .funcn(
        "min",
        |xs: &[f64]| xs.iter().cloned().fold(f64::INFINITY, f64::min),
        1..,
    )
    .func("log", f64::ln);
    for (name, &value) in names.iter().zip(x.iter()) {
        ctx.var(name.clone(), value);
    }
    parsed.eval_with_context(ctx)
}

/// The trivariate simulation functions, by table id 1..=5.
///
/// All ten are infinitely smooth (`alpha` metadata infinity). `beta` is 1
/// where the mode-wise averaged score increases Lipschitz-monotonically;
/// the two `exp(-...)` models have decreasing scores and carry no beta.
pub fn builtin_model(id: u8, symmetric: bool) -> Result<GenerativeFunction> {
    let make = |name: &str, beta: Option<f64>, f: fn(&[f64]) -> f64| {
        GenerativeFunction::new(name, 3, f64::INFINITY, 1.0, beta, f)
    };
    match (symmetric, id) {
        (true, 1) => make("sym-1", Some(1.0), |x| x[0] * x[1] * x[2]),
        (true, 2) => make("sym-2", Some(1.0), |x| (x[0] + x[1] + x[2]) / 3.0),
        (true, 3) => make("sym-3", Some(1.0), |x| {
            1.0 / (1.0 + (-3.0 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp())
        }),
        (true, 4) => make("sym-4", Some(1.0), |x| {
            (1.0 + x[0].max(x[1]).max(x[2])).ln()
        }),
        (true, 5) => make("sym-5", None, |x| {
            (-(x[0].max(x[1]).max(x[2])) - x[0].sqrt() - x[1].sqrt() - x[2].sqrt()).exp()
        }),
        (false, 1) => make("nonsym-1", Some(1.0), |x| x[0] * x[1] + x[2]),
        (false, 2) => make("nonsym-2", Some(1.0), |x| {
            x[0] * x[0] + x[1] + x[1] * x[2] * x[2]
        }),
        (false, 3) => make("nonsym-3", Some(1.0), |x| {
            x[0] / (1.0 + (-3.0 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp())
        }),
        (false, 4) => make("nonsym-4", Some(1.0), |x| {
            (1.0 + x[0].max(x[1]).max(x[2]) + x[0] * x[0] + x[1] * x[2]).ln()
        }),
        (false, 5) => make("nonsym-5", None, |x| {
            (-x[0] - x[1].sqrt() - x[2] * x[2] * x[2]).exp()
        }),
        _ => Err(Error::InvalidArgument(format!(
            "unknown builtin model id {id} (expected 1..=5)"
        ))),
    }
}

/// Signal tensor on the grid: `Theta(i_1,..,i_m) = f(i_1/d_1,..,i_m/d_m)`
/// with 1-based indices. No mask.
pub fn evaluate_signal(f: &GenerativeFunction, dims: &[usize]) -> Result<DenseTensor> {
    if f.arity() != dims.len() {
        return Err(Error::Shape(format!(
            "function of arity {} cannot fill an order-{} tensor",
            f.arity(),
            dims.len()
        )));
    }
    let m = dims.len();
    let n: usize = dims.iter().product();
    // Per-mode grid coordinates i/d for i = 1..=d.
    let coords: Vec<Vec<f64>> = dims
        .iter()
        .map(|&d| (1..=d).map(|i| i as f64 / d as f64).collect())
        .collect();
    let mut values = vec![0.0f64; n];
    let mut idx = vec![0usize; m];
    let mut x = vec![0.0f64; m];
    for value in values.iter_mut() {
        for a in 0..m {
            x[a] = coords[a][idx[a]];
        }
        let v = f.eval(&x);
        if !v.is_finite() {
            return Err(Error::Domain(format!(
                "generative function produced non-finite value at grid point {x:?}"
            )));
        }
        *value = v;
        for a in (0..m).rev() {
            idx[a] += 1;
            if idx[a] < dims[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    DenseTensor::new(dims.to_vec(), values)
}

/// Noise model attached to an experiment. `seed` is an extra component the
/// simulation harness mixes into its per-replicate noise streams; two
/// configs differing only here share permutations but draw distinct noise.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Bernoulli,
    None,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sigma < 0.0 || !self.sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Uniform random bijection on `[d]` (1-based), Fisher-Yates.
pub fn sample_permutation<R: Rng>(d: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (1..=d).collect();
    for i in (1..d).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

/// `Y = T + E` with iid `N(0, sigma^2)` entries. The mask, if any, is kept;
/// noise is added at every position.
pub fn add_gaussian_noise<R: Rng>(t: &DenseTensor, sigma: f64, rng: &mut R) -> Result<DenseTensor> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(t.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let mut out = t.clone();
    for v in out.values_mut() {
        *v += normal.sample(rng);
    }
    Ok(out)
}

/// Independent `Bernoulli(T(w))` draws in `{0,1}`.
///
/// Entries must lie in `[-1e-9, 1 + 1e-9]`; values inside the tolerance are
/// clamped into `[0,1]`, anything further out is a hard error naming the
/// offending index (1-based).
pub fn sample_bernoulli<R: Rng>(t: &DenseTensor, rng: &mut R) -> Result<DenseTensor> {
    const EPS: f64 = 1e-9;
    let mut out = t.clone();
    for flat in 0..t.len() {
        let p = t.values()[flat];
        if !(-EPS..=1.0 + EPS).contains(&p) {
            let idx: Vec<usize> = t.multi_index(flat).iter().map(|i| i + 1).collect();
            return Err(Error::Domain(format!(
                "entry {p} at index {idx:?} is not a probability"
            )));
        }
        let p = p.clamp(0.0, 1.0);
        out.values_mut()[flat] = if rng.gen::<f64>() < p { 1.0 } else { 0.0 };
    }
    Ok(out)
}

/// Apply `spec` to a signal tensor using a caller-provided stream.
pub fn apply_noise<R: Rng>(t: &DenseTensor, spec: &NoiseSpec, rng: &mut R) -> Result<DenseTensor> {
    spec.validate()?;
    match spec.kind {
        NoiseKind::None => Ok(t.clone()),
        NoiseKind::Gaussian => add_gaussian_noise(t, spec.sigma, rng),
        NoiseKind::Bernoulli => sample_bernoulli(t, rng),
    }
}
