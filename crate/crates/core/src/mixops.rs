//! Mixing regularizers and their samplers.
//!
//! Every operator here is linear in the rows it mixes, so the same object
//! that mixes a batch forward can route gradients backward ([`Mixing::apply_transpose`])
//! and mix targets at the loss level ([`Mixing::loss`]).

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interpolation weight λ in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct MixCoefficient(f64);

impl MixCoefficient {
    pub fn new(lambda: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&lambda) {
            Ok(Self(lambda))
        } else {
            Err(Error::Param(format!("mix coefficient {lambda} outside [0, 1]")))
        }
    }

    pub const ONE: Self = Self(1.0);

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Row-stochastic `n × n` matrix of interpolation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixMatrix(Array2<f64>);

/// Tolerance on row sums accepted by [`MixMatrix::new`].
pub const ROW_SUM_TOL: f64 = 1e-9;

impl MixMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let (rows, cols) = entries.dim();
        if rows != cols {
            return Err(Error::Shape(format!("mix matrix must be square, got {rows}x{cols}")));
        }
        if rows == 0 {
            return Err(Error::EmptyBatch);
        }
        if entries.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Param("mix matrix entries must be finite and non-negative".into()));
        }
        for (i, row) in entries.axis_iter(Axis(0)).enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Param(format!("mix matrix row {i} sums to {sum}")));
            }
        }
        Ok(Self(entries))
    }

    pub fn identity(n: usize) -> Self {
        Self(Array2::eye(n))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }
}

/// Which regularizer a training iteration uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixStrategy {
    NoMix,
    Mixup,
    ManifoldMixup,
    MultiMix,
}

impl MixStrategy {
    pub const ALL: [MixStrategy; 4] = [
        MixStrategy::NoMix,
        MixStrategy::Mixup,
        MixStrategy::ManifoldMixup,
        MixStrategy::MultiMix,
    ];

    pub fn index(self) -> usize {
        match self {
            MixStrategy::NoMix => 0,
            MixStrategy::Mixup => 1,
            MixStrategy::ManifoldMixup => 2,
            MixStrategy::MultiMix => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MixStrategy::NoMix => "nomix",
            MixStrategy::Mixup => "mixup",
            MixStrategy::ManifoldMixup => "manifold",
            MixStrategy::MultiMix => "multimix",
        }
    }
}

impl fmt::Display for MixStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MixStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nomix" | "none" | "no_mix" => Ok(MixStrategy::NoMix),
            "mixup" => Ok(MixStrategy::Mixup),
            "manifold" | "manifold_mixup" | "manifoldmixup" => Ok(MixStrategy::ManifoldMixup),
            "multimix" | "multi_mix" => Ok(MixStrategy::MultiMix),
            other => Err(Error::Param(format!("unknown mix strategy `{other}`"))),
        }
    }
}

/// Categorical distribution over [`MixStrategy`], indexed by [`MixStrategy::index`].
///
/// `NoMix` normally carries zero mass; a non-zero value lets an experiment
/// skip mixing on a fraction of iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mix2Policy {
    weights: [f64; 4],
}

impl Mix2Policy {
    pub fn new(weights: [f64; 4]) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Param(format!("policy weights must be non-negative, got {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Param(format!("policy weights sum to {total}, expected 1")));
        }
        Ok(Self { weights })
    }

    /// Mixup 25%, Manifold Mixup 50%, MultiMix 25%.
    pub fn mix2() -> Self {
        Self {
            weights: [0.0, 0.25, 0.5, 0.25],
        }
    }

    pub fn single(strategy: MixStrategy) -> Self {
        let mut weights = [0.0; 4];
        weights[strategy.index()] = 1.0;
        Self { weights }
    }

    /// Equal mass on each listed strategy.
    pub fn uniform(strategies: &[MixStrategy]) -> Result<Self> {
        if strategies.is_empty() {
            return Err(Error::Param("uniform policy needs at least one strategy".into()));
        }
        let mut weights = [0.0; 4];
        let share = 1.0 / strategies.len() as f64;
        for s in strategies {
            weights[s.index()] += share;
        }
        Self::new(weights)
    }

    pub fn weight(&self, strategy: MixStrategy) -> f64 {
        self.weights[strategy.index()]
    }

    pub fn weights(&self) -> [f64; 4] {
        self.weights
    }
}

impl Default for Mix2Policy {
    fn default() -> Self {
        Self::mix2()
    }
}

impl FromStr for Mix2Policy {
    type Err = Error;

    /// Accepts `mix2`, a single strategy name, `a+b` (uniform over the
    /// listed strategies), or explicit `name=weight` pairs separated by commas.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("mix2") {
            return Ok(Self::mix2());
        }
        if s.contains('=') {
            let mut weights = [0.0; 4];
            for part in s.split(',') {
                let (name, w) = part
                    .split_once('=')
                    .ok_or_else(|| Error::Param(format!("malformed policy term `{part}`")))?;
                let strategy: MixStrategy = name.parse()?;
                let w: f64 = w
                    .trim()
                    .parse()
                    .map_err(|_| Error::Param(format!("malformed policy weight `{w}`")))?;
                weights[strategy.index()] += w;
            }
            return Self::new(weights);
        }
        let strategies = s
            .split('+')
            .map(str::parse)
            .collect::<Result<Vec<MixStrategy>>>()?;
        Self::uniform(&strategies)
    }
}

impl fmt::Display for Mix2Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for s in MixStrategy::ALL {
            let w = self.weight(s);
            if w > 0.0 {
                if !first {
                    f.write_str(",")?;
                }
                write!(f, "{}={}", s.name(), w)?;
                first = false;
            }
        }
        Ok(())
    }
}

/// Partner assignment for pairwise mixing: row `i` is mixed with row `perm[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingPlan {
    perm: Vec<usize>,
}

impl PairingPlan {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::Param(format!("pairing {perm:?} is not a permutation")));
            }
            seen[p] = true;
        }
        Ok(Self { perm })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
        }
    }

    /// Uniformly random permutation; fixed points are allowed.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        Self { perm }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn partner(&self, i: usize) -> usize {
        self.perm[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }
}

/// Features and binary multi-label targets for one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelBatch {
    features: Array2<f64>,
    labels: Array2<f64>,
}

impl MultiLabelBatch {
    pub fn new(features: Array2<f64>, labels: Array2<f64>) -> Result<Self> {
        if features.nrows() != labels.nrows() {
            return Err(Error::Shape(format!(
                "features have {} rows but labels have {}",
                features.nrows(),
                labels.nrows()
            )));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Param("labels must be 0 or 1".into()));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Array2<f64> {
        &self.labels
    }
}

/// Draws λ ~ Beta(α, α).
pub fn sample_beta<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<MixCoefficient> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Param(format!("beta concentration must be positive, got {alpha}")));
    }
    let dist = Beta::new(alpha, alpha).map_err(|e| Error::Param(format!("beta({alpha}): {e}")))?;
    let lambda: f64 = dist.sample(rng);
    if lambda.is_nan() {
        return Err(Error::Numeric(format!("beta({alpha}) produced NaN")));
    }
    Ok(MixCoefficient(lambda.clamp(0.0, 1.0)))
}

/// Draws an `n × n` matrix whose rows are independent Dirichlet(α, …, α) samples.
///
/// Rows are built from normalized Gamma(α, 1) draws. If every draw in a row
/// underflows to zero (possible for tiny α) the row falls back to a one-hot
/// vertex chosen uniformly, which is the limit of the distribution as α → 0.
pub fn sample_mix_matrix<R: Rng + ?Sized>(n: usize, alpha: f64, rng: &mut R) -> Result<MixMatrix> {
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Param(format!("dirichlet concentration must be positive, got {alpha}")));
    }
    if n == 1 {
        return Ok(MixMatrix::identity(1));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Param(format!("gamma({alpha}): {e}")))?;
    let mut entries = Array2::zeros((n, n));
    for mut row in entries.axis_iter_mut(Axis(0)) {
        let mut sum = 0.0;
        for w in row.iter_mut() {
            *w = gamma.sample(rng);
            sum += *w;
        }
        if sum > 0.0 && sum.is_finite() {
            row.mapv_inplace(|w| w / sum);
        } else {
            row.fill(0.0);
            row[rng.random_range(0..n)] = 1.0;
        }
    }
    Ok(MixMatrix(entries))
}

fn pairwise_mix(rows: &Array2<f64>, plan: &PairingPlan, lambda: MixCoefficient) -> Result<Array2<f64>> {
    if plan.len() != rows.nrows() {
        return Err(Error::Shape(format!(
            "pairing plan covers {} rows but batch has {}",
            plan.len(),
            rows.nrows()
        )));
    }
    let l = lambda.value();
    let mut out = Array2::zeros(rows.raw_dim());
    for (i, mut dst) in out.axis_iter_mut(Axis(0)).enumerate() {
        let a = rows.row(i);
        let b = rows.row(plan.partner(i));
        for ((d, &x), &y) in dst.iter_mut().zip(a.iter()).zip(b.iter()) {
            *d = l * x + (1.0 - l) * y;
        }
    }
    Ok(out)
}

/// Input-space Mixup. Labels are left alone; they are mixed inside the loss.
pub fn mixup_inputs(
    batch: &MultiLabelBatch,
    plan: &PairingPlan,
    lambda: MixCoefficient,
) -> Result<Array2<f64>> {
    pairwise_mix(batch.features(), plan, lambda)
}

/// Manifold Mixup on encoder outputs.
pub fn mix_embeddings(
    embeddings: &Array2<f64>,
    plan: &PairingPlan,
    lambda: MixCoefficient,
) -> Result<Array2<f64>> {
    pairwise_mix(embeddings, plan, lambda)
}

/// MultiMix: `Λ · H`.
pub fn multimix(embeddings: &Array2<f64>, mat: &MixMatrix) -> Result<Array2<f64>> {
    if mat.n() != embeddings.nrows() {
        return Err(Error::Shape(format!(
            "mix matrix is {n}x{n} but batch has {} rows",
            embeddings.nrows(),
            n = mat.n()
        )));
    }
    Ok(mat.view().dot(embeddings))
}

/// Element-wise `-[t·ln σ(z) + (1−t)·ln(1−σ(z))]` in overflow-free form.
#[inline]
pub fn bce_term(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_logits(logits: &Array2<f64>, targets: &Array2<f64>) -> Result<()> {
    if logits.dim() != targets.dim() {
        return Err(Error::Shape(format!(
            "logits {:?} vs targets {:?}",
            logits.dim(),
            targets.dim()
        )));
    }
    if logits.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy of sigmoid(logits) against soft or hard targets.
pub fn bce(logits: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
    check_logits(logits, targets)?;
    let total: f64 = logits
        .iter()
        .zip(targets.iter())
        .map(|(&z, &t)| bce_term(z, t))
        .sum();
    Ok(total / logits.len() as f64)
}

/// Gradient of [`bce`] with respect to the logits.
pub fn bce_grad(logits: &Array2<f64>, targets: &Array2<f64>) -> Result<Array2<f64>> {
    check_logits(logits, targets)?;
    let scale = 1.0 / logits.len() as f64;
    let mut grad = logits.mapv(sigmoid);
    grad.zip_mut_with(targets, |g, &t| *g = (*g - t) * scale);
    Ok(grad)
}

fn permute_rows(rows: &Array2<f64>, plan: &PairingPlan) -> Result<Array2<f64>> {
    if plan.len() != rows.nrows() {
        return Err(Error::Shape(format!(
            "pairing plan covers {} rows but labels have {}",
            plan.len(),
            rows.nrows()
        )));
    }
    Ok(rows.select(Axis(0), plan.as_slice()))
}

/// `λ·BCE(z, Y) + (1−λ)·BCE(z, Y∘perm)`.
pub fn mixed_bce_loss(
    logits: &Array2<f64>,
    labels: &Array2<f64>,
    plan: &PairingPlan,
    lambda: MixCoefficient,
) -> Result<f64> {
    let l = lambda.value();
    let own = bce(logits, labels)?;
    if l == 1.0 {
        return Ok(own);
    }
    let partner = bce(logits, &permute_rows(labels, plan)?)?;
    Ok(l * own + (1.0 - l) * partner)
}

/// Mean over `(i, c)` of `Σ_j Λ[i,j]·bce(z[i,c], Y[j,c])`.
pub fn multimix_bce_loss(logits: &Array2<f64>, mat: &MixMatrix, labels: &Array2<f64>) -> Result<f64> {
    if mat.n() != labels.nrows() || logits.dim() != labels.dim() {
        return Err(Error::Shape(format!(
            "logits {:?}, mix matrix {n}x{n}, labels {:?}",
            logits.dim(),
            labels.dim(),
            n = mat.n()
        )));
    }
    check_logits(logits, labels)?;
    let lam = mat.view();
    let mut total = 0.0;
    for (i, zrow) in logits.axis_iter(Axis(0)).enumerate() {
        for (j, yrow) in labels.axis_iter(Axis(0)).enumerate() {
            let w = lam[[i, j]];
            if w == 0.0 {
                continue;
            }
            let s: f64 = zrow.iter().zip(yrow.iter()).map(|(&z, &y)| bce_term(z, y)).sum();
            total += w * s;
        }
    }
    Ok(total / logits.len() as f64)
}

/// Draws a strategy from `policy`.
pub fn select_strategy<R: Rng + ?Sized>(policy: &Mix2Policy, rng: &mut R) -> MixStrategy {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = MixStrategy::NoMix;
    for s in MixStrategy::ALL {
        let w = policy.weight(s);
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = s;
        if u < acc {
            return s;
        }
    }
    // u landed in the rounding gap above the cumulative sum.
    last
}

/// Concentrations for the coefficient samplers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixParams {
    pub mixup_alpha: f64,
    pub manifold_alpha: f64,
    pub multimix_alpha: f64,
}

impl Default for MixParams {
    fn default() -> Self {
        Self {
            mixup_alpha: 1.0,
            manifold_alpha: 1.0,
            multimix_alpha: 1.0,
        }
    }
}

/// A realized linear row-mixing operator, together with the loss it implies.
#[derive(Debug, Clone, PartialEq)]
pub enum Mixing {
    Identity,
    Pairwise {
        plan: PairingPlan,
        lambda: MixCoefficient,
    },
    Matrix(MixMatrix),
}

impl Mixing {
    /// Samples the operator a strategy needs for a batch of `n` rows.
    pub fn draw<R: Rng + ?Sized>(
        strategy: MixStrategy,
        n: usize,
        params: &MixParams,
        rng: &mut R,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        Ok(match strategy {
            MixStrategy::NoMix => Mixing::Identity,
            MixStrategy::Mixup | MixStrategy::ManifoldMixup => {
                let alpha = if strategy == MixStrategy::Mixup {
                    params.mixup_alpha
                } else {
                    params.manifold_alpha
                };
                let lambda = sample_beta(alpha, rng)?;
                Mixing::Pairwise {
                    plan: PairingPlan::random(n, rng),
                    lambda,
                }
            }
            MixStrategy::MultiMix => Mixing::Matrix(sample_mix_matrix(n, params.multimix_alpha, rng)?),
        })
    }

    pub fn apply(&self, rows: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            Mixing::Identity => Ok(rows.clone()),
            Mixing::Pairwise { plan, lambda } => pairwise_mix(rows, plan, *lambda),
            Mixing::Matrix(mat) => multimix(rows, mat),
        }
    }

    /// Adjoint of [`Mixing::apply`]: maps a gradient on mixed rows back to
    /// the source rows.
    pub fn apply_transpose(&self, grad: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            Mixing::Identity => Ok(grad.clone()),
            Mixing::Pairwise { plan, lambda } => {
                if plan.len() != grad.nrows() {
                    return Err(Error::Shape("pairing plan does not match gradient rows".into()));
                }
                let l = lambda.value();
                let mut out = grad.mapv(|g| l * g);
                for i in 0..plan.len() {
                    let j = plan.partner(i);
                    let src = grad.row(i);
                    let mut dst = out.row_mut(j);
                    dst.scaled_add(1.0 - l, &src);
                }
                Ok(out)
            }
            Mixing::Matrix(mat) => {
                if mat.n() != grad.nrows() {
                    return Err(Error::Shape("mix matrix does not match gradient rows".into()));
                }
                Ok(mat.view().t().dot(grad))
            }
        }
    }

    /// Materialized mixed targets (`λY + (1−λ)Y∘perm` or `ΛY`).
    pub fn targets(&self, labels: &Array2<f64>) -> Result<Array2<f64>> {
        self.apply(labels)
    }

    /// Loss-level mixed BCE for logits produced from the mixed batch.
    pub fn loss(&self, logits: &Array2<f64>, labels: &Array2<f64>) -> Result<f64> {
        match self {
            Mixing::Identity => bce(logits, labels),
            Mixing::Pairwise { plan, lambda } => mixed_bce_loss(logits, labels, plan, *lambda),
            Mixing::Matrix(mat) => multimix_bce_loss(logits, mat, labels),
        }
    }

    /// Gradient of [`Mixing::loss`] with respect to the logits.
    pub fn loss_grad(&self, logits: &Array2<f64>, labels: &Array2<f64>) -> Result<Array2<f64>> {
        bce_grad(logits, &self.targets(labels)?)
    }
}
