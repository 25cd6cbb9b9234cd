//! Within-layer diversity losses.
//!
//! Three aggregate measures of how similar the units of the feature layer
//! are, built on the RBF similarity matrix `S`:
//!
//! - **Direct**: sum of off-diagonal similarities.
//! - **Det**: `-det(S)`.
//! - **Logdet**: `-ln det(S + εI)`.
//!
//! Each is combined with a squared-activation penalty that stops the network
//! from driving similarities down by inflating activations:
//!
//! ```text
//! L = λ₁ J(S) + λ₂ Σ_i ‖Φ(x_i)‖²
//! ```
//!
//! The penalty is a plain sum over the batch, not a mean. DeCov (penalising
//! off-diagonal covariance) is included as a baseline.
//!
//! Every loss returns its value together with the gradient with respect to
//! the activations, ready to be injected at the feature layer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_escalating, det_psd, matmul_tn, DetMode, Matrix};
use crate::similarity::{
    pairwise_similarity_with, similarity_backward, ActivationBatch, Kernel, SimilarityMatrix,
};

pub const DEFAULT_LAMBDA1: f64 = 0.001;
pub const DEFAULT_LAMBDA2: f64 = 0.001;
pub const DEFAULT_GAMMA: f64 = 10.0;
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Jitter escalations allowed when factorising `S + εI` for the Det gradient.
pub const DET_JITTER_RETRIES: usize = 3;
/// Jitter escalations allowed for Logdet before giving up.
pub const LOGDET_JITTER_RETRIES: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    None,
    Direct,
    Det,
    Logdet,
    #[serde(rename = "decov")]
    DeCov,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::None,
        Variant::Direct,
        Variant::Det,
        Variant::Logdet,
        Variant::DeCov,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::None => "none",
            Variant::Direct => "direct",
            Variant::Det => "det",
            Variant::Logdet => "logdet",
            Variant::DeCov => "decov",
        }
    }

    /// True for the three similarity-based variants.
    pub fn uses_similarity(self) -> bool {
        matches!(self, Variant::Direct | Variant::Det | Variant::Logdet)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

/// Which regulariser to apply and its hyperparameters.
///
/// DeCov uses `lambda1` as its only coefficient and ignores the rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerSpec {
    pub variant: Variant,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Use `exp(-γ d²)` instead of `exp(-γ |d|)`.
    pub smooth_kernel: bool,
}

impl RegularizerSpec {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            gamma: DEFAULT_GAMMA,
            epsilon: DEFAULT_EPSILON,
            smooth_kernel: false,
        }
    }

    pub fn none() -> Self {
        Self::new(Variant::None)
    }

    pub fn with_lambdas(mut self, lambda1: f64, lambda2: f64) -> Self {
        self.lambda1 = lambda1;
        self.lambda2 = lambda2;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn kernel(&self) -> Kernel {
        if self.smooth_kernel {
            Kernel::Squared
        } else {
            Kernel::Absolute
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |key: &str, v: f64, strict: bool| {
            let ok = v.is_finite() && if strict { v > 0.0 } else { v >= 0.0 };
            if ok {
                Ok(())
            } else {
                let bound = if strict { "> 0" } else { ">= 0" };
                Err(Error::Schema {
                    key: key.to_string(),
                    msg: format!("must be finite and {bound}, got {v}"),
                })
            }
        };
        check("lambda1", self.lambda1, false)?;
        check("lambda2", self.lambda2, false)?;
        check("gamma", self.gamma, true)?;
        check("epsilon", self.epsilon, true)
    }
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        Self::none()
    }
}

/// Value and activation gradient of the combined regulariser.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerOutput {
    /// `λ₁ J + λ₂ penalty` (or `λ₁ decov`).
    pub loss: f64,
    pub grad_acts: Matrix,
    /// Unweighted diversity term: `J` for the similarity variants, the DeCov
    /// loss for DeCov, 0 for None.
    pub diversity: f64,
    /// Unweighted activation penalty; 0 for None and DeCov.
    pub penalty: f64,
    /// `det(S)` for Det, `ln det(S + εI)` for Logdet.
    pub diag_det: Option<f64>,
}

/// `J = Σ_{n≠k} s_nk`, counting both orderings. The gradient with respect
/// to `S` is the all-ones matrix with a zero diagonal.
pub fn j_direct(sim: &SimilarityMatrix) -> (f64, Matrix) {
    let s = sim.matrix();
    let c = s.rows();
    let mut value = 0.0;
    for n in 0..c {
        for k in 0..c {
            if n != k {
                value += s[(n, k)];
            }
        }
    }
    let grad = Matrix::from_fn(c, c, |n, k| if n == k { 0.0 } else { 1.0 });
    (value, grad)
}

/// `J = -det(S)`.
///
/// The value uses the unjittered determinant and reports 0 for singular but
/// PSD `S`. The gradient is `-det(S) S⁻¹` when `S` factors without jitter,
/// otherwise `-det(S + εI) (S + εI)⁻¹`, escalating `ε` tenfold up to
/// [`DET_JITTER_RETRIES`] times.
pub fn j_det(sim: &SimilarityMatrix, epsilon: f64) -> Result<(f64, Matrix)> {
    let s = sim.matrix();
    let det = det_psd(s, 0.0, DetMode::Tolerant)?;
    let factor = match cholesky(s, 0.0) {
        Ok(f) if f.det() > 0.0 => f,
        _ => cholesky_escalating(s, effective_epsilon(epsilon), DET_JITTER_RETRIES)?.0,
    };
    let grad = factor.inverse().scale(-factor.det());
    Ok((-det, grad))
}

/// `J = -ln det(S + εI)` with gradient `-(S + εI)⁻¹`.
///
/// A non-positive `epsilon` is replaced by [`DEFAULT_EPSILON`]. One tenfold
/// escalation is attempted before `NotPositiveDefinite` is returned; value
/// and gradient always share the jitter that succeeded.
pub fn j_logdet(sim: &SimilarityMatrix, epsilon: f64) -> Result<(f64, Matrix)> {
    let (factor, _) =
        cholesky_escalating(sim.matrix(), effective_epsilon(epsilon), LOGDET_JITTER_RETRIES)?;
    Ok((-factor.logdet(), factor.inverse().scale(-1.0)))
}

fn effective_epsilon(epsilon: f64) -> f64 {
    if epsilon.is_finite() && epsilon > 0.0 {
        epsilon
    } else {
        DEFAULT_EPSILON
    }
}

/// `Σ_i ‖Φ(x_i)‖²` over the batch, with gradient `2Φ`.
pub fn activation_penalty(acts: &ActivationBatch) -> (f64, Matrix) {
    let v = acts.values();
    let value = v.as_slice().iter().map(|x| x * x).sum();
    (value, v.scale(2.0))
}

/// DeCov: `½(‖C‖²_F - ‖diag C‖²)` where `C = (1/m) X̃ᵀX̃` is the population
/// covariance of the centred activations `X̃`.
///
/// The gradient is `(2/m) X̃ G` with `G = C` minus its diagonal; the centring
/// term vanishes because the columns of `X̃` sum to zero.
pub fn decov_loss(acts: &ActivationBatch) -> Result<(f64, Matrix)> {
    let m = acts.samples();
    if m < 2 {
        return Err(Error::BatchTooSmall { needed: 2, got: m });
    }
    let x = acts.values();
    let c = x.cols();
    let mut means = vec![0.0; c];
    for i in 0..m {
        for (mu, v) in means.iter_mut().zip(x.row(i)) {
            *mu += v;
        }
    }
    for mu in &mut means {
        *mu /= m as f64;
    }
    let centred = Matrix::from_fn(m, c, |i, j| x[(i, j)] - means[j]);
    let mut cov = matmul_tn(&centred, &centred).scale(1.0 / m as f64);
    let mut value = 0.0;
    for n in 0..c {
        cov[(n, n)] = 0.0;
        for k in 0..c {
            value += cov[(n, k)] * cov[(n, k)];
        }
    }
    let grad = crate::linalg::matmul_unchecked(&centred, &cov).scale(2.0 / m as f64);
    Ok((0.5 * value, grad))
}

/// Combined regulariser for one batch of feature-layer activations.
///
/// Terms whose coefficient is exactly zero still report their value but add
/// nothing to the gradient.
pub fn wld_reg_loss(acts: &ActivationBatch, spec: &RegularizerSpec) -> Result<RegularizerOutput> {
    spec.validate()?;
    let (m, c) = (acts.samples(), acts.units());
    let mut grad_acts = Matrix::zeros(m, c);

    match spec.variant {
        Variant::None => Ok(RegularizerOutput {
            loss: 0.0,
            grad_acts,
            diversity: 0.0,
            penalty: 0.0,
            diag_det: None,
        }),
        Variant::DeCov => {
            let (value, grad) = decov_loss(acts)?;
            if spec.lambda1 != 0.0 {
                grad_acts.add_scaled(&grad, spec.lambda1)?;
            }
            Ok(RegularizerOutput {
                loss: spec.lambda1 * value,
                grad_acts,
                diversity: value,
                penalty: 0.0,
                diag_det: None,
            })
        }
        variant => {
            let sim = pairwise_similarity_with(acts, spec.gamma, spec.kernel())?;
            let (j, grad_s, diag_det) = match variant {
                Variant::Direct => {
                    let (j, g) = j_direct(&sim);
                    (j, g, None)
                }
                Variant::Det => {
                    let (j, g) = j_det(&sim, spec.epsilon)?;
                    (j, g, Some(-j))
                }
                Variant::Logdet => {
                    let (j, g) = j_logdet(&sim, spec.epsilon)?;
                    (j, g, Some(-j))
                }
                Variant::None | Variant::DeCov => unreachable!(),
            };
            if spec.lambda1 != 0.0 {
                let g = similarity_backward(acts, &sim, &grad_s)?;
                grad_acts.add_scaled(&g, spec.lambda1)?;
            }
            let (penalty, gp) = activation_penalty(acts);
            if spec.lambda2 != 0.0 {
                grad_acts.add_scaled(&gp, spec.lambda2)?;
            }
            let loss = spec.lambda1 * j + spec.lambda2 * penalty;
            if !loss.is_finite() || !grad_acts.is_finite() {
                return Err(Error::NonFinite("wld_reg_loss"));
            }
            Ok(RegularizerOutput {
                loss,
                grad_acts,
                diversity: j,
                penalty,
                diag_det,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::pairwise_similarity;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(x: f64) -> f64 {
        x.exp()
    }

    fn two_by_two() -> SimilarityMatrix {
        let acts = ActivationBatch::from_rows(&[[0.0, 1.0]]).unwrap();
        pairwise_similarity(&acts, 1.0).unwrap()
    }

    fn sim_of(m: Matrix) -> SimilarityMatrix {
        SimilarityMatrix::from_matrix(m, 1.0).unwrap()
    }

    // Batch with pairwise gaps of at least `min_gap` on every sample, so the
    // absolute kernel is differentiable within the finite-difference step.
    fn tie_free_batch(rng: &mut ChaCha8Rng, m: usize, c: usize, spread: f64) -> Vec<Vec<f64>> {
        loop {
            let rows: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..c).map(|_| rng.random_range(-spread..spread)).collect())
                .collect();
            let ok = rows.iter().all(|r| {
                (0..c).all(|a| ((a + 1)..c).all(|b| (r[a] - r[b]).abs() > 1e-3))
            });
            if ok {
                return rows;
            }
        }
    }

    fn fd_error(rows: &[Vec<f64>], spec: &RegularizerSpec) -> f64 {
        let acts = ActivationBatch::from_rows(rows).unwrap();
        let analytic = wld_reg_loss(&acts, spec).unwrap().grad_acts;
        let h = 1e-6;
        let f = |r: &[Vec<f64>]| wld_reg_loss(&ActivationBatch::from_rows(r).unwrap(), spec).unwrap().loss;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = analytic.max_abs();
        for j in 0..rows.len() {
            for n in 0..rows[0].len() {
                let mut p = rows.to_vec();
                p[j][n] += h;
                let mut q = rows.to_vec();
                q[j][n] -= h;
                let fd = (f(&p) - f(&q)) / (2.0 * h);
                scale = scale.max(fd.abs());
                worst = worst.max((fd - analytic[(j, n)]).abs());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    #[test]
    fn direct_examples() {
        let (j, g) = j_direct(&two_by_two());
        assert!((j - 2.0 * e(-1.0)).abs() < 1e-15);
        assert!((j - 0.7357589).abs() < 1e-7);
        assert_eq!(g, Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap());
        assert_eq!(j_direct(&sim_of(Matrix::identity(4))).0, 0.0);
        assert_eq!(j_direct(&sim_of(Matrix::filled(5, 5, 1.0))).0, 20.0);
    }

    #[test]
    fn det_examples() {
        assert_eq!(j_det(&sim_of(Matrix::identity(3)), 1e-6).unwrap().0, -1.0);
        let (j, _) = j_det(&two_by_two(), 1e-6).unwrap();
        assert!((j + (1.0 - e(-2.0))).abs() < 1e-12);
        assert!((j + 0.8646647).abs() < 1e-7);
        let (j, g) = j_det(&sim_of(Matrix::filled(2, 2, 1.0)), 1e-6).unwrap();
        assert_eq!(j, 0.0);
        assert!(g.is_finite());
    }

    #[test]
    fn logdet_examples() {
        let (j, _) = j_logdet(&sim_of(Matrix::identity(2)), 1e-6).unwrap();
        assert!((j + 2.0 * (1.0 + 1e-6f64).ln()).abs() < 1e-15);
        assert!((j + 2.0e-6).abs() < 1e-11);

        let eps = 1e-6;
        let (j, _) = j_logdet(&two_by_two(), 0.0).unwrap();
        let expected = -((1.0 + eps) * (1.0 + eps) - e(-2.0)).ln();
        assert!((j - expected).abs() < 1e-12);
        assert!((j - 0.1454111).abs() < 1e-7);

        let (j, _) = j_logdet(&sim_of(Matrix::filled(2, 2, 1.0)), eps).unwrap();
        let expected = -(2.0 * eps + eps * eps).ln();
        assert!((j - expected).abs() < 1e-6 * expected.abs());
        assert!((j - 13.12).abs() < 0.01);
    }

    #[test]
    fn logdet_gradient_is_negative_inverse() {
        let s = two_by_two();
        let (_, g) = j_logdet(&s, 1e-6).unwrap();
        let a = 1.0 + 1e-6;
        let b = e(-1.0);
        let det = a * a - b * b;
        let expected = Matrix::from_rows(&[[-a / det, b / det], [b / det, -a / det]]).unwrap();
        assert!(g.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn penalty_examples() {
        let (v, g) = activation_penalty(&ActivationBatch::from_rows(&[[3.0, 4.0]]).unwrap());
        assert_eq!(v, 25.0);
        assert_eq!(g.as_slice(), &[6.0, 8.0]);
        assert_eq!(activation_penalty(&ActivationBatch::new(Matrix::zeros(3, 2)).unwrap()).0, 0.0);
        assert_eq!(activation_penalty(&ActivationBatch::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()).0, 2.0);
    }

    #[test]
    fn decov_examples() {
        let constant = ActivationBatch::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]).unwrap();
        assert_eq!(decov_loss(&constant).unwrap().0, 0.0);
        let acts = ActivationBatch::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert!((decov_loss(&acts).unwrap().0 - 0.0625).abs() < 1e-15);
        let one_unit = ActivationBatch::from_rows(&[[0.3], [1.0], [-2.0]]).unwrap();
        assert_eq!(decov_loss(&one_unit).unwrap().0, 0.0);
        let single = ActivationBatch::from_rows(&[[0.3, 1.0]]).unwrap();
        assert!(matches!(decov_loss(&single), Err(Error::BatchTooSmall { .. })));
    }

    #[test]
    fn decov_scales_as_fourth_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = tie_free_batch(&mut rng, 6, 4, 2.0);
        let acts = ActivationBatch::from_rows(&rows).unwrap();
        let half = ActivationBatch::new(acts.values().scale(0.5)).unwrap();
        let (a, _) = decov_loss(&acts).unwrap();
        let (b, _) = decov_loss(&half).unwrap();
        assert!((b - a * 0.0625).abs() <= 1e-9 * b.abs());
    }

    #[test]
    fn combined_examples() {
        let acts = ActivationBatch::from_rows(&[[3.0, 4.0]]).unwrap();
        let none = wld_reg_loss(&acts, &RegularizerSpec::none()).unwrap();
        assert_eq!(none.loss, 0.0);
        assert_eq!(none.grad_acts, Matrix::zeros(1, 2));

        let spec = RegularizerSpec::new(Variant::Direct).with_lambdas(0.0, 1.0);
        assert_eq!(wld_reg_loss(&acts, &spec).unwrap().loss, 25.0);

        let acts = ActivationBatch::from_rows(&[[0.0, 1.0]]).unwrap();
        let spec = RegularizerSpec::new(Variant::Direct).with_lambdas(1.0, 0.0).with_gamma(1.0);
        let out = wld_reg_loss(&acts, &spec).unwrap();
        assert!((out.loss - 2.0 * e(-1.0)).abs() < 1e-15);
        assert!(fd_error(&[vec![0.0, 1.0]], &spec) <= 1e-5);
    }

    #[test]
    fn zero_lambdas_give_zero_gradient() {
        let acts = ActivationBatch::from_rows(&[[0.1, 0.9, -0.4], [0.5, 0.2, 0.3]]).unwrap();
        for v in [Variant::Direct, Variant::Det, Variant::Logdet, Variant::DeCov] {
            let out = wld_reg_loss(&acts, &RegularizerSpec::new(v).with_lambdas(0.0, 0.0)).unwrap();
            assert_eq!(out.loss, 0.0);
            assert_eq!(out.grad_acts, Matrix::zeros(2, 3));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for variant in [Variant::Direct, Variant::Det, Variant::Logdet, Variant::DeCov] {
            for m in [1, 2, 5] {
                if variant == Variant::DeCov && m < 2 {
                    continue;
                }
                for c in [2, 3, 8] {
                    let rows = tie_free_batch(&mut rng, m, c, 1.5);
                    let spec = RegularizerSpec::new(variant).with_lambdas(0.7, 0.05).with_gamma(1.0);
                    let err = fd_error(&rows, &spec);
                    assert!(err <= 1e-5, "{variant} m={m} c={c}: {err:e}");
                }
            }
        }
    }

    #[test]
    fn smooth_kernel_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for variant in [Variant::Direct, Variant::Det, Variant::Logdet] {
            let rows = tie_free_batch(&mut rng, 4, 5, 1.0);
            let mut spec = RegularizerSpec::new(variant).with_lambdas(1.0, 0.1).with_gamma(2.0);
            spec.smooth_kernel = true;
            assert!(fd_error(&rows, &spec) <= 1e-5);
        }
    }

    #[test]
    fn bounds_hold_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let eps = 1e-6;
        for _ in 0..200 {
            let m = rng.random_range(1..6);
            let c = rng.random_range(2..9);
            let rows = tie_free_batch(&mut rng, m, c, 2.0);
            let sim = pairwise_similarity(&ActivationBatch::from_rows(&rows).unwrap(), rng.random_range(0.1..5.0)).unwrap();
            let (jd, _) = j_direct(&sim);
            assert!(jd >= 0.0 && jd <= (c * (c - 1)) as f64);
            let (jdet, _) = j_det(&sim, eps).unwrap();
            assert!((-1.0..=0.0).contains(&jdet));
            let (jl, _) = j_logdet(&sim, eps).unwrap();
            assert!(jl >= -(c as f64) * (1.0 + eps).ln() - 1e-12);
        }
    }

    #[test]
    fn more_spread_batch_is_more_diverse() {
        // Batch A's pairwise distances dominate batch B's on every sample.
        let b = vec![vec![0.0, 0.2, 0.5, 0.6], vec![1.0, 0.7, 0.9, 1.3]];
        let a: Vec<Vec<f64>> = b.iter().map(|r| r.iter().map(|v| v * 1.8).collect()).collect();
        for variant in [Variant::Direct, Variant::Det, Variant::Logdet] {
            let spec = RegularizerSpec::new(variant).with_lambdas(1.0, 0.0).with_gamma(1.0);
            let ja = wld_reg_loss(&ActivationBatch::from_rows(&a).unwrap(), &spec).unwrap().loss;
            let jb = wld_reg_loss(&ActivationBatch::from_rows(&b).unwrap(), &spec).unwrap().loss;
            assert!(ja <= jb, "{variant}: {ja} > {jb}");
        }
    }

    #[test]
    fn penalty_repairs_scale_anti_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let rows = tie_free_batch(&mut rng, 8, 6, 1.0);
        let acts = ActivationBatch::from_rows(&rows).unwrap();
        let scaled = ActivationBatch::new(acts.values().scale(10.0)).unwrap();
        let j_only = RegularizerSpec::new(Variant::Direct).with_lambdas(0.001, 0.0);
        assert!(wld_reg_loss(&scaled, &j_only).unwrap().loss < wld_reg_loss(&acts, &j_only).unwrap().loss);
        let full = RegularizerSpec::new(Variant::Direct).with_lambdas(0.001, 0.001);
        assert!(wld_reg_loss(&scaled, &full).unwrap().loss > wld_reg_loss(&acts, &full).unwrap().loss);
    }

    #[test]
    fn diag_det_reported() {
        let acts = ActivationBatch::from_rows(&[[0.0, 1.0]]).unwrap();
        let spec = RegularizerSpec::new(Variant::Det).with_gamma(1.0);
        let d = wld_reg_loss(&acts, &spec).unwrap().diag_det.unwrap();
        assert!((d - (1.0 - e(-2.0))).abs() < 1e-12);
        let spec = RegularizerSpec::new(Variant::Logdet).with_gamma(1.0);
        assert!(wld_reg_loss(&acts, &spec).unwrap().diag_det.is_some());
        let spec = RegularizerSpec::new(Variant::Direct).with_gamma(1.0);
        assert!(wld_reg_loss(&acts, &spec).unwrap().diag_det.is_none());
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("logdet".parse::<Variant>().unwrap(), Variant::Logdet);
        assert_eq!("DeCov".parse::<Variant>().unwrap(), Variant::DeCov);
        assert!(matches!("logdte".parse::<Variant>(), Err(Error::UnknownVariant(_))));
    }

    #[test]
    fn regularizer_validation() {
        let mut spec = RegularizerSpec::new(Variant::Direct);
        spec.lambda1 = -1.0;
        assert!(matches!(spec.validate(), Err(Error::Schema { key, .. }) if key == "lambda1"));
        let spec = RegularizerSpec::new(Variant::Direct).with_gamma(0.0);
        assert!(spec.validate().is_err());
    }
}
