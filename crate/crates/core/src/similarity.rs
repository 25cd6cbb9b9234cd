//! Batch-averaged RBF similarity between the units of a layer.
//!
//! For a batch of `m` samples and `C` units, unit `n` is described by the
//! column of its outputs. The similarity of units `n` and `k` is
//!
//! ```text
//! s_nk = (1/m) Σ_j exp(-γ |φ_n(x_j) - φ_k(x_j)|)
//! ```
//!
//! The diagonal is pinned to exactly 1, and each unordered pair is computed
//! once so `S` is exactly symmetric.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Feature-layer outputs for a mini-batch: `m` samples by `C` units.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBatch(Matrix);

impl ActivationBatch {
    /// Wraps an `m x C` activation matrix. Requires `m >= 1`, `C >= 1` and
    /// finite entries; similarity-based losses additionally need `C >= 2`.
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "activation batch must be non-empty, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("ActivationBatch::new"));
        }
        Ok(Self(values))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    pub fn samples(&self) -> usize {
        self.0.rows()
    }

    pub fn units(&self) -> usize {
        self.0.cols()
    }
}

/// Distance transform inside the RBF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Kernel {
    /// `exp(-γ |d|)`.
    #[default]
    Absolute,
    /// `exp(-γ d²)`; differentiable everywhere.
    Squared,
}

impl Kernel {
    #[inline]
    fn eval(self, gamma: f64, d: f64) -> f64 {
        match self {
            Kernel::Absolute => (-gamma * d.abs()).exp(),
            Kernel::Squared => (-gamma * d * d).exp(),
        }
    }

    /// `d/dd exp(-γ ρ(d))` given the kernel value `e` at `d`.
    #[inline]
    fn slope(self, gamma: f64, d: f64, e: f64) -> f64 {
        match self {
            Kernel::Absolute => {
                if d > 0.0 {
                    -gamma * e
                } else if d < 0.0 {
                    gamma * e
                } else {
                    0.0
                }
            }
            Kernel::Squared => -2.0 * gamma * d * e,
        }
    }
}

/// Symmetric `C x C` unit-similarity matrix together with the bandwidth and
/// kernel that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    s: Matrix,
    gamma: f64,
    kernel: Kernel,
}

impl SimilarityMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.s
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn units(&self) -> usize {
        self.s.rows()
    }

    /// Wraps an externally built matrix, checking the structural invariants
    /// (square, exactly symmetric, unit diagonal, entries in `[0, 1]`).
    pub fn from_matrix(s: Matrix, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if !s.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "similarity matrix must be square, got {}x{}",
                s.rows(),
                s.cols()
            )));
        }
        let (diff, row, col) = s.asymmetry();
        if diff != 0.0 {
            return Err(Error::NotSymmetric { row, col, diff });
        }
        for i in 0..s.rows() {
            if s[(i, i)] != 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "similarity diagonal must be 1, found {} at {i}",
                    s[(i, i)]
                )));
            }
        }
        if s.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "similarity entries must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            s,
            gamma,
            kernel: Kernel::Absolute,
        })
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidGamma(gamma))
    }
}

/// Largest exponent magnitude allowed in a factor before falling back to
/// evaluating `exp` per pair.
const MAX_FACTOR_EXPONENT: f64 = 700.0;

/// Factorisation of the absolute kernel around each sample's midpoint `c_j`:
/// with `plus = exp(γ(x - c_j))` and `minus = exp(-γ(x - c_j))`,
/// `exp(-γ|x_n - x_k|) = min(minus_n · plus_k, minus_k · plus_n)`.
/// Costs `2mC` exponentials instead of `mC²/2` and has no data-dependent
/// branch.
struct Factored {
    plus: Matrix,
    minus: Matrix,
}

impl Factored {
    /// `None` if some sample's half-range would overflow a factor.
    fn new(cols: &Matrix, gamma: f64) -> Option<Self> {
        let (c, m) = cols.shape();
        let mut centre = vec![0.0; m];
        for (j, mid) in centre.iter_mut().enumerate() {
            let (lo, hi) = (0..c).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), n| {
                (lo.min(cols[(n, j)]), hi.max(cols[(n, j)]))
            });
            if gamma * (hi - lo) * 0.5 > MAX_FACTOR_EXPONENT {
                return None;
            }
            *mid = 0.5 * (lo + hi);
        }
        Some(Self {
            plus: Matrix::from_fn(c, m, |n, j| (gamma * (cols[(n, j)] - centre[j])).exp()),
            minus: Matrix::from_fn(c, m, |n, j| (-gamma * (cols[(n, j)] - centre[j])).exp()),
        })
    }

    /// `(kernel value, x_n - x_k)` for every sample, values clamped to 1.
    fn pair<'a>(&'a self, cols: &'a Matrix, n: usize, k: usize) -> impl Iterator<Item = (f64, f64)> + 'a {
        let d = cols.row(n).iter().zip(cols.row(k)).map(|(a, b)| a - b);
        let up = self.minus.row(n).iter().zip(self.plus.row(k)).map(|(a, b)| a * b);
        let down = self.minus.row(k).iter().zip(self.plus.row(n)).map(|(a, b)| a * b);
        up.zip(down).zip(d).map(|((u, v), d)| (u.min(v).min(1.0), d))
    }
}

// Unit-major copy: row n holds unit n's outputs over the batch.
fn unit_major(acts: &ActivationBatch) -> Matrix {
    acts.values().transpose()
}

/// Pairwise similarity with the default absolute-distance kernel.
pub fn pairwise_similarity(acts: &ActivationBatch, gamma: f64) -> Result<SimilarityMatrix> {
    pairwise_similarity_with(acts, gamma, Kernel::Absolute)
}

pub fn pairwise_similarity_with(
    acts: &ActivationBatch,
    gamma: f64,
    kernel: Kernel,
) -> Result<SimilarityMatrix> {
    check_gamma(gamma)?;
    let c = acts.units();
    if c < 2 {
        return Err(Error::DimensionMismatch(format!(
            "similarity needs at least 2 units, got {c}"
        )));
    }
    let inv_m = 1.0 / acts.samples() as f64;
    let cols = unit_major(acts);
    let factored = match kernel {
        Kernel::Absolute => Factored::new(&cols, gamma),
        Kernel::Squared => None,
    };
    let mut s = Matrix::identity(c);
    for n in 0..c {
        for k in (n + 1)..c {
            let acc: f64 = match &factored {
                Some(f) => f.pair(&cols, n, k).map(|(e, _)| e).sum(),
                None => cols
                    .row(n)
                    .iter()
                    .zip(cols.row(k))
                    .map(|(a, b)| kernel.eval(gamma, a - b))
                    .sum(),
            };
            let v = acc * inv_m;
            s[(n, k)] = v;
            s[(k, n)] = v;
        }
    }
    Ok(SimilarityMatrix { s, gamma, kernel })
}

/// Pulls a gradient on `S` back to the activations.
///
/// Returns `∂(Σ_{n,k} grad_s[n,k] · s_nk) / ∂acts` with shape `m x C`. The
/// diagonal of `grad_s` is ignored since `s_nn` is constant. For the
/// absolute kernel the derivative at a tie is taken as 0.
pub fn similarity_backward(
    acts: &ActivationBatch,
    sim: &SimilarityMatrix,
    grad_s: &Matrix,
) -> Result<Matrix> {
    let c = acts.units();
    let m = acts.samples();
    if sim.units() != c || grad_s.shape() != (c, c) {
        return Err(Error::DimensionMismatch(format!(
            "similarity backward: {c} units, S is {0}x{0}, grad_s is {1}x{2}",
            sim.units(),
            grad_s.rows(),
            grad_s.cols()
        )));
    }
    let gamma = sim.gamma;
    let kernel = sim.kernel;
    let inv_m = 1.0 / m as f64;
    let cols = unit_major(acts);
    let factored = match kernel {
        Kernel::Absolute => Factored::new(&cols, gamma),
        Kernel::Squared => None,
    };
    // Accumulate in unit-major layout, transpose once at the end.
    let mut grad_t = Matrix::zeros(c, m);
    for n in 0..c {
        for k in (n + 1)..c {
            let w = (grad_s[(n, k)] + grad_s[(k, n)]) * inv_m;
            if w == 0.0 {
                continue;
            }
            let (head, tail) = grad_t.as_mut_slice().split_at_mut(k * m);
            let (gn, gk) = (&mut head[n * m..(n + 1) * m], &mut tail[..m]);
            match &factored {
                Some(f) => {
                    let wg = -w * gamma;
                    for (j, (e, d)) in f.pair(&cols, n, k).enumerate() {
                        // sign(0) = 0
                        let sign = ((d > 0.0) as i8 - (d < 0.0) as i8) as f64;
                        let g = wg * sign * e;
                        gn[j] += g;
                        gk[j] -= g;
                    }
                }
                None => {
                    for (j, (a, b)) in cols.row(n).iter().zip(cols.row(k)).enumerate() {
                        let d = a - b;
                        let g = w * kernel.slope(gamma, d, kernel.eval(gamma, d));
                        gn[j] += g;
                        gk[j] -= g;
                    }
                }
            }
        }
    }
    Ok(grad_t.transpose())
}
