//! Finite-difference verification of every analytic gradient.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diversity::{activation_penalty, decov_loss, wld_reg_loss, RegularizerSpec, Variant};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{evaluate_step, Activation, Mlp};
use crate::similarity::{pairwise_similarity, similarity_backward, ActivationBatch};

pub const DEFAULT_TOLERANCE: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-6;

/// Minimum pairwise gap between unit outputs of every sample, keeping the
/// absolute-distance kernel differentiable within the step.
const MIN_TIE_GAP: f64 = 1e-3;
const SHAPES: [(usize, usize); 5] = [(1, 2), (2, 3), (5, 3), (5, 8), (2, 8)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Similarity,
    Direct,
    Det,
    Logdet,
    Penalty,
    DeCov,
    /// The unregularised path; its gradient is identically zero.
    None,
    /// Full augmented loss w.r.t. every weight of a tanh classifier.
    Network(Variant),
}

impl Component {
    pub fn all() -> Vec<Component> {
        let mut v = vec![
            Component::Similarity,
            Component::Direct,
            Component::Det,
            Component::Logdet,
            Component::Penalty,
            Component::DeCov,
            Component::None,
        ];
        v.extend(Variant::ALL.iter().map(|&x| Component::Network(x)));
        v
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Similarity => f.write_str("similarity"),
            Component::Direct => f.write_str("direct"),
            Component::Det => f.write_str("det"),
            Component::Logdet => f.write_str("logdet"),
            Component::Penalty => f.write_str("penalty"),
            Component::DeCov => f.write_str("decov"),
            Component::None => f.write_str("none"),
            Component::Network(v) => write!(f, "network-{v}"),
        }
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("network-") {
            return Ok(Component::Network(v.parse()?));
        }
        Component::all()
            .into_iter()
            .find(|c| c.to_string() == lower)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown gradcheck component {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// `max |analytic - fd| / max(‖analytic‖∞, ‖fd‖∞)`; zero when both vanish.
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub tolerance: f64,
    pub results: Vec<CheckResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(
                f,
                "{:<16} {:>6} coords  max_rel_err={:.3e}  {}",
                r.name,
                r.checked,
                r.max_rel_error,
                if r.passed { "PASS" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "{} (tol {:.1e})",
            if self.passed() { "all components passed" } else { "gradient check FAILED" },
            self.tolerance
        )
    }
}

/// Central differences of `f` at `x`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + step;
            let up = f(&p);
            p[i] = x[i] - step;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = inf(analytic).max(inf(numeric));
    if scale == 0.0 {
        return 0.0;
    }
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

/// Compares `analytic` with central differences of `f` at `x`.
pub fn check_gradient(
    name: &str,
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    tol: f64,
) -> CheckResult {
    let numeric = finite_difference(f, x, FD_STEP);
    let err = if analytic.len() == numeric.len() {
        max_relative_error(analytic, &numeric)
    } else {
        f64::INFINITY
    };
    CheckResult {
        name: name.to_string(),
        max_rel_error: err,
        checked: x.len(),
        passed: err <= tol,
    }
}

fn merge(name: &str, parts: Vec<CheckResult>, tol: f64) -> CheckResult {
    let max_rel_error = parts.iter().fold(0.0f64, |m, r| m.max(r.max_rel_error));
    CheckResult {
        name: name.to_string(),
        max_rel_error,
        checked: parts.iter().map(|r| r.checked).sum(),
        passed: parts.iter().all(|r| r.passed) && max_rel_error <= tol,
    }
}

fn tie_free(rng: &mut ChaCha8Rng, m: usize, c: usize) -> Matrix {
    loop {
        let a = Matrix::from_fn(m, c, |_, _| rng.random_range(-1.0..1.0));
        let ok = (0..m).all(|j| {
            let r = a.row(j);
            (0..c).all(|x| ((x + 1)..c).all(|y| (r[x] - r[y]).abs() > MIN_TIE_GAP))
        });
        if ok {
            return a;
        }
    }
}

fn acts(m: usize, c: usize, x: &[f64]) -> ActivationBatch {
    ActivationBatch::new(Matrix::new(m, c, x.to_vec()).expect("shape fixed by caller"))
        .expect("finite batch")
}

/// Runs the selected suites on seeded small instances.
pub fn gradcheck(selection: &[Component], tol: f64) -> Result<Report> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be > 0, got {tol}")));
    }
    let results = selection.iter().map(|&c| check_component(c, tol)).collect();
    Ok(Report { tolerance: tol, results })
}

fn check_component(component: Component, tol: f64) -> CheckResult {
    let name = component.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    if let Component::Network(v) = component {
        return merge(&name, (0..2).map(|i| network_check(&name, v, i, tol)).collect(), tol);
    }
    let parts = SHAPES
        .iter()
        .filter(|&&(m, _)| !(component == Component::DeCov && m < 2))
        .map(|&(m, c)| {
            let a = tie_free(&mut rng, m, c);
            let x = a.as_slice().to_vec();
            match component {
                Component::Similarity => {
                    let gamma = 2.0;
                    let g = Matrix::from_fn(c, c, |_, _| rng.random_range(-1.0..1.0));
                    let f = |x: &[f64]| {
                        let s = pairwise_similarity(&acts(m, c, x), gamma).expect("valid batch");
                        s.matrix().as_slice().iter().zip(g.as_slice()).map(|(s, g)| s * g).sum()
                    };
                    let b = acts(m, c, &x);
                    let s = pairwise_similarity(&b, gamma).expect("valid batch");
                    let analytic = similarity_backward(&b, &s, &g).expect("matching shapes");
                    check_gradient(&name, f, &x, analytic.as_slice(), tol)
                }
                Component::Penalty => {
                    let analytic = activation_penalty(&acts(m, c, &x)).1;
                    check_gradient(&name, |x| activation_penalty(&acts(m, c, x)).0, &x, analytic.as_slice(), tol)
                }
                Component::DeCov => {
                    let f = |x: &[f64]| decov_loss(&acts(m, c, x)).expect("m >= 2").0;
                    let analytic = decov_loss(&acts(m, c, &x)).expect("m >= 2").1;
                    check_gradient(&name, f, &x, analytic.as_slice(), tol)
                }
                _ => {
                    let variant = match component {
                        Component::Direct => Variant::Direct,
                        Component::Det => Variant::Det,
                        Component::Logdet => Variant::Logdet,
                        _ => Variant::None,
                    };
                    // diversity term alone
                    let spec = RegularizerSpec::new(variant).with_lambdas(1.0, 0.0).with_gamma(2.0);
                    let f = |x: &[f64]| wld_reg_loss(&acts(m, c, x), &spec).map_or(f64::NAN, |o| o.loss);
                    match wld_reg_loss(&acts(m, c, &x), &spec) {
                        Ok(out) => check_gradient(&name, f, &x, out.grad_acts.as_slice(), tol),
                        Err(_) => CheckResult {
                            name: name.clone(),
                            max_rel_error: f64::INFINITY,
                            checked: 0,
                            passed: false,
                        },
                    }
                }
            }
        })
        .collect();
    merge(&name, parts, tol)
}

fn network_check(name: &str, variant: Variant, instance: u64, tol: f64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0xfeed + instance);
    let x = Matrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
    let labels = [0, 1, 1, 0];
    let mlp = Mlp::classifier(3, &[6, 5], Activation::Tanh, 2, 3 + instance).expect("valid architecture");
    let spec = RegularizerSpec::new(variant).with_lambdas(0.5, 0.05).with_gamma(2.0);
    let loss_at = |p: &[f64]| {
        let mut m = mlp.clone();
        m.set_parameters(p).expect("same parameter count");
        evaluate_step(&m, &x, &labels, &spec).map_or(f64::NAN, |(s, _)| s.total_loss)
    };
    match evaluate_step(&mlp, &x, &labels, &spec) {
        Ok((_, grads)) => check_gradient(name, loss_at, &mlp.parameters(), &grads.flatten(), tol),
        Err(_) => CheckResult {
            name: name.to_string(),
            max_rel_error: f64::INFINITY,
            checked: 0,
            passed: false,
        },
    }
}
