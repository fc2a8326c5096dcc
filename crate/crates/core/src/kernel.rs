//! Kernel-operator algebra on a discretized ground space.
//!
//! The computational object is the weighted symmetrization
//! `Kt[i,j] = sqrt(u_i) K(x_i,x_j) sqrt(u_j)` with `u_j = rho(x_j) w_j`,
//! so that operator statements (traces, Fredholm determinants, the
//! J-operator) become exact finite matrix statements. The raw kernel values
//! `K(x_i,x_j)` are retained for pointwise formulas (correlations, Janossy
//! densities).
//!
//! Admissible operators have spectrum in `[0, 1)`; this is enforced at
//! construction (tolerance 1e-12) because every downstream formula assumes
//! it. The J-operator `(I + a K)^{-1} K` escapes the unit bound by design and
//! is constructed through an unchecked path.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::GroundSpace;

pub const SPECTRUM_TOL: f64 = 1e-12;
pub const SYMMETRY_TOL: f64 = 1e-10;
pub const SERIES_TOL: f64 = 1e-15;
pub const SERIES_MAX_TERMS: usize = 10_000;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kernel is not symmetric: |K(x{i},x{j}) - K(x{j},x{i})| = {diff:e} exceeds {tol:e}")]
    Asymmetry {
        i: usize,
        j: usize,
        diff: f64,
        tol: f64,
    },
    #[error("spectrum violation: eigenvalue {value} at position {index} outside [0, 1)")]
    SpectrumViolation { index: usize, value: f64 },
    #[error("trace series stopped converging at term {term} (|t_n| = {magnitude:e})")]
    SeriesDivergence { term: usize, magnitude: f64 },
    #[error("negative rescaling weight g(x_{0}) < 0")]
    NegativeWeight(usize),
    #[error("map is not invertible on the node set: {0}")]
    NotInvertible(String),
    #[error("kernel matrix size {got} does not match space size {want}")]
    SizeMismatch { got: usize, want: usize },
    #[error("off-node extension requires a closed-form kernel function")]
    ExtensionUnavailable,
    #[error("kernel derivative unavailable for this kernel type")]
    DerivativeUnavailable,
    #[error("alpha = {0} is not admissible (need 2/m, -1/m or 0)")]
    InvalidAlpha(f64),
}

/// Admissible family parameter: `A = {2/m} U {-1/m} U {0}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlphaParameter {
    /// `alpha = -1/m`, the determinantal family (`m = 1` is the DPP).
    Determinantal { m: u32 },
    /// `alpha = 2/m`, the permanental family (`m = 2` gives `alpha = 1`).
    Permanental { m: u32 },
    /// `alpha = 0`, the Poisson limit.
    PoissonLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaKind {
    DeterminantalFamily,
    PermanentalFamily,
    PoissonLimit,
}

impl AlphaParameter {
    pub const DPP: AlphaParameter = AlphaParameter::Determinantal { m: 1 };

    pub fn value(&self) -> f64 {
        match *self {
            AlphaParameter::Determinantal { m } => -1.0 / m as f64,
            AlphaParameter::Permanental { m } => 2.0 / m as f64,
            AlphaParameter::PoissonLimit => 0.0,
        }
    }

    pub fn kind(&self) -> AlphaKind {
        match self {
            AlphaParameter::Determinantal { .. } => AlphaKind::DeterminantalFamily,
            AlphaParameter::Permanental { .. } => AlphaKind::PermanentalFamily,
            AlphaParameter::PoissonLimit => AlphaKind::PoissonLimit,
        }
    }

    /// Rational `num/den` must reduce to `2/m`, `-1/m` or `0`.
    pub fn from_rational(num: i64, den: i64) -> Result<Self, KernelError> {
        if den == 0 {
            return Err(KernelError::InvalidAlpha(f64::NAN));
        }
        let (mut n, mut d) = (num, den);
        if d < 0 {
            n = -n;
            d = -d;
        }
        let g = gcd(n.unsigned_abs(), d as u64).max(1);
        n /= g as i64;
        d /= g as i64;
        match n {
            0 => Ok(AlphaParameter::PoissonLimit),
            -1 => Ok(AlphaParameter::Determinantal { m: d as u32 }),
            1 => {
                // 1/d = 2/(2d)
                Ok(AlphaParameter::Permanental { m: 2 * d as u32 })
            }
            2 => Ok(AlphaParameter::Permanental { m: d as u32 }),
            _ => Err(KernelError::InvalidAlpha(n as f64 / d as f64)),
        }
    }

    /// Parse strings such as `"-1/2"`, `"2"`, `"1"`, `"0"`.
    pub fn parse(s: &str) -> Result<Self, KernelError> {
        let s = s.trim().replace('\u{2212}', "-");
        let (num, den) = match s.split_once('/') {
            Some((a, b)) => (
                a.trim().parse::<i64>().map_err(|_| KernelError::InvalidAlpha(f64::NAN))?,
                b.trim().parse::<i64>().map_err(|_| KernelError::InvalidAlpha(f64::NAN))?,
            ),
            None => (
                s.parse::<i64>().map_err(|_| KernelError::InvalidAlpha(f64::NAN))?,
                1,
            ),
        };
        Self::from_rational(num, den)
    }
}

impl std::fmt::Display for AlphaParameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            AlphaParameter::Determinantal { m: 1 } => write!(f, "-1"),
            AlphaParameter::Determinantal { m } => write!(f, "-1/{m}"),
            AlphaParameter::Permanental { m: 1 } => write!(f, "2"),
            AlphaParameter::Permanental { m: 2 } => write!(f, "1"),
            AlphaParameter::Permanental { m } => write!(f, "2/{m}"),
            AlphaParameter::PoissonLimit => write!(f, "0"),
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Closed-form kernel functions on `[0,1] x [0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelFn {
    /// `c * exp(-(x-y)^2 / l^2)`
    Gaussian { amplitude: f64, length_scale: f64 },
    /// `c * exp(-|x-y| / l)` (not differentiable on the diagonal)
    Exponential { amplitude: f64, length_scale: f64 },
    /// `sum_k c_k phi_k(x) phi_k(y)` over the cosine basis
    /// `phi_0 = 1, phi_k = sqrt(2) cos(k pi x)`.
    FiniteRank { coefficients: Vec<f64> },
    /// Explicit raw kernel values at the nodes (no off-node form).
    #[serde(skip)]
    Explicit { matrix: DMatrix<f64> },
}

impl KernelFn {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            KernelFn::Gaussian {
                amplitude,
                length_scale,
            } => {
                let d = (x - y) / length_scale;
                amplitude * (-d * d).exp()
            }
            KernelFn::Exponential {
                amplitude,
                length_scale,
            } => amplitude * (-(x - y).abs() / length_scale).exp(),
            KernelFn::FiniteRank { coefficients } => {
                let mut s = 0.0;
                for (k, &c) in coefficients.iter().enumerate() {
                    s += c * cosine_basis(k, x) * cosine_basis(k, y);
                }
                s
            }
            KernelFn::Explicit { .. } => {
                panic!("explicit kernels have no off-node values; index the matrix instead")
            }
        }
    }

    /// Partial derivative with respect to the first argument.
    pub fn eval_dx(&self, x: f64, y: f64) -> Result<f64, KernelError> {
        match self {
            KernelFn::Gaussian {
                amplitude,
                length_scale,
            } => {
                let d = (x - y) / length_scale;
                Ok(amplitude * (-d * d).exp() * (-2.0 * d / length_scale))
            }
            KernelFn::FiniteRank { coefficients } => {
                let mut s = 0.0;
                for (k, &c) in coefficients.iter().enumerate() {
                    s += c * cosine_basis_dx(k, x) * cosine_basis(k, y);
                }
                Ok(s)
            }
            KernelFn::Exponential { .. } | KernelFn::Explicit { .. } => {
                Err(KernelError::DerivativeUnavailable)
            }
        }
    }

    pub fn has_closed_form(&self) -> bool {
        !matches!(self, KernelFn::Explicit { .. })
    }
}

fn cosine_basis(k: usize, x: f64) -> f64 {
    if k == 0 {
        1.0
    } else {
        std::f64::consts::SQRT_2 * (k as f64 * std::f64::consts::PI * x).cos()
    }
}

fn cosine_basis_dx(k: usize, x: f64) -> f64 {
    if k == 0 {
        0.0
    } else {
        let kpi = k as f64 * std::f64::consts::PI;
        -std::f64::consts::SQRT_2 * kpi * (kpi * x).sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FredholmMethod {
    Eigen,
    TraceSeries,
}

/// Symmetric weighted kernel operator with cached spectral decomposition.
///
/// Immutable after construction; the eigendecomposition is computed eagerly
/// so instances can be shared across threads.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    space: Arc<GroundSpace>,
    raw: DMatrix<f64>,
    weighted: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    kernel_fn: Option<KernelFn>,
}

impl KernelMatrix {
    /// Build from a closed-form kernel; checks symmetry and the spectrum bound.
    pub fn build(space: GroundSpace, kernel: KernelFn) -> Result<Self, KernelError> {
        let n = space.len();
        let raw = match &kernel {
            KernelFn::Explicit { matrix } => {
                if matrix.nrows() != n || matrix.ncols() != n {
                    return Err(KernelError::SizeMismatch {
                        got: matrix.nrows(),
                        want: n,
                    });
                }
                matrix.clone()
            }
            k => {
                DMatrix::from_fn(n, n, |i, j| k.eval(space.node(i), space.node(j)))
            }
        };
        Self::from_raw_with_fn(Arc::new(space), raw, Some(kernel))
    }

    /// Build from a raw callable `K(x, y)`.
    pub fn build_from_fn<F: Fn(f64, f64) -> f64>(
        space: GroundSpace,
        kernel_fn: F,
    ) -> Result<Self, KernelError> {
        let n = space.len();
        let raw = DMatrix::from_fn(n, n, |i, j| kernel_fn(space.node(i), space.node(j)));
        Self::from_raw_with_fn(Arc::new(space), raw, None)
    }

    /// Build from explicit raw kernel values at the nodes.
    pub fn from_raw(space: GroundSpace, raw: DMatrix<f64>) -> Result<Self, KernelError> {
        Self::from_raw_with_fn(Arc::new(space), raw, None)
    }

    fn from_raw_with_fn(
        space: Arc<GroundSpace>,
        raw: DMatrix<f64>,
        kernel_fn: Option<KernelFn>,
    ) -> Result<Self, KernelError> {
        let n = space.len();
        if raw.nrows() != n || raw.ncols() != n {
            return Err(KernelError::SizeMismatch {
                got: raw.nrows(),
                want: n,
            });
        }
        check_symmetry(&raw)?;
        let weighted = weighted_from_raw(&space, &raw);
        let (eigenvalues, eigenvectors) = sorted_symmetric_eigen(&weighted);
        for (idx, &lam) in eigenvalues.iter().enumerate() {
            if lam < -SPECTRUM_TOL || lam > 1.0 - SPECTRUM_TOL {
                return Err(KernelError::SpectrumViolation {
                    index: idx,
                    value: lam,
                });
            }
        }
        let eigenvalues = eigenvalues.map(|l| l.max(0.0));
        Ok(KernelMatrix {
            space,
            raw,
            weighted,
            eigenvalues,
            eigenvectors,
            kernel_fn,
        })
    }

    /// Construction path for operators that legitimately escape the `[0,1)`
    /// bound (the J-operator, rescalings with `g > 1`).
    fn from_raw_unchecked_spectrum(
        space: Arc<GroundSpace>,
        raw: DMatrix<f64>,
        kernel_fn: Option<KernelFn>,
    ) -> Result<Self, KernelError> {
        check_symmetry(&raw)?;
        let weighted = weighted_from_raw(&space, &raw);
        let (eigenvalues, eigenvectors) = sorted_symmetric_eigen(&weighted);
        Ok(KernelMatrix {
            space,
            raw,
            weighted,
            eigenvalues,
            eigenvectors,
            kernel_fn,
        })
    }

    /// Random symmetric PSD kernel with the given maximal eigenvalue,
    /// represented as explicit raw values over the space.
    pub fn random_psd<R: rand::Rng>(
        space: GroundSpace,
        rng: &mut R,
        max_eigenvalue: f64,
    ) -> Self {
        let n = space.len();
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut psd = &b * b.transpose();
        let space = Arc::new(space);
        // scale in weighted coordinates so the top eigenvalue hits the target
        let weighted = weighted_from_raw(&space, &psd);
        let (ev, _) = sorted_symmetric_eigen(&weighted);
        let top = ev[ev.len() - 1].max(1e-300);
        psd *= max_eigenvalue / top;
        Self::from_raw_with_fn(space, psd, None).expect("scaled PSD kernel is admissible")
    }

    pub fn space(&self) -> &GroundSpace {
        &self.space
    }

    pub fn space_arc(&self) -> Arc<GroundSpace> {
        Arc::clone(&self.space)
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    pub fn raw(&self) -> &DMatrix<f64> {
        &self.raw
    }

    pub fn weighted(&self) -> &DMatrix<f64> {
        &self.weighted
    }

    /// Eigenvalues of the weighted matrix, ascending.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    pub fn kernel_fn(&self) -> Option<&KernelFn> {
        self.kernel_fn.as_ref()
    }

    pub fn trace(&self) -> f64 {
        self.weighted.trace()
    }

    /// Same operator scaled by `c >= 0` (eigen data reused, no re-decomposition).
    pub fn scaled(&self, c: f64) -> KernelMatrix {
        assert!(c >= 0.0, "kernel scaling must be nonnegative");
        KernelMatrix {
            space: Arc::clone(&self.space),
            raw: &self.raw * c,
            weighted: &self.weighted * c,
            eigenvalues: &self.eigenvalues * c,
            eigenvectors: self.eigenvectors.clone(),
            kernel_fn: None,
        }
    }

    /// Fredholm determinant `Det(I + alpha * Kt)`.
    pub fn fredholm_det(
        &self,
        alpha: AlphaParameter,
        method: FredholmMethod,
    ) -> Result<f64, KernelError> {
        self.fredholm_det_value(alpha.value(), method)
    }

    /// `Det(I + a * Kt)` for a real coefficient `a`.
    pub fn fredholm_det_value(&self, a: f64, method: FredholmMethod) -> Result<f64, KernelError> {
        match method {
            FredholmMethod::Eigen => Ok(self.eigenvalues.iter().map(|&l| 1.0 + a * l).product()),
            FredholmMethod::TraceSeries => self.fredholm_trace_series(a),
        }
    }

    /// `log Det(I + a Kt) = sum_{n>=1} (-1)^{n-1}/n trace((a Kt)^n)`,
    /// truncated at |term| < 1e-15, hard cap 10^4 terms.
    fn fredholm_trace_series(&self, a: f64) -> Result<f64, KernelError> {
        if a == 0.0 {
            return Ok(1.0);
        }
        let scaled = &self.weighted * a;
        let mut power = scaled.clone();
        let mut log_det = 0.0;
        let mut prev_mag = f64::INFINITY;
        for n in 1..=SERIES_MAX_TERMS {
            let term = sign_for(n) * power.trace() / n as f64;
            let mag = term.abs();
            if mag < SERIES_TOL {
                log_det += term;
                return Ok(log_det.exp());
            }
            if mag > prev_mag {
                return Err(KernelError::SeriesDivergence {
                    term: n,
                    magnitude: mag,
                });
            }
            log_det += term;
            prev_mag = mag;
            power *= &scaled;
        }
        Err(KernelError::SeriesDivergence {
            term: SERIES_MAX_TERMS,
            magnitude: prev_mag,
        })
    }

    /// `Det(I + alpha Kt)^{-1/alpha}`, with the Poisson-limit convention
    /// `exp(-trace Kt)` at `alpha = 0`.
    pub fn fredholm_det_power(&self, alpha: AlphaParameter) -> f64 {
        let a = alpha.value();
        if a == 0.0 {
            return (-self.trace()).exp();
        }
        let log_det: f64 = self
            .eigenvalues
            .iter()
            .map(|&l| (1.0 + a * l).ln())
            .sum();
        (-log_det / a).exp()
    }

    /// The J-operator `J = (I + alpha Kt)^{-1} Kt`; eigenvalues
    /// `l/(1 + alpha l) >= 0`. The result escapes the `[0,1)` bound.
    pub fn j_operator(&self, alpha: AlphaParameter) -> Result<KernelMatrix, KernelError> {
        let a = alpha.value();
        for (idx, &l) in self.eigenvalues.iter().enumerate() {
            if 1.0 + a * l <= 0.0 {
                return Err(KernelError::SpectrumViolation {
                    index: idx,
                    value: l,
                });
            }
        }
        let nu: Vec<f64> = self
            .eigenvalues
            .iter()
            .map(|&l| l / (1.0 + a * l))
            .collect();
        let q = &self.eigenvectors;
        let mut qnu = q.clone();
        for (k, &nu_k) in nu.iter().enumerate() {
            qnu.column_mut(k).scale_mut(nu_k);
        }
        let weighted = symmetrize(&qnu * q.transpose());
        let raw = raw_from_weighted(&self.space, &weighted);
        let (eigenvalues, eigenvectors) = sorted_symmetric_eigen(&weighted);
        Ok(KernelMatrix {
            space: Arc::clone(&self.space),
            raw,
            weighted,
            eigenvalues,
            eigenvectors,
            kernel_fn: None,
        })
    }

    /// Condition number of `I + alpha Kt` (reported by callers when > 1e12).
    pub fn j_condition(&self, alpha: AlphaParameter) -> f64 {
        let a = alpha.value();
        let vals: Vec<f64> = self.eigenvalues.iter().map(|&l| (1.0 + a * l).abs()).collect();
        let mx = vals.iter().cloned().fold(f64::MIN, f64::max);
        let mn = vals.iter().cloned().fold(f64::MAX, f64::min);
        mx / mn.max(1e-300)
    }

    /// Rescaled kernel `K[g](x,y) = sqrt(g(x)) K(x,y) sqrt(g(y))`.
    ///
    /// For `g <= 1` the spectrum bound is preserved; larger `g` is allowed
    /// (the result is not re-checked against Hypothesis-style bounds).
    pub fn rescale(&self, g: &[f64]) -> Result<KernelMatrix, KernelError> {
        assert_eq!(g.len(), self.len(), "rescaling function size mismatch");
        for (j, &gj) in g.iter().enumerate() {
            if gj < 0.0 {
                return Err(KernelError::NegativeWeight(j));
            }
        }
        let sq: Vec<f64> = g.iter().map(|&x| x.sqrt()).collect();
        let n = self.len();
        let raw = DMatrix::from_fn(n, n, |i, j| sq[i] * self.raw[(i, j)] * sq[j]);
        Self::from_raw_unchecked_spectrum(Arc::clone(&self.space), raw, None)
    }

    /// Pushforward under an index permutation `sigma` (node `i` is relabeled
    /// to `sigma[i]`): `K'(x,y) = K(sigma^{-1} x, sigma^{-1} y)` over the
    /// image space carrying the permuted masses.
    pub fn pushforward_permutation(
        &self,
        sigma: &[usize],
    ) -> Result<(KernelMatrix, GroundSpace), KernelError> {
        let n = self.len();
        if sigma.len() != n {
            return Err(KernelError::NotInvertible(format!(
                "permutation length {} != {}",
                sigma.len(),
                n
            )));
        }
        let mut inv = vec![usize::MAX; n];
        for (i, &s) in sigma.iter().enumerate() {
            if s >= n || inv[s] != usize::MAX {
                return Err(KernelError::NotInvertible(format!(
                    "index {s} hit twice or out of range"
                )));
            }
            inv[s] = i;
        }
        let sp = &self.space;
        let new_space = GroundSpace::from_parts(
            sp.nodes().to_vec(),
            (0..n).map(|i| sp.weights()[inv[i]]).collect(),
            (0..n).map(|i| sp.density()[inv[i]]).collect(),
            (0..n).map(|i| sp.beta()[inv[i]]).collect(),
        )
        .expect("permuted space stays valid");
        let raw = DMatrix::from_fn(n, n, |i, j| self.raw[(inv[i], inv[j])]);
        let pushed =
            Self::from_raw_with_fn(Arc::new(new_space.clone()), raw, None)?;
        Ok((pushed, new_space))
    }

    /// Pushforward under a smooth increasing map evaluated at the nodes.
    ///
    /// `new_nodes[j] = phi(x_j)`, `jacobian[j] = phi'(x_j)`, and
    /// `dlogjac_dx[j] = d/dx log phi'(x)|_{x_j}` (used for the image beta).
    /// The image measure keeps the node masses, so the weighted matrix — and
    /// with it trace and Fredholm determinants — is carried over exactly.
    pub fn pushforward_points(
        &self,
        new_nodes: &[f64],
        jacobian: &[f64],
        dlogjac_dx: &[f64],
    ) -> Result<(KernelMatrix, GroundSpace), KernelError> {
        let n = self.len();
        assert_eq!(new_nodes.len(), n);
        assert_eq!(jacobian.len(), n);
        assert_eq!(dlogjac_dx.len(), n);
        for j in 1..n {
            if new_nodes[j] <= new_nodes[j - 1] {
                return Err(KernelError::NotInvertible(format!(
                    "mapped nodes not increasing at index {j}"
                )));
            }
        }
        for (j, &jc) in jacobian.iter().enumerate() {
            if !(jc > 0.0) {
                return Err(KernelError::NotInvertible(format!(
                    "nonpositive jacobian at node {j}"
                )));
            }
        }
        let sp = &self.space;
        // rho'(y_j) = rho(x_j)/phi'(x_j), w'_j = w_j phi'(x_j): masses invariant.
        let weights: Vec<f64> = (0..n).map(|j| sp.weights()[j] * jacobian[j]).collect();
        let density: Vec<f64> = (0..n).map(|j| sp.density()[j] / jacobian[j]).collect();
        // beta'(y) = (beta(x) - d/dx log phi'(x)) / phi'(x)
        let beta: Vec<f64> = (0..n)
            .map(|j| (sp.beta()[j] - dlogjac_dx[j]) / jacobian[j])
            .collect();
        let new_space = GroundSpace::from_parts(new_nodes.to_vec(), weights, density, beta)
            .map_err(|e| KernelError::NotInvertible(e.to_string()))?;
        let pushed = KernelMatrix {
            space: Arc::new(new_space.clone()),
            raw: self.raw.clone(),
            weighted: self.weighted.clone(),
            eigenvalues: self.eigenvalues.clone(),
            eigenvectors: self.eigenvectors.clone(),
            kernel_fn: None,
        };
        Ok((pushed, new_space))
    }
}

fn check_symmetry(raw: &DMatrix<f64>) -> Result<(), KernelError> {
    let n = raw.nrows();
    let max_abs = raw.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let tol = SYMMETRY_TOL * max_abs.max(1e-300);
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (raw[(i, j)] - raw[(j, i)]).abs();
            if diff > tol {
                return Err(KernelError::Asymmetry {
                    i,
                    j,
                    diff,
                    tol,
                });
            }
        }
    }
    Ok(())
}

fn weighted_from_raw(space: &GroundSpace, raw: &DMatrix<f64>) -> DMatrix<f64> {
    let n = space.len();
    let sqm: Vec<f64> = (0..n).map(|j| space.mass(j).sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| sqm[i] * raw[(i, j)] * sqm[j])
}

fn raw_from_weighted(space: &GroundSpace, weighted: &DMatrix<f64>) -> DMatrix<f64> {
    let n = space.len();
    let isq: Vec<f64> = (0..n).map(|j| 1.0 / space.mass(j).sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| isq[i] * weighted[(i, j)] * isq[j])
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

fn sign_for(n: usize) -> f64 {
    if n % 2 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending (nalgebra
/// returns them unordered).
pub(crate) fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("eigenvalues are finite")
    });
    let vals = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let vecs = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (vals, vecs)
}

/// Off-node spectral extension of the J-kernel.
///
/// Eigenfunctions of K are extended off the grid through the eigen-relation
/// `psi_k(x) = (1/l_k) sum_j K(x, x_j) sqrt(u_j) e_k[j]`, and
/// `J(x,y) = sum_k nu_k psi_k(x) psi_k(y)` with `nu_k = l_k/(1 + alpha l_k)`.
/// This gives a smooth, differentiable J consistent with the discrete
/// operator (it reproduces `J` exactly at the nodes).
#[derive(Debug, Clone)]
pub struct JExtension {
    space: Arc<GroundSpace>,
    kernel_fn: KernelFn,
    alpha: AlphaParameter,
    /// per kept mode: (lambda, nu, scaled node vector `sqrt(u_j) e_k[j]`)
    modes: Vec<(f64, f64, DVector<f64>)>,
    /// J at the nodes (raw kernel values)
    j_nodes: DMatrix<f64>,
    /// d/dx J at the nodes (derivative in the first argument)
    dj_nodes: DMatrix<f64>,
}

/// Relative eigenvalue cutoff below which modes are dropped from the
/// off-node extension.
const MODE_CUTOFF: f64 = 1e-13;

impl JExtension {
    pub fn new(k: &KernelMatrix, alpha: AlphaParameter) -> Result<Self, KernelError> {
        let kernel_fn = k
            .kernel_fn()
            .cloned()
            .filter(|f| f.has_closed_form())
            .ok_or(KernelError::ExtensionUnavailable)?;
        // make sure the derivative exists up front
        kernel_fn.eval_dx(0.5, 0.5)?;
        let a = alpha.value();
        let lmax = k.max_eigenvalue().max(1e-300);
        let mut modes = Vec::new();
        for (idx, &l) in k.eigenvalues().iter().enumerate() {
            if l > MODE_CUTOFF * lmax {
                let nu = l / (1.0 + a * l);
                let mut col = DVector::zeros(k.len());
                for j in 0..k.len() {
                    col[j] = k.space().mass(j).sqrt() * k.eigenvectors()[(j, idx)];
                }
                modes.push((l, nu, col));
            }
        }
        let space = k.space_arc();
        let n = space.len();
        let mut ext = JExtension {
            space,
            kernel_fn,
            alpha,
            modes,
            j_nodes: DMatrix::zeros(n, n),
            dj_nodes: DMatrix::zeros(n, n),
        };
        let nodes: Vec<f64> = ext.space.nodes().to_vec();
        ext.j_nodes = ext.j_matrix(&nodes);
        ext.dj_nodes = ext.dj_matrix(&nodes)?;
        Ok(ext)
    }

    pub fn alpha(&self) -> AlphaParameter {
        self.alpha
    }

    pub fn space(&self) -> &GroundSpace {
        &self.space
    }

    /// `psi_k(x)` for all kept modes.
    pub fn psi(&self, x: f64) -> Vec<f64> {
        let nodes = self.space.nodes();
        let kx: Vec<f64> = nodes.iter().map(|&xj| self.kernel_fn.eval(x, xj)).collect();
        self.modes
            .iter()
            .map(|(l, _, col)| {
                let s: f64 = col.iter().zip(&kx).map(|(c, k)| c * k).sum();
                s / l
            })
            .collect()
    }

    /// `psi_k'(x)` for all kept modes.
    pub fn dpsi(&self, x: f64) -> Result<Vec<f64>, KernelError> {
        let nodes = self.space.nodes();
        let kx: Vec<f64> = nodes
            .iter()
            .map(|&xj| self.kernel_fn.eval_dx(x, xj))
            .collect::<Result<_, _>>()?;
        Ok(self
            .modes
            .iter()
            .map(|(l, _, col)| {
                let s: f64 = col.iter().zip(&kx).map(|(c, k)| c * k).sum();
                s / l
            })
            .collect())
    }

    pub fn j(&self, x: f64, y: f64) -> f64 {
        let px = self.psi(x);
        let py = self.psi(y);
        self.modes
            .iter()
            .zip(px.iter().zip(&py))
            .map(|((_, nu, _), (a, b))| nu * a * b)
            .sum()
    }

    /// `d/dx J(x, y)`.
    pub fn dj_dx(&self, x: f64, y: f64) -> Result<f64, KernelError> {
        let dx = self.dpsi(x)?;
        let py = self.psi(y);
        Ok(self
            .modes
            .iter()
            .zip(dx.iter().zip(&py))
            .map(|((_, nu, _), (a, b))| nu * a * b)
            .sum())
    }

    /// J evaluated on a point set (raw kernel values).
    pub fn j_matrix(&self, pts: &[f64]) -> DMatrix<f64> {
        let psis: Vec<Vec<f64>> = pts.iter().map(|&x| self.psi(x)).collect();
        DMatrix::from_fn(pts.len(), pts.len(), |i, j| {
            self.modes
                .iter()
                .enumerate()
                .map(|(k, (_, nu, _))| nu * psis[i][k] * psis[j][k])
                .sum()
        })
    }

    /// `d/dx J` (first argument) on a point set.
    pub fn dj_matrix(&self, pts: &[f64]) -> Result<DMatrix<f64>, KernelError> {
        let psis: Vec<Vec<f64>> = pts.iter().map(|&x| self.psi(x)).collect();
        let dpsis: Vec<Vec<f64>> = pts
            .iter()
            .map(|&x| self.dpsi(x))
            .collect::<Result<_, _>>()?;
        Ok(DMatrix::from_fn(pts.len(), pts.len(), |i, j| {
            self.modes
                .iter()
                .enumerate()
                .map(|(k, (_, nu, _))| nu * dpsis[i][k] * psis[j][k])
                .sum()
        }))
    }

    /// Cached J at the nodes.
    pub fn j_nodes(&self) -> &DMatrix<f64> {
        &self.j_nodes
    }

    /// Cached `d/dx J` at the nodes.
    pub fn dj_nodes(&self) -> &DMatrix<f64> {
        &self.dj_nodes
    }
}
