//! Mirror maps, Bregman divergences, and the proximal update.
//!
//! Two geometries are supported:
//!
//! * **Negative entropy** on the probability simplex, `R(x) = sum x_i ln x_i`.
//!   Its Bregman divergence is the KL divergence `sum x_i ln(x_i / y_i)`, the
//!   proximal step is the exponentiated-gradient update
//!   `x'_i = x_i exp(-a g_i) / sum_j x_j exp(-a g_j)`, and the Hessian at an
//!   interior point is `diag(1/x_i)`. Strong convexity modulus is 1 with
//!   respect to the l1 norm (Pinsker), with dual norm l-infinity.
//! * **Squared Euclidean**, `R(x) = ||x||^2 / 2`. The Bregman divergence is
//!   `||x - y||^2 / 2`, the proximal step is the Euclidean projection of
//!   `x - a g` onto the simplex, and the modulus is 1 w.r.t. the l2 norm.
//!
//! The exponentiated-gradient update is computed in log space with
//! max-subtraction so that large `a * ||g||` cannot overflow; by shift
//! invariance of the normalized exponential this leaves the result unchanged.
//! Coordinates are never clamped inside the update itself: started from a
//! strictly interior point the update is interior-preserving in exact
//! arithmetic, and clamping would bias the iteration.

use crate::error::{MirrorError, Result};

/// Tolerance on `|sum(coords) - 1|` enforced by [`SimplexPoint`].
pub const SIMPLEX_SUM_TOL: f64 = 1e-12;

/// Which potential the mirror map uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    /// `R(x) = sum_i x_i ln x_i` on the simplex.
    NegativeEntropy,
    /// `R(x) = ||x||_2^2 / 2`.
    SquaredEuclidean,
}

/// Norms in which constants are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    LInf,
}

/// A point on the probability simplex: nonnegative coordinates summing to 1.
///
/// The sum constraint is validated to [`SIMPLEX_SUM_TOL`] on every
/// construction; operations that produce new points go through [`Self::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    coords: Vec<f64>,
}

impl SimplexPoint {
    /// Validates and wraps a coordinate vector.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(MirrorError::Domain("simplex point needs d >= 1".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(MirrorError::NonFiniteInput("simplex coordinates".into()));
        }
        if let Some(c) = coords.iter().find(|c| **c < 0.0) {
            return Err(MirrorError::Domain(format!(
                "negative simplex coordinate {c}"
            )));
        }
        let sum: f64 = coords.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(MirrorError::Domain(format!(
                "simplex coordinates sum to {sum}, not 1"
            )));
        }
        Ok(Self { coords })
    }

    /// The uniform point `(1/d, ..., 1/d)`.
    pub fn uniform(d: usize) -> Self {
        assert!(d >= 1, "uniform point needs d >= 1");
        Self {
            coords: vec![1.0 / d as f64; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.coords
    }

    /// Smallest coordinate; positive iff the point is strictly interior.
    pub fn min_coord(&self) -> f64 {
        self.coords.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_strictly_interior(&self) -> bool {
        self.min_coord() > 0.0
    }
}

impl AsRef<[f64]> for SimplexPoint {
    fn as_ref(&self) -> &[f64] {
        &self.coords
    }
}

/// A mirror-map geometry bundle: potential, gradient, Hessian diagonal,
/// Bregman divergence, proximal update, and norm/constant metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MirrorMap {
    kind: MapKind,
}

impl MirrorMap {
    pub fn negative_entropy() -> Self {
        Self {
            kind: MapKind::NegativeEntropy,
        }
    }

    pub fn squared_euclidean() -> Self {
        Self {
            kind: MapKind::SquaredEuclidean,
        }
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    /// Strong-convexity modulus of `R` in the reference norm.
    ///
    /// 1 for negative entropy w.r.t. l1 (Pinsker) and 1 for the squared
    /// Euclidean potential w.r.t. l2.
    pub fn sigma_r(&self) -> f64 {
        1.0
    }

    /// Norm in which `sigma_r` and iterate distances are measured.
    pub fn reference_norm(&self) -> Norm {
        match self.kind {
            MapKind::NegativeEntropy => Norm::L1,
            MapKind::SquaredEuclidean => Norm::L2,
        }
    }

    /// Dual of the reference norm, used for gradient bounds.
    pub fn dual_norm(&self) -> Norm {
        match self.kind {
            MapKind::NegativeEntropy => Norm::LInf,
            MapKind::SquaredEuclidean => Norm::L2,
        }
    }

    /// Potential value `R(x)`. Uses the convention `0 ln 0 = 0`.
    pub fn potential(&self, x: &[f64]) -> f64 {
        match self.kind {
            MapKind::NegativeEntropy => x
                .iter()
                .map(|&xi| if xi > 0.0 { xi * xi.ln() } else { 0.0 })
                .sum(),
            MapKind::SquaredEuclidean => 0.5 * x.iter().map(|&xi| xi * xi).sum::<f64>(),
        }
    }

    /// Gradient of the potential; requires strict interiority under entropy.
    pub fn grad_potential(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            MapKind::NegativeEntropy => {
                check_interior(x)?;
                Ok(x.iter().map(|&xi| xi.ln() + 1.0).collect())
            }
            MapKind::SquaredEuclidean => Ok(x.to_vec()),
        }
    }

    /// Diagonal of the Hessian of `R` at `x`: `1/x_i` for entropy, 1 for
    /// the Euclidean potential.
    pub fn hessian_diag(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            MapKind::NegativeEntropy => {
                check_interior(x)?;
                Ok(x.iter().map(|&xi| 1.0 / xi).collect())
            }
            MapKind::SquaredEuclidean => Ok(vec![1.0; x.len()]),
        }
    }

    /// Bregman divergence `D_R(x, y) = R(x) - R(y) - <grad R(y), x - y>`.
    ///
    /// For negative entropy this is the KL divergence
    /// `sum_i x_i ln(x_i / y_i)` with `0 ln 0 = 0`. Infinite divergence
    /// (some `y_i = 0 < x_i`) is reported as [`MirrorError::Domain`].
    pub fn bregman(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(MirrorError::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        match self.kind {
            MapKind::NegativeEntropy => {
                let mut acc = 0.0;
                for (i, (&xi, &yi)) in x.iter().zip(y).enumerate() {
                    if xi < 0.0 || yi < 0.0 {
                        return Err(MirrorError::Domain(format!(
                            "negative coordinate at index {i}"
                        )));
                    }
                    if xi > 0.0 {
                        if yi <= 0.0 {
                            return Err(MirrorError::Domain(format!(
                                "KL divergence infinite: y[{i}] = 0 but x[{i}] = {xi}"
                            )));
                        }
                        acc += xi * (xi / yi).ln();
                    }
                }
                // Strictly nonnegative in exact arithmetic; shave rounding.
                Ok(acc.max(0.0))
            }
            MapKind::SquaredEuclidean => {
                let acc: f64 = x
                    .iter()
                    .zip(y)
                    .map(|(&xi, &yi)| (xi - yi) * (xi - yi))
                    .sum();
                Ok(0.5 * acc)
            }
        }
    }

    /// One mirror-descent proximal step:
    /// `argmin_{x' feasible} <g, x'> + D_R(x', x) / alpha`.
    ///
    /// Entropy: exponentiated-gradient update with max-subtraction.
    /// Euclidean: projection of `x - alpha g` onto the simplex.
    pub fn update(&self, x: &SimplexPoint, g: &[f64], alpha: f64) -> Result<SimplexPoint> {
        if g.len() != x.dim() {
            return Err(MirrorError::DimensionMismatch {
                expected: x.dim(),
                got: g.len(),
            });
        }
        if g.iter().any(|gi| !gi.is_finite()) {
            return Err(MirrorError::NonFiniteInput("gradient".into()));
        }
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(MirrorError::Domain(format!(
                "step size must be positive and finite, got {alpha}"
            )));
        }
        match self.kind {
            MapKind::NegativeEntropy => {
                check_interior(x.as_slice())?;
                let logits: Vec<f64> = x
                    .as_slice()
                    .iter()
                    .zip(g)
                    .map(|(&xi, &gi)| xi.ln() - alpha * gi)
                    .collect();
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = logits.iter().map(|&w| (w - m).exp()).collect();
                let z: f64 = weights.iter().sum();
                SimplexPoint::new(weights.iter().map(|&w| w / z).collect())
            }
            MapKind::SquaredEuclidean => {
                let v: Vec<f64> = x
                    .as_slice()
                    .iter()
                    .zip(g)
                    .map(|(&xi, &gi)| xi - alpha * gi)
                    .collect();
                SimplexPoint::new(project_to_simplex(&v))
            }
        }
    }

    /// Local (Hessian) norm `sqrt(v' grad^2 R(x) v)`.
    ///
    /// Entropy: `sqrt(sum v_i^2 / x_i)`, defined only at interior `x`.
    pub fn local_norm(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        if v.len() != x.len() {
            return Err(MirrorError::DimensionMismatch {
                expected: x.len(),
                got: v.len(),
            });
        }
        match self.kind {
            MapKind::NegativeEntropy => {
                check_interior(x)?;
                Ok(x.iter()
                    .zip(v)
                    .map(|(&xi, &vi)| vi * vi / xi)
                    .sum::<f64>()
                    .sqrt())
            }
            MapKind::SquaredEuclidean => {
                Ok(v.iter().map(|&vi| vi * vi).sum::<f64>().sqrt())
            }
        }
    }

    /// Value of the proximal objective `<g, c> + D_R(c, x) / alpha` at a
    /// candidate point `c`. Used by oracle tests and the validation suite.
    pub fn prox_objective(
        &self,
        candidate: &[f64],
        x: &[f64],
        g: &[f64],
        alpha: f64,
    ) -> Result<f64> {
        let lin: f64 = g.iter().zip(candidate).map(|(&gi, &ci)| gi * ci).sum();
        Ok(lin + self.bregman(candidate, x)? / alpha)
    }
}

/// Norm evaluation helper.
pub fn norm(v: &[f64], which: Norm) -> f64 {
    match which {
        Norm::L1 => v.iter().map(|c| c.abs()).sum(),
        Norm::L2 => v.iter().map(|c| c * c).sum::<f64>().sqrt(),
        Norm::LInf => v.iter().map(|c| c.abs()).fold(0.0, f64::max),
    }
}

fn check_interior(x: &[f64]) -> Result<()> {
    if let Some((i, &xi)) = x.iter().enumerate().find(|(_, &xi)| xi <= 0.0) {
        return Err(MirrorError::Domain(format!(
            "point is on the simplex boundary: x[{i}] = {xi}"
        )));
    }
    Ok(())
}

/// Exact Euclidean projection onto the probability simplex by the
/// sort-and-threshold method: O(d log d), deterministic.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let d = v.len();
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("non-finite input to projection"));
    let mut cssv = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cssv += uj;
        let t = (cssv - 1.0) / (j + 1) as f64;
        if uj > t {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|&vi| (vi - theta).max(0.0)).collect();
    // Renormalize away the last-digit rounding so the sum is exactly 1.
    let s: f64 = out.iter().sum();
    if s > 0.0 && (s - 1.0).abs() > 0.0 {
        for o in &mut out {
            *o /= s;
        }
    }
    debug_assert_eq!(out.len(), d);
    out
}
