//! Discretized ground space: quadrature nodes on [0,1], a reference density
//! `rho` and its logarithmic derivative.
//!
//! The reference measure is `lambda = rho dm`; integrals are approximated by
//! the midpoint rule, `int f dlambda ~ sum_j f(x_j) rho(x_j) w_j`. The product
//! `rho(x_j) w_j` is the lambda-mass carried by node j and is the only way the
//! weights enter downstream formulas.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("space must have at least one node")]
    Empty,
    #[error("nodes must be strictly increasing (violated at index {0})")]
    NodesNotSorted(usize),
    #[error("quadrature weight at index {0} is not strictly positive")]
    NonPositiveWeight(usize),
    #[error("density at node {0} is not strictly positive")]
    NonPositiveDensity(usize),
    #[error("mismatched field lengths: nodes {nodes}, weights {weights}, density {density}")]
    LengthMismatch {
        nodes: usize,
        weights: usize,
        density: usize,
    },
}

/// Closed-form reference densities on [0,1].
///
/// Each variant knows `rho` and `beta = rho'/rho` analytically, which is what
/// the divergence functional and the continuum Radon-Nikodym densities need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DensityModel {
    /// `rho = 1` (Lebesgue reference).
    Uniform,
    /// `rho(x) = exp(-rate * x)`.
    ExpDecay { rate: f64 },
    /// `rho(x) = 1 + amplitude * cos(2 pi x)`, requires |amplitude| < 1.
    CosineBump { amplitude: f64 },
}

impl DensityModel {
    pub fn rho(&self, x: f64) -> f64 {
        match *self {
            DensityModel::Uniform => 1.0,
            DensityModel::ExpDecay { rate } => (-rate * x).exp(),
            DensityModel::CosineBump { amplitude } => {
                1.0 + amplitude * (2.0 * std::f64::consts::PI * x).cos()
            }
        }
    }

    /// Logarithmic derivative `(log rho)' = rho'/rho`.
    pub fn beta(&self, x: f64) -> f64 {
        match *self {
            DensityModel::Uniform => 0.0,
            DensityModel::ExpDecay { rate } => -rate,
            DensityModel::CosineBump { amplitude } => {
                let two_pi = 2.0 * std::f64::consts::PI;
                -amplitude * two_pi * (two_pi * x).sin() / (1.0 + amplitude * (two_pi * x).cos())
            }
        }
    }
}

/// Discretization of the ground space `E = [0,1]`.
///
/// Nodes are strictly increasing, weights strictly positive. `density` and
/// `beta` hold per-node values of `rho` and `(log rho)'`; when the space was
/// built from a [`DensityModel`] the closed form is retained for off-node
/// evaluation (needed by flows).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundSpace {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    density: Vec<f64>,
    beta: Vec<f64>,
    model: Option<DensityModel>,
}

impl GroundSpace {
    /// Midpoint grid of `n` nodes on [0,1] with Lebesgue reference (`rho = 1`).
    pub fn uniform_grid(n: usize) -> Self {
        Self::grid_with_density(n, DensityModel::Uniform)
    }

    /// Midpoint grid of `n` nodes on [0,1] with the given density model.
    pub fn grid_with_density(n: usize, model: DensityModel) -> Self {
        assert!(n > 0, "grid needs at least one node");
        let h = 1.0 / n as f64;
        let nodes: Vec<f64> = (0..n).map(|j| (j as f64 + 0.5) * h).collect();
        let weights = vec![h; n];
        let density: Vec<f64> = nodes.iter().map(|&x| model.rho(x)).collect();
        let beta: Vec<f64> = nodes.iter().map(|&x| model.beta(x)).collect();
        GroundSpace {
            nodes,
            weights,
            density,
            beta,
            model: Some(model),
        }
    }

    /// Abstract discrete space: explicit per-node data, no closed form.
    pub fn from_parts(
        nodes: Vec<f64>,
        weights: Vec<f64>,
        density: Vec<f64>,
        beta: Vec<f64>,
    ) -> Result<Self, SpaceError> {
        if nodes.is_empty() {
            return Err(SpaceError::Empty);
        }
        if nodes.len() != weights.len() || nodes.len() != density.len() {
            return Err(SpaceError::LengthMismatch {
                nodes: nodes.len(),
                weights: weights.len(),
                density: density.len(),
            });
        }
        for j in 1..nodes.len() {
            if nodes[j] <= nodes[j - 1] {
                return Err(SpaceError::NodesNotSorted(j));
            }
        }
        for (j, &w) in weights.iter().enumerate() {
            if !(w > 0.0) || !w.is_finite() {
                return Err(SpaceError::NonPositiveWeight(j));
            }
        }
        for (j, &r) in density.iter().enumerate() {
            if !(r > 0.0) || !r.is_finite() {
                return Err(SpaceError::NonPositiveDensity(j));
            }
        }
        Ok(GroundSpace {
            nodes,
            weights,
            density,
            beta,
            model: None,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, j: usize) -> f64 {
        self.nodes[j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// lambda-mass of node j: `rho(x_j) w_j`.
    pub fn mass(&self, j: usize) -> f64 {
        self.density[j] * self.weights[j]
    }

    pub fn masses(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.mass(j)).collect()
    }

    pub fn total_mass(&self) -> f64 {
        (0..self.len()).map(|j| self.mass(j)).sum()
    }

    pub fn model(&self) -> Option<&DensityModel> {
        self.model.as_ref()
    }

    /// `rho(x)` off-node; requires a closed-form model.
    pub fn rho_at(&self, x: f64) -> Option<f64> {
        self.model.map(|m| m.rho(x))
    }

    /// `beta(x) = (log rho)'(x)` off-node; requires a closed-form model.
    pub fn beta_at(&self, x: f64) -> Option<f64> {
        self.model.map(|m| m.beta(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_grid_masses_sum_to_lebesgue_mass() {
        let s = GroundSpace::uniform_grid(16);
        assert!((s.total_mass() - 1.0).abs() < 1e-12);
        assert_eq!(s.len(), 16);
        assert!((s.node(0) - 0.03125).abs() < 1e-15);
    }

    #[test]
    fn beta_matches_finite_difference_of_log_rho() {
        for model in [
            DensityModel::Uniform,
            DensityModel::ExpDecay { rate: 1.3 },
            DensityModel::CosineBump { amplitude: 0.4 },
        ] {
            let s = GroundSpace::grid_with_density(32, model);
            let eps = 1e-6;
            for (j, &x) in s.nodes().iter().enumerate() {
                let fd = ((model.rho(x + eps)).ln() - (model.rho(x - eps)).ln()) / (2.0 * eps);
                assert!(
                    (s.beta()[j] - fd).abs() < 1e-6,
                    "model {:?} node {}: beta {} vs fd {}",
                    model,
                    j,
                    s.beta()[j],
                    fd
                );
            }
        }
    }

    #[test]
    fn from_parts_rejects_bad_input() {
        assert!(matches!(
            GroundSpace::from_parts(vec![], vec![], vec![], vec![]),
            Err(SpaceError::Empty)
        ));
        assert!(matches!(
            GroundSpace::from_parts(
                vec![0.2, 0.1],
                vec![0.1, 0.1],
                vec![1.0, 1.0],
                vec![0.0, 0.0]
            ),
            Err(SpaceError::NodesNotSorted(1))
        ));
        assert!(matches!(
            GroundSpace::from_parts(
                vec![0.1, 0.2],
                vec![0.1, -0.1],
                vec![1.0, 1.0],
                vec![0.0, 0.0]
            ),
            Err(SpaceError::NonPositiveWeight(1))
        ));
        assert!(matches!(
            GroundSpace::from_parts(
                vec![0.1, 0.2],
                vec![0.1, 0.1],
                vec![1.0, 0.0],
                vec![0.0, 0.0]
            ),
            Err(SpaceError::NonPositiveDensity(1))
        ));
    }
}
