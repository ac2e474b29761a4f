//! Variations of the φ-volume.

mod first;
mod geodesic;
mod hphi;
mod second;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calculus::ImmersionGeometry;
use crate::model::{standard_normal, Vector};
use crate::spectral::PeriodicGrid;

pub use first::{
    deformed_volume, divergence_identity_check, first_variation_analytic, first_variation_fd, h_phi_weak_oracle,
    FdEstimate,
};
pub use geodesic::{geodesic_evolve, FlowOptions, ImmersionFamily};
pub use hphi::{h_phi, h_phi_projector_trace, MeanCurvatureData, DENSITY_FLOOR};
pub use second::{
    second_variation_analytic, second_variation_density_check, second_variation_fd,
    theorem_integrand, Bracket, DensityCheck,
};

/// Variation `Z = φY + fξ`, with `Y` in orthonormal frame components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationField {
    pub y: Vec<Vec<f64>>,
    pub f: Vec<f64>,
}

/// Smooth random periodic function built from low Fourier modes.
pub fn random_periodic_function(grid: &PeriodicGrid, modes: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dims = grid.dims();
    let mut terms: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    let kmax = modes as i64;
    let wave_vectors: Vec<Vec<f64>> = if dims == 1 {
        (0..=kmax).map(|k| vec![k as f64]).collect()
    } else {
        let mut out = Vec::new();
        for k1 in 0..=kmax {
            for k2 in -kmax..=kmax {
                if k1 == 0 && k2 < 0 {
                    continue;
                }
                out.push(vec![k1 as f64, k2 as f64]);
            }
        }
        out
    };
    for k in wave_vectors {
        let size: f64 = k.iter().map(|x| x * x).sum();
        let scale = 1.0 / (1.0 + size);
        let a = standard_normal(rng) * scale;
        let b = standard_normal(rng) * scale;
        terms.push((k, a, b));
    }
    (0..grid.node_count())
        .map(|node| {
            let u = grid.param(node);
            terms
                .iter()
                .map(|(k, a, b)| {
                    let phase: f64 = k.iter().zip(&u).map(|(ki, ui)| ki * ui).sum();
                    a * phase.cos() + b * phase.sin()
                })
                .sum()
        })
        .collect()
}

impl VariationField {
    pub fn zero(nodes: usize, n: usize) -> Self {
        Self { y: vec![vec![0.0; n]; nodes], f: vec![0.0; nodes] }
    }

    /// Random smooth `(Y, f)`; `f` is zero unless `with_f`.
    pub fn random(grid: &PeriodicGrid, modes: usize, seed: u64, with_f: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = grid.dims();
        let comps: Vec<Vec<f64>> = (0..n).map(|_| random_periodic_function(grid, modes, &mut rng)).collect();
        let f = if with_f {
            random_periodic_function(grid, modes, &mut rng)
        } else {
            vec![0.0; grid.node_count()]
        };
        let y = (0..grid.node_count()).map(|k| comps.iter().map(|c| c[k]).collect()).collect();
        Self { y, f }
    }

    pub fn with_f(mut self, f: Vec<f64>) -> Self {
        self.f = f;
        self
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            y: self.y.iter().map(|v| v.iter().map(|x| x * s).collect()).collect(),
            f: self.f.iter().map(|x| x * s).collect(),
        }
    }

    /// Ambient `Z = φY + fξ` at every node.
    pub fn z(&self, geo: &ImmersionGeometry<'_>) -> Vec<Vector> {
        geo.frames.frames.iter().zip(&self.y).zip(&self.f).map(|((fr, y), f)| fr.normal_variation(y, *f)).collect()
    }

    /// Ambient `Y` at every node.
    pub fn tangent(&self, geo: &ImmersionGeometry<'_>) -> Vec<Vector> {
        geo.frames.frames.iter().zip(&self.y).map(|(fr, y)| fr.tangent(y)).collect()
    }

    /// Parameter components `Y^a`.
    pub fn param(&self, geo: &ImmersionGeometry<'_>) -> Vec<DVector<f64>> {
        geo.param_field(&self.y)
    }
}
