//! The density `ρ_φ` and the φ-volume.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, Result};
use crate::frame::{affine_frame, node_frame, AffineFrame, NodeFrame};
use crate::immersion::{build_immersion, ChartMap, CircleDiffeo, DiscretizedImmersion, Reparametrized};
use crate::model::{Point, SasakianModel, Vector};
use crate::spectral::pairwise_sum;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiDensity {
    pub rho: Vec<f64>,
    pub sqrt_h: Vec<f64>,
    /// `ρ_φ · √det h · quadrature weight` per node.
    pub weights: Vec<f64>,
    pub vol_phi: f64,
    pub vol_g: f64,
}

impl PhiDensity {
    pub fn min_rho(&self) -> f64 {
        self.rho.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_rho(&self) -> f64 {
        self.rho.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `ρ_φ` from a node frame: square root of `vol_g(e, -ξ, φe)`.
pub fn rho_from_frame(model: &dyn SasakianModel, p: &Point, frame: &NodeFrame, node: usize) -> Result<f64> {
    let mut vectors: Vec<Vector> = frame.e.clone();
    vectors.push(-&frame.xi);
    vectors.extend(frame.phi_e.iter().cloned());
    let value = model.volume_form(p, &vectors);
    if value < 0.0 {
        if value > -1e-14 {
            return Ok(0.0);
        }
        return Err(GeometryError::Orientation { node, value });
    }
    Ok(value.sqrt())
}

/// `ρ_φ` at a single point with tangent partials; no grid needed.
pub fn rho_pointwise(model: &dyn SasakianModel, p: &Point, partials: &[Vector]) -> Result<f64> {
    let frame = node_frame(model, p, partials, 0)?;
    rho_from_frame(model, p, &frame, 0)
}

/// Independent oracle: `(det Gram(∂ι, ξ, φ∂ι))^{1/4} / √det h`.
pub fn gram_rho_oracle(model: &dyn SasakianModel, p: &Point, partials: &[Vector]) -> f64 {
    let phi = model.phi(p);
    let mut vs: Vec<Vector> = partials.to_vec();
    vs.push(model.reeb(p));
    vs.extend(partials.iter().map(|v| &phi * v));
    let gram = DMatrix::from_fn(vs.len(), vs.len(), |a, b| model.inner(p, &vs[a], &vs[b]));
    let h = DMatrix::from_fn(partials.len(), partials.len(), |a, b| model.inner(p, &partials[a], &partials[b]));
    gram.determinant().max(0.0).powf(0.25) / h.determinant().sqrt()
}

pub fn density_from_frames(imm: &DiscretizedImmersion, frames: &AffineFrame) -> Result<PhiDensity> {
    let model = imm.model().as_ref();
    let rho = (0..imm.node_count())
        .into_par_iter()
        .map(|k| rho_from_frame(model, imm.value(k), frames.node(k), k))
        .collect::<Result<Vec<f64>>>()?;
    let sqrt_h: Vec<f64> = frames.frames.iter().map(|f| f.sqrt_h).collect();
    let w = imm.grid().weight();
    let weights: Vec<f64> = rho.iter().zip(&sqrt_h).map(|(r, s)| r * s * w).collect();
    let vol_phi = pairwise_sum(&weights);
    let vol_g = w * pairwise_sum(&sqrt_h);
    Ok(PhiDensity { rho, sqrt_h, weights, vol_phi, vol_g })
}

pub fn rho_phi(imm: &DiscretizedImmersion) -> Result<PhiDensity> {
    let frames = affine_frame(imm)?;
    density_from_frames(imm, &frames)
}

/// `|Vol_φ[ι ∘ σ] - Vol_φ[ι]|` for a circle diffeomorphism `σ`.
pub fn reparametrization_check(
    model: std::sync::Arc<dyn SasakianModel>,
    chart: &dyn ChartMap,
    diffeo: CircleDiffeo,
    grid: crate::spectral::PeriodicGrid,
) -> Result<f64> {
    diffeo.check()?;
    if chart.dims() != 1 {
        return Err(GeometryError::InvalidInput("reparametrization check is for curves".into()));
    }
    let base = build_immersion(model.clone(), chart, grid.clone())?;
    let moved = build_immersion(model, &Reparametrized { base: chart, diffeo }, grid)?;
    Ok((rho_phi(&moved)?.vol_phi - rho_phi(&base)?.vol_phi).abs())
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use super::*;
    use crate::immersion::{reference_torus_curve, GreatCircle, TorusCurve};
    use crate::model::Sphere;
    use crate::spectral::PeriodicGrid;

    fn s3() -> Arc<dyn SasakianModel> {
        Arc::new(Sphere::new(1).unwrap())
    }

    /// `ρ² = 1 - (cos²a + k sin²a)² / (cos²a + k² sin²a)` for torus curves.
    fn torus_rho(a: f64, k: f64) -> f64 {
        let (c2, s2) = (a.cos().powi(2), a.sin().powi(2));
        (1.0 - (c2 + k * s2).powi(2) / (c2 + k * k * s2)).sqrt()
    }

    #[test]
    fn legendrian_circle_has_unit_density() {
        let imm = build_immersion(s3(), &GreatCircle { phase: 0.0 }, PeriodicGrid::new(1, 32).unwrap()).unwrap();
        let d = rho_phi(&imm).unwrap();
        assert!(d.rho.iter().all(|r| (r - 1.0).abs() < 1e-12));
        assert!((d.vol_phi - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn torus_curve_density_matches_closed_form() {
        let imm = build_immersion(s3(), &reference_torus_curve(), PeriodicGrid::new(1, 32).unwrap()).unwrap();
        let d = rho_phi(&imm).unwrap();
        let expected = torus_rho(PI / 4.0, 2.0);
        assert!(d.rho.iter().all(|r| (r - expected).abs() < 1e-12));
    }

    #[test]
    fn near_hopf_density_vanishes() {
        let chart_rho = |eps: f64| {
            let chart = TorusCurve { a: PI / 4.0, k: 1.0 + eps };
            let u = [0.3];
            rho_pointwise(s3().as_ref(), &chart.value(&u), &chart.partials(&u).unwrap()).unwrap()
        };
        let mut last = 1.0;
        for eps in [1e-1, 1e-2, 1e-3] {
            let r = chart_rho(eps);
            assert!((r - torus_rho(PI / 4.0, 1.0 + eps)).abs() < 1e-9);
            assert!(r < last);
            last = r;
        }
        assert!(last < 0.03);
    }

    #[test]
    fn reversed_orientation_keeps_volume() {
        let grid = PeriodicGrid::new(1, 64).unwrap();
        let reverse = CircleDiffeo { amplitude: 0.0, reverse: true };
        let delta = reparametrization_check(s3(), &reference_torus_curve(), reverse, grid).unwrap();
        assert!(delta < 1e-12);
    }
}
