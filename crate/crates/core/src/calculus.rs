//! Differentiation of fields along a discretized immersion.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::density::{density_from_frames, PhiDensity};
use crate::error::{GeometryError, Result};
use crate::frame::{affine_frame, AffineFrame};
use crate::immersion::DiscretizedImmersion;
use crate::model::Vector;

/// Immersion together with its frames and φ-density.
#[derive(Clone, Debug)]
pub struct ImmersionGeometry<'a> {
    pub imm: &'a DiscretizedImmersion,
    pub frames: AffineFrame,
    pub density: PhiDensity,
}

impl<'a> ImmersionGeometry<'a> {
    pub fn new(imm: &'a DiscretizedImmersion) -> Result<Self> {
        let frames = affine_frame(imm)?;
        let density = density_from_frames(imm, &frames)?;
        Ok(Self { imm, frames, density })
    }

    pub fn n(&self) -> usize {
        self.imm.dims()
    }

    pub fn nodes(&self) -> usize {
        self.imm.node_count()
    }

    /// Fails when `ρ_φ` drops below `floor` somewhere.
    pub fn require_density(&self, floor: f64) -> Result<()> {
        for (node, &rho) in self.density.rho.iter().enumerate() {
            if !(rho >= floor) {
                return Err(GeometryError::Degenerate { node, rho, floor });
            }
        }
        Ok(())
    }

    /// `∫ F vol_φ` for nodal values `F`.
    pub fn integrate_phi(&self, values: &[f64]) -> f64 {
        let terms: Vec<f64> = values.iter().zip(&self.density.weights).map(|(v, w)| v * w).collect();
        crate::spectral::pairwise_sum(&terms)
    }

    /// `∫ F vol_{ι*g}` for nodal values `F`.
    pub fn integrate_g(&self, values: &[f64]) -> f64 {
        let terms: Vec<f64> = values.iter().zip(&self.density.sqrt_h).map(|(v, s)| v * s).collect();
        self.imm.grid().integrate(&terms)
    }

    /// `∇_{∂_a} V` for every parameter direction, indexed `[node][a]`.
    pub fn covariant(&self, field: &[Vector]) -> Result<Vec<Vec<Vector>>> {
        covariant_derivatives(self.imm, field)
    }

    /// `∇_{e_i} V`, indexed `[node][i]`.
    pub fn covariant_frame(&self, field: &[Vector]) -> Result<Vec<Vec<Vector>>> {
        let by_axis = self.covariant(field)?;
        Ok(by_axis
            .into_iter()
            .zip(&self.frames.frames)
            .map(|(d, fr)| {
                (0..fr.n())
                    .map(|i| (0..fr.n()).fold(DVector::zeros(d[0].len()), |acc, a| acc + &d[a] * fr.gs[(i, a)]))
                    .collect()
            })
            .collect())
    }

    /// Divergence on `(L, ι*g)` of the field with parameter components `V^a`.
    pub fn divergence(&self, param_field: &[DVector<f64>]) -> Vec<f64> {
        let grid = self.imm.grid();
        let sqrt_h = &self.density.sqrt_h;
        let mut total = vec![0.0; self.nodes()];
        for a in 0..self.n() {
            let flux: Vec<f64> = param_field.iter().zip(sqrt_h).map(|(v, s)| v[a] * s).collect();
            for (t, d) in total.iter_mut().zip(grid.derivative(&flux, a)) {
                *t += d;
            }
        }
        total.iter().zip(sqrt_h).map(|(t, s)| t / s).collect()
    }

    /// Parameter components of the frame field `Σ y_i e_i`.
    pub fn param_field(&self, y: &[Vec<f64>]) -> Vec<DVector<f64>> {
        y.iter().zip(&self.frames.frames).map(|(yk, fr)| fr.param_components(yk)).collect()
    }

    /// Frame components of a field given by parameter components.
    pub fn frame_components(&self, param: &[DVector<f64>]) -> Vec<Vec<f64>> {
        param
            .iter()
            .zip(&self.frames.frames)
            .map(|(v, fr)| {
                let gs_t: DMatrix<f64> = fr.gs.transpose();
                gs_t.lu().solve(v).expect("triangular factor invertible").iter().copied().collect()
            })
            .collect()
    }

    /// Gradient of a function on `(L, ι*g)` in frame components.
    pub fn gradient(&self, f: &[f64]) -> Vec<Vec<f64>> {
        let grid = self.imm.grid();
        let partial: Vec<Vec<f64>> = (0..self.n()).map(|a| grid.derivative(f, a)).collect();
        self.frames
            .frames
            .iter()
            .enumerate()
            .map(|(k, fr)| {
                let df = DVector::from_fn(self.n(), |a, _| partial[a][k]);
                (&fr.gs * df).iter().copied().collect()
            })
            .collect()
    }
}

/// `∇_{∂_a} V` along the immersion.
///
/// Models with a global invariant frame differentiate frame coefficients,
/// which stay periodic even when node positions close up only modulo an isometry.
pub fn covariant_derivatives(imm: &DiscretizedImmersion, field: &[Vector]) -> Result<Vec<Vec<Vector>>> {
    let model = imm.model().as_ref();
    let grid = imm.grid();
    let n = imm.dims();
    let nodes = imm.node_count();
    let frames: Option<Vec<DMatrix<f64>>> = (0..nodes).map(|k| model.invariant_frame(imm.value(k))).collect();
    let flat: Vec<Vec<Vector>> = match &frames {
        Some(frames) => {
            let coeffs: Vec<Vector> = frames
                .iter()
                .zip(field)
                .map(|(f, v)| f.clone().lu().solve(v).ok_or_else(|| GeometryError::Singular("invariant frame".into())))
                .collect::<Result<_>>()?;
            let dc: Vec<Vec<Vector>> = (0..n).map(|a| grid.derivative_vectors(&coeffs, a)).collect();
            (0..nodes)
                .into_par_iter()
                .map(|k| {
                    (0..n)
                        .map(|a| {
                            let df = model
                                .invariant_frame_derivative(imm.value(k), &imm.partials(k)[a])
                                .expect("frame derivative accompanies frame");
                            &frames[k] * &dc[a][k] + df * &coeffs[k]
                        })
                        .collect()
                })
                .collect()
        }
        None => {
            imm.require_periodic()?;
            let d: Vec<Vec<Vector>> = (0..n).map(|a| grid.derivative_vectors(field, a)).collect();
            (0..nodes).map(|k| (0..n).map(|a| d[a][k].clone()).collect()).collect()
        }
    };
    Ok((0..nodes)
        .into_par_iter()
        .map(|k| {
            let p = imm.value(k);
            let proj = model.tangent_projector(p);
            (0..n)
                .map(|a| &proj * (&flat[k][a] + model.connection_term(p, &imm.partials(k)[a], &field[k])))
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::immersion::{build_immersion, reference_torus_curve, GreatCircle, HeisenbergLoop};
    use crate::model::{Heisenberg, SasakianModel, Sphere};
    use crate::spectral::PeriodicGrid;

    #[test]
    fn great_circle_velocity_is_parallel() {
        let s3: Arc<dyn SasakianModel> = Arc::new(Sphere::new(1).unwrap());
        let imm = build_immersion(s3, &GreatCircle { phase: 0.2 }, PeriodicGrid::new(1, 32).unwrap()).unwrap();
        let geo = ImmersionGeometry::new(&imm).unwrap();
        let e: Vec<Vector> = geo.frames.frames.iter().map(|f| f.e[0].clone()).collect();
        let d = geo.covariant(&e).unwrap();
        assert!(d.iter().all(|v| v[0].amax() < 1e-12));
    }

    #[test]
    fn frame_trick_agrees_with_ambient_differentiation() {
        let h: Arc<dyn SasakianModel> = Arc::new(Heisenberg::new(1).unwrap());
        let imm = build_immersion(h.clone(), &HeisenbergLoop { amplitude: 0.2 }, PeriodicGrid::new(1, 48).unwrap()).unwrap();
        let field: Vec<Vector> = (0..imm.node_count()).map(|k| h.reeb(imm.value(k)) + &imm.partials(k)[0]).collect();
        let with_frame = covariant_derivatives(&imm, &field).unwrap();
        let grid = imm.grid();
        let raw = grid.derivative_vectors(&field, 0);
        for k in 0..imm.node_count() {
            let p = imm.value(k);
            let direct = &raw[k] + h.connection_term(p, &imm.partials(k)[0], &field[k]);
            assert!((&with_frame[k][0] - direct).amax() < 1e-10);
        }
    }

    #[test]
    fn divergence_of_constant_speed_field() {
        let s3: Arc<dyn SasakianModel> = Arc::new(Sphere::new(1).unwrap());
        let imm = build_immersion(s3, &reference_torus_curve(), PeriodicGrid::new(1, 32).unwrap()).unwrap();
        let geo = ImmersionGeometry::new(&imm).unwrap();
        let y: Vec<Vec<f64>> = (0..32).map(|k| vec![(imm.grid().param(k)[0]).sin()]).collect();
        let div = geo.divergence(&geo.param_field(&y));
        let speed = geo.density.sqrt_h[0];
        for k in 0..32 {
            let t = imm.grid().param(k)[0];
            assert!((div[k] - t.cos() / speed).abs() < 1e-12);
        }
    }
}
