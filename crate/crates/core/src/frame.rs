//! Affine Legendrian frames `e_i, φe_i, ξ` and their dual coframes.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{GeometryError, Result};
use crate::immersion::DiscretizedImmersion;
use crate::model::{Point, SasakianModel, Vector};

/// Condition number above which the splitting `TL ⊕ φTL ⊕ Rξ` counts as degenerate.
pub const CONDITION_LIMIT: f64 = 1e8;

#[derive(Clone, Debug)]
pub struct NodeFrame {
    /// Orthonormal tangent frame of `(L, ι*g)` pushed into the ambient chart.
    pub e: Vec<Vector>,
    pub phi_e: Vec<Vector>,
    pub xi: Vector,
    /// `e_i = Σ_a gs[(i, a)] ∂_a ι` (lower triangular).
    pub gs: DMatrix<f64>,
    /// Columns `e_1..e_n, φe_1..φe_n, ξ`.
    pub basis: DMatrix<f64>,
    /// Rows `e^1..e^n, f^1..f^n, η*` as ambient covectors.
    pub coframe: DMatrix<f64>,
    /// Induced metric in parameter coordinates.
    pub h: DMatrix<f64>,
    pub sqrt_h: f64,
    pub min_singular: f64,
    pub condition: f64,
}

fn metric_root(model: &dyn SasakianModel, p: &Point) -> DMatrix<f64> {
    let g = model.metric(p);
    g.clone().cholesky().map(|c| c.l().transpose()).unwrap_or(g)
}

/// Frame at one point from the parameter partials there.
pub fn node_frame(model: &dyn SasakianModel, p: &Point, partials: &[Vector], node: usize) -> Result<NodeFrame> {
    let n = model.dim_n();
    let g = model.metric(p);
    let inner = |a: &Vector, b: &Vector| (a.transpose() * &g * b)[(0, 0)];
    let h = DMatrix::from_fn(n, n, |a, b| inner(&partials[a], &partials[b]));
    let sqrt_h = h.determinant().max(0.0).sqrt();

    // Gram-Schmidt in ascending order, tracking coefficients.
    let mut gs = DMatrix::<f64>::zeros(n, n);
    let mut e: Vec<Vector> = Vec::with_capacity(n);
    for i in 0..n {
        let mut coef = DVector::<f64>::zeros(n);
        coef[i] = 1.0;
        let mut v = partials[i].clone();
        for (j, ej) in e.iter().enumerate() {
            let proj = inner(ej, &partials[i]);
            v -= ej * proj;
            coef -= gs.row(j).transpose() * proj;
        }
        let len = inner(&v, &v).max(0.0).sqrt();
        if !(len > 1e-14) {
            return Err(GeometryError::RankDeficient { node, min_singular: len });
        }
        gs.set_row(i, &(coef / len).transpose());
        e.push(v / len);
    }

    let phi = model.phi(p);
    let phi_e: Vec<Vector> = e.iter().map(|v| &phi * v).collect();
    let xi = model.reeb(p);
    let mut cols: Vec<Vector> = e.clone();
    cols.extend(phi_e.iter().cloned());
    cols.push(xi.clone());
    let basis = DMatrix::from_columns(&cols);

    // Square up with the unit normal for embedded models.
    let m = model.ambient_dim();
    let mut square = basis.clone();
    if m > 2 * n + 1 {
        let normal = DMatrix::identity(m, m) - model.tangent_projector(p);
        let nvec = normal.column_iter().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap().normalize();
        square = square.insert_column(2 * n + 1, 0.0);
        square.set_column(2 * n + 1, &nvec);
    }
    let sv = (metric_root(model, p) * &square).singular_values();
    let min_singular = sv.min();
    let condition = sv.max() / min_singular;
    if !(condition <= CONDITION_LIMIT) {
        return Err(GeometryError::NotAffineLegendrian { node, min_singular, condition });
    }
    let inverse = square
        .try_inverse()
        .ok_or(GeometryError::NotAffineLegendrian { node, min_singular, condition })?;
    let coframe = inverse.rows(0, 2 * n + 1).into_owned();
    Ok(NodeFrame { e, phi_e, xi, gs, basis, coframe, h, sqrt_h, min_singular, condition })
}

impl NodeFrame {
    pub fn n(&self) -> usize {
        self.e.len()
    }

    fn projector(&self, start: usize, len: usize) -> DMatrix<f64> {
        self.basis.columns(start, len) * self.coframe.rows(start, len)
    }

    /// `π_L = Σ e_i ⊗ e^i`.
    pub fn pi_l(&self) -> DMatrix<f64> {
        self.projector(0, self.n())
    }

    /// `π_φ = Σ φe_i ⊗ f^i`.
    pub fn pi_phi(&self) -> DMatrix<f64> {
        self.projector(self.n(), self.n())
    }

    /// `π_ξ = ξ ⊗ η*`.
    pub fn pi_xi(&self) -> DMatrix<f64> {
        self.projector(2 * self.n(), 1)
    }

    pub fn e_co(&self, i: usize) -> Vector {
        self.coframe.row(i).transpose()
    }

    pub fn f_co(&self, i: usize) -> Vector {
        self.coframe.row(self.n() + i).transpose()
    }

    pub fn eta_star(&self) -> Vector {
        self.coframe.row(2 * self.n()).transpose()
    }

    /// Parameter components `Y^a` of the tangent vector `Σ y_i e_i`.
    pub fn param_components(&self, y: &[f64]) -> DVector<f64> {
        self.gs.transpose() * DVector::from_column_slice(y)
    }

    /// Tangent vector `Σ y_i e_i`.
    pub fn tangent(&self, y: &[f64]) -> Vector {
        self.e.iter().zip(y).fold(DVector::zeros(self.xi.len()), |acc, (ei, yi)| acc + ei * *yi)
    }

    /// `φ(Σ y_i e_i) + f ξ`.
    pub fn normal_variation(&self, y: &[f64], f: f64) -> Vector {
        self.phi_e.iter().zip(y).fold(&self.xi * f, |acc, (v, yi)| acc + v * *yi)
    }
}

/// Metric transpose `π^t = G⁻¹ πᵀ G`, restricted to the tangent space.
pub fn metric_transpose(model: &dyn SasakianModel, p: &Point, pi: &DMatrix<f64>) -> DMatrix<f64> {
    let g = model.metric(p);
    let proj = model.tangent_projector(p);
    let ginv = g.clone().try_inverse().expect("metric invertible");
    &proj * ginv * pi.transpose() * g * proj
}

#[derive(Clone, Debug)]
pub struct AffineFrame {
    pub frames: Vec<NodeFrame>,
}

impl AffineFrame {
    pub fn node(&self, k: usize) -> &NodeFrame {
        &self.frames[k]
    }
}

pub fn affine_frame(imm: &DiscretizedImmersion) -> Result<AffineFrame> {
    let model = imm.model().as_ref();
    let frames = (0..imm.node_count())
        .into_par_iter()
        .map(|k| node_frame(model, imm.value(k), imm.partials(k), k))
        .collect::<Result<Vec<_>>>()?;
    Ok(AffineFrame { frames })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use super::*;
    use crate::immersion::{build_immersion, reference_torus_curve, GreatCircle, TorusCurve};
    use crate::model::Sphere;
    use crate::spectral::PeriodicGrid;

    fn s3() -> Arc<dyn SasakianModel> {
        Arc::new(Sphere::new(1).unwrap())
    }

    #[test]
    fn dual_coframe_relations() {
        let imm = build_immersion(s3(), &reference_torus_curve(), PeriodicGrid::new(1, 32).unwrap()).unwrap();
        let frame = affine_frame(&imm).unwrap();
        let model = imm.model();
        for (k, fr) in frame.frames.iter().enumerate() {
            let p = imm.value(k);
            let phi = model.phi(p);
            let pairing = &fr.coframe * &fr.basis;
            assert!((pairing - DMatrix::identity(3, 3)).amax() < 1e-12);
            let proj = model.tangent_projector(p);
            // e^i = f^i∘φ and f^i = -e^i∘φ on tangent vectors
            assert!(((phi.transpose() * fr.f_co(0) - fr.e_co(0)).transpose() * &proj).amax() < 1e-9);
            assert!(((phi.transpose() * fr.e_co(0) + fr.f_co(0)).transpose() * &proj).amax() < 1e-9);
            let total = fr.pi_l() + fr.pi_phi() + fr.pi_xi();
            assert!((total - &proj).amax() < 1e-12);
        }
    }

    #[test]
    fn legendrian_projector_is_symmetric() {
        let imm = build_immersion(s3(), &GreatCircle { phase: 0.4 }, PeriodicGrid::new(1, 16).unwrap()).unwrap();
        let frame = affine_frame(&imm).unwrap();
        for (k, fr) in frame.frames.iter().enumerate() {
            let t = metric_transpose(imm.model().as_ref(), imm.value(k), &fr.pi_l());
            assert!((t - fr.pi_l()).amax() < 1e-8);
        }
    }

    #[test]
    fn hopf_fiber_is_rejected() {
        let imm = build_immersion(s3(), &TorusCurve { a: PI / 4.0, k: 1.0 }, PeriodicGrid::new(1, 16).unwrap()).unwrap();
        assert!(matches!(affine_frame(&imm), Err(GeometryError::NotAffineLegendrian { .. })));
    }
}
