use nalgebra::DVector;

use crate::calculus::ImmersionGeometry;
use crate::error::Result;
use crate::frame::metric_transpose;
use crate::model::Vector;

/// Below this `ρ_φ` the projectors `π_L, π_φ` blow up.
pub const DENSITY_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct MeanCurvatureData {
    /// `H_φ` as ambient vectors.
    pub h_phi: Vec<Vector>,
    /// `H_φ` in the orthonormal frame `e_i`.
    pub coeffs: Vec<Vec<f64>>,
    pub xi_top: Vec<Vector>,
    /// Riemannian mean curvature vector `tr_L ∇ dι`, normal part.
    pub mean_curvature: Vec<Vector>,
}

impl MeanCurvatureData {
    pub fn max_norm(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

fn field_of<F: Fn(usize) -> Vector>(nodes: usize, f: F) -> Vec<Vector> {
    (0..nodes).map(f).collect()
}

/// `H_φ` from the pairing `g(Y, H_φ) = η(Y) - Σ_i e^i(∇_{e_i} φY)` with `Y = e_j`.
pub fn h_phi(geo: &ImmersionGeometry<'_>) -> Result<MeanCurvatureData> {
    geo.require_density(DENSITY_FLOOR)?;
    let imm = geo.imm;
    let model = imm.model();
    let n = geo.n();
    let nodes = geo.nodes();
    let frames = &geo.frames.frames;
    let mut coeffs = vec![vec![0.0; n]; nodes];
    for j in 0..n {
        let phi_ej = field_of(nodes, |k| frames[k].phi_e[j].clone());
        let d = geo.covariant_frame(&phi_ej)?;
        for k in 0..nodes {
            let fr = &frames[k];
            let trace: f64 = (0..n).map(|i| fr.e_co(i).dot(&d[k][i])).sum();
            coeffs[k][j] = model.eta(imm.value(k)).dot(&fr.e[j]) - trace;
        }
    }
    let h_phi: Vec<Vector> = frames.iter().zip(&coeffs).map(|(fr, c)| fr.tangent(c)).collect();
    let xi_top = frames
        .iter()
        .enumerate()
        .map(|(k, fr)| {
            let eta = model.eta(imm.value(k));
            let c: Vec<f64> = fr.e.iter().map(|e| eta.dot(e)).collect();
            fr.tangent(&c)
        })
        .collect();

    let mut trace = vec![DVector::zeros(model.ambient_dim()); nodes];
    for i in 0..n {
        let ei = field_of(nodes, |k| frames[k].e[i].clone());
        let d = geo.covariant_frame(&ei)?;
        for k in 0..nodes {
            trace[k] += &d[k][i];
        }
    }
    let mean_curvature = trace
        .into_iter()
        .enumerate()
        .map(|(k, v)| {
            let p = imm.value(k);
            let fr = &frames[k];
            let tangential = fr.e.iter().fold(DVector::zeros(v.len()), |acc, e| acc + e * model.inner(p, &v, e));
            v - tangential
        })
        .collect();
    Ok(MeanCurvatureData { h_phi, coeffs, xi_top, mean_curvature })
}

/// `H_φ` through `g(e_j, H_φ - ξ^⊤) = Σ_i g(φe_j, ∇_{e_i}(π_L^t e_i))`.
pub fn h_phi_projector_trace(geo: &ImmersionGeometry<'_>) -> Result<Vec<Vec<f64>>> {
    geo.require_density(DENSITY_FLOOR)?;
    let imm = geo.imm;
    let model = imm.model();
    let n = geo.n();
    let nodes = geo.nodes();
    let frames = &geo.frames.frames;
    let mut coeffs = vec![vec![0.0; n]; nodes];
    for i in 0..n {
        let w = field_of(nodes, |k| {
            metric_transpose(model.as_ref(), imm.value(k), &frames[k].pi_l()) * &frames[k].e[i]
        });
        let d = geo.covariant_frame(&w)?;
        for k in 0..nodes {
            let p = imm.value(k);
            for j in 0..n {
                coeffs[k][j] += model.inner(p, &frames[k].phi_e[j], &d[k][i]);
            }
        }
    }
    for (k, c) in coeffs.iter_mut().enumerate() {
        let eta = model.eta(imm.value(k));
        for (j, cj) in c.iter_mut().enumerate() {
            *cj += eta.dot(&frames[k].e[j]);
        }
    }
    Ok(coeffs)
}
