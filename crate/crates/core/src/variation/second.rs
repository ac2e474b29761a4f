use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::first::FdEstimate;
use super::geodesic::{geodesic_evolve, FlowOptions};
use super::{MeanCurvatureData, VariationField};
use crate::calculus::ImmersionGeometry;
use crate::density::rho_phi;
use crate::error::{GeometryError, Result};
use crate::immersion::DiscretizedImmersion;
use crate::model::Vector;

/// The bracket `[Z, Y]` entering the second variation.
#[derive(Clone, Debug)]
pub enum Bracket {
    /// Geodesic families, where the bracket vanishes.
    Zero,
    /// Ambient bracket vectors per node.
    Supplied(Vec<Vector>),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Nodal values of
/// `(2n+2)η(Y)² - 2g(Y,Y) - Ric(Y,Y) - g(π_L[Z,Y], H_φ) + g(Y,H_φ)² + (div(ρY)/ρ)²`.
pub fn theorem_integrand(
    geo: &ImmersionGeometry<'_>,
    hphi: &MeanCurvatureData,
    var: &VariationField,
    bracket: &Bracket,
) -> Result<Vec<f64>> {
    let imm = geo.imm;
    let model = imm.model();
    let n = geo.n() as f64;
    let rho = &geo.density.rho;
    let rho_y: Vec<Vec<f64>> = var.y.iter().zip(rho).map(|(y, r)| y.iter().map(|v| v * r).collect()).collect();
    let div = geo.divergence(&geo.param_field(&rho_y));
    if let Bracket::Supplied(b) = bracket {
        if b.len() != geo.nodes() {
            return Err(GeometryError::InvalidInput("bracket field does not match the grid".into()));
        }
    }
    Ok((0..geo.nodes())
        .map(|k| {
            let p = imm.value(k);
            let fr = &geo.frames.frames[k];
            let y = fr.tangent(&var.y[k]);
            let eta_y = model.eta(p).dot(&y);
            let gyy = dot(&var.y[k], &var.y[k]);
            let gyh = dot(&var.y[k], &hphi.coeffs[k]);
            let bracket_term = match bracket {
                Bracket::Zero => 0.0,
                Bracket::Supplied(b) => model.inner(p, &(fr.pi_l() * &b[k]), &hphi.h_phi[k]),
            };
            (2.0 * n + 2.0) * eta_y * eta_y - 2.0 * gyy - model.ricci(p, &y, &y) - bracket_term
                + gyh * gyh
                + (div[k] / rho[k]).powi(2)
        })
        .collect())
}

/// `d²/dt² Vol_φ` from the closed-form integrand.
pub fn second_variation_analytic(
    geo: &ImmersionGeometry<'_>,
    hphi: &MeanCurvatureData,
    var: &VariationField,
    bracket: &Bracket,
) -> Result<f64> {
    Ok(geo.integrate_phi(&theorem_integrand(geo, hphi, var, bracket)?))
}

/// Endpoints of the geodesic family at `±s`, as immersions.
fn family_endpoints(
    geo: &ImmersionGeometry<'_>,
    var: &VariationField,
    s: f64,
) -> Result<(DiscretizedImmersion, DiscretizedImmersion)> {
    let y = var.param(geo);
    let neg_y: Vec<DVector<f64>> = y.iter().map(|v| -v).collect();
    let neg_f: Vec<f64> = var.f.iter().map(|x| -x).collect();
    let fwd = geodesic_evolve(geo.imm, &y, &var.f, FlowOptions::to(s))?;
    let bwd = geodesic_evolve(geo.imm, &neg_y, &neg_f, FlowOptions::to(s))?;
    Ok((fwd.members.last().unwrap().clone(), bwd.members.last().unwrap().clone()))
}

fn respectral(imm: &DiscretizedImmersion) -> Result<DiscretizedImmersion> {
    DiscretizedImmersion::from_positions(imm.model().clone(), imm.grid().clone(), imm.values().to_vec())
}

/// Central second difference of `Vol_φ` along the geodesic family generated by `(Y, f)`.
pub fn second_variation_fd(geo: &ImmersionGeometry<'_>, var: &VariationField, h: f64) -> Result<FdEstimate> {
    if !(1e-4..=5e-2).contains(&h) {
        return Err(GeometryError::InvalidInput(format!("second-difference step {h} outside [1e-4, 5e-2]")));
    }
    let v0 = rho_phi(&respectral(geo.imm)?)?.vol_phi;
    let steps = vec![h, h / 2.0, h / 4.0];
    let raw = steps
        .iter()
        .map(|&s| {
            let (plus, minus) = family_endpoints(geo, var, s)?;
            Ok((rho_phi(&plus)?.vol_phi - 2.0 * v0 + rho_phi(&minus)?.vol_phi) / (s * s))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(FdEstimate::from_raw(steps, raw))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityCheck {
    /// `∂²_t (ρ_φ √det h)` by Richardson-extrapolated second differences.
    pub fd: Vec<f64>,
    /// General-`Z` bracket times `ρ_φ √det h`.
    pub analytic: Vec<f64>,
    pub max_residual: f64,
    /// `∫` of the general-`Z` density.
    pub integrated_density: f64,
    /// `∫` of the closed-form integrand (zero bracket).
    pub integrated_theorem: f64,
}

/// Pointwise second variation of the φ-volume form along a geodesic family.
pub fn second_variation_density_check(
    geo: &ImmersionGeometry<'_>,
    hphi: &MeanCurvatureData,
    var: &VariationField,
    h: f64,
) -> Result<DensityCheck> {
    let imm = geo.imm;
    imm.require_periodic()?;
    let model = imm.model();
    let grid = imm.grid();
    let n = geo.n();
    let nodes = geo.nodes();
    let frames = &geo.frames.frames;

    let z = var.z(geo);
    let y_param = var.param(geo);
    let dz_axis: Vec<Vec<Vector>> = (0..n).map(|a| grid.derivative_vectors(&z, a)).collect();
    let dz = geo.covariant_frame(&z)?;
    // Acceleration ∇_Z Z of the family at t = 0.
    let accel: Vec<Vector> = (0..nodes)
        .map(|k| {
            let p = imm.value(k);
            let push_y = (0..n).fold(DVector::zeros(p.len()), |acc, a| acc + &imm.partials(k)[a] * y_param[k][a]);
            let y_dz = (0..n).fold(DVector::zeros(p.len()), |acc, a| acc + &dz_axis[a][k] * y_param[k][a]);
            let dt_z = model.phi_derivative(p, &z[k]) * push_y
                + model.phi(p) * y_dz
                + model.reeb_derivative(p, &z[k]) * var.f[k];
            model.tangent_projector(p) * (dt_z + model.connection_term(p, &z[k], &z[k]))
        })
        .collect();
    let d_accel = geo.covariant_frame(&accel)?;

    let analytic: Vec<f64> = (0..nodes)
        .map(|k| {
            let p = imm.value(k);
            let fr = &frames[k];
            let e = |i: usize, v: &Vector| fr.e_co(i).dot(v);
            let f = |i: usize, v: &Vector| fr.f_co(i).dot(v);
            let eta_star = fr.eta_star();
            let phi = model.phi(p);
            let zk = &z[k];
            let s1: f64 = (0..n).map(|i| e(i, &dz[k][i])).sum();
            let mut b = -2.0 * eta_star.dot(&(&phi * zk)) * s1;
            for i in 0..n {
                for j in 0..n {
                    b -= e(i, &dz[k][j]) * e(j, &dz[k][i]);
                    b += f(i, &dz[k][j]) * f(j, &dz[k][i]);
                }
            }
            for i in 0..n {
                b += e(i, &(model.curvature(p, zk, &fr.e[i], zk) + &d_accel[k][i]));
            }
            b -= model.eta(p).dot(&(fr.pi_l() * zk)) * eta_star.dot(zk);
            b -= eta_star.dot(&(&phi * &accel[k]));
            b -= model.inner(p, zk, &(fr.pi_phi() * zk));
            for i in 0..n {
                b -= 2.0 * f(i, zk) * eta_star.dot(&dz[k][i]);
                b += 2.0 * e(i, zk) * eta_star.dot(&(&phi * &dz[k][i]));
            }
            b += s1 * s1;
            b * geo.density.rho[k] * geo.density.sqrt_h[k]
        })
        .collect();

    let base = rho_phi(&respectral(imm)?)?;
    let base_density: Vec<f64> = base.rho.iter().zip(&base.sqrt_h).map(|(r, s)| r * s).collect();
    let second_diff = |s: f64| -> Result<Vec<f64>> {
        let (plus, minus) = family_endpoints(geo, var, s)?;
        let (dp, dm) = (rho_phi(&plus)?, rho_phi(&minus)?);
        Ok((0..nodes)
            .map(|k| (dp.rho[k] * dp.sqrt_h[k] - 2.0 * base_density[k] + dm.rho[k] * dm.sqrt_h[k]) / (s * s))
            .collect())
    };
    let coarse = second_diff(h)?;
    let fine = second_diff(h / 2.0)?;
    let fd: Vec<f64> = coarse.iter().zip(&fine).map(|(c, f)| (4.0 * f - c) / 3.0).collect();
    let max_residual = fd.iter().zip(&analytic).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let w = grid.weight();
    let integrated_density = crate::spectral::pairwise_sum(&analytic) * w;
    let integrated_theorem = second_variation_analytic(geo, hphi, var, &Bracket::Zero)?;
    Ok(DensityCheck { fd, analytic, max_residual, integrated_density, integrated_theorem })
}
