use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MeanCurvatureData, VariationField};
use crate::calculus::ImmersionGeometry;
use crate::density::rho_phi;
use crate::error::{GeometryError, Result};
use crate::immersion::DiscretizedImmersion;
use crate::model::Vector;

/// Central differences at `h, h/2, h/4` with Richardson extrapolation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdEstimate {
    pub steps: Vec<f64>,
    pub raw: Vec<f64>,
    pub richardson: f64,
    /// Observed convergence order of the raw differences.
    pub order: f64,
}

impl FdEstimate {
    pub(crate) fn from_raw(steps: Vec<f64>, raw: Vec<f64>) -> Self {
        let richardson = (4.0 * raw[2] - raw[1]) / 3.0;
        let (d1, d2) = (raw[0] - raw[1], raw[1] - raw[2]);
        let order = if d2.abs() > 0.0 { (d1 / d2).abs().log2() } else { f64::NAN };
        Self { steps, raw, richardson, order }
    }
}

/// `Vol_φ` of the node-wise exponential `exp_ι(s Z)`.
pub fn deformed_volume(imm: &DiscretizedImmersion, z: &[Vector], s: f64) -> Result<f64> {
    imm.require_periodic()?;
    let model = imm.model();
    let values = (0..imm.node_count())
        .into_par_iter()
        .map(|k| model.exp(imm.value(k), &(&z[k] * s)))
        .collect::<Result<Vec<_>>>()?;
    let moved = DiscretizedImmersion::from_positions(model.clone(), imm.grid().clone(), values)?;
    Ok(rho_phi(&moved)?.vol_phi)
}

fn check_step(h: f64) -> Result<()> {
    if !(1e-5..=1e-2).contains(&h) {
        return Err(GeometryError::InvalidInput(format!("finite-difference step {h} outside [1e-5, 1e-2]")));
    }
    Ok(())
}

/// `d/ds Vol_φ(exp(sZ))` at `s = 0`.
pub fn first_variation_fd(geo: &ImmersionGeometry<'_>, var: &VariationField, h: f64) -> Result<FdEstimate> {
    check_step(h)?;
    let z = var.z(geo);
    fd_along(geo.imm, &z, h)
}

fn fd_along(imm: &DiscretizedImmersion, z: &[Vector], h: f64) -> Result<FdEstimate> {
    let steps = vec![h, h / 2.0, h / 4.0];
    let raw = steps
        .iter()
        .map(|&s| Ok((deformed_volume(imm, z, s)? - deformed_volume(imm, z, -s)?) / (2.0 * s)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(FdEstimate::from_raw(steps, raw))
}

/// `-∫ g(Y, H_φ) vol_φ`.
pub fn first_variation_analytic(geo: &ImmersionGeometry<'_>, hphi: &MeanCurvatureData, var: &VariationField) -> f64 {
    let pairing: Vec<f64> = var
        .y
        .iter()
        .zip(&hphi.coeffs)
        .map(|(y, h)| -y.iter().zip(h).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    geo.integrate_phi(&pairing)
}

/// Max node residual of
/// `Σ e^i(∇_{e_i}(X + φY + fξ)) = div(ρX)/ρ - g(Y, H_φ) + η(Y)`.
pub fn divergence_identity_check(
    geo: &ImmersionGeometry<'_>,
    hphi: &MeanCurvatureData,
    x: &[Vec<f64>],
    var: &VariationField,
) -> Result<f64> {
    let imm = geo.imm;
    let model = imm.model();
    let frames = &geo.frames.frames;
    let z = var.z(geo);
    let w: Vec<Vector> = z.iter().zip(frames).zip(x).map(|((zk, fr), xk)| zk + fr.tangent(xk)).collect();
    let d = geo.covariant_frame(&w)?;
    let rho = &geo.density.rho;
    let rho_x: Vec<Vec<f64>> = x.iter().zip(rho).map(|(xk, r)| xk.iter().map(|v| v * r).collect()).collect();
    let div = geo.divergence(&geo.param_field(&rho_x));
    let mut worst = 0.0_f64;
    for k in 0..geo.nodes() {
        let fr = &frames[k];
        let lhs: f64 = (0..geo.n()).map(|i| fr.e_co(i).dot(&d[k][i])).sum();
        let y_amb = fr.tangent(&var.y[k]);
        let gyh: f64 = var.y[k].iter().zip(&hphi.coeffs[k]).map(|(a, b)| a * b).sum();
        let rhs = div[k] / rho[k] - gyh + model.eta(imm.value(k)).dot(&y_amb);
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// Weak-form recovery of `H_φ`: differentiate `Vol_φ` along `φT + fξ` for
/// Fourier test fields `T` and solve the mass-matrix system.
pub fn h_phi_weak_oracle(
    geo: &ImmersionGeometry<'_>,
    modes: usize,
    f: Option<&[f64]>,
    h: f64,
) -> Result<Vec<Vec<f64>>> {
    check_step(h)?;
    let imm = geo.imm;
    let grid = imm.grid();
    let n = geo.n();
    let nodes = geo.nodes();
    let mut shapes: Vec<Vec<f64>> = Vec::new();
    let kmax = modes as i64;
    let wave_vectors: Vec<Vec<f64>> = if n == 1 {
        (0..=kmax).map(|k| vec![k as f64]).collect()
    } else {
        let mut out = Vec::new();
        for k1 in 0..=kmax {
            for k2 in -kmax..=kmax {
                if !(k1 == 0 && k2 < 0) {
                    out.push(vec![k1 as f64, k2 as f64]);
                }
            }
        }
        out
    };
    for k in &wave_vectors {
        let phase = |node: usize| -> f64 { k.iter().zip(grid.param(node)).map(|(a, b)| a * b).sum() };
        shapes.push((0..nodes).map(|m| phase(m).cos()).collect());
        if k.iter().any(|&x| x != 0.0) {
            shapes.push((0..nodes).map(|m| phase(m).sin()).collect());
        }
    }
    if 2 * shapes.len() > grid.size().pow(n as u32) {
        return Err(GeometryError::InvalidInput("too many test modes for the grid".into()));
    }
    let tests: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..shapes.len()).map(move |s| (i, s))).collect();
    let fvals = f.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; nodes]);
    let derivs = tests
        .par_iter()
        .map(|&(i, s)| {
            let mut y = vec![vec![0.0; n]; nodes];
            for (k, yk) in y.iter_mut().enumerate() {
                yk[i] = shapes[s][k];
            }
            let var = VariationField { y, f: fvals.clone() };
            Ok(fd_along(imm, &var.z(geo), h)?.richardson)
        })
        .collect::<Result<Vec<f64>>>()?;
    let dim = tests.len();
    let mass = DMatrix::from_fn(dim, dim, |a, b| {
        let (ia, sa) = tests[a];
        let (ib, sb) = tests[b];
        if ia != ib {
            return 0.0;
        }
        let prod: Vec<f64> = (0..nodes).map(|k| shapes[sa][k] * shapes[sb][k]).collect();
        geo.integrate_phi(&prod)
    });
    let rhs = -DVector::from_vec(derivs);
    let coef = mass
        .cholesky()
        .ok_or_else(|| GeometryError::Singular("weak-form mass matrix".into()))?
        .solve(&rhs);
    Ok((0..nodes)
        .map(|k| {
            let mut c = vec![0.0; n];
            for (t, &(i, s)) in tests.iter().enumerate() {
                c[i] += coef[t] * shapes[s][k];
            }
            c
        })
        .collect())
}
