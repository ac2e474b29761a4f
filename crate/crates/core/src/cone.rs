//! Calabi-Yau cone over odd spheres: `Ω`, `ψ`, angles and calibration.
//!
//! The cone complex structure is `-J_std` (so that `ξ = -J(r∂_r)` with `ξ = J_std p`),
//! whose holomorphic coordinates are `z̄_k`; hence `Ω = dz̄_1 ∧ ... ∧ dz̄_{n+1}`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calculus::ImmersionGeometry;
use crate::error::{GeometryError, Result};
use crate::model::{standard_normal, Point, SasakianModel, Vector};
use crate::variation::{h_phi, DENSITY_FLOOR};

/// Flat cone `C^{n+1} \ {0}` over `S^{2n+1}`.
#[derive(Clone, Debug)]
pub struct ConeStructure {
    n: usize,
    j_std: DMatrix<f64>,
}

fn conj_coordinate(v: &Vector, k: usize) -> Complex64 {
    Complex64::new(v[2 * k], -v[2 * k + 1])
}

fn complex_det(mut m: Vec<Vec<Complex64>>) -> Complex64 {
    let size = m.len();
    let mut det = Complex64::new(1.0, 0.0);
    for col in 0..size {
        let pivot = (col..size).max_by(|&a, &b| m[a][col].norm().total_cmp(&m[b][col].norm())).unwrap();
        if m[pivot][col].norm() == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if pivot != col {
            m.swap(pivot, col);
            det = -det;
        }
        det *= m[col][col];
        for row in col + 1..size {
            let factor = m[row][col] / m[col][col];
            for c in col..size {
                let sub = factor * m[col][c];
                m[row][c] -= sub;
            }
        }
    }
    det
}

/// Sign of the permutation listing `chosen` indices first, then the rest, both in order.
fn shuffle_sign(chosen: &[usize], rest: &[usize]) -> f64 {
    let inversions: usize = chosen.iter().map(|&c| rest.iter().filter(|&&r| r < c).count()).sum();
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `(α ∧ β)(v_1, ..., v_{p+q})` as a sum over `(p, q)` shuffles.
pub fn wedge_eval<A, B>(p: usize, alpha: A, beta: B, vs: &[Vector]) -> Complex64
where
    A: Fn(&[Vector]) -> Complex64,
    B: Fn(&[Vector]) -> Complex64,
{
    let total = vs.len();
    let mut sum = Complex64::new(0.0, 0.0);
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != p {
            continue;
        }
        let (chosen, rest): (Vec<usize>, Vec<usize>) = (0..total).partition(|&i| mask & (1 << i) != 0);
        let a_args: Vec<Vector> = chosen.iter().map(|&i| vs[i].clone()).collect();
        let b_args: Vec<Vector> = rest.iter().map(|&i| vs[i].clone()).collect();
        sum += alpha(&a_args) * beta(&b_args) * shuffle_sign(&chosen, &rest);
    }
    sum
}

impl ConeStructure {
    /// Only round odd spheres, whose cone is flat `C^{n+1}`.
    pub fn new(model: &dyn SasakianModel) -> Result<Self> {
        let n = model.dim_n();
        let round = model.ambient_dim() == 2 * n + 2 && model.declared_eta_einstein() == Some(2.0 * n as f64);
        if !round {
            return Err(GeometryError::UnsupportedModel(format!(
                "{}: the Calabi-Yau cone is realized only over round odd spheres",
                model.name()
            )));
        }
        let mut j_std = DMatrix::zeros(2 * n + 2, 2 * n + 2);
        for k in 0..=n {
            j_std[(2 * k + 1, 2 * k)] = 1.0;
            j_std[(2 * k, 2 * k + 1)] = -1.0;
        }
        Ok(Self { n, j_std })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `Ω(v_1, ..., v_{n+1}) = det(z̄_k(v_j))`.
    pub fn omega(&self, vs: &[Vector]) -> Complex64 {
        let m = (0..=self.n).map(|k| vs.iter().map(|v| conj_coordinate(v, k)).collect()).collect();
        complex_det(m)
    }

    pub fn omega_bar(&self, vs: &[Vector]) -> Complex64 {
        self.omega(vs).conj()
    }

    /// Kähler form `ω̄(u, v) = ḡ(Ju, v)` with `J = -J_std`.
    pub fn kahler(&self, u: &Vector, v: &Vector) -> f64 {
        -(&self.j_std * u).dot(v)
    }

    /// `ψ(v_1, ..., v_n) = Ω(p, v_1, ..., v_n)` at `p ∈ S^{2n+1}`.
    pub fn psi(&self, p: &Point, vs: &[Vector]) -> Complex64 {
        let mut args = Vec::with_capacity(vs.len() + 1);
        args.push(p.clone());
        args.extend(vs.iter().cloned());
        self.omega(&args)
    }

    /// `ω̄^m(v_1, ..., v_{2m})` by repeated wedging.
    fn kahler_power(&self, m: usize, vs: &[Vector]) -> Complex64 {
        if m == 1 {
            return Complex64::new(self.kahler(&vs[0], &vs[1]), 0.0);
        }
        wedge_eval(
            2,
            |a: &[Vector]| Complex64::new(self.kahler(&a[0], &a[1]), 0.0),
            |b: &[Vector]| self.kahler_power(m - 1, b),
            vs,
        )
    }

    fn random_vectors(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vector> {
        (0..count).map(|_| DVector::from_fn(2 * self.n + 2, |_, _| standard_normal(rng))).collect()
    }

    fn random_sphere_point(&self, rng: &mut ChaCha8Rng) -> Point {
        let v = DVector::from_fn(2 * self.n + 2, |_, _| standard_normal(rng));
        &v / v.norm()
    }

    /// Max residual of `ω̄^{n+1}/(n+1)! = (-1)^{n(n+1)/2} (i/2)^{n+1} Ω ∧ Ω̄` on random frames.
    pub fn normalization_residual(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.n + 1;
        let factorial: f64 = (1..=m).map(|k| k as f64).product();
        let sign = if (self.n * (self.n + 1) / 2) % 2 == 0 { 1.0 } else { -1.0 };
        let coeff = Complex64::new(0.0, 0.5).powu(m as u32) * sign;
        (0..samples)
            .map(|_| {
                let vs = self.random_vectors(2 * m, &mut rng);
                let lhs = self.kahler_power(m, &vs) / factorial;
                let rhs = coeff * wedge_eval(m, |a: &[Vector]| self.omega(a), |b: &[Vector]| self.omega_bar(b), &vs);
                (lhs - rhs).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Max residual of `Ω = (dr - iη) ∧ r^n ψ` at `r = 1`, on random points and frames.
    pub fn reconstruction_residual(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..samples)
            .map(|_| {
                let p = self.random_sphere_point(&mut rng);
                let vs = self.random_vectors(self.n + 1, &mut rng);
                let xi = &self.j_std * &p;
                let proj = DMatrix::identity(p.len(), p.len()) - &p * p.transpose();
                let one_form = |a: &[Vector]| Complex64::new(p.dot(&a[0]), -xi.dot(&a[0]));
                let psi_radial = |b: &[Vector]| {
                    let projected: Vec<Vector> = b.iter().map(|v| &proj * v).collect();
                    self.psi(&p, &projected)
                };
                (self.omega(&vs) - wedge_eval(1, one_form, psi_radial, &vs)).norm()
            })
            .fold(0.0, f64::max)
    }
}

/// `ι*ψ(e_1, ..., e_n)` on the orthonormal frame at `node`.
pub fn psi_eval(cone: &ConeStructure, geo: &ImmersionGeometry<'_>, node: usize) -> Complex64 {
    cone.psi(geo.imm.value(node), &geo.frames.frames[node].e)
}

fn psi_all(cone: &ConeStructure, geo: &ImmersionGeometry<'_>) -> Vec<Complex64> {
    (0..geo.nodes()).map(|k| psi_eval(cone, geo, k)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AngleField {
    /// Unwrapped `θ_L`; reduce mod 2π for the circle-valued angle.
    pub theta: Vec<f64>,
    /// `|ι*ψ(e_1, ..., e_n)|`.
    pub modulus: Vec<f64>,
    pub rho: Vec<f64>,
}

impl AngleField {
    pub fn modulus_residual(&self) -> f64 {
        self.modulus.iter().zip(&self.rho).map(|(m, r)| (m - r).abs()).fold(0.0, f64::max)
    }

    /// `max θ - min θ`.
    pub fn spread(&self) -> f64 {
        let max = self.theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.theta.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }
}

/// Node preceding `node` in the unwrapping scan: along the last axis, then down the first.
fn predecessor(geo: &ImmersionGeometry<'_>, node: usize) -> Option<usize> {
    let size = geo.imm.grid().size();
    match geo.n() {
        1 => node.checked_sub(1),
        _ => {
            let (i0, i1) = (node / size, node % size);
            if i1 > 0 {
                Some(node - 1)
            } else if i0 > 0 {
                Some(node - size)
            } else {
                None
            }
        }
    }
}

/// `∂_a θ = Im(∂_a ψ_L / ψ_L)` with `ψ_L = ι*ψ(e)` differentiated spectrally.
fn angle_partials(geo: &ImmersionGeometry<'_>, psi: &[Complex64]) -> Vec<Vec<f64>> {
    let grid = geo.imm.grid();
    (0..geo.n())
        .map(|a| grid.derivative_complex(psi, a).iter().zip(psi).map(|(d, p)| (d / p).im).collect())
        .collect()
}

/// `θ_L = arg ι*ψ(e_1, ..., e_n)`, continued from node 0 along the nearest branch.
pub fn legendrian_angle(cone: &ConeStructure, geo: &ImmersionGeometry<'_>) -> Result<AngleField> {
    geo.require_density(DENSITY_FLOOR)?;
    let psi = psi_all(cone, geo);
    let raw: Vec<f64> = psi.iter().map(|z| z.arg()).collect();
    let partials = angle_partials(geo, &psi);
    let grid = geo.imm.grid();
    let mut theta = raw.clone();
    for node in 0..geo.nodes() {
        let Some(prev) = predecessor(geo, node) else { continue };
        let axis = if geo.n() == 1 || prev + 1 == node { geo.n() - 1 } else { 0 };
        // Trapezoidal estimate of the continuous increment between neighbours.
        let predicted = 0.5 * (partials[axis][prev] + partials[axis][node]) * grid.spacing();
        if predicted.abs() > std::f64::consts::PI {
            return Err(GeometryError::Unwrap { from: prev, to: node, jump: predicted });
        }
        let mut delta = raw[node] - raw[prev];
        delta -= (delta / std::f64::consts::TAU).round() * std::f64::consts::TAU;
        theta[node] = theta[prev] + delta;
    }
    Ok(AngleField { theta, modulus: psi.iter().map(|z| z.norm()).collect(), rho: geo.density.rho.clone() })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// `ι*Re ψ`, `vol_φ` and `vol_g` on `∂_1 ∧ ... ∧ ∂_n`.
    pub re_psi: Vec<f64>,
    pub vol_phi: Vec<f64>,
    pub vol_g: Vec<f64>,
    /// `max(ι*Re ψ - vol_φ)` and `max(vol_φ - vol_g)`; both `≤ 1e-10` when the chain holds.
    pub first_violation: f64,
    pub second_violation: f64,
    pub first_equality: bool,
    pub second_equality: bool,
}

impl CalibrationReport {
    pub fn holds(&self) -> bool {
        self.first_violation <= 1e-10 && self.second_violation <= 1e-10
    }
}

/// Node-wise `ι*Re ψ ≤ vol_φ ≤ vol_{ι*g}`.
pub fn calibration_check(cone: &ConeStructure, geo: &ImmersionGeometry<'_>) -> CalibrationReport {
    let psi = psi_all(cone, geo);
    let sqrt_h = &geo.density.sqrt_h;
    let re_psi: Vec<f64> = psi.iter().zip(sqrt_h).map(|(z, s)| z.re * s).collect();
    let vol_phi: Vec<f64> = geo.density.rho.iter().zip(sqrt_h).map(|(r, s)| r * s).collect();
    let vol_g = sqrt_h.clone();
    let max_gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).fold(f64::NEG_INFINITY, f64::max);
    let all_equal = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-10);
    CalibrationReport {
        first_violation: max_gap(&re_psi, &vol_phi),
        second_violation: max_gap(&vol_phi, &vol_g),
        first_equality: all_equal(&re_psi, &vol_phi),
        second_equality: all_equal(&vol_phi, &vol_g),
        re_psi,
        vol_phi,
        vol_g,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AngleGradient {
    /// `(dθ_L)^♯` in frame components, from the spectral derivative of `ι*ψ`.
    pub spectral: Vec<Vec<f64>>,
    /// `-(n+1)ξ^⊤ + H_φ` in frame components.
    pub geometric: Vec<Vec<f64>>,
    pub max_residual: f64,
}

/// Compare `(dθ_L)^♯` with `-(n+1)ξ^⊤ + H_φ`.
pub fn angle_gradient_check(cone: &ConeStructure, geo: &ImmersionGeometry<'_>) -> Result<AngleGradient> {
    legendrian_angle(cone, geo)?;
    let psi = psi_all(cone, geo);
    let partials = angle_partials(geo, &psi);
    let n = geo.n();
    let hp = h_phi(geo)?;
    let model = geo.imm.model();
    let mut spectral = Vec::with_capacity(geo.nodes());
    let mut geometric = Vec::with_capacity(geo.nodes());
    let mut max_residual = 0.0_f64;
    for k in 0..geo.nodes() {
        let fr = &geo.frames.frames[k];
        let d = DVector::from_fn(n, |a, _| partials[a][k]);
        let sharp: Vec<f64> = (&fr.gs * d).iter().copied().collect();
        let eta = model.eta(geo.imm.value(k));
        let rhs: Vec<f64> = (0..n).map(|i| -(n as f64 + 1.0) * eta.dot(&fr.e[i]) + hp.coeffs[k][i]).collect();
        max_residual = sharp.iter().zip(&rhs).fold(max_residual, |m, (a, b)| m.max((a - b).abs()));
        spectral.push(sharp);
        geometric.push(rhs);
    }
    Ok(AngleGradient { spectral, geometric, max_residual })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecialDefect {
    pub theta: f64,
    /// `min_θ max_node |Im(e^{-iθ} ι*ψ)|`.
    pub defect: f64,
}

fn phase_defect(psi: &[Complex64], theta: f64) -> f64 {
    let rot = Complex64::from_polar(1.0, -theta);
    psi.iter().map(|z| (rot * z).im.abs()).fold(0.0, f64::max)
}

/// Best constant phase `θ*` and the remaining defect from `ι*Re(e^{-iθ*}ψ) = vol_φ`.
pub fn special_defect(cone: &ConeStructure, geo: &ImmersionGeometry<'_>) -> SpecialDefect {
    use std::f64::consts::PI;
    let psi = psi_all(cone, geo);
    // The objective has period π; scan, then refine by golden section.
    let samples = 720;
    let step = PI / samples as f64;
    let start = (0..samples)
        .map(|j| j as f64 * step)
        .min_by(|a, b| phase_defect(&psi, *a).total_cmp(&phase_defect(&psi, *b)))
        .unwrap();
    let (mut lo, mut hi) = (start - step, start + step);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (phase_defect(&psi, x1), phase_defect(&psi, x2));
    while hi - lo > 1e-14 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = phase_defect(&psi, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = phase_defect(&psi, x2);
        }
    }
    let mut theta = 0.5 * (lo + hi);
    let rot = Complex64::from_polar(1.0, -theta);
    if psi.iter().map(|z| (rot * z).re).sum::<f64>() < 0.0 {
        theta += PI;
    }
    let theta = theta.rem_euclid(2.0 * PI);
    SpecialDefect { theta, defect: phase_defect(&psi, theta) }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use super::*;
    use crate::immersion::{build_immersion, reference_torus_curve, ChartMap, GreatCircle, TorusCurve, WeightedTorus};
    use crate::immersion::DiscretizedImmersion;
    use crate::model::{Heisenberg, Sphere};
    use crate::spectral::PeriodicGrid;

    fn on_sphere(n: usize, chart: &dyn ChartMap, size: usize) -> DiscretizedImmersion {
        let model: Arc<dyn SasakianModel> = Arc::new(Sphere::new(n).unwrap());
        build_immersion(model, chart, PeriodicGrid::new(chart.dims(), size).unwrap()).unwrap()
    }

    #[test]
    fn cone_identities() {
        for n in 1..=2 {
            let cone = ConeStructure::new(&Sphere::new(n).unwrap()).unwrap();
            assert!(cone.normalization_residual(8, 1) < 1e-9);
            assert!(cone.reconstruction_residual(8, 2) < 1e-9);
        }
        assert!(matches!(ConeStructure::new(&Heisenberg::new(1).unwrap()), Err(GeometryError::UnsupportedModel(_))));
    }

    #[test]
    fn hand_contraction_on_real_circle() {
        let imm = on_sphere(1, &GreatCircle { phase: 0.0 }, 32);
        let geo = ImmersionGeometry::new(&imm).unwrap();
        let cone = ConeStructure::new(&Sphere::new(1).unwrap()).unwrap();
        for k in 0..32 {
            let t = imm.grid().param(k)[0];
            // i(p)Ω = z̄_1 dz̄_2 - z̄_2 dz̄_1 on e = (-sin t, cos t).
            let oracle = t.cos() * t.cos() + t.sin() * t.sin();
            assert!((psi_eval(&cone, &geo, k) - Complex64::new(oracle, 0.0)).norm() < 1e-14);
        }
        let angle = legendrian_angle(&cone, &geo).unwrap();
        assert!(angle.theta.iter().all(|t| t.abs() < 1e-12));
        let cal = calibration_check(&cone, &geo);
        assert!(cal.holds() && cal.first_equality && cal.second_equality);
        let sd = special_defect(&cone, &geo);
        assert!(sd.defect < 1e-10 && (sd.theta.min(2.0 * PI - sd.theta)) < 1e-9, "{sd:?}");
    }

    #[test]
    fn rotated_circle_shifts_angle() {
        let alpha = 0.3;
        let imm = on_sphere(1, &GreatCircle { phase: alpha }, 32);
        let geo = ImmersionGeometry::new(&imm).unwrap();
        let cone = ConeStructure::new(&Sphere::new(1).unwrap()).unwrap();
        let angle = legendrian_angle(&cone, &geo).unwrap();
        // Each conjugate coordinate picks up e^{-iα}.
        assert!(angle.theta.iter().all(|t| (t + 2.0 * alpha).abs() < 1e-12));
        let cal = calibration_check(&cone, &geo);
        assert!(cal.holds() && !cal.first_equality && cal.second_equality);
        let sd = special_defect(&cone, &geo);
        assert!(sd.defect < 1e-9 && (sd.theta - (2.0 * PI - 2.0 * alpha)).abs() < 1e-9, "{sd:?}");
    }

    #[test]
    fn modulus_is_rho_and_chain_is_strict() {
        let cone1 = ConeStructure::new(&Sphere::new(1).unwrap()).unwrap();
        let imm = on_sphere(1, &reference_torus_curve(), 64);
        let geo = ImmersionGeometry::new(&imm).unwrap();
        let angle = legendrian_angle(&cone1, &geo).unwrap();
        assert!(angle.modulus_residual() < 1e-12);
        let cal = calibration_check(&cone1, &geo);
        assert!(cal.holds());
        assert!(cal.vol_phi.iter().zip(&cal.vol_g).all(|(a, b)| a < &(b - 1e-6)));
        // Re ψ reaches vol_φ exactly where the rotating angle passes through 0 mod 2π.
        for (k, t) in angle.theta.iter().enumerate() {
            let gap = cal.vol_phi[k] - cal.re_psi[k];
            let expected = cal.vol_phi[k] * (1.0 - t.cos());
            assert!((gap - expected).abs() < 1e-12);
            assert_eq!(gap > 1e-10, (1.0 - t.cos()) > 1e-9, "node {k} θ {t}");
        }
        println!("theta {:?}", &angle.theta[..4]);
        assert!(special_defect(&cone1, &geo).defect > 1e-3);

        let cone2 = ConeStructure::new(&Sphere::new(2).unwrap()).unwrap();
        let imm = on_sphere(2, &WeightedTorus { k1: 1.0, k2: 2.0 }, 16);
        let geo = ImmersionGeometry::new(&imm).unwrap();
        assert!(legendrian_angle(&cone2, &geo).unwrap().modulus_residual() < 1e-12);
    }

    #[test]
    fn angle_gradient_relation() {
        let cone = ConeStructure::new(&Sphere::new(1).unwrap()).unwrap();
        for chart in [reference_torus_curve(), TorusCurve { a: 0.6, k: 2.0 }, TorusCurve { a: 0.6, k: -1.0 }] {
            let imm = on_sphere(1, &chart, 64);
            let geo = ImmersionGeometry::new(&imm).unwrap();
            let g = angle_gradient_check(&cone, &geo).unwrap();
            println!("residual {:.3e}, node0 {:?} vs {:?}", g.max_residual, g.spectral[0], g.geometric[0]);
            assert!(g.max_residual < 1e-8);
        }
    }

    #[test]
    fn constant_angle_gives_h_phi_from_reeb() {
        let cone = ConeStructure::new(&Sphere::new(1).unwrap()).unwrap();
        let imm = on_sphere(1, &TorusCurve { a: 0.6, k: -1.0 }, 32);
        assert!(imm.legendrian_defect() > 0.1);
        let geo = ImmersionGeometry::new(&imm).unwrap();
        assert!(legendrian_angle(&cone, &geo).unwrap().spread() < 1e-12);
        let hp = h_phi(&geo).unwrap();
        for k in 0..32 {
            let xi_top = geo.imm.model().eta(imm.value(k)).dot(&geo.frames.frames[k].e[0]);
            assert!((hp.coeffs[k][0] - 2.0 * xi_top).abs() < 1e-10);
        }
    }

    #[test]
    fn clifford_torus_has_constant_angle() {
        let cone = ConeStructure::new(&Sphere::new(2).unwrap()).unwrap();
        let imm = on_sphere(2, &WeightedTorus { k1: -1.0, k2: -1.0 }, 16);
        let geo = ImmersionGeometry::new(&imm).unwrap();
        let angle = legendrian_angle(&cone, &geo).unwrap();
        assert!(angle.spread() < 1e-7);
        assert!(special_defect(&cone, &geo).defect < 1e-10);
    }
}
