//! Structure-identity suite, Levi-Civita connection on sampled fields and the
//! η-Einstein fit.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{central4, Point, SasakianModel, Vector};
use crate::error::{GeometryError, Result};

/// Vector field on the ambient chart, evaluated pointwise.
pub type Field<'a> = dyn Fn(&Point) -> Vector + Sync + 'a;

fn fd_step(p: &Point, dir: &Vector) -> f64 {
    let reach = dir.amax();
    if reach == 0.0 {
        return 1.0;
    }
    1e-4 * p.amax().max(1.0) / reach
}

/// Directional derivative `D_x Y` at `p`, fourth-order accurate.
///
/// Fails with `NonDifferentiable` when one-sided quotients disagree, which is
/// how kinks in the sampled field show up.
pub fn directional_derivative(field: &Field<'_>, p: &Point, x: &Vector) -> Result<Vector> {
    let h = fd_step(p, x);
    let central = central4(|s| field(&(p + x * s)), h);
    let base = field(p);
    let forward = (field(&(p + x * h)) - &base) / h;
    let backward = (&base - field(&(p - x * h))) / h;
    let mismatch = (&forward - &backward).amax();
    if !mismatch.is_finite() || mismatch > 1e-2 * (1.0 + central.amax()) {
        return Err(GeometryError::NonDifferentiable { mismatch });
    }
    Ok(central)
}

/// `∇_X Y` at `p`, where `X = x_field(p)` and `Y` is given as a field near `p`.
pub fn levi_civita(
    model: &dyn SasakianModel,
    p: &Point,
    x_field: &Field<'_>,
    y_field: &Field<'_>,
) -> Result<Vector> {
    model.check_point(p)?;
    let x = x_field(p);
    let y = y_field(p);
    let dxy = directional_derivative(y_field, p, &x)?;
    Ok(model.tangent_projector(p) * (dxy + model.connection_term(p, &x, &y)))
}

/// Christoffel symbols from fourth-order differences of the metric.
///
/// Returns `Γ^l` as matrices `[l][(j, k)]`.
pub fn christoffel_fd<G>(metric: G, p: &Point, h: f64) -> Vec<DMatrix<f64>>
where
    G: Fn(&Point) -> DMatrix<f64>,
{
    let m = p.len();
    let dg: Vec<DMatrix<f64>> = (0..m)
        .map(|c| {
            let e = DVector::from_fn(m, |r, _| if r == c { 1.0 } else { 0.0 });
            let at = |s: f64| metric(&(p + &e * s));
            (at(-2.0 * h) - at(2.0 * h) + (at(h) - at(-h)) * 8.0) / (12.0 * h)
        })
        .collect();
    let ginv = metric(p).try_inverse().expect("metric invertible");
    (0..m)
        .map(|l| {
            DMatrix::from_fn(m, m, |j, k| {
                (0..m)
                    .map(|q| 0.5 * ginv[(l, q)] * (dg[j][(q, k)] + dg[k][(q, j)] - dg[q][(j, k)]))
                    .sum()
            })
        })
        .collect()
}

pub fn apply_christoffel(gamma: &[DMatrix<f64>], x: &Vector, y: &Vector) -> Vector {
    DVector::from_iterator(gamma.len(), gamma.iter().map(|g| (x.transpose() * g * y)[(0, 0)]))
}

/// Curvature `R(X,Y)Z` computed entirely from finite differences of the metric.
pub fn curvature_fd_oracle(
    model: &dyn SasakianModel,
    p: &Point,
    x: &Vector,
    y: &Vector,
    z: &Vector,
) -> Vector {
    let hg = 1e-3 * p.amax().max(1.0);
    let gamma = |q: &Point, a: &Vector, b: &Vector| {
        apply_christoffel(&christoffel_fd(|r| model.metric(r), q, hg), a, b)
    };
    let h = 1e-2 * p.amax().max(1.0) / x.amax().max(y.amax()).max(1e-300);
    super::curvature_from_connection(gamma, p, x, y, z, h)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    pub identity: String,
    pub max_residual: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaEinsteinFit {
    pub a: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub model: String,
    pub identities: Vec<IdentityResidual>,
    pub eta_einstein: Option<EtaEinsteinFit>,
}

impl CurvatureReport {
    pub fn residual(&self, identity: &str) -> Option<f64> {
        self.identities.iter().find(|r| r.identity == identity).map(|r| r.max_residual)
    }

    pub fn max_residual(&self) -> f64 {
        self.identities.iter().fold(0.0, |m, r| m.max(r.max_residual))
    }
}

pub const IDENTITY_NAMES: [&str; 18] = [
    "eta_of_reeb",
    "phi_squared",
    "phi_metric_compatibility",
    "d_eta_equals_2g_phi",
    "nijenhuis_plus_d_eta_reeb",
    "phi_of_reeb",
    "eta_after_phi",
    "eta_is_reeb_dual",
    "reeb_contracts_d_eta",
    "nabla_reeb",
    "nabla_phi",
    "curvature_reeb",
    "curvature_phi",
    "ricci_reeb_reeb",
    "ricci_reeb_horizontal",
    "metric_parallel",
    "torsion_free",
    "curvature_antisymmetry",
];

/// Deterministic sample of model points.
pub fn sample_points(model: &dyn SasakianModel, count: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| model.random_point(&mut rng)).collect()
}

/// Exterior derivative of η on constant ambient vectors.
fn d_eta(model: &dyn SasakianModel, p: &Point, u: &Vector, v: &Vector) -> Result<Vector> {
    let eta = |q: &Point| model.eta(q);
    let du = directional_derivative(&eta, p, u)?;
    let dv = directional_derivative(&eta, p, v)?;
    Ok(DVector::from_element(1, du.dot(v) - dv.dot(u)))
}

fn bracket(a: &Field<'_>, b: &Field<'_>, p: &Point) -> Result<Vector> {
    Ok(directional_derivative(b, p, &a(p))? - directional_derivative(a, p, &b(p))?)
}

fn point_residuals(model: &dyn SasakianModel, p: &Point, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = model.random_tangent(p, &mut rng);
    let v = model.random_tangent(p, &mut rng);
    let w = model.random_tangent(p, &mut rng);
    let g = |a: &Vector, b: &Vector| model.inner(p, a, b);
    let eta = model.eta(p);
    let xi = model.reeb(p);
    let phi = model.phi(p);
    let n = model.dim_n() as f64;

    let ufield = |q: &Point| model.tangent_projector(q) * &u;
    let vfield = |q: &Point| model.tangent_projector(q) * &v;
    let wfield = |q: &Point| model.tangent_projector(q) * &w;
    let phi_u = |q: &Point| model.phi(q) * ufield(q);
    let phi_v = |q: &Point| model.phi(q) * vfield(q);
    let reeb = |q: &Point| model.reeb(q);

    let mut out = Vec::with_capacity(IDENTITY_NAMES.len());
    out.push((eta.dot(&xi) - 1.0).abs());
    out.push((&phi * &phi * &u + &u - &xi * eta.dot(&u)).amax());
    out.push((g(&(&phi * &u), &(&phi * &v)) - g(&u, &v) + eta.dot(&u) * eta.dot(&v)).abs());
    let deta_uv = d_eta(model, p, &u, &v)?[0];
    out.push((deta_uv - 2.0 * g(&u, &(&phi * &v))).abs());

    let uv = bracket(&ufield, &vfield, p)?;
    let pupv = bracket(&phi_u, &phi_v, p)?;
    let pu_v = bracket(&phi_u, &vfield, p)?;
    let u_pv = bracket(&ufield, &phi_v, p)?;
    let nijenhuis = &phi * &phi * uv + pupv - &phi * pu_v - &phi * u_pv;
    out.push((nijenhuis + &xi * deta_uv).amax());

    out.push((&phi * &xi).amax());
    out.push((phi.transpose() * &eta).dot(&u).abs());
    out.push((eta.dot(&u) - g(&xi, &u)).abs());
    out.push(d_eta(model, p, &xi, &u)?[0].abs());

    let nabla_u_xi = levi_civita(model, p, &ufield, &reeb)?;
    out.push((nabla_u_xi + &phi * &u).amax());
    let nabla_u_phiv = levi_civita(model, p, &ufield, &phi_v)?;
    let nabla_u_v = levi_civita(model, p, &ufield, &vfield)?;
    let nabla_phi = nabla_u_phiv - &phi * nabla_u_v;
    out.push((nabla_phi - &xi * g(&u, &v) + &u * eta.dot(&v)).amax());

    out.push((model.curvature(p, &u, &v, &xi) - &u * eta.dot(&v) + &v * eta.dot(&u)).amax());
    let lhs = model.curvature(p, &u, &v, &(&phi * &w));
    let rhs = &phi * model.curvature(p, &u, &v, &w) - (&phi * &u) * g(&v, &w)
        + &v * g(&(&phi * &u), &w)
        + (&phi * &v) * g(&u, &w)
        - &u * g(&(&phi * &v), &w);
    out.push((lhs - rhs).amax());
    out.push((model.ricci(p, &xi, &xi) - 2.0 * n).abs());
    let horizontal = &u - &xi * eta.dot(&u);
    out.push(model.ricci(p, &xi, &horizontal).abs());

    // u g(v, w) = g(∇_u v, w) + g(v, ∇_u w) for the projected constant fields
    let metric_along = |q: &Point| DVector::from_element(1, model.inner(q, &vfield(q), &wfield(q)));
    let du_gvw = directional_derivative(&metric_along, p, &u)?[0];
    let nabla_u_w = levi_civita(model, p, &ufield, &wfield)?;
    let nabla_u_v = levi_civita(model, p, &ufield, &vfield)?;
    out.push((du_gvw - g(&nabla_u_v, &w) - g(&v, &nabla_u_w)).abs());
    let nabla_v_u = levi_civita(model, p, &vfield, &ufield)?;
    let proj = model.tangent_projector(p);
    out.push((nabla_u_v - nabla_v_u - proj * bracket(&ufield, &vfield, p)?).amax());
    let ruv = model.curvature(p, &u, &v, &w);
    let rvu = model.curvature(p, &v, &u, &w);
    out.push((ruv + rvu).amax());
    Ok(out)
}

/// Evaluates every identity at every sample point and fits the η-Einstein constant.
pub fn verify_structure_identities(
    model: &dyn SasakianModel,
    points: &[Point],
    seed: u64,
) -> Result<CurvatureReport> {
    if points.len() < 16 {
        return Err(GeometryError::InvalidInput(format!(
            "identity suite needs at least 16 points, got {}",
            points.len()
        )));
    }
    for p in points {
        model.check_point(p)?;
    }
    let per_point: Vec<Vec<f64>> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| point_residuals(model, p, seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;
    let identities = IDENTITY_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| IdentityResidual {
            identity: (*name).to_string(),
            max_residual: per_point.iter().fold(0.0, |m, r| m.max(r[k])),
            points: points.len(),
        })
        .collect();
    Ok(CurvatureReport {
        model: model.name(),
        identities,
        eta_einstein: eta_einstein_fit(model, points)?,
    })
}

/// Accepted η-Einstein fits have residual at most this.
pub const ETA_EINSTEIN_TOLERANCE: f64 = 1e-4;

/// Least-squares fit of `Ric = A g + (2n - A) η⊗η` over orthonormal frame pairs.
///
/// Returns `None` when the fit residual exceeds [`ETA_EINSTEIN_TOLERANCE`].
pub fn eta_einstein_fit(model: &dyn SasakianModel, points: &[Point]) -> Result<Option<EtaEinsteinFit>> {
    let fit = eta_einstein_least_squares(model, points)?;
    Ok((fit.residual <= ETA_EINSTEIN_TOLERANCE).then_some(fit))
}

/// The least-squares `A` and its max residual, accepted or not.
pub fn eta_einstein_least_squares(model: &dyn SasakianModel, points: &[Point]) -> Result<EtaEinsteinFit> {
    let two_n = 2.0 * model.dim_n() as f64;
    let samples: Vec<Vec<(f64, f64)>> = points
        .par_iter()
        .map(|p| {
            model.check_point(p)?;
            let basis = model.tangent_basis(p);
            let eta = model.eta(p);
            let mut pairs = Vec::new();
            for (i, u) in basis.iter().enumerate() {
                for v in &basis[i..] {
                    let eu = eta.dot(u) * eta.dot(v);
                    let a = model.ricci(p, u, v) - two_n * eu;
                    let b = model.inner(p, u, v) - eu;
                    pairs.push((a, b));
                }
            }
            Ok(pairs)
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<(f64, f64)> = samples.into_iter().flatten().collect();
    let ab: f64 = crate::spectral::pairwise_sum(&pairs.iter().map(|(a, b)| a * b).collect::<Vec<_>>());
    let bb: f64 = crate::spectral::pairwise_sum(&pairs.iter().map(|(_, b)| b * b).collect::<Vec<_>>());
    if !(bb > 0.0) {
        return Err(GeometryError::InvalidInput("eta-Einstein fit needs at least one sample point".into()));
    }
    let a = ab / bb;
    let residual = pairs.iter().fold(0.0_f64, |m, (x, y)| m.max((x - a * y).abs()));
    Ok(EtaEinsteinFit { a, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Heisenberg, Sphere};

    #[test]
    fn sphere_suite_is_exact() {
        let s = Sphere::new(1).unwrap();
        let pts = sample_points(&s, 16, 3);
        let report = verify_structure_identities(&s, &pts, 9).unwrap();
        assert!(report.max_residual() < 1e-8, "{report:?}");
        let fit = report.eta_einstein.unwrap();
        assert!((fit.a - 2.0).abs() < 1e-8);
    }

    #[test]
    fn heisenberg_christoffel_matches_oracle() {
        let h = Heisenberg::new(1).unwrap();
        let p = DVector::from_vec(vec![0.4, -0.3, 0.8]);
        let gamma = christoffel_fd(|q| h.metric(q), &p, 1e-4);
        let x = DVector::from_vec(vec![0.3, 1.0, -0.5]);
        let y = DVector::from_vec(vec![-0.2, 0.1, 0.7]);
        let diff = apply_christoffel(&gamma, &x, &y) - h.connection_term(&p, &x, &y);
        assert!(diff.amax() < 1e-7, "{diff}");
    }

    #[test]
    fn kinked_field_is_rejected() {
        let s = Sphere::new(1).unwrap();
        let p = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let x = |_: &Point| DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0]);
        let kink = |q: &Point| DVector::from_vec(vec![0.0, q[2].abs(), 0.0, 0.0]);
        assert!(matches!(
            levi_civita(&s, &p, &x, &kink),
            Err(GeometryError::NonDifferentiable { .. })
        ));
    }

    #[test]
    fn heisenberg_suite_and_fit() {
        for n in [1usize, 2] {
            let h = Heisenberg::new(n).unwrap();
            let pts = sample_points(&h, 16, 5);
            let report = verify_structure_identities(&h, &pts, 1).unwrap();
            for r in &report.identities {
                println!("{} {:.3e}", r.identity, r.max_residual);
            }
            assert!(report.max_residual() < 1e-7);
            let fit = report.eta_einstein.unwrap();
            println!("A = {} residual {:.3e}", fit.a, fit.residual);
            assert!((fit.a + 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn perturbed_metric_is_flagged() {
        let h = Heisenberg::perturbed(1, 0.3).unwrap();
        let pts = sample_points(&h, 16, 5);
        let report = verify_structure_identities(&h, &pts, 1).unwrap();
        assert!(report.residual("d_eta_equals_2g_phi").unwrap() > 1e-3);
        assert!(report.eta_einstein.is_none());
    }
}
