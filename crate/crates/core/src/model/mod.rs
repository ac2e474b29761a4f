//! Sasakian manifolds in an ambient chart.
//!
//! Points and tangent vectors are plain coordinate vectors of length
//! [`SasakianModel::ambient_dim`]. Tensors are returned as ambient matrices;
//! for embedded models they are meant to act on tangent vectors only.

mod heisenberg;
pub mod identities;
mod sphere;

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, Result};

pub use heisenberg::Heisenberg;
pub use sphere::Sphere;

pub type Point = DVector<f64>;
pub type Vector = DVector<f64>;

pub trait SasakianModel: Debug + Send + Sync {
    fn name(&self) -> String;

    /// `n`, so the manifold has dimension `2n + 1`.
    fn dim_n(&self) -> usize;

    fn ambient_dim(&self) -> usize;

    fn manifold_dim(&self) -> usize {
        2 * self.dim_n() + 1
    }

    /// Distance of `p` from the manifold in chart terms.
    fn deviation(&self, p: &Point) -> f64;

    fn check_point(&self, p: &Point) -> Result<()> {
        if p.len() != self.ambient_dim() {
            return Err(GeometryError::InvalidInput(format!(
                "point has {} coordinates, model {} expects {}",
                p.len(),
                self.name(),
                self.ambient_dim()
            )));
        }
        let deviation = self.deviation(p);
        if !deviation.is_finite() || deviation > 1e-9 {
            return Err(GeometryError::OffManifold { deviation });
        }
        Ok(())
    }

    /// Nearest point on the manifold (identity for global charts).
    fn project_point(&self, p: &Point) -> Point;

    /// Ambient matrix projecting onto `T_pM`.
    fn tangent_projector(&self, p: &Point) -> DMatrix<f64>;

    /// Metric coefficients in the ambient chart.
    fn metric(&self, p: &Point) -> DMatrix<f64>;

    fn inner(&self, p: &Point, u: &Vector, v: &Vector) -> f64 {
        (u.transpose() * self.metric(p) * v)[(0, 0)]
    }

    fn norm(&self, p: &Point, u: &Vector) -> f64 {
        self.inner(p, u, u).max(0.0).sqrt()
    }

    /// Contact form as a covector: `η(u) = eta · u`.
    fn eta(&self, p: &Point) -> Vector;

    fn reeb(&self, p: &Point) -> Vector;

    fn phi(&self, p: &Point) -> DMatrix<f64>;

    /// Directional derivative of the matrix field `phi` along `w`.
    fn phi_derivative(&self, p: &Point, w: &Vector) -> DMatrix<f64>;

    /// Directional derivative of the Reeb field along `w`.
    fn reeb_derivative(&self, p: &Point, w: &Vector) -> Vector;

    /// Correction `Γ(x, y)` with `∇_X Y = P (D_X Y + Γ(X, Y))`.
    fn connection_term(&self, p: &Point, x: &Vector, y: &Vector) -> Vector;

    fn curvature(&self, p: &Point, x: &Vector, y: &Vector, z: &Vector) -> Vector;

    /// `Ric(u, v)` as the trace of `w ↦ R(w, u)v`.
    fn ricci(&self, p: &Point, u: &Vector, v: &Vector) -> f64 {
        self.tangent_basis(p)
            .iter()
            .map(|e| self.inner(p, &self.curvature(p, e, u, v), e))
            .sum()
    }

    /// Oriented Riemannian volume form on `2n+1` tangent vectors.
    fn volume_form(&self, p: &Point, vectors: &[Vector]) -> f64;

    /// Riemannian exponential map.
    fn exp(&self, p: &Point, v: &Vector) -> Result<Point>;

    /// Orthonormal basis of `T_pM`.
    fn tangent_basis(&self, p: &Point) -> Vec<Vector> {
        let proj = self.tangent_projector(p);
        let g = self.metric(p);
        let mut basis: Vec<Vector> = Vec::new();
        for c in 0..proj.ncols() {
            let mut v = proj.column(c).into_owned();
            for b in &basis {
                let coef = (b.transpose() * &g * &v)[(0, 0)];
                v -= b * coef;
            }
            let len = (v.transpose() * &g * &v)[(0, 0)].max(0.0).sqrt();
            if len > 1e-6 {
                basis.push(v / len);
            }
            if basis.len() == self.manifold_dim() {
                break;
            }
        }
        basis
    }

    /// Global left-invariant frame, when the model carries one; columns span `T_pM`.
    fn invariant_frame(&self, _p: &Point) -> Option<DMatrix<f64>> {
        None
    }

    /// Directional derivative of [`Self::invariant_frame`] along `w`.
    fn invariant_frame_derivative(&self, _p: &Point, _w: &Vector) -> Option<DMatrix<f64>> {
        None
    }

    fn random_point(&self, rng: &mut dyn rand::RngCore) -> Point;

    /// Random tangent vector at `p` with standard normal components.
    fn random_tangent(&self, p: &Point, rng: &mut dyn rand::RngCore) -> Vector {
        let raw = DVector::from_fn(self.ambient_dim(), |_, _| standard_normal(rng));
        self.tangent_projector(p) * raw
    }

    /// η-Einstein constant when known in closed form.
    fn declared_eta_einstein(&self) -> Option<f64> {
        None
    }
}

pub(crate) fn standard_normal(rng: &mut dyn rand::RngCore) -> f64 {
    // Box-Muller, so the stream only depends on the RNG itself.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Fourth-order central difference of a vector-valued function of one variable.
pub(crate) fn central4<F>(f: F, h: f64) -> DVector<f64>
where
    F: Fn(f64) -> DVector<f64>,
{
    (f(-2.0 * h) - f(2.0 * h) + (f(h) - f(-h)) * 8.0) / (12.0 * h)
}

/// `R(X,Y)Z` from a connection term by differentiating it with fourth-order differences.
pub(crate) fn curvature_from_connection<G>(
    gamma: G,
    p: &Point,
    x: &Vector,
    y: &Vector,
    z: &Vector,
    h: f64,
) -> Vector
where
    G: Fn(&Point, &Vector, &Vector) -> Vector,
{
    let dx_gamma_yz = central4(|s| gamma(&(p + x * s), y, z), h);
    let dy_gamma_xz = central4(|s| gamma(&(p + y * s), x, z), h);
    dx_gamma_yz - dy_gamma_xz + gamma(p, x, &gamma(p, y, z)) - gamma(p, y, &gamma(p, x, z))
}

/// Model selection as it appears in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Sphere { n: usize },
    Heisenberg { n: usize },
    /// Heisenberg metric plus a localized bump; not Sasakian, used as a negative control.
    PerturbedHeisenberg { n: usize, delta: f64 },
}

impl ModelSpec {
    pub fn build(&self) -> Result<Arc<dyn SasakianModel>> {
        Ok(match *self {
            ModelSpec::Sphere { n } => Arc::new(Sphere::new(n)?),
            ModelSpec::Heisenberg { n } => Arc::new(Heisenberg::new(n)?),
            ModelSpec::PerturbedHeisenberg { n, delta } => Arc::new(Heisenberg::perturbed(n, delta)?),
        })
    }
}
