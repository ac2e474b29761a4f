use nalgebra::{DMatrix, DVector};

use super::{standard_normal, Point, SasakianModel, Vector};
use crate::error::{GeometryError, Result};

/// Round unit sphere `S^{2n+1} ⊂ C^{n+1}` with coordinates `(x1, y1, x2, y2, ...)`.
///
/// The Reeb field is `ξ = J p` for the standard complex structure `J`, and
/// `φ = -P J` with `P` the tangential projector.
#[derive(Clone, Debug)]
pub struct Sphere {
    n: usize,
    j: DMatrix<f64>,
    orientation: f64,
}

impl Sphere {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(GeometryError::InvalidInput("sphere needs n >= 1".into()));
        }
        let m = 2 * n + 2;
        let mut j = DMatrix::zeros(m, m);
        for k in 0..=n {
            j[(2 * k + 1, 2 * k)] = 1.0;
            j[(2 * k, 2 * k + 1)] = -1.0;
        }
        let mut sphere = Self { n, j, orientation: 1.0 };
        // Orient so that a Legendrian frame at the north pole has positive phi-volume.
        let p = DVector::from_fn(m, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let legendrian: Vec<Vector> = (1..=n)
            .map(|k| DVector::from_fn(m, |i, _| if i == 2 * k { 1.0 } else { 0.0 }))
            .collect();
        let mut frame = legendrian.clone();
        frame.push(-sphere.reeb(&p));
        let phi = sphere.phi(&p);
        frame.extend(legendrian.iter().map(|e| &phi * e));
        sphere.orientation = sphere.volume_form(&p, &frame).signum();
        Ok(sphere)
    }

    /// Standard complex structure of `C^{n+1}`.
    pub fn complex_structure(&self) -> &DMatrix<f64> {
        &self.j
    }
}

impl SasakianModel for Sphere {
    fn name(&self) -> String {
        format!("sphere(n={})", self.n)
    }

    fn dim_n(&self) -> usize {
        self.n
    }

    fn ambient_dim(&self) -> usize {
        2 * self.n + 2
    }

    fn deviation(&self, p: &Point) -> f64 {
        (p.norm() - 1.0).abs()
    }

    fn project_point(&self, p: &Point) -> Point {
        p.normalize()
    }

    fn tangent_projector(&self, p: &Point) -> DMatrix<f64> {
        let m = self.ambient_dim();
        DMatrix::identity(m, m) - p * p.transpose() / p.norm_squared()
    }

    fn metric(&self, _p: &Point) -> DMatrix<f64> {
        let m = self.ambient_dim();
        DMatrix::identity(m, m)
    }

    fn inner(&self, _p: &Point, u: &Vector, v: &Vector) -> f64 {
        u.dot(v)
    }

    fn eta(&self, p: &Point) -> Vector {
        &self.j * p
    }

    fn reeb(&self, p: &Point) -> Vector {
        &self.j * p
    }

    fn phi(&self, p: &Point) -> DMatrix<f64> {
        -(self.tangent_projector(p) * &self.j)
    }

    fn phi_derivative(&self, p: &Point, w: &Vector) -> DMatrix<f64> {
        let s = p.norm_squared();
        let pw = p.dot(w);
        // derivative of p p^T / |p|^2
        let dpp = (w * p.transpose() + p * w.transpose()) / s - p * p.transpose() * (2.0 * pw / (s * s));
        dpp * &self.j
    }

    fn reeb_derivative(&self, _p: &Point, w: &Vector) -> Vector {
        &self.j * w
    }

    fn connection_term(&self, p: &Point, _x: &Vector, _y: &Vector) -> Vector {
        DVector::zeros(p.len())
    }

    fn curvature(&self, _p: &Point, x: &Vector, y: &Vector, z: &Vector) -> Vector {
        x * y.dot(z) - y * x.dot(z)
    }

    fn volume_form(&self, p: &Point, vectors: &[Vector]) -> f64 {
        let m = self.ambient_dim();
        let mut mat = DMatrix::zeros(m, m);
        for (c, v) in vectors.iter().enumerate() {
            mat.set_column(c, v);
        }
        mat.set_column(m - 1, p);
        self.orientation * mat.determinant()
    }

    fn exp(&self, p: &Point, v: &Vector) -> Result<Point> {
        let v = self.tangent_projector(p) * v;
        let len = v.norm();
        if len < 1e-300 {
            return Ok(p.clone());
        }
        Ok((p * len.cos() + v * (len.sin() / len)).normalize())
    }

    fn random_point(&self, rng: &mut dyn rand::RngCore) -> Point {
        DVector::from_fn(self.ambient_dim(), |_, _| standard_normal(rng)).normalize()
    }

    fn declared_eta_einstein(&self) -> Option<f64> {
        Some(2.0 * self.n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reeb_at_north_pole() {
        let s = Sphere::new(1).unwrap();
        let p = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.reeb(&p), DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0]));
    }

    #[test]
    fn great_circle_is_geodesic() {
        let s = Sphere::new(1).unwrap();
        let p = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let v = DVector::from_vec(vec![0.0, 0.0, 0.3, 0.0]);
        let q = s.exp(&p, &v).unwrap();
        assert!((q - DVector::from_vec(vec![0.3f64.cos(), 0.0, 0.3f64.sin(), 0.0])).norm() < 1e-15);
    }

    #[test]
    fn einstein_ricci() {
        let s = Sphere::new(2).unwrap();
        let p = DVector::from_vec(vec![0.6, 0.0, 0.0, 0.8, 0.0, 0.0]);
        let u = s.tangent_projector(&p) * DVector::from_vec(vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]);
        assert!((s.ricci(&p, &u, &u) - 4.0 * u.norm_squared()).abs() < 1e-12);
    }
}
