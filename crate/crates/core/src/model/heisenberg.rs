use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{curvature_from_connection, Point, SasakianModel, Vector};
use crate::error::{GeometryError, Result};

/// Heisenberg group `H^{2n+1}` in global coordinates `(x1, y1, ..., xn, yn, z)`.
///
/// `η = dz + Σ (x_i dy_i - y_i dx_i)`, `ξ = ∂z`, `g = Σ (dx_i² + dy_i²) + η²`.
/// With `delta != 0` a bump `delta · exp(-|p|²) dx1²` is added to the metric,
/// which breaks the Sasakian identities on purpose.
#[derive(Clone, Debug)]
pub struct Heisenberg {
    n: usize,
    delta: f64,
    orientation: f64,
}

impl Heisenberg {
    pub fn new(n: usize) -> Result<Self> {
        Self::perturbed(n, 0.0)
    }

    pub fn perturbed(n: usize, delta: f64) -> Result<Self> {
        if n == 0 {
            return Err(GeometryError::InvalidInput("Heisenberg model needs n >= 1".into()));
        }
        if !delta.is_finite() || delta <= -1.0 {
            return Err(GeometryError::InvalidInput(format!("perturbation {delta} breaks positivity")));
        }
        let mut model = Self { n, delta, orientation: 1.0 };
        let m = 2 * n + 1;
        let p = DVector::zeros(m);
        let unit = |i: usize| DVector::from_fn(m, |r, _| if r == i { 1.0 } else { 0.0 });
        let mut frame: Vec<Vector> = (0..n).map(|i| unit(2 * i)).collect();
        frame.push(-model.reeb(&p));
        let phi = model.phi(&p);
        frame.extend((0..n).map(|i| &phi * unit(2 * i)));
        model.orientation = model.volume_form(&p, &frame).signum();
        Ok(model)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    fn z(&self) -> usize {
        2 * self.n
    }

    fn bump(&self, p: &Point) -> f64 {
        self.delta * (-p.norm_squared()).exp()
    }

    /// `D_w η` as a covector.
    fn eta_derivative(&self, w: &Vector) -> Vector {
        let mut d = DVector::zeros(w.len());
        for i in 0..self.n {
            d[2 * i + 1] = w[2 * i];
            d[2 * i] = -w[2 * i + 1];
        }
        d
    }

    /// Directional derivative of the metric coefficients.
    pub fn metric_derivative(&self, p: &Point, w: &Vector) -> DMatrix<f64> {
        let eta = self.eta(p);
        let deta = self.eta_derivative(w);
        let mut dg = &deta * eta.transpose() + &eta * deta.transpose();
        if self.delta != 0.0 {
            dg[(0, 0)] += -2.0 * p.dot(w) * self.bump(p);
        }
        dg
    }

    /// Lattice isometry `(x1, y1, z) ↦ (x1 + s, y1, z - s·y1)` (left translation).
    pub fn translate_x(&self, p: &Point, s: f64) -> Point {
        let mut q = p.clone();
        q[0] += s;
        q[self.z()] -= s * p[1];
        q
    }
}

impl SasakianModel for Heisenberg {
    fn name(&self) -> String {
        if self.delta == 0.0 {
            format!("heisenberg(n={})", self.n)
        } else {
            format!("perturbed_heisenberg(n={}, delta={})", self.n, self.delta)
        }
    }

    fn dim_n(&self) -> usize {
        self.n
    }

    fn ambient_dim(&self) -> usize {
        2 * self.n + 1
    }

    fn deviation(&self, p: &Point) -> f64 {
        if p.iter().all(|x| x.is_finite()) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    fn project_point(&self, p: &Point) -> Point {
        p.clone()
    }

    fn tangent_projector(&self, _p: &Point) -> DMatrix<f64> {
        let m = self.ambient_dim();
        DMatrix::identity(m, m)
    }

    fn metric(&self, p: &Point) -> DMatrix<f64> {
        let m = self.ambient_dim();
        let eta = self.eta(p);
        let mut g = &eta * eta.transpose();
        for i in 0..m - 1 {
            g[(i, i)] += 1.0;
        }
        g[(0, 0)] += self.bump(p);
        g
    }

    fn eta(&self, p: &Point) -> Vector {
        let mut e = DVector::zeros(self.ambient_dim());
        for i in 0..self.n {
            e[2 * i] = -p[2 * i + 1];
            e[2 * i + 1] = p[2 * i];
        }
        e[self.z()] = 1.0;
        e
    }

    fn reeb(&self, _p: &Point) -> Vector {
        let mut xi = DVector::zeros(self.ambient_dim());
        xi[self.z()] = 1.0;
        xi
    }

    fn phi(&self, p: &Point) -> DMatrix<f64> {
        let m = self.ambient_dim();
        let z = self.z();
        let mut phi = DMatrix::zeros(m, m);
        for i in 0..self.n {
            let (x, y) = (2 * i, 2 * i + 1);
            phi[(y, x)] = -1.0;
            phi[(z, x)] = p[x];
            phi[(x, y)] = 1.0;
            phi[(z, y)] = p[y];
        }
        phi
    }

    fn phi_derivative(&self, _p: &Point, w: &Vector) -> DMatrix<f64> {
        let m = self.ambient_dim();
        let z = self.z();
        let mut d = DMatrix::zeros(m, m);
        for c in 0..m - 1 {
            d[(z, c)] = w[c];
        }
        d
    }

    fn reeb_derivative(&self, p: &Point, _w: &Vector) -> Vector {
        DVector::zeros(p.len())
    }

    fn connection_term(&self, p: &Point, x: &Vector, y: &Vector) -> Vector {
        let m = self.ambient_dim();
        let dxg = self.metric_derivative(p, x);
        let dyg = self.metric_derivative(p, y);
        let mut w = DVector::zeros(m);
        for c in 0..m {
            let unit = DVector::from_fn(m, |r, _| if r == c { 1.0 } else { 0.0 });
            w[c] = (x.transpose() * self.metric_derivative(p, &unit) * y)[(0, 0)];
        }
        let rhs = (dxg * y + dyg * x - w) * 0.5;
        self.metric(p)
            .cholesky()
            .expect("Heisenberg metric is positive definite")
            .solve(&rhs)
    }

    fn curvature(&self, p: &Point, x: &Vector, y: &Vector, z: &Vector) -> Vector {
        let reach = x.amax().max(y.amax());
        if reach == 0.0 {
            return DVector::zeros(p.len());
        }
        let h = 1e-4 * p.amax().max(1.0) / reach;
        curvature_from_connection(|q, a, b| self.connection_term(q, a, b), p, x, y, z, h)
    }

    fn volume_form(&self, p: &Point, vectors: &[Vector]) -> f64 {
        let m = self.ambient_dim();
        let mut mat = DMatrix::zeros(m, m);
        for (c, v) in vectors.iter().enumerate() {
            mat.set_column(c, v);
        }
        self.orientation * self.metric(p).determinant().sqrt() * mat.determinant()
    }

    fn exp(&self, p: &Point, v: &Vector) -> Result<Point> {
        // RK4 on q'' = -Γ(q', q') over unit time.
        let steps = 32 * (1 + (8.0 * v.norm()).ceil() as usize);
        let dt = 1.0 / steps as f64;
        let rhs = |q: &Point, u: &Vector| (u.clone(), -self.connection_term(q, u, u));
        let (mut q, mut u) = (p.clone(), v.clone());
        for _ in 0..steps {
            let (k1q, k1u) = rhs(&q, &u);
            let (k2q, k2u) = rhs(&(&q + &k1q * (dt / 2.0)), &(&u + &k1u * (dt / 2.0)));
            let (k3q, k3u) = rhs(&(&q + &k2q * (dt / 2.0)), &(&u + &k2u * (dt / 2.0)));
            let (k4q, k4u) = rhs(&(&q + &k3q * dt), &(&u + &k3u * dt));
            q += (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (dt / 6.0);
            u += (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * (dt / 6.0);
        }
        if q.iter().all(|c| c.is_finite()) {
            Ok(q)
        } else {
            Err(GeometryError::OffManifold { deviation: f64::INFINITY })
        }
    }

    fn tangent_basis(&self, p: &Point) -> Vec<Vector> {
        if self.delta != 0.0 {
            let proj = self.tangent_projector(p);
            let g = self.metric(p);
            let mut basis: Vec<Vector> = Vec::new();
            for c in 0..proj.ncols() {
                let mut v = proj.column(c).into_owned();
                for b in &basis {
                    let coef = (b.transpose() * &g * &v)[(0, 0)];
                    v -= b * coef;
                }
                let len = (v.transpose() * &g * &v)[(0, 0)].sqrt();
                basis.push(v / len);
            }
            return basis;
        }
        let f = self.invariant_frame(p).expect("frame exists");
        f.column_iter().map(|c| c.into_owned()).collect()
    }

    fn invariant_frame(&self, p: &Point) -> Option<DMatrix<f64>> {
        let m = self.ambient_dim();
        let z = self.z();
        let mut f = DMatrix::zeros(m, m);
        for i in 0..self.n {
            let (x, y) = (2 * i, 2 * i + 1);
            f[(x, x)] = 1.0;
            f[(z, x)] = p[y];
            f[(y, y)] = 1.0;
            f[(z, y)] = -p[x];
        }
        f[(z, z)] = 1.0;
        Some(f)
    }

    fn invariant_frame_derivative(&self, _p: &Point, w: &Vector) -> Option<DMatrix<f64>> {
        let m = self.ambient_dim();
        let z = self.z();
        let mut d = DMatrix::zeros(m, m);
        for i in 0..self.n {
            let (x, y) = (2 * i, 2 * i + 1);
            d[(z, x)] = w[y];
            d[(z, y)] = -w[x];
        }
        Some(d)
    }

    fn random_point(&self, rng: &mut dyn rand::RngCore) -> Point {
        DVector::from_fn(self.ambient_dim(), |_, _| rng.gen_range(-1.0..1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contact_condition_in_coordinates() {
        let h = Heisenberg::new(1).unwrap();
        let p = DVector::from_vec(vec![0.3, -0.7, 0.2]);
        let phi = h.phi(&p);
        let ex = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let ey = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        // dη(∂x, ∂y) = 2 and 2 g(∂x, φ ∂y) must agree
        assert!((2.0 * h.inner(&p, &ex, &(&phi * &ey)) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn translation_preserves_contact_form() {
        let h = Heisenberg::new(1).unwrap();
        let p = DVector::from_vec(vec![0.3, -0.7, 0.2]);
        let q = h.translate_x(&p, 2.0);
        let mut dl = DMatrix::identity(3, 3);
        dl[(2, 1)] = -2.0;
        let pulled = dl.transpose() * h.eta(&q);
        assert!((pulled - h.eta(&p)).norm() < 1e-14);
    }

    #[test]
    fn invariant_frame_is_orthonormal() {
        let h = Heisenberg::new(2).unwrap();
        let p = DVector::from_vec(vec![0.3, -0.7, 0.2, 0.9, -1.1]);
        let f = h.invariant_frame(&p).unwrap();
        let gram = f.transpose() * h.metric(&p) * &f;
        assert!((gram - DMatrix::identity(5, 5)).amax() < 1e-13);
    }
}
