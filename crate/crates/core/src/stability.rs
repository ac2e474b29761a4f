//! Second variation at φ-minimal immersions: spectra, witnesses, convexity.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::ImmersionGeometry;
use crate::error::{GeometryError, Result};
use crate::model::identities::{eta_einstein_least_squares, sample_points, ETA_EINSTEIN_TOLERANCE};
use crate::model::SasakianModel;
use crate::variation::{
    geodesic_evolve, h_phi, second_variation_analytic, Bracket, FlowOptions, MeanCurvatureData, VariationField,
};

/// `max |H_φ|` accepted as φ-minimal.
pub const PHI_MINIMAL_GATE: f64 = 1e-5;

/// Galerkin matrix of the second variation over frame coefficients of `Y`.
///
/// DOF `k*n + i` is the `e_i` coefficient at node `k`.
#[derive(Clone, Debug)]
pub struct QuadraticForm {
    pub matrix: DMatrix<f64>,
    /// Diagonal quadrature mass, `vol_φ` weight per DOF.
    pub mass: Vec<f64>,
    pub n: usize,
    pub nodes: usize,
    pub h_phi_norm: f64,
}

impl QuadraticForm {
    pub fn dofs(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn flatten(y: &[Vec<f64>]) -> DVector<f64> {
        DVector::from_iterator(y.iter().map(Vec::len).sum(), y.iter().flatten().copied())
    }

    pub fn unflatten(&self, v: &DVector<f64>) -> Vec<Vec<f64>> {
        (0..self.nodes).map(|k| v.rows(k * self.n, self.n).iter().copied().collect()).collect()
    }

    pub fn evaluate(&self, y: &[Vec<f64>]) -> f64 {
        let v = Self::flatten(y);
        v.dot(&(&self.matrix * &v))
    }

    pub fn mass_norm_sq(&self, y: &[Vec<f64>]) -> f64 {
        Self::flatten(y).iter().zip(&self.mass).map(|(x, m)| m * x * x).sum()
    }

    pub fn symmetry_defect(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).amax()
    }
}

fn require_phi_minimal(geo: &ImmersionGeometry<'_>) -> Result<MeanCurvatureData> {
    let hp = h_phi(geo)?;
    let measured = hp.max_norm();
    if !(measured < PHI_MINIMAL_GATE) {
        return Err(GeometryError::NotPhiMinimal { measured, gate: PHI_MINIMAL_GATE });
    }
    Ok(hp)
}

/// Pointwise curvature block `(2n+2)η(Y)² - 2g(Y,Y) - Ric(Y,Y)` as an `n×n` matrix in the frame.
fn curvature_block(geo: &ImmersionGeometry<'_>, k: usize) -> DMatrix<f64> {
    let model = geo.imm.model();
    let p = geo.imm.value(k);
    let fr = &geo.frames.frames[k];
    let n = geo.n();
    let eta = model.eta(p);
    let a: Vec<f64> = fr.e.iter().map(|e| eta.dot(e)).collect();
    DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        (2.0 * n as f64 + 2.0) * a[i] * a[j] - 2.0 * delta - model.ricci(p, &fr.e[i], &fr.e[j])
    })
}

/// Matrix of `Y ↦ div(ρY)/ρ` from frame DOFs to nodal values.
fn divergence_matrix(geo: &ImmersionGeometry<'_>) -> DMatrix<f64> {
    let grid = geo.imm.grid();
    let n = geo.n();
    let nodes = geo.nodes();
    let rho = &geo.density.rho;
    let sqrt_h = &geo.density.sqrt_h;
    let mut out = DMatrix::zeros(nodes, n * nodes);
    for a in 0..n {
        let der = grid.derivative_matrix(a);
        // Flux components √h ρ Y^a with Y^a = Σ_i gs[(i,a)] y_i.
        let mut flux = DMatrix::zeros(nodes, n * nodes);
        for k in 0..nodes {
            let gs = &geo.frames.frames[k].gs;
            for i in 0..n {
                flux[(k, k * n + i)] = sqrt_h[k] * rho[k] * gs[(i, a)];
            }
        }
        out += der * flux;
    }
    for k in 0..nodes {
        let s = 1.0 / (sqrt_h[k] * rho[k]);
        out.row_mut(k).scale_mut(s);
    }
    out
}

/// Assemble `Q(Y,Y) = ∫ [(2n+2)η(Y)² - 2g(Y,Y) - Ric(Y,Y) + (div(ρY)/ρ)²] vol_φ`.
pub fn assemble_q(geo: &ImmersionGeometry<'_>) -> Result<QuadraticForm> {
    let hp = require_phi_minimal(geo)?;
    let n = geo.n();
    let nodes = geo.nodes();
    let w = &geo.density.weights;
    let blocks: Vec<DMatrix<f64>> = (0..nodes).into_par_iter().map(|k| curvature_block(geo, k)).collect();
    let div = divergence_matrix(geo);
    let weighted = DMatrix::from_fn(nodes, n * nodes, |r, c| div[(r, c)] * w[r]);
    let mut matrix = div.transpose() * weighted;
    for (k, b) in blocks.iter().enumerate() {
        let mut view = matrix.view_mut((k * n, k * n), (n, n));
        view += b * w[k];
    }
    let matrix = (&matrix + matrix.transpose()) * 0.5;
    let mass = (0..nodes).flat_map(|k| std::iter::repeat(w[k]).take(n)).collect();
    Ok(QuadraticForm { matrix, mass, n, nodes, h_phi_norm: hp.max_norm() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    /// `A ≤ -2`: every φ-minimal affine Legendrian is φ-stable.
    Stable,
    /// `A > -2`: no φ-minimal affine Legendrian is φ-stable.
    Unstable,
}

/// Lowest generalized eigenpair of `Q` against the mass matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Eigenvector for the lowest eigenvalue, frame components, unit mass norm.
    pub witness: Vec<Vec<f64>>,
    /// `max ‖Sv - λv‖` over all pairs of the symmetrized problem.
    pub eigen_residual: f64,
    /// `|Q(w,w) - λ_min ‖w‖²|`.
    pub rayleigh_residual: f64,
}

pub fn spectrum(q: &QuadraticForm) -> Result<Spectrum> {
    if q.dofs() > 2048 {
        return Err(GeometryError::InvalidInput(format!("{} DOFs exceed the dense eigensolver limit 2048", q.dofs())));
    }
    let inv_sqrt: Vec<f64> = q.mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let s = DMatrix::from_fn(q.dofs(), q.dofs(), |i, j| q.matrix[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    let eig = SymmetricEigen::try_new(s.clone(), 1e-14, 0)
        .ok_or_else(|| GeometryError::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..q.dofs()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigen_residual = (0..q.dofs())
        .map(|j| {
            let v = eig.eigenvectors.column(j);
            (&s * v - v * eig.eigenvalues[j]).amax()
        })
        .fold(0.0, f64::max);
    let lowest = order[0];
    let lambda = eig.eigenvalues[lowest];
    let v = eig.eigenvectors.column(lowest);
    let w = DVector::from_fn(q.dofs(), |i, _| v[i] * inv_sqrt[i]);
    let witness = q.unflatten(&w);
    let rayleigh_residual = (q.evaluate(&witness) - lambda * q.mass_norm_sq(&witness)).abs();
    Ok(Spectrum {
        eigenvalues: order.iter().map(|&j| eig.eigenvalues[j]).collect(),
        witness,
        eigen_residual,
        rayleigh_residual,
    })
}

/// `Y = α^♯/ρ` for the coclosed form `α` with `α^♯ = ∂_1/√det h`; `div(ρY) = 0`.
pub fn coclosed_witness(geo: &ImmersionGeometry<'_>) -> Vec<Vec<f64>> {
    let n = geo.n();
    let param: Vec<DVector<f64>> = (0..geo.nodes())
        .map(|k| {
            let mut v = DVector::zeros(n);
            v[0] = 1.0 / (geo.density.sqrt_h[k] * geo.density.rho[k]);
            v
        })
        .collect();
    geo.frame_components(&param)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub model: String,
    pub a: f64,
    pub theorem: Theorem,
    pub lambda_min: f64,
    pub witness_norm: f64,
    pub eigen_residual: f64,
    pub rayleigh_residual: f64,
    pub symmetry_defect: f64,
    /// `Q` on the coclosed-form direction, reported when `A > -2`.
    pub coclosed_q: Option<f64>,
    pub pass: bool,
}

/// Fit the η-Ricci constant, returning `NotEtaEinstein` when no fit exists.
pub fn fit_a(model: &dyn SasakianModel) -> Result<f64> {
    let points = sample_points(model, 16, 0x5ab1e);
    let fit = eta_einstein_least_squares(model, &points)?;
    if fit.residual > ETA_EINSTEIN_TOLERANCE {
        return Err(GeometryError::NotEtaEinstein { residual: fit.residual });
    }
    Ok(fit.a)
}

/// Compare the sign of `λ_min(Q)` with the `A = -2` threshold.
pub fn stability_check(geo: &ImmersionGeometry<'_>) -> Result<StabilityVerdict> {
    let model = geo.imm.model();
    let a = fit_a(model.as_ref())?;
    let q = assemble_q(geo)?;
    let spec = spectrum(&q)?;
    let lambda_min = spec.eigenvalues[0];
    let theorem = if a <= -2.0 + 1e-6 { Theorem::Stable } else { Theorem::Unstable };
    let coclosed_q = match theorem {
        Theorem::Stable => None,
        Theorem::Unstable => Some(q.evaluate(&coclosed_witness(geo))),
    };
    let pass = spec.eigen_residual < 1e-8
        && match theorem {
            Theorem::Stable => lambda_min >= -1e-6,
            Theorem::Unstable => lambda_min < 0.0 && coclosed_q.is_some_and(|v| v < 0.0),
        };
    Ok(StabilityVerdict {
        model: model.name(),
        a,
        theorem,
        lambda_min,
        witness_norm: q.mass_norm_sq(&spec.witness).sqrt(),
        eigen_residual: spec.eigen_residual,
        rayleigh_residual: spec.rayleigh_residual,
        symmetry_defect: q.symmetry_defect(),
        coclosed_q,
        pass,
    })
}

/// Node-wise checks of the integrand for a given `Y`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodewiseReport {
    /// `max |curvature block - (A+2)(η(Y)² - g(Y,Y))|`.
    pub curvature_block_residual: f64,
    /// Smallest nodal value of the full integrand.
    pub min_integrand: f64,
}

pub fn nodewise_check(geo: &ImmersionGeometry<'_>, a: f64, y: &[Vec<f64>]) -> NodewiseReport {
    let model = geo.imm.model();
    let rho = &geo.density.rho;
    let rho_y: Vec<Vec<f64>> = y.iter().zip(rho).map(|(v, r)| v.iter().map(|x| x * r).collect()).collect();
    let div = geo.divergence(&geo.param_field(&rho_y));
    let mut residual = 0.0_f64;
    let mut min_integrand = f64::INFINITY;
    for k in 0..geo.nodes() {
        let yk = DVector::from_column_slice(&y[k]);
        let block = yk.dot(&(curvature_block(geo, k) * &yk));
        let amb = geo.frames.frames[k].tangent(&y[k]);
        let eta_y = model.eta(geo.imm.value(k)).dot(&amb);
        let expected = (a + 2.0) * (eta_y * eta_y - yk.norm_squared());
        residual = residual.max((block - expected).abs());
        min_integrand = min_integrand.min(block + (div[k] / rho[k]).powi(2));
    }
    NodewiseReport { curvature_block_residual: residual, min_integrand }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub a: f64,
    pub times: Vec<f64>,
    pub vol_phi: Vec<f64>,
    /// `(V_{i+1} - 2V_i + V_{i-1}) / Δt²`.
    pub second_differences: Vec<f64>,
    pub min_second_difference: f64,
}

impl ConvexityReport {
    pub fn convex(&self, tol: f64) -> bool {
        self.min_second_difference >= -tol
    }
}

/// Sample `Vol_φ` along the geodesic family of `(Y, f)` on `[0, t_final]`.
pub fn convexity_check(
    geo: &ImmersionGeometry<'_>,
    var: &VariationField,
    t_final: f64,
    samples: usize,
    dt: f64,
) -> Result<ConvexityReport> {
    if samples < 2 {
        return Err(GeometryError::InvalidInput("convexity needs at least 3 sample times".into()));
    }
    let a = fit_a(geo.imm.model().as_ref())?;
    let opts = FlowOptions { t_final, dt, records: samples, monitor_commutator: false };
    let fam = geodesic_evolve(geo.imm, &var.param(geo), &var.f, opts)?;
    let step = t_final / samples as f64;
    let second_differences: Vec<f64> =
        fam.vol_phi.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]) / (step * step)).collect();
    let min_second_difference = second_differences.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ConvexityReport { a, times: fam.times, vol_phi: fam.vol_phi, second_differences, min_second_difference })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LegendrianReduction {
    /// Full second-variation integral for `Y = -½ grad f`.
    pub theorem: f64,
    /// `∫ ¼(Δf)² - 2g(Y,Y) - Ric(φY,φY)`.
    pub reduced: f64,
    pub residual: f64,
}

/// Laplacian `(1/√h) ∂_a(√h h^{ab} ∂_b f)` from the induced metric alone.
fn laplacian(geo: &ImmersionGeometry<'_>, f: &[f64]) -> Vec<f64> {
    let grid = geo.imm.grid();
    let n = geo.n();
    let df: Vec<Vec<f64>> = (0..n).map(|b| grid.derivative(f, b)).collect();
    let inv: Vec<DMatrix<f64>> =
        geo.frames.frames.iter().map(|fr| fr.h.clone().try_inverse().expect("induced metric is positive")).collect();
    let sqrt_h = &geo.density.sqrt_h;
    let mut out = vec![0.0; geo.nodes()];
    for a in 0..n {
        let flux: Vec<f64> =
            (0..geo.nodes()).map(|k| sqrt_h[k] * (0..n).map(|b| inv[k][(a, b)] * df[b][k]).sum::<f64>()).collect();
        for (o, d) in out.iter_mut().zip(grid.derivative(&flux, a)) {
            *o += d;
        }
    }
    out.iter().zip(sqrt_h).map(|(o, s)| o / s).collect()
}

/// Legendrian variations `2g(Y,·) + df = 0` of a minimal Legendrian: compare the
/// full formula with its reduction in terms of `f`.
pub fn legendrian_second_variation_check(geo: &ImmersionGeometry<'_>, f: &[f64]) -> Result<LegendrianReduction> {
    if f.len() != geo.nodes() {
        return Err(GeometryError::InvalidInput("f does not match the grid".into()));
    }
    let defect = geo.imm.legendrian_defect();
    if !(defect < 1e-8) {
        return Err(GeometryError::NotLegendrian { defect });
    }
    let hp = require_phi_minimal(geo)?;
    let y: Vec<Vec<f64>> = geo.gradient(f).into_iter().map(|g| g.iter().map(|x| -0.5 * x).collect()).collect();
    let var = VariationField { y, f: f.to_vec() };
    let theorem = second_variation_analytic(geo, &hp, &var, &Bracket::Zero)?;

    let model = geo.imm.model();
    let grid = geo.imm.grid();
    let n = geo.n();
    let lap = laplacian(geo, f);
    let df: Vec<Vec<f64>> = (0..n).map(|b| grid.derivative(f, b)).collect();
    let integrand: Vec<f64> = (0..geo.nodes())
        .map(|k| {
            let p = geo.imm.value(k);
            let fr = &geo.frames.frames[k];
            let grad = fr.h.clone().try_inverse().expect("induced metric is positive")
                * DVector::from_fn(n, |b, _| df[b][k]);
            let y = (0..n).fold(DVector::zeros(p.len()), |acc, a| acc + &geo.imm.partials(k)[a] * (-0.5 * grad[a]));
            let phi_y = model.phi(p) * &y;
            0.25 * lap[k] * lap[k] - 2.0 * model.inner(p, &y, &y) - model.ricci(p, &phi_y, &phi_y)
        })
        .collect();
    let reduced = geo.integrate_phi(&integrand);
    Ok(LegendrianReduction { theorem, reduced, residual: (theorem - reduced).abs() })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use super::*;
    use crate::immersion::{build_immersion, reference_torus_curve, GreatCircle, HeisenbergLine, HeisenbergLoop, TorusCurve};
    use crate::immersion::DiscretizedImmersion;
    use crate::model::{Heisenberg, Sphere};
    use crate::spectral::PeriodicGrid;

    fn great_circle(nodes: usize) -> DiscretizedImmersion {
        let s3: Arc<dyn SasakianModel> = Arc::new(Sphere::new(1).unwrap());
        build_immersion(s3, &GreatCircle { phase: 0.0 }, PeriodicGrid::new(1, nodes).unwrap()).unwrap()
    }

    fn heisenberg_line(nodes: usize) -> DiscretizedImmersion {
        let h: Arc<dyn SasakianModel> = Arc::new(Heisenberg::new(1).unwrap());
        build_immersion(h, &HeisenbergLine { n: 1 }, PeriodicGrid::new(1, nodes).unwrap()).unwrap()
    }

    #[test]
    fn great_circle_constant_direction() {
        let imm = great_circle(32);
        let geo = ImmersionGeometry::new(&imm).unwrap();
        let q = assemble_q(&geo).unwrap();
        assert!(q.symmetry_defect() < 1e-10);
        let c = 0.7;
        let val = q.evaluate(&vec![vec![c]; 32]);
        assert!((val + 8.0 * PI * c * c).abs() < 1e-10, "{val}");
        assert_eq!(q.evaluate(&vec![vec![0.0]; 32]), 0.0);
    }

    #[test]
    fn q_matches_second_variation_integrand() {
        let imm = build_immersion(
            Arc::new(Sphere::new(1).unwrap()),
            &reference_torus_curve(),
            PeriodicGrid::new(1, 48).unwrap(),
        )
        .unwrap();
        let geo = ImmersionGeometry::new(&imm).unwrap();
        let q = assemble_q(&geo).unwrap();
        let hp = h_phi(&geo).unwrap();
        for seed in 0..3 {
            let var = VariationField::random(imm.grid(), 4, seed, false);
            let direct = second_variation_analytic(&geo, &hp, &var, &Bracket::Zero).unwrap();
            assert!((q.evaluate(&var.y) - direct).abs() < 1e-8 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn non_minimal_curve_is_rejected() {
        let imm = build_immersion(
            Arc::new(Sphere::new(1).unwrap()),
            &TorusCurve { a: 0.6, k: 2.0 },
            PeriodicGrid::new(1, 32).unwrap(),
        )
        .unwrap();
        let geo = ImmersionGeometry::new(&imm).unwrap();
        assert!(matches!(assemble_q(&geo), Err(GeometryError::NotPhiMinimal { .. })));
    }

    #[test]
    fn sphere_is_unstable() {
        let imm = great_circle(32);
        let geo = ImmersionGeometry::new(&imm).unwrap();
        let v = stability_check(&geo).unwrap();
        println!("{v:?}");
        assert_eq!(v.theorem, Theorem::Unstable);
        assert!(v.pass);
        assert!(v.rayleigh_residual < 1e-8);
    }

    #[test]
    fn heisenberg_line_is_stable() {
        let imm = heisenberg_line(32);
        let geo = ImmersionGeometry::new(&imm).unwrap();
        let v = stability_check(&geo).unwrap();
        println!("{v:?}");
        assert_eq!(v.theorem, Theorem::Stable);
        assert!((v.a + 2.0).abs() < 1e-6);
        assert!(v.pass);
        let y = VariationField::random(imm.grid(), 3, 5, false).y;
        let report = nodewise_check(&geo, v.a, &y);
        assert!(report.curvature_block_residual < 1e-7, "{report:?}");
        assert!(report.min_integrand >= -1e-7);
    }

    #[test]
    fn legendrian_reduction_on_great_circle() {
        let imm = great_circle(64);
        let geo = ImmersionGeometry::new(&imm).unwrap();
        let grid = imm.grid();
        for f in [|t: f64| t.cos(), |t: f64| (2.0 * t).sin(), |_t: f64| 1.0] {
            let values: Vec<f64> = (0..64).map(|k| f(grid.param(k)[0])).collect();
            let r = legendrian_second_variation_check(&geo, &values).unwrap();
            println!("{r:?}");
            assert!(r.residual < 1e-9);
        }
    }

    #[test]
    fn reduction_needs_legendrian() {
        let imm = build_immersion(
            Arc::new(Sphere::new(1).unwrap()),
            &reference_torus_curve(),
            PeriodicGrid::new(1, 32).unwrap(),
        )
        .unwrap();
        let geo = ImmersionGeometry::new(&imm).unwrap();
        let f = vec![0.0; 32];
        assert!(matches!(legendrian_second_variation_check(&geo, &f), Err(GeometryError::NotLegendrian { .. })));
    }

    #[test]
    fn heisenberg_volume_is_convex() {
        let h: Arc<dyn SasakianModel> = Arc::new(Heisenberg::new(1).unwrap());
        let imm = build_immersion(h, &HeisenbergLoop { amplitude: 0.2 }, PeriodicGrid::new(1, 48).unwrap()).unwrap();
        let geo = ImmersionGeometry::new(&imm).unwrap();
        let var = VariationField::random(imm.grid(), 2, 11, true).scaled(0.5);
        let r = convexity_check(&geo, &var, 0.5, 10, 1e-3).unwrap();
        println!("{:?}", r.second_differences);
        assert!(r.convex(1e-6));
    }

    #[test]
    fn sphere_witness_breaks_convexity() {
        let imm = great_circle(32);
        let geo = ImmersionGeometry::new(&imm).unwrap();
        let var = VariationField { y: vec![vec![1.0]; 32], f: vec![0.0; 32] };
        let r = convexity_check(&geo, &var, 0.2, 4, 1e-3).unwrap();
        assert!(r.min_second_difference < 0.0);
    }
}
