//! Linearized moduli of special affine Legendrian immersions and Newton deformation.
//!
//! Normal fields `v = φι_*Y + fξ` are encoded as `(g, α) = (ρ_φ f, ι*g(ρ_φ Y, ·))`.
//! Functions are nodal values, 1-forms are parameter components `α_a` of `α_a du^a`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::ImmersionGeometry;
use crate::cone::{special_defect, ConeStructure};
use crate::density::PhiDensity;
use crate::error::{GeometryError, Result};
use crate::frame::AffineFrame;
use crate::immersion::DiscretizedImmersion;
use crate::model::{Point, Vector};

/// A discrete 1-form: parameter components at every node.
pub type OneForm = Vec<DVector<f64>>;

/// Base immersions must have `special_defect` below this.
pub const SPECIAL_GATE: f64 = 1e-8;

/// Sup-norm bound for `exp_v` on spheres.
pub const STEP_BOUND: f64 = std::f64::consts::FRAC_PI_2;

/// Operators of the deformation problem at a special affine Legendrian base.
#[derive(Clone, Debug)]
pub struct ModuliComplex {
    pub base: DiscretizedImmersion,
    pub frames: AffineFrame,
    pub density: PhiDensity,
    cone: ConeStructure,
    /// Phase `θ*` with `ι*Re(e^{-iθ*}ψ) = vol_φ`.
    pub phase: f64,
    h_inv: Vec<DMatrix<f64>>,
}

impl ModuliComplex {
    pub fn new(base: &DiscretizedImmersion) -> Result<Self> {
        base.require_periodic()?;
        let cone = ConeStructure::new(base.model().as_ref())?;
        let geo = ImmersionGeometry::new(base)?;
        let sd = special_defect(&cone, &geo);
        if !(sd.defect < SPECIAL_GATE) {
            return Err(GeometryError::NotSpecial { defect: sd.defect });
        }
        let h_inv = geo
            .frames
            .frames
            .iter()
            .map(|fr| fr.h.clone().try_inverse().ok_or_else(|| GeometryError::Singular("induced metric".into())))
            .collect::<Result<_>>()?;
        Ok(Self {
            frames: geo.frames,
            density: geo.density,
            base: base.clone(),
            cone,
            phase: sd.theta,
            h_inv,
        })
    }

    pub fn n(&self) -> usize {
        self.base.dims()
    }

    pub fn nodes(&self) -> usize {
        self.base.node_count()
    }

    fn sqrt_h(&self) -> &[f64] {
        &self.density.sqrt_h
    }

    pub fn zero_form(&self) -> OneForm {
        vec![DVector::zeros(self.n()); self.nodes()]
    }

    pub fn d(&self, f: &[f64]) -> OneForm {
        let grid = self.base.grid();
        let partial: Vec<Vec<f64>> = (0..self.n()).map(|a| grid.derivative(f, a)).collect();
        (0..self.nodes()).map(|k| DVector::from_fn(self.n(), |a, _| partial[a][k])).collect()
    }

    /// `d*α = -(1/√h) ∂_a(√h h^{ab} α_b)`.
    pub fn codifferential(&self, alpha: &[DVector<f64>]) -> Vec<f64> {
        let grid = self.base.grid();
        let sqrt_h = self.sqrt_h();
        let raised: Vec<DVector<f64>> = alpha.iter().zip(&self.h_inv).map(|(a, hi)| hi * a).collect();
        let mut out = vec![0.0; self.nodes()];
        for a in 0..self.n() {
            let flux: Vec<f64> = raised.iter().zip(sqrt_h).map(|(v, s)| v[a] * s).collect();
            for (o, d) in out.iter_mut().zip(grid.derivative(&flux, a)) {
                *o -= d;
            }
        }
        out.iter().zip(sqrt_h).map(|(o, s)| o / s).collect()
    }

    /// `(dα)_{12} = ∂_1 α_2 - ∂_2 α_1` on surfaces; empty on curves.
    pub fn d_one_form(&self, alpha: &[DVector<f64>]) -> Vec<f64> {
        if self.n() < 2 {
            return Vec::new();
        }
        let grid = self.base.grid();
        let comp = |a: usize| -> Vec<f64> { alpha.iter().map(|v| v[a]).collect() };
        let d0 = grid.derivative(&comp(1), 0);
        let d1 = grid.derivative(&comp(0), 1);
        d0.iter().zip(&d1).map(|(x, y)| x - y).collect()
    }

    /// `∫ f g vol_{ι*g}`.
    pub fn inner_functions(&self, f: &[f64], g: &[f64]) -> f64 {
        let vals: Vec<f64> = f.iter().zip(g).zip(self.sqrt_h()).map(|((a, b), s)| a * b * s).collect();
        self.base.grid().integrate(&vals)
    }

    /// `∫ h^{ab} α_a β_b vol_{ι*g}`.
    pub fn inner_forms(&self, alpha: &[DVector<f64>], beta: &[DVector<f64>]) -> f64 {
        let vals: Vec<f64> = (0..self.nodes())
            .map(|k| alpha[k].dot(&(&self.h_inv[k] * &beta[k])) * self.sqrt_h()[k])
            .collect();
        self.base.grid().integrate(&vals)
    }

    /// `D₁(g, α) = -(n+1)g - d*α`.
    pub fn d1_apply(&self, g: &[f64], alpha: &[DVector<f64>]) -> Vec<f64> {
        let m = self.n() as f64 + 1.0;
        self.codifferential(alpha).iter().zip(g).map(|(c, g)| -m * g - c).collect()
    }

    /// `D₁*h = (-(n+1)h, -dh)`.
    pub fn d1_adjoint(&self, h: &[f64]) -> (Vec<f64>, OneForm) {
        let m = self.n() as f64 + 1.0;
        (h.iter().map(|x| -m * x).collect(), self.d(h).into_iter().map(|v| -v).collect())
    }

    /// `D₁D₁*h = (n+1)²h + d*dh`.
    pub fn d1_d1_star(&self, h: &[f64]) -> Vec<f64> {
        let (g, alpha) = self.d1_adjoint(h);
        self.d1_apply(&g, &alpha)
    }

    /// Dense matrix of `D₁D₁*` on nodal values.
    pub fn d1_d1_star_matrix(&self) -> DMatrix<f64> {
        let nodes = self.nodes();
        let cols: Vec<Vec<f64>> = (0..nodes)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; nodes];
                e[j] = 1.0;
                self.d1_d1_star(&e)
            })
            .collect();
        DMatrix::from_fn(nodes, nodes, |i, j| cols[j][i])
    }

    /// Sorted spectrum of `D₁D₁*`, symmetric under the quadrature pairing.
    pub fn laplacian_identity_spectrum(&self) -> Result<Vec<f64>> {
        if self.nodes() > 2048 {
            return Err(GeometryError::InvalidInput("dense spectrum limited to 2048 nodes".into()));
        }
        let a = self.d1_d1_star_matrix();
        let w: Vec<f64> = self.sqrt_h().iter().map(|s| (s * self.base.grid().weight()).sqrt()).collect();
        let s = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| w[i] * a[(i, j)] / w[j]);
        let sym = (&s + s.transpose()) * 0.5;
        let eig = SymmetricEigen::try_new(sym, 1e-14, 0)
            .ok_or_else(|| GeometryError::Eigen("D1 D1* spectrum did not converge".into()))?;
        let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        values.sort_by(f64::total_cmp);
        Ok(values)
    }

    /// `(f, Y)` from `(g, α)`: `f = g/ρ`, `Y^a = h^{ab}α_b/ρ`.
    pub fn decode(&self, g: &[f64], alpha: &[DVector<f64>]) -> (Vec<f64>, Vec<DVector<f64>>) {
        let rho = &self.density.rho;
        let f = g.iter().zip(rho).map(|(g, r)| g / r).collect();
        let y = alpha.iter().zip(&self.h_inv).zip(rho).map(|((a, hi), r)| hi * a / *r).collect();
        (f, y)
    }

    /// `(g, α)` from `(f, Y)` with `Y` in parameter components.
    pub fn encode(&self, f: &[f64], y: &[DVector<f64>]) -> (Vec<f64>, OneForm) {
        let rho = &self.density.rho;
        let g = f.iter().zip(rho).map(|(f, r)| f * r).collect();
        let alpha = y.iter().zip(&self.frames.frames).zip(rho).map(|((y, fr), r)| &fr.h * y * *r).collect();
        (g, alpha)
    }

    /// Ambient normal field `φι_*Y + fξ`.
    pub fn normal_field(&self, g: &[f64], alpha: &[DVector<f64>]) -> Vec<Vector> {
        let model = self.base.model();
        let (f, y) = self.decode(g, alpha);
        (0..self.nodes())
            .map(|k| {
                let p = self.base.value(k);
                let push = (0..self.n()).fold(DVector::zeros(p.len()), |acc, a| acc + &self.base.partials(k)[a] * y[k][a]);
                model.phi(p) * push + model.reeb(p) * f[k]
            })
            .collect()
    }

    /// `exp_v` node-wise.
    pub fn exp_normal(&self, g: &[f64], alpha: &[DVector<f64>]) -> Result<DiscretizedImmersion> {
        let model = self.base.model();
        let v = self.normal_field(g, alpha);
        let norm = (0..self.nodes()).map(|k| model.norm(self.base.value(k), &v[k])).fold(0.0, f64::max);
        if !(norm < STEP_BOUND) {
            return Err(GeometryError::StepTooLarge { norm, bound: STEP_BOUND });
        }
        let points: Vec<Point> = (0..self.nodes())
            .into_par_iter()
            .map(|k| model.exp(self.base.value(k), &v[k]))
            .collect::<Result<_>>()?;
        let imm = DiscretizedImmersion::from_positions(model.clone(), self.base.grid().clone(), points)?;
        crate::frame::affine_frame(&imm)?;
        Ok(imm)
    }

    /// `e^{-iθ*} ι*ψ(∂_1, ..., ∂_n)` of an immersion on the base grid.
    fn rotated_psi(&self, imm: &DiscretizedImmersion) -> Vec<Complex64> {
        let rot = Complex64::from_polar(1.0, -self.phase);
        (0..imm.node_count()).map(|k| rot * self.cone.psi(imm.value(k), imm.partials(k))).collect()
    }

    /// `F(v) = *(exp_v^* Im(e^{-iθ*}ψ))`, Hodge star of the base metric.
    pub fn defect_map(&self, g: &[f64], alpha: &[DVector<f64>]) -> Result<Vec<f64>> {
        let imm = self.exp_normal(g, alpha)?;
        Ok(self.rotated_psi(&imm).iter().zip(self.sqrt_h()).map(|(z, s)| z.im / s).collect())
    }
}

/// `α = α_coclosed + df` with `∫ f = 0`.
#[derive(Clone, Debug)]
pub struct HodgeSplit {
    pub potential: Vec<f64>,
    pub exact: OneForm,
    pub coclosed: OneForm,
    /// `max |d*α_coclosed|`.
    pub coclosed_defect: f64,
    /// `|⟨df, α_coclosed⟩|`.
    pub orthogonality: f64,
}

impl ModuliComplex {
    fn mean_zero(&self, f: &mut [f64]) {
        let ones = vec![1.0; f.len()];
        let shift = self.inner_functions(f, &ones) / self.inner_functions(&ones, &ones);
        f.iter_mut().for_each(|x| *x -= shift);
    }

    /// Conjugate gradients for `d*d f = b` on mean-zero functions.
    fn solve_laplacian(&self, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        let lap = |f: &[f64]| self.codifferential(&self.d(f));
        let mut rhs = b.to_vec();
        self.mean_zero(&mut rhs);
        let mut x = vec![0.0; rhs.len()];
        let mut r = rhs.clone();
        let mut p = r.clone();
        let mut rr = self.inner_functions(&r, &r);
        let target = tol * tol * rr.max(f64::MIN_POSITIVE);
        for _ in 0..10 * rhs.len() {
            if rr <= target {
                break;
            }
            let ap = lap(&p);
            let step = rr / self.inner_functions(&p, &ap);
            x.iter_mut().zip(&p).for_each(|(x, p)| *x += step * p);
            r.iter_mut().zip(&ap).for_each(|(r, a)| *r -= step * a);
            self.mean_zero(&mut r);
            let next = self.inner_functions(&r, &r);
            p = r.iter().zip(&p).map(|(r, p)| r + next / rr * p).collect();
            rr = next;
        }
        if rr > target {
            return Err(GeometryError::Divergence { iterations: 10 * rhs.len(), residual: rr.sqrt() });
        }
        self.mean_zero(&mut x);
        Ok(x)
    }

    /// Hodge decomposition; closed form on curves, conjugate gradients on surfaces.
    pub fn hodge_split(&self, alpha: &[DVector<f64>]) -> Result<HodgeSplit> {
        let grid = self.base.grid();
        let potential = if self.n() == 1 {
            // α = ∂f + c√h with c fixed by periodicity of f.
            let comp: Vec<f64> = alpha.iter().map(|v| v[0]).collect();
            let c = grid.integrate(&comp) / grid.integrate(self.sqrt_h());
            let df: Vec<f64> = comp.iter().zip(self.sqrt_h()).map(|(a, s)| a - c * s).collect();
            let mut f = grid.spectral().antiderivative(&df)?;
            self.mean_zero(&mut f);
            f
        } else {
            self.solve_laplacian(&self.codifferential(alpha), 1e-12)?
        };
        let exact = self.d(&potential);
        let coclosed: OneForm = alpha.iter().zip(&exact).map(|(a, e)| a - e).collect();
        let coclosed_defect = self.codifferential(&coclosed).iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let orthogonality = self.inner_forms(&exact, &coclosed).abs();
        Ok(HodgeSplit { potential, exact, coclosed, coclosed_defect, orthogonality })
    }

    /// Kernel element `(-d*α/(n+1), α)` of `D₁`.
    pub fn kernel_element(&self, alpha: OneForm) -> (Vec<f64>, OneForm) {
        let m = self.n() as f64 + 1.0;
        (self.codifferential(&alpha).iter().map(|c| -c / m).collect(), alpha)
    }

    /// Kernel basis over the nodal 1-form basis `du^a` at each node.
    pub fn moduli_tangent_basis(&self) -> Vec<(Vec<f64>, OneForm)> {
        (0..self.nodes() * self.n())
            .into_par_iter()
            .map(|j| {
                let mut alpha = self.zero_form();
                alpha[j / self.n()][j % self.n()] = 1.0;
                self.kernel_element(alpha)
            })
            .collect()
    }

    /// Numerical rank of `(g, α) ↦ (n+1)g + d*α` as a dense matrix.
    pub fn constraint_rank(&self) -> usize {
        let nodes = self.nodes();
        let n = self.n();
        let m = n as f64 + 1.0;
        let cols: Vec<Vec<f64>> = (0..nodes * n)
            .into_par_iter()
            .map(|j| {
                let mut alpha = self.zero_form();
                alpha[j / n][j % n] = 1.0;
                self.codifferential(&alpha)
            })
            .collect();
        let mat = DMatrix::from_fn(nodes, nodes + nodes * n, |i, j| {
            if j < nodes {
                if i == j {
                    m
                } else {
                    0.0
                }
            } else {
                cols[j - nodes][i]
            }
        });
        let sv = mat.singular_values();
        let top = sv.max();
        sv.iter().filter(|s| **s > 1e-10 * top).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NewtonMode {
    /// Finite-difference Jacobian of `F` at each iterate, restricted to the range of `D₁*`.
    Full,
    /// Base-point operators `D₁*(D₁D₁*)⁻¹` throughout.
    Frozen,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub mode: NewtonMode,
    pub tol: f64,
    pub max_iterations: usize,
    pub fd_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { mode: NewtonMode::Full, tol: 1e-10, max_iterations: 50, fd_step: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct NewtonReport {
    pub g: Vec<f64>,
    pub alpha: OneForm,
    /// `max |F|` before each step and at the end.
    pub residuals: Vec<f64>,
    pub order: Option<f64>,
    pub iterations: usize,
    pub immersion: DiscretizedImmersion,
    pub min_re_psi: f64,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Residuals below this are round-off and carry no order information.
pub const RESIDUAL_FLOOR: f64 = 1e-14;

/// Slope of `log r_{k+1}` against `log r_k`, pooled over residual histories.
///
/// Needs at least two pairs with distinct `r_k` above [`RESIDUAL_FLOOR`].
pub fn convergence_order(histories: &[&[f64]]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = histories
        .iter()
        .flat_map(|h| h.windows(2))
        .filter(|w| w[1] > RESIDUAL_FLOOR && w[0] > w[1] && w[0] < 1.0)
        .map(|w| (w[0].ln(), w[1].ln()))
        .collect();
    if pairs.len() < 2 {
        return None;
    }
    let count = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / count;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / count;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 1e-6).then(|| sxy / sxx)
}

impl ModuliComplex {
    fn axpy(&self, (g, alpha): (&[f64], &[DVector<f64>]), s: f64, (dg, da): (&[f64], &[DVector<f64>])) -> (Vec<f64>, OneForm) {
        (
            g.iter().zip(dg).map(|(x, y)| x + s * y).collect(),
            alpha.iter().zip(da).map(|(x, y)| x + y * s).collect(),
        )
    }

    /// Matrix of `h ↦ dF_v(D₁*h)` by central differences.
    fn range_jacobian(&self, g: &[f64], alpha: &[DVector<f64>], eps: f64) -> Result<DMatrix<f64>> {
        let nodes = self.nodes();
        let cols: Vec<Vec<f64>> = (0..nodes)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; nodes];
                e[j] = 1.0;
                let (dg, da) = self.d1_adjoint(&e);
                let (gp, ap) = self.axpy((g, alpha), eps, (&dg, &da));
                let (gm, am) = self.axpy((g, alpha), -eps, (&dg, &da));
                let fp = self.defect_map(&gp, &ap)?;
                let fm = self.defect_map(&gm, &am)?;
                Ok(fp.iter().zip(&fm).map(|(p, m)| (p - m) / (2.0 * eps)).collect())
            })
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(nodes, nodes, |i, j| cols[j][i]))
    }

    /// Solve `F(v) = 0` from `v0` by corrections in the range of `D₁*`.
    pub fn newton_project(&self, g0: &[f64], alpha0: &[DVector<f64>], opts: NewtonOptions) -> Result<NewtonReport> {
        let (mut g, mut alpha) = (g0.to_vec(), alpha0.to_vec());
        let frozen = match opts.mode {
            NewtonMode::Frozen => Some(
                self.d1_d1_star_matrix().lu(),
            ),
            NewtonMode::Full => None,
        };
        let mut residuals = Vec::new();
        let mut iterations = 0;
        loop {
            let f = self.defect_map(&g, &alpha)?;
            let r = sup(&f);
            residuals.push(r);
            if r < opts.tol {
                break;
            }
            if iterations == opts.max_iterations || !r.is_finite() || r > 1e3 * residuals[0].max(opts.tol) {
                return Err(GeometryError::Divergence { iterations, residual: r });
            }
            let rhs = DVector::from_column_slice(&f);
            let h = match &frozen {
                Some(lu) => lu.solve(&rhs),
                None => self.range_jacobian(&g, &alpha, opts.fd_step)?.lu().solve(&rhs),
            }
            .ok_or_else(|| GeometryError::Singular("Newton system".into()))?;
            let (dg, da) = self.d1_adjoint(h.as_slice());
            // Frozen mode solves D₁D₁* h = F, so the correction is -D₁*h.
            (g, alpha) = self.axpy((&g, &alpha), -1.0, (&dg, &da));
            iterations += 1;
        }
        let immersion = self.exp_normal(&g, &alpha)?;
        let re: Vec<f64> = self.rotated_psi(&immersion).iter().map(|z| z.re).collect();
        let (node, min_re_psi) =
            re.iter().copied().enumerate().min_by(|a, b| a.1.total_cmp(&b.1)).expect("non-empty grid");
        if !(min_re_psi > 0.0) {
            return Err(GeometryError::Positivity { node, value: min_re_psi });
        }
        Ok(NewtonReport { order: convergence_order(&[&residuals]), g, alpha, residuals, iterations, immersion, min_re_psi })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrderStudy {
    pub amplitudes: Vec<f64>,
    pub histories: Vec<Vec<f64>>,
    pub order: Option<f64>,
    /// Largest final residual over all runs.
    pub final_residual: f64,
}

/// Newton runs from `t·(g, α)` for each amplitude `t`, with the pooled order.
pub fn newton_order_study(
    complex: &ModuliComplex,
    direction: (&[f64], &[DVector<f64>]),
    amplitudes: &[f64],
    opts: NewtonOptions,
) -> Result<OrderStudy> {
    let histories = amplitudes
        .iter()
        .map(|&t| {
            let g: Vec<f64> = direction.0.iter().map(|x| x * t).collect();
            let alpha: OneForm = direction.1.iter().map(|a| a * t).collect();
            Ok(complex.newton_project(&g, &alpha, opts)?.residuals)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let refs: Vec<&[f64]> = histories.iter().map(Vec::as_slice).collect();
    Ok(OrderStudy {
        amplitudes: amplitudes.to_vec(),
        order: convergence_order(&refs),
        final_residual: histories.iter().map(|h| *h.last().unwrap()).fold(0.0, f64::max),
        histories,
    })
}

/// Unit-sup-norm kernel direction used by walks and order studies.
pub fn kernel_direction(complex: &ModuliComplex, mode: usize) -> (Vec<f64>, OneForm) {
    walk_direction(complex, mode, 1.0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WalkStep {
    pub step: usize,
    pub residuals: Vec<f64>,
    pub order: Option<f64>,
    pub vol_phi: f64,
    pub defect: f64,
    /// Max node distance to the previous embedding.
    pub displacement: f64,
}

#[derive(Clone, Debug)]
pub struct ModuliWalk {
    pub steps: Vec<WalkStep>,
    pub immersions: Vec<DiscretizedImmersion>,
}

/// Kernel direction for walk step `j`: `α = d cos((j+1)u¹) + du¹`, scaled to sup norm `size`.
fn walk_direction(complex: &ModuliComplex, j: usize, size: f64) -> (Vec<f64>, OneForm) {
    let grid = complex.base.grid();
    let f: Vec<f64> = (0..complex.nodes()).map(|k| ((j + 1) as f64 * grid.param(k)[0]).cos()).collect();
    let alpha: OneForm = complex
        .d(&f)
        .into_iter()
        .map(|mut v| {
            v[0] += 1.0;
            v
        })
        .collect();
    let (g, alpha) = complex.kernel_element(alpha);
    let model = complex.base.model();
    let v = complex.normal_field(&g, &alpha);
    let norm = (0..complex.nodes()).map(|k| model.norm(complex.base.value(k), &v[k])).fold(0.0, f64::max);
    let s = size / norm;
    (g.iter().map(|x| x * s).collect(), alpha.into_iter().map(|a| a * s).collect())
}

/// `steps` kernel moves of sup norm `step_size`, each followed by Newton projection.
pub fn moduli_walk(
    start: &DiscretizedImmersion,
    steps: usize,
    step_size: f64,
    opts: NewtonOptions,
) -> Result<ModuliWalk> {
    let mut current = start.clone();
    let mut out = ModuliWalk { steps: Vec::new(), immersions: Vec::new() };
    for j in 0..steps {
        let complex = ModuliComplex::new(&current)?;
        let (g0, alpha0) = walk_direction(&complex, j, step_size);
        let report = complex.newton_project(&g0, &alpha0, opts)?;
        let next = report.immersion;
        let geo = ImmersionGeometry::new(&next)?;
        let cone = ConeStructure::new(next.model().as_ref())?;
        let displacement =
            (0..next.node_count()).map(|k| (next.value(k) - current.value(k)).norm()).fold(0.0, f64::max);
        out.steps.push(WalkStep {
            step: j + 1,
            order: report.order,
            residuals: report.residuals,
            vol_phi: geo.density.vol_phi,
            defect: special_defect(&cone, &geo).defect,
            displacement,
        });
        out.immersions.push(next.clone());
        current = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::immersion::{build_immersion, reference_torus_curve, CircleDiffeo, GreatCircle, Reparametrized, WeightedTorus};
    use crate::model::{SasakianModel, Sphere};
    use crate::spectral::PeriodicGrid;

    fn s3() -> Arc<dyn SasakianModel> {
        Arc::new(Sphere::new(1).unwrap())
    }

    fn circle(nodes: usize) -> DiscretizedImmersion {
        build_immersion(s3(), &GreatCircle { phase: 0.0 }, PeriodicGrid::new(1, nodes).unwrap()).unwrap()
    }

    fn nodal(c: &ModuliComplex, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..c.nodes()).map(|k| f(c.base.grid().param(k)[0])).collect()
    }

    #[test]
    fn d1_examples() {
        let c = ModuliComplex::new(&circle(33)).unwrap();
        let g = nodal(&c, |t| t.sin() + 0.3);
        let out = c.d1_apply(&g, &c.zero_form());
        assert!(out.iter().zip(&g).all(|(o, g)| (o + 2.0 * g).abs() < 1e-14));
        let constant: OneForm = vec![DVector::from_element(1, 0.7); 33];
        assert!(sup(&c.d1_apply(&vec![0.0; 33], &constant)) < 1e-12);
        // d*d cos 3t = 9 cos 3t on the unit-speed circle.
        let f = nodal(&c, |t| (3.0 * t).cos());
        let lap = c.d1_apply(&vec![0.0; 33], &c.d(&f));
        assert!(lap.iter().zip(&f).all(|(l, f)| (l + 9.0 * f).abs() < 1e-9));
        let (g1, a1) = c.d1_adjoint(&vec![1.0; 33]);
        assert!(g1.iter().all(|x| *x == -2.0) && a1.iter().all(|a| a.amax() < 1e-12));
    }

    #[test]
    fn adjointness_on_nonuniform_metric() {
        let chart = Reparametrized { base: &GreatCircle { phase: 0.0 }, diffeo: CircleDiffeo { amplitude: 0.4, reverse: false } };
        let imm = build_immersion(s3(), &chart, PeriodicGrid::new(1, 33).unwrap()).unwrap();
        let c = ModuliComplex::new(&imm).unwrap();
        let g = nodal(&c, |t| (2.0 * t).cos() + t.sin());
        let alpha: OneForm = nodal(&c, |t| 0.5 + (3.0 * t).sin()).into_iter().map(|x| DVector::from_element(1, x)).collect();
        let h = nodal(&c, |t| (t + 0.2).cos().powi(3));
        let lhs = c.inner_functions(&c.d1_apply(&g, &alpha), &h);
        let (sg, sa) = c.d1_adjoint(&h);
        let rhs = c.inner_functions(&g, &sg) + c.inner_forms(&alpha, &sa);
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        let spectrum = c.laplacian_identity_spectrum().unwrap();
        assert!(spectrum[0] >= 4.0 - 1e-9);
        assert!((spectrum[0] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn flat_circle_spectrum() {
        let nodes = 33;
        let c = ModuliComplex::new(&circle(nodes)).unwrap();
        let spectrum = c.laplacian_identity_spectrum().unwrap();
        let mut oracle: Vec<f64> = (0..nodes as i64).map(|j| {
            let k = if j <= nodes as i64 / 2 { j } else { j - nodes as i64 };
            4.0 + (k * k) as f64
        }).collect();
        oracle.sort_by(f64::total_cmp);
        let worst = spectrum.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn encoding_round_trip() {
        let c = ModuliComplex::new(&circle(17)).unwrap();
        let f = nodal(&c, |t| t.cos());
        let y: Vec<DVector<f64>> = nodal(&c, |t| (2.0 * t).sin()).into_iter().map(|x| DVector::from_element(1, x)).collect();
        let (g, alpha) = c.encode(&f, &y);
        let (f2, y2) = c.decode(&g, &alpha);
        assert!(f.iter().zip(&f2).all(|(a, b)| (a - b).abs() < 1e-14));
        assert!(y.iter().zip(&y2).all(|(a, b)| (a - b).amax() < 1e-14));
    }

    #[test]
    fn tangent_basis_and_hodge_split() {
        let c = ModuliComplex::new(&circle(17)).unwrap();
        let basis = c.moduli_tangent_basis();
        assert_eq!(basis.len(), 17);
        assert_eq!(c.constraint_rank(), 17);
        for (g, alpha) in &basis {
            assert!(sup(&c.d1_apply(g, alpha)) < 1e-10);
            assert!(c.inner_functions(g, &vec![1.0; 17]).abs() < 1e-12);
        }
        let alpha: OneForm = nodal(&c, |t| 0.4 + (2.0 * t).cos() - (3.0 * t).sin()).into_iter().map(|x| DVector::from_element(1, x)).collect();
        let split = c.hodge_split(&alpha).unwrap();
        assert!(split.coclosed_defect < 1e-12 && split.orthogonality < 1e-12);
        // Fourier projector on the unit circle: the harmonic part is the mean.
        assert!(split.coclosed.iter().all(|v| (v[0] - 0.4).abs() < 1e-12));
    }

    #[test]
    fn hodge_split_on_surface() {
        let s5: Arc<dyn SasakianModel> = Arc::new(Sphere::new(2).unwrap());
        let imm = build_immersion(s5, &WeightedTorus { k1: -1.0, k2: -1.0 }, PeriodicGrid::new(2, 12).unwrap()).unwrap();
        let c = ModuliComplex::new(&imm).unwrap();
        let grid = imm.grid();
        let alpha: OneForm = (0..c.nodes())
            .map(|k| {
                let u = grid.param(k);
                DVector::from_vec(vec![0.3 + (u[0] + u[1]).cos(), (2.0 * u[1]).sin() - 0.1])
            })
            .collect();
        let split = c.hodge_split(&alpha).unwrap();
        assert!(split.coclosed_defect < 1e-9 && split.orthogonality < 1e-10, "{} {}", split.coclosed_defect, split.orthogonality);
        let f: Vec<f64> = (0..c.nodes()).map(|k| (grid.param(k)[0] - 2.0 * grid.param(k)[1]).sin()).collect();
        assert!(sup(&c.d_one_form(&c.d(&f))) < 1e-10);
        assert_eq!(c.moduli_tangent_basis().len(), 2 * c.nodes());
    }

    #[test]
    fn rejects_non_special_base() {
        let imm = build_immersion(s3(), &reference_torus_curve(), PeriodicGrid::new(1, 33).unwrap()).unwrap();
        assert!(matches!(ModuliComplex::new(&imm), Err(GeometryError::NotSpecial { .. })));
    }

    #[test]
    fn linearization_matches_d1() {
        let c = ModuliComplex::new(&circle(33)).unwrap();
        let g = nodal(&c, |t| 0.3 * (2.0 * t).cos());
        let alpha: OneForm = nodal(&c, |t| 0.2 + 0.1 * t.sin()).into_iter().map(|x| DVector::from_element(1, x)).collect();
        let eps = 1e-5;
        let scale = |s: f64| (g.iter().map(|x| x * s).collect::<Vec<_>>(), alpha.iter().map(|a| a * s).collect::<Vec<_>>());
        let (gp, ap) = scale(eps);
        let (gm, am) = scale(-eps);
        let fp = c.defect_map(&gp, &ap).unwrap();
        let fm = c.defect_map(&gm, &am).unwrap();
        let d1 = c.d1_apply(&g, &alpha);
        let worst = (0..33).map(|k| ((fp[k] - fm[k]) / (2.0 * eps) - d1[k]).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
        assert!(sup(&c.defect_map(&vec![0.0; 33], &c.zero_form()).unwrap()) < 1e-14);
        assert!(matches!(
            c.exp_normal(&vec![4.0; 33], &c.zero_form()),
            Err(GeometryError::StepTooLarge { .. })
        ));
    }

    #[test]
    fn newton_from_kernel_direction() {
        let c = ModuliComplex::new(&circle(33)).unwrap();
        let (g0, a0) = walk_direction(&c, 1, 0.05);
        let full = c.newton_project(&g0, &a0, NewtonOptions::default()).unwrap();
        println!("full {:?}", full.residuals);
        assert!(full.residuals.last().unwrap() < &1e-10);
        let (g, a) = kernel_direction(&c, 1);
        let study = newton_order_study(&c, (&g, &a), &[0.05, 0.1, 0.2], NewtonOptions::default()).unwrap();
        println!("{study:?}");
        assert!(study.order.unwrap() >= 1.8 && study.final_residual < 1e-10);
        let frozen = c.newton_project(&g0, &a0, NewtonOptions { mode: NewtonMode::Frozen, ..Default::default() }).unwrap();
        println!("frozen {:?} order {:?}", frozen.residuals, frozen.order);
        assert!(frozen.residuals.last().unwrap() < &1e-10);
        let zero = c.newton_project(&vec![0.0; 33], &c.zero_form(), NewtonOptions::default()).unwrap();
        assert_eq!(zero.iterations, 0);
    }

    #[test]
    fn newton_from_range_returns_to_base() {
        let c = ModuliComplex::new(&circle(33)).unwrap();
        let h = nodal(&c, |t| 0.02 * (1.0 + t.cos()));
        let (g0, a0) = c.d1_adjoint(&h);
        let r = c.newton_project(&g0, &a0, NewtonOptions::default()).unwrap();
        let size = sup(&r.g).max(r.alpha.iter().map(|a| a.amax()).fold(0.0, f64::max));
        assert!(size < 1e-9, "{size}");
    }

    #[test]
    fn walk_produces_distinct_embeddings() {
        let walk = moduli_walk(&circle(33), 3, 0.05, NewtonOptions::default()).unwrap();
        for s in &walk.steps {
            println!("{s:?}");
            assert!(s.defect < 1e-10 && s.displacement > 1e-3);
        }
    }
}
