//! Discretized immersions `ι: L → M` of a flat torus `L = [0, 2π)^n`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, Result};
use crate::model::{Point, SasakianModel, Vector};
use crate::spectral::PeriodicGrid;

/// Closed-form map from parameters into the ambient chart.
pub trait ChartMap: Send + Sync {
    fn dims(&self) -> usize;

    fn value(&self, u: &[f64]) -> Point;

    /// Closed-form partials `∂ι/∂u_a`, when available.
    fn partials(&self, _u: &[f64]) -> Option<Vec<Vector>> {
        None
    }

    /// True for maps that close up only modulo an isometry of the model
    /// (lines in a Heisenberg nilmanifold). Such maps need closed-form partials.
    fn quasi_periodic(&self) -> bool {
        false
    }
}

fn c(re: f64, im: f64) -> [f64; 2] {
    [re, im]
}

fn from_pairs(pairs: &[[f64; 2]]) -> Point {
    DVector::from_iterator(pairs.len() * 2, pairs.iter().flat_map(|z| z.iter().copied()))
}

/// `t ↦ (cos a · e^{it}, sin a · e^{ikt})` in `S³`.
#[derive(Clone, Copy, Debug)]
pub struct TorusCurve {
    pub a: f64,
    pub k: f64,
}

impl ChartMap for TorusCurve {
    fn dims(&self) -> usize {
        1
    }

    fn value(&self, u: &[f64]) -> Point {
        let (t, a, k) = (u[0], self.a, self.k);
        from_pairs(&[c(a.cos() * t.cos(), a.cos() * t.sin()), c(a.sin() * (k * t).cos(), a.sin() * (k * t).sin())])
    }

    fn partials(&self, u: &[f64]) -> Option<Vec<Vector>> {
        let (t, a, k) = (u[0], self.a, self.k);
        Some(vec![from_pairs(&[
            c(-a.cos() * t.sin(), a.cos() * t.cos()),
            c(-k * a.sin() * (k * t).sin(), k * a.sin() * (k * t).cos()),
        ])])
    }
}

/// `t ↦ e^{iα}(cos t, sin t)`, a Legendrian great circle in `S³`.
#[derive(Clone, Copy, Debug)]
pub struct GreatCircle {
    pub phase: f64,
}

impl ChartMap for GreatCircle {
    fn dims(&self) -> usize {
        1
    }

    fn value(&self, u: &[f64]) -> Point {
        let (ca, sa) = (self.phase.cos(), self.phase.sin());
        let (ct, st) = (u[0].cos(), u[0].sin());
        from_pairs(&[c(ca * ct, sa * ct), c(ca * st, sa * st)])
    }

    fn partials(&self, u: &[f64]) -> Option<Vec<Vector>> {
        let (ca, sa) = (self.phase.cos(), self.phase.sin());
        let (ct, st) = (u[0].cos(), u[0].sin());
        Some(vec![from_pairs(&[c(-ca * st, -sa * st), c(ca * ct, sa * ct)])])
    }
}

/// `(θ1, θ2) ↦ (e^{iθ1}, e^{iθ2}, e^{i(k1 θ1 + k2 θ2)}) / √3` in `S⁵`.
///
/// Weights `(-1, -1)` give the minimal Legendrian Clifford torus.
#[derive(Clone, Copy, Debug)]
pub struct WeightedTorus {
    pub k1: f64,
    pub k2: f64,
}

impl ChartMap for WeightedTorus {
    fn dims(&self) -> usize {
        2
    }

    fn value(&self, u: &[f64]) -> Point {
        let s = 1.0 / 3f64.sqrt();
        let w = self.k1 * u[0] + self.k2 * u[1];
        from_pairs(&[
            c(s * u[0].cos(), s * u[0].sin()),
            c(s * u[1].cos(), s * u[1].sin()),
            c(s * w.cos(), s * w.sin()),
        ])
    }

    fn partials(&self, u: &[f64]) -> Option<Vec<Vector>> {
        let s = 1.0 / 3f64.sqrt();
        let w = self.k1 * u[0] + self.k2 * u[1];
        let third = |k: f64| c(-k * s * w.sin(), k * s * w.cos());
        Some(vec![
            from_pairs(&[c(-s * u[0].sin(), s * u[0].cos()), c(0.0, 0.0), third(self.k1)]),
            from_pairs(&[c(0.0, 0.0), c(-s * u[1].sin(), s * u[1].cos()), third(self.k2)]),
        ])
    }
}

/// `t ↦ (t, 0, ..., 0)` in `H^{2n+1}`; closes up in the nilmanifold obtained
/// from the left translation by `(2π, 0, ..., 0)`.
#[derive(Clone, Copy, Debug)]
pub struct HeisenbergLine {
    pub n: usize,
}

impl ChartMap for HeisenbergLine {
    fn dims(&self) -> usize {
        1
    }

    fn value(&self, u: &[f64]) -> Point {
        let mut p = DVector::zeros(2 * self.n + 1);
        p[0] = u[0];
        p
    }

    fn partials(&self, _u: &[f64]) -> Option<Vec<Vector>> {
        let mut d = DVector::zeros(2 * self.n + 1);
        d[0] = 1.0;
        Some(vec![d])
    }

    fn quasi_periodic(&self) -> bool {
        true
    }
}

/// `t ↦ (cos t, sin t, amplitude · sin 2t)` in `H³`.
#[derive(Clone, Copy, Debug)]
pub struct HeisenbergLoop {
    pub amplitude: f64,
}

impl ChartMap for HeisenbergLoop {
    fn dims(&self) -> usize {
        1
    }

    fn value(&self, u: &[f64]) -> Point {
        DVector::from_vec(vec![u[0].cos(), u[0].sin(), self.amplitude * (2.0 * u[0]).sin()])
    }

    fn partials(&self, u: &[f64]) -> Option<Vec<Vector>> {
        Some(vec![DVector::from_vec(vec![
            -u[0].sin(),
            u[0].cos(),
            2.0 * self.amplitude * (2.0 * u[0]).cos(),
        ])])
    }
}

/// Periodic circle reparametrization `t ↦ t + c sin t` (or its reverse).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleDiffeo {
    pub amplitude: f64,
    pub reverse: bool,
}

impl CircleDiffeo {
    pub fn identity() -> Self {
        Self { amplitude: 0.0, reverse: false }
    }

    pub fn map(&self, t: f64) -> f64 {
        let s = if self.reverse { -t } else { t };
        s + self.amplitude * s.sin()
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let s = if self.reverse { -t } else { t };
        let sign = if self.reverse { -1.0 } else { 1.0 };
        sign * (1.0 + self.amplitude * s.cos())
    }

    /// A diffeomorphism of the circle exactly when `|c| < 1`.
    pub fn check(&self) -> Result<()> {
        if self.amplitude.abs() >= 1.0 || !self.amplitude.is_finite() {
            return Err(GeometryError::InvalidInput(format!(
                "t + {} sin t is not a diffeomorphism of the circle",
                self.amplitude
            )));
        }
        Ok(())
    }
}

/// `ι ∘ σ` for a one-dimensional chart map and circle diffeomorphism.
pub struct Reparametrized<'a> {
    pub base: &'a dyn ChartMap,
    pub diffeo: CircleDiffeo,
}

impl ChartMap for Reparametrized<'_> {
    fn dims(&self) -> usize {
        1
    }

    fn value(&self, u: &[f64]) -> Point {
        self.base.value(&[self.diffeo.map(u[0])])
    }

    fn partials(&self, u: &[f64]) -> Option<Vec<Vector>> {
        let inner = self.base.partials(&[self.diffeo.map(u[0])])?;
        Some(vec![&inner[0] * self.diffeo.derivative(u[0])])
    }

    fn quasi_periodic(&self) -> bool {
        self.base.quasi_periodic()
    }
}

/// Named immersion families as they appear in configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ImmersionSpec {
    TorusCurve { a: f64, k: f64 },
    GreatCircle {
        #[serde(default)]
        phase: f64,
    },
    WeightedTorus { k1: f64, k2: f64 },
    CliffordTorus,
    HeisenbergLine { n: usize },
    HeisenbergLoop { amplitude: f64 },
}

impl ImmersionSpec {
    pub fn chart(&self) -> Box<dyn ChartMap> {
        match *self {
            ImmersionSpec::TorusCurve { a, k } => Box::new(TorusCurve { a, k }),
            ImmersionSpec::GreatCircle { phase } => Box::new(GreatCircle { phase }),
            ImmersionSpec::WeightedTorus { k1, k2 } => Box::new(WeightedTorus { k1, k2 }),
            ImmersionSpec::CliffordTorus => Box::new(WeightedTorus { k1: -1.0, k2: -1.0 }),
            ImmersionSpec::HeisenbergLine { n } => Box::new(HeisenbergLine { n }),
            ImmersionSpec::HeisenbergLoop { amplitude } => Box::new(HeisenbergLoop { amplitude }),
        }
    }

    /// Parameter dimension of the family.
    pub fn dims(&self) -> usize {
        self.chart().dims()
    }
}

/// `T(π/4, 2)`, the standard non-Legendrian affine Legendrian test curve.
pub fn reference_torus_curve() -> TorusCurve {
    TorusCurve { a: PI / 4.0, k: 2.0 }
}

/// Angle `a` with `cos²a + k sin²a = 0` for `k < 0`, making `T(a, k)` Legendrian.
pub fn legendrian_torus_angle(k: f64) -> f64 {
    (1.0 / (-k).sqrt()).atan()
}

/// Periodic immersion sampled on a uniform grid.
#[derive(Clone, Debug)]
pub struct DiscretizedImmersion {
    model: Arc<dyn SasakianModel>,
    grid: PeriodicGrid,
    values: Vec<Point>,
    partials: Vec<Vec<Vector>>,
    periodic: bool,
}

fn check_rank(partials: &[Vec<Vector>]) -> Result<()> {
    for (node, ps) in partials.iter().enumerate() {
        let m = DMatrix::from_columns(ps);
        let min_singular = m.singular_values().min();
        if !(min_singular > 1e-8) {
            return Err(GeometryError::RankDeficient { node, min_singular });
        }
    }
    Ok(())
}

pub fn build_immersion(
    model: Arc<dyn SasakianModel>,
    chart: &dyn ChartMap,
    grid: PeriodicGrid,
) -> Result<DiscretizedImmersion> {
    let n = model.dim_n();
    if chart.dims() != n || grid.dims() != n {
        return Err(GeometryError::InvalidInput(format!(
            "chart dimension {} and grid dimension {} must both equal n = {n}",
            chart.dims(),
            grid.dims()
        )));
    }
    let params: Vec<Vec<f64>> = (0..grid.node_count()).map(|k| grid.param(k)).collect();
    let values: Vec<Point> = params.par_iter().map(|u| chart.value(u)).collect();
    for v in &values {
        model.check_point(v)?;
    }
    let periodic = !chart.quasi_periodic();
    if periodic {
        for axis in 0..n {
            let mismatch = params
                .par_iter()
                .zip(&values)
                .map(|(u, v)| {
                    let mut shifted = u.clone();
                    shifted[axis] += 2.0 * PI;
                    (chart.value(&shifted) - v).amax()
                })
                .reduce(|| 0.0, f64::max);
            if !(mismatch <= 1e-9) {
                return Err(GeometryError::NonPeriodic { axis, mismatch });
            }
        }
    }
    let closed: Option<Vec<Vec<Vector>>> = params.par_iter().map(|u| chart.partials(u)).collect();
    let partials = match closed {
        Some(p) => p,
        None if periodic => spectral_partials(&grid, &values),
        None => {
            return Err(GeometryError::InvalidInput(
                "quasi-periodic maps need closed-form partials".into(),
            ))
        }
    };
    check_rank(&partials)?;
    Ok(DiscretizedImmersion { model, grid, values, partials, periodic })
}

fn spectral_partials(grid: &PeriodicGrid, values: &[Point]) -> Vec<Vec<Vector>> {
    let per_axis: Vec<Vec<Vector>> = (0..grid.dims()).map(|a| grid.derivative_vectors(values, a)).collect();
    (0..values.len()).map(|k| per_axis.iter().map(|d| d[k].clone()).collect()).collect()
}

impl DiscretizedImmersion {
    /// Immersion from nodal positions; partials by spectral differentiation.
    pub fn from_positions(model: Arc<dyn SasakianModel>, grid: PeriodicGrid, values: Vec<Point>) -> Result<Self> {
        if grid.dims() != model.dim_n() || values.len() != grid.node_count() {
            return Err(GeometryError::InvalidInput("positions do not match the grid".into()));
        }
        for v in &values {
            model.check_point(v)?;
        }
        let partials = spectral_partials(&grid, &values);
        check_rank(&partials)?;
        Ok(Self { model, grid, values, partials, periodic: true })
    }

    pub fn model(&self) -> &Arc<dyn SasakianModel> {
        &self.model
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn dims(&self) -> usize {
        self.grid.dims()
    }

    pub fn node_count(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[Point] {
        &self.values
    }

    pub fn value(&self, node: usize) -> &Point {
        &self.values[node]
    }

    pub fn partials(&self, node: usize) -> &[Vector] {
        &self.partials[node]
    }

    /// False for quasi-periodic immersions, whose positions cannot be
    /// spectrally differentiated or deformed node-wise.
    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn require_periodic(&self) -> Result<()> {
        if self.periodic {
            Ok(())
        } else {
            Err(GeometryError::InvalidInput(
                "operation needs periodic node positions; this immersion closes only modulo an isometry".into(),
            ))
        }
    }

    /// Induced metric `h_ab = g(∂_a ι, ∂_b ι)` at a node.
    pub fn induced_metric(&self, node: usize) -> DMatrix<f64> {
        let p = &self.values[node];
        let ps = &self.partials[node];
        let g = self.model.metric(p);
        DMatrix::from_fn(ps.len(), ps.len(), |a, b| (ps[a].transpose() * &g * &ps[b])[(0, 0)])
    }

    /// `max |η(∂ι/∂u_a)|` over nodes and parameter directions.
    pub fn legendrian_defect(&self) -> f64 {
        self.values
            .par_iter()
            .zip(&self.partials)
            .map(|(p, ps)| {
                let eta = self.model.eta(p);
                ps.iter().fold(0.0_f64, |m, v| m.max(eta.dot(v).abs()))
            })
            .reduce(|| 0.0, f64::max)
    }
}
