use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::rho_phi;
use crate::error::{GeometryError, Result};
use crate::immersion::DiscretizedImmersion;
use crate::model::{Point, Vector};
use crate::spectral::PeriodicGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub t_final: f64,
    /// Upper bound for the RK4 step; the step is also capped by a quarter grid spacing.
    pub dt: f64,
    /// Number of recorded intervals (members = records + 1).
    pub records: usize,
    pub monitor_commutator: bool,
}

impl FlowOptions {
    pub fn to(t_final: f64) -> Self {
        Self { t_final, dt: 1e-3, records: 1, monitor_commutator: false }
    }
}

/// Family `ι_t` with `dι_t/dt = φ(ι_t)_*Y + fξ` for fixed `(Y, f)`.
#[derive(Clone, Debug)]
pub struct ImmersionFamily {
    pub times: Vec<f64>,
    pub members: Vec<DiscretizedImmersion>,
    pub vol_phi: Vec<f64>,
    /// `max |∂_t (ι_t)_*Y - Y^a ∂_a Z|` at each recorded time.
    pub commutator: Vec<f64>,
    pub dt: f64,
    pub scheme: String,
}

struct Generator<'a> {
    imm: &'a DiscretizedImmersion,
    y: &'a [DVector<f64>],
    f: &'a [f64],
}

impl Generator<'_> {
    fn grid(&self) -> &PeriodicGrid {
        self.imm.grid()
    }

    fn pushforward(&self, state: &[Point]) -> Vec<Vector> {
        let grid = self.grid();
        let d: Vec<Vec<Vector>> = (0..grid.dims()).map(|a| grid.derivative_vectors(state, a)).collect();
        (0..state.len())
            .map(|k| (0..grid.dims()).fold(DVector::zeros(state[k].len()), |acc, a| acc + &d[a][k] * self.y[k][a]))
            .collect()
    }

    fn velocity(&self, state: &[Point]) -> Vec<Vector> {
        let model = self.imm.model();
        let push = self.pushforward(state);
        state
            .par_iter()
            .zip(push.par_iter())
            .zip(self.f.par_iter())
            .map(|((p, y), f)| model.phi(p) * y + model.reeb(p) * *f)
            .collect()
    }

    fn rk4(&self, state: &[Point], dt: f64) -> Vec<Point> {
        let axpy = |s: &[Point], k: &[Vector], c: f64| -> Vec<Point> { s.iter().zip(k).map(|(p, v)| p + v * c).collect() };
        let k1 = self.velocity(state);
        let k2 = self.velocity(&axpy(state, &k1, dt / 2.0));
        let k3 = self.velocity(&axpy(state, &k2, dt / 2.0));
        let k4 = self.velocity(&axpy(state, &k3, dt));
        (0..state.len())
            .map(|i| &state[i] + (&k1[i] + &k2[i] * 2.0 + &k3[i] * 2.0 + &k4[i]) * (dt / 6.0))
            .collect()
    }

    fn commutator(&self, state: &[Point]) -> f64 {
        let delta = 1e-4;
        let plus = self.pushforward(&self.rk4(state, delta));
        let minus = self.pushforward(&self.rk4(state, -delta));
        let z = self.velocity(state);
        let grid = self.grid();
        let dz: Vec<Vec<Vector>> = (0..grid.dims()).map(|a| grid.derivative_vectors(&z, a)).collect();
        (0..state.len())
            .map(|k| {
                let y_dz = (0..grid.dims()).fold(DVector::zeros(z[k].len()), |acc, a| acc + &dz[a][k] * self.y[k][a]);
                ((&plus[k] - &minus[k]) / (2.0 * delta) - y_dz).amax()
            })
            .fold(0.0, f64::max)
    }
}

/// Method-of-lines RK4 integration of the geodesic equation.
///
/// `y_param` are parameter components `Y^a` of the fixed field on `L`.
pub fn geodesic_evolve(
    imm: &DiscretizedImmersion,
    y_param: &[DVector<f64>],
    f: &[f64],
    opts: FlowOptions,
) -> Result<ImmersionFamily> {
    imm.require_periodic()?;
    if !(opts.t_final >= 0.0) || !(opts.dt > 0.0) || opts.records == 0 {
        return Err(GeometryError::InvalidInput("flow needs t_final >= 0, dt > 0 and records >= 1".into()));
    }
    if y_param.len() != imm.node_count() || f.len() != imm.node_count() {
        return Err(GeometryError::InvalidInput("generator does not match the grid".into()));
    }
    let model = imm.model();
    let gen = Generator { imm, y: y_param, f };
    let dt_cap = opts.dt.min(imm.grid().spacing() / 4.0);
    let records = if opts.t_final == 0.0 { 0 } else { opts.records };
    let interval = if records == 0 { 0.0 } else { opts.t_final / records as f64 };
    let steps = if records == 0 { 0 } else { (interval / dt_cap).ceil().max(1.0) as usize };
    let dt = if steps == 0 { 0.0 } else { interval / steps as f64 };

    let mut state: Vec<Point> = imm.values().to_vec();
    let mut family = ImmersionFamily {
        times: Vec::new(),
        members: Vec::new(),
        vol_phi: Vec::new(),
        commutator: Vec::new(),
        dt,
        scheme: "rk4".into(),
    };
    for r in 0..=records {
        let time = r as f64 * interval;
        if r > 0 {
            for _ in 0..steps {
                state = gen.rk4(&state, dt);
                state = state.iter().map(|p| model.project_point(p)).collect();
            }
        }
        let member = if r == 0 {
            imm.clone()
        } else {
            DiscretizedImmersion::from_positions(model.clone(), imm.grid().clone(), state.clone())
                .map_err(|e| GeometryError::Flow { time, source: Box::new(e) })?
        };
        let wrap = |e: GeometryError| GeometryError::Flow { time, source: Box::new(e) };
        let vol = rho_phi(&member).map_err(wrap)?.vol_phi;
        family.times.push(time);
        family.vol_phi.push(vol);
        family.commutator.push(if opts.monitor_commutator { gen.commutator(&state) } else { 0.0 });
        family.members.push(member);
    }
    Ok(family)
}
