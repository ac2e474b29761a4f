use std::f64::consts::PI;
use std::sync::Arc;

use affleg::calculus::ImmersionGeometry;
use affleg::cone::{angle_gradient_check, calibration_check, legendrian_angle, special_defect, ConeStructure};
use affleg::density::{gram_rho_oracle, rho_phi};
use affleg::immersion::{build_immersion, DiscretizedImmersion, ImmersionSpec};
use affleg::model::identities::{sample_points, verify_structure_identities};
use affleg::model::{ModelSpec, SasakianModel};
use affleg::moduli::{moduli_walk, NewtonOptions};
use affleg::spectral::PeriodicGrid;
use affleg::stability::{convexity_check, stability_check, Theorem};
use affleg::variation::{
    first_variation_analytic, first_variation_fd, geodesic_evolve, h_phi, second_variation_analytic,
    second_variation_fd, Bracket, FlowOptions, VariationField,
};
use anyhow::{Context, Result};
use serde_json::json;

use crate::config::{ExperimentConfig, FlowDirection};
use crate::report::{Check, NodeTable, Series};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::Subcommand)]
pub enum Command {
    /// Contact metric and Sasakian identities at random points.
    VerifyStructure,
    /// φ-volume density against the Gram-determinant oracle.
    RhoPhi,
    /// First variation of Vol_φ, analytic against finite differences.
    FirstVariation,
    /// Second variation along geodesic families.
    SecondVariation,
    /// Spectrum of the second-variation form at a φ-minimal immersion.
    StabilitySpectrum,
    /// Vol_φ along random geodesics.
    Convexity,
    /// Affine Legendrian angle and its gradient.
    Angle,
    /// Calibration chain Re ψ ≤ vol_φ ≤ vol_g.
    Calibration,
    /// Walk through the moduli of special affine Legendrians.
    ModuliWalk,
    /// Repeated small geodesic steps along ±H_φ.
    Flow,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::VerifyStructure => "verify-structure",
            Command::RhoPhi => "rho-phi",
            Command::FirstVariation => "first-variation",
            Command::SecondVariation => "second-variation",
            Command::StabilitySpectrum => "stability-spectrum",
            Command::Convexity => "convexity",
            Command::Angle => "angle",
            Command::Calibration => "calibration",
            Command::ModuliWalk => "moduli-walk",
            Command::Flow => "flow",
        }
    }

    pub fn defaults(self) -> ExperimentConfig {
        let torus = |a: f64, k: f64| Some(ImmersionSpec::TorusCurve { a, k });
        let circle = Some(ImmersionSpec::GreatCircle { phase: 0.0 });
        let mut c = ExperimentConfig {
            model: ModelSpec::Sphere { n: 1 },
            immersion: torus(PI / 4.0, 2.0),
            nodes: 64,
            seed: 0,
            samples: 3,
            steps: 10,
            step_size: 0.05,
            t_final: 0.5,
            dt: 1e-3,
            direction: FlowDirection::Ascent,
            modes: 2,
            tolerances: Default::default(),
            output: Default::default(),
        };
        match self {
            Command::VerifyStructure => {
                c.immersion = None;
                c.samples = 64;
                c.seed = 1;
            }
            Command::FirstVariation => c.immersion = torus(0.6, 2.0),
            Command::StabilitySpectrum | Command::Calibration => c.immersion = circle,
            Command::Convexity => {
                c.model = ModelSpec::Heisenberg { n: 1 };
                c.immersion = Some(ImmersionSpec::HeisenbergLoop { amplitude: 0.2 });
                c.nodes = 48;
                c.samples = 5;
            }
            Command::ModuliWalk => {
                c.immersion = circle;
                c.nodes = 129;
                c.steps = 5;
                c.step_size = 0.02;
            }
            Command::Flow => {
                c.immersion = torus(0.6, 2.0);
                c.steps = 40;
                c.step_size = 0.2;
            }
            Command::RhoPhi | Command::SecondVariation | Command::Angle => {}
        }
        c
    }
}

/// What a command produced, before it is wrapped into a report.
#[derive(Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub data: serde_json::Value,
    pub series: Vec<Series>,
    pub table: Option<NodeTable>,
}

fn series(name: &str, x: &str, y: &str, log_y: bool, points: Vec<(f64, f64)>) -> Series {
    Series { name: name.into(), x_label: x.into(), y_label: y.into(), log_y, points }
}

fn model(c: &ExperimentConfig) -> Result<Arc<dyn SasakianModel>> {
    c.model.build().context("building the model")
}

fn immersion(c: &ExperimentConfig) -> Result<DiscretizedImmersion> {
    let spec = c.immersion()?;
    let chart = spec.chart();
    let grid = PeriodicGrid::new(chart.dims(), c.nodes)?;
    build_immersion(model(c)?, chart.as_ref(), grid).context("building the immersion")
}

fn param(imm: &DiscretizedImmersion, node: usize) -> f64 {
    imm.grid().param(node)[0]
}

pub fn run(cmd: Command, c: &ExperimentConfig) -> Result<Outcome> {
    match cmd {
        Command::VerifyStructure => verify_structure(c),
        Command::RhoPhi => rho(c),
        Command::FirstVariation => first_variation(c),
        Command::SecondVariation => second_variation(c),
        Command::StabilitySpectrum => stability(c),
        Command::Convexity => convexity(c),
        Command::Angle => angle(c),
        Command::Calibration => calibration(c),
        Command::ModuliWalk => walk(c),
        Command::Flow => flow(c),
    }
}

fn verify_structure(c: &ExperimentConfig) -> Result<Outcome> {
    let m = model(c)?;
    let points = sample_points(m.as_ref(), c.samples, c.seed);
    let report = verify_structure_identities(m.as_ref(), &points, c.seed.wrapping_add(1))?;
    let closed_form = matches!(c.model, ModelSpec::Sphere { .. });
    let tol = c.tolerances.structure.unwrap_or(if closed_form { 1e-9 } else { 1e-7 });
    let mut checks: Vec<Check> = report
        .identities
        .iter()
        .map(|r| Check::at_most(&r.identity, "Sasakian structure identity", r.max_residual, tol))
        .collect();
    let expected = match c.model {
        ModelSpec::Sphere { n } => Some(2.0 * n as f64),
        ModelSpec::Heisenberg { .. } => Some(-2.0),
        ModelSpec::PerturbedHeisenberg { .. } => None,
    };
    if let Some(a) = expected {
        let tol = c.tolerances.eta_einstein.unwrap_or(if closed_form { 1e-8 } else { 1e-6 });
        let measured = report.eta_einstein.as_ref().map_or(f64::INFINITY, |fit| (fit.a - a).abs());
        checks.push(Check::at_most("eta_einstein_constant", format!("Ric = A g + (2n - A) η⊗η with A = {a}"), measured, tol));
    }
    Ok(Outcome { checks, data: serde_json::to_value(&report)?, ..Default::default() })
}

fn rho(c: &ExperimentConfig) -> Result<Outcome> {
    let imm = immersion(c)?;
    let d = rho_phi(&imm)?;
    let m = imm.model();
    let gaps: Vec<f64> = (0..imm.node_count())
        .map(|k| (d.rho[k] - gram_rho_oracle(m.as_ref(), imm.value(k), imm.partials(k))).abs())
        .collect();
    let gap = gaps.iter().copied().fold(0.0, f64::max);
    let outside = d.rho.iter().map(|r| (r - 1.0).max(-r).max(0.0)).fold(0.0, f64::max);
    let checks = vec![
        Check::at_most("rho_gram_oracle", "ρ_φ equals the Gram-determinant formula", gap, c.tolerances.rho_oracle.unwrap_or(1e-12)),
        Check::at_most("rho_in_unit_interval", "0 < ρ_φ ≤ 1", outside, 1e-12),
    ];
    let mut table = NodeTable { header: vec!["node".into(), "t".into(), "rho_phi".into(), "oracle_gap".into()], rows: vec![] };
    for k in 0..imm.node_count() {
        table.rows.push(vec![k as f64, param(&imm, k), d.rho[k], gaps[k]]);
    }
    let profile = if imm.dims() == 1 {
        vec![series("rho_phi profile", "t", "ρ_φ", false, (0..imm.node_count()).map(|k| (param(&imm, k), d.rho[k])).collect())]
    } else {
        vec![]
    };
    Ok(Outcome {
        checks,
        data: json!({ "vol_phi": d.vol_phi, "vol_g": d.vol_g, "min_rho": d.min_rho(), "max_rho": d.max_rho() }),
        series: profile,
        table: Some(table),
    })
}

fn first_variation(c: &ExperimentConfig) -> Result<Outcome> {
    let imm = immersion(c)?;
    let geo = ImmersionGeometry::new(&imm)?;
    let hp = h_phi(&geo)?;
    let tol = c.tolerances.first_variation.unwrap_or(1e-6);
    // Scale for φ-minimal immersions, where both sides vanish.
    let floor = 1e-3 * geo.density.vol_phi;
    let mut checks = Vec::new();
    let mut records = Vec::new();
    for i in 0..c.samples {
        let seed = c.seed + i as u64;
        let var = VariationField::random(imm.grid(), 3, seed, true);
        let analytic = first_variation_analytic(&geo, &hp, &var);
        let fd = first_variation_fd(&geo, &var, 1e-2)?;
        let rel = (analytic - fd.richardson).abs() / analytic.abs().max(fd.richardson.abs()).max(floor);
        checks.push(Check::at_most(format!("first_variation_seed_{seed}"), "δVol_φ = -∫ g(Y, H_φ) vol_φ", rel, tol));
        records.push(json!({ "seed": seed, "analytic": analytic, "fd": fd.richardson, "richardson_order": fd.order }));
    }
    Ok(Outcome {
        checks,
        data: json!({ "family": c.immersion, "y_spec": "random, 3 modes", "f_spec": "random, 3 modes", "samples": records }),
        ..Default::default()
    })
}

fn second_variation(c: &ExperimentConfig) -> Result<Outcome> {
    let imm = immersion(c)?;
    let geo = ImmersionGeometry::new(&imm)?;
    let hp = h_phi(&geo)?;
    let tol = c.tolerances.second_variation.unwrap_or(1e-4);
    let mut checks = Vec::new();
    let mut records = Vec::new();
    for i in 0..c.samples {
        let seed = c.seed + i as u64;
        let with_f = i % 2 == 1;
        let var = VariationField::random(imm.grid(), 3, seed, with_f);
        let analytic = second_variation_analytic(&geo, &hp, &var, &Bracket::Zero)?;
        let fd = second_variation_fd(&geo, &var, 1e-2)?;
        let rel = (analytic - fd.richardson).abs() / analytic.abs().max(fd.richardson.abs()).max(f64::MIN_POSITIVE);
        checks.push(Check::at_most(format!("second_variation_seed_{seed}"), "second variation along geodesics", rel, tol));
        records.push(json!({ "seed": seed, "with_f": with_f, "analytic": analytic, "fd": fd.richardson, "richardson_order": fd.order }));
    }
    Ok(Outcome {
        checks,
        data: json!({ "family": c.immersion, "y_spec": "random, 3 modes", "samples": records }),
        ..Default::default()
    })
}

fn stability(c: &ExperimentConfig) -> Result<Outcome> {
    let imm = immersion(c)?;
    let geo = ImmersionGeometry::new(&imm)?;
    let v = stability_check(&geo)?;
    let tol = c.tolerances.stability.unwrap_or(1e-6);
    let mut checks = vec![Check::at_most(
        "eigen_residual",
        "‖Qw - λMw‖ for the lowest pair",
        v.eigen_residual,
        c.tolerances.eigen_residual.unwrap_or(1e-8),
    )];
    match v.theorem {
        Theorem::Unstable => {
            checks.push(Check::at_most("lambda_min_negative", "A > -2 forces an unstable direction", v.lambda_min, -tol));
            let q = v.coclosed_q.unwrap_or(f64::INFINITY);
            checks.push(Check::at_most("coclosed_witness_negative", "Q(Y) < 0 for Y dual to a coclosed 1-form", q, -tol));
        }
        Theorem::Stable => {
            checks.push(Check::at_most("lambda_min_nonnegative", "A ≤ -2 gives φ-stability", -v.lambda_min, tol));
        }
    }
    Ok(Outcome { checks, data: serde_json::to_value(&v)?, ..Default::default() })
}

fn convexity(c: &ExperimentConfig) -> Result<Outcome> {
    let imm = immersion(c)?;
    let geo = ImmersionGeometry::new(&imm)?;
    let tol = c.tolerances.convexity.unwrap_or(1e-6);
    let mut out = Outcome::default();
    let mut records = Vec::new();
    for i in 0..c.samples {
        let seed = c.seed + i as u64;
        let var = VariationField::random(imm.grid(), 2, seed, true).scaled(0.5);
        let r = convexity_check(&geo, &var, c.t_final, c.steps, c.dt)?;
        out.checks.push(Check::at_most(
            format!("convexity_seed_{seed}"),
            "Vol_φ is convex along geodesics when A ≤ -2",
            -r.min_second_difference,
            tol,
        ));
        out.series.push(series(
            &format!("Vol_phi along geodesic seed {seed}"),
            "t",
            "Vol_φ",
            false,
            r.times.iter().copied().zip(r.vol_phi.iter().copied()).collect(),
        ));
        records.push(serde_json::to_value(&r)?);
    }
    out.data = json!({ "geodesics": records });
    Ok(out)
}

fn angle(c: &ExperimentConfig) -> Result<Outcome> {
    let imm = immersion(c)?;
    let geo = ImmersionGeometry::new(&imm)?;
    let cone = ConeStructure::new(imm.model().as_ref())?;
    let field = legendrian_angle(&cone, &geo)?;
    let gradient = angle_gradient_check(&cone, &geo)?;
    let cal = calibration_check(&cone, &geo);
    let checks = vec![
        Check::at_most("psi_modulus", "|ι*ψ| = ρ_φ", field.modulus_residual(), c.tolerances.modulus.unwrap_or(1e-8)),
        Check::at_most(
            "angle_gradient",
            "dθ_L determined by H_φ and ξ",
            gradient.max_residual,
            c.tolerances.angle_gradient.unwrap_or(1e-5),
        ),
    ];
    let mut table = NodeTable {
        header: ["node", "t", "theta", "rho_phi", "re_psi", "modulus_defect"].map(String::from).to_vec(),
        rows: vec![],
    };
    for k in 0..imm.node_count() {
        let defect = (field.modulus[k] - field.rho[k]).abs();
        table.rows.push(vec![k as f64, param(&imm, k), field.theta[k], field.rho[k], cal.re_psi[k], defect]);
    }
    let profile = if imm.dims() == 1 {
        vec![series("Legendrian angle", "t", "θ_L", false, (0..imm.node_count()).map(|k| (param(&imm, k), field.theta[k])).collect())]
    } else {
        vec![]
    };
    Ok(Outcome {
        checks,
        data: json!({ "spread": field.spread(), "gradient_residual": gradient.max_residual }),
        series: profile,
        table: Some(table),
    })
}

fn calibration(c: &ExperimentConfig) -> Result<Outcome> {
    let imm = immersion(c)?;
    let geo = ImmersionGeometry::new(&imm)?;
    let cone = ConeStructure::new(imm.model().as_ref())?;
    let cal = calibration_check(&cone, &geo);
    let sd = special_defect(&cone, &geo);
    let tol = c.tolerances.calibration.unwrap_or(1e-10);
    let checks = vec![
        Check::at_most("re_psi_below_vol_phi", "ι*Re ψ ≤ vol_φ", cal.first_violation, tol),
        Check::at_most("vol_phi_below_vol_g", "vol_φ ≤ vol_g", cal.second_violation, tol),
    ];
    Ok(Outcome {
        checks,
        data: json!({
            "first_equality": cal.first_equality,
            "second_equality": cal.second_equality,
            "special_phase": sd.theta,
            "special_defect": sd.defect,
        }),
        ..Default::default()
    })
}

fn walk(c: &ExperimentConfig) -> Result<Outcome> {
    let start = immersion(c)?;
    let w = moduli_walk(&start, c.steps, c.step_size, NewtonOptions::default())?;
    let tol = c.tolerances.moduli_defect.unwrap_or(1e-9);
    let mut out = Outcome::default();
    for s in &w.steps {
        out.checks.push(Check::at_most(
            format!("special_defect_step_{}", s.step),
            "Newton projection lands on a special affine Legendrian",
            s.defect,
            tol,
        ));
        out.series.push(series(
            &format!("Newton residual step {}", s.step),
            "iteration",
            "residual",
            true,
            s.residuals.iter().enumerate().map(|(i, r)| (i as f64, *r)).collect(),
        ));
    }
    if let Some(last) = w.immersions.last() {
        let dim = last.value(0).len();
        let mut header = vec!["node".to_string(), "t".to_string()];
        header.extend((0..dim).map(|i| format!("x{i}")));
        let rows = (0..last.node_count())
            .map(|k| [k as f64, param(last, k)].into_iter().chain(last.value(k).iter().copied()).collect())
            .collect();
        out.table = Some(NodeTable { header, rows });
    }
    out.data = json!({ "steps": w.steps });
    Ok(out)
}

/// Sufficient-increase fraction for the backtracking line search.
const ARMIJO: f64 = 0.1;
const MAX_HALVINGS: usize = 12;

fn flow(c: &ExperimentConfig) -> Result<Outcome> {
    let mut imm = immersion(c)?;
    let sign = match c.direction {
        FlowDirection::Ascent => -1.0,
        FlowDirection::Descent => 1.0,
    };
    let (mut vols, mut norms, mut accepted) = (Vec::new(), Vec::new(), Vec::new());
    let mut stalled = false;
    for _ in 0..c.steps {
        let geo = ImmersionGeometry::new(&imm)?;
        let hp = h_phi(&geo)?;
        let vol = geo.density.vol_phi;
        vols.push(vol);
        norms.push(hp.max_norm());
        // δVol_φ = -∫ g(Y, H_φ) vol_φ, so Y = ∓H_φ moves Vol_φ up or down. High modes are
        // filtered out: ascent is backward-parabolic and descent is stiff.
        let dims = hp.coeffs.first().map_or(0, Vec::len);
        let filtered: Vec<Vec<f64>> = (0..dims)
            .map(|a| {
                let comp: Vec<f64> = hp.coeffs.iter().map(|v| sign * v[a]).collect();
                imm.grid().low_pass(&comp, c.modes)
            })
            .collect();
        let y: Vec<Vec<f64>> = (0..imm.node_count()).map(|k| filtered.iter().map(|comp| comp[k]).collect()).collect();
        let var = VariationField { y, f: vec![0.0; imm.node_count()] };
        // Predicted change per unit step, signed so that progress is positive.
        let slope = -sign * first_variation_analytic(&geo, &hp, &var);
        if !(slope > 0.0) {
            stalled = true;
            break;
        }
        let mut step = c.step_size;
        let mut next = None;
        for _ in 0..=MAX_HALVINGS {
            let opts = FlowOptions { dt: c.dt, ..FlowOptions::to(step) };
            if let Ok(family) = geodesic_evolve(&imm, &var.param(&geo), &var.f, opts) {
                if let Some(candidate) = family.members.last() {
                    if let Ok(d) = rho_phi(candidate) {
                        if -sign * (d.vol_phi - vol) >= ARMIJO * step * slope {
                            next = Some(candidate.clone());
                            break;
                        }
                    }
                }
            }
            step /= 2.0;
        }
        drop(geo);
        match next {
            Some(n) => {
                accepted.push(step);
                imm = n;
            }
            None => {
                stalled = true;
                break;
            }
        }
    }
    let geo = ImmersionGeometry::new(&imm)?;
    vols.push(geo.density.vol_phi);
    norms.push(h_phi(&geo)?.max_norm());
    // Largest step against the chosen direction.
    let wrong_way = vols
        .windows(2)
        .map(|w| if sign < 0.0 { w[0] - w[1] } else { w[1] - w[0] })
        .fold(0.0_f64, f64::max);
    let checks = vec![Check::at_most(
        "vol_phi_monotone",
        "Vol_φ is monotone along ±H_φ steps",
        wrong_way,
        c.tolerances.flow.unwrap_or(1e-8),
    )];
    let steps: Vec<f64> = (0..vols.len()).map(|i| i as f64).collect();
    Ok(Outcome {
        checks,
        data: json!({ "vol_phi": vols, "h_phi_max": norms, "accepted_steps": accepted, "stalled": stalled }),
        series: vec![
            series("Vol_phi along flow", "step", "Vol_φ", false, steps.iter().copied().zip(vols.iter().copied()).collect()),
            series("H_phi along flow", "step", "max |H_φ|", true, steps.iter().copied().zip(norms.iter().copied()).collect()),
        ],
        table: None,
    })
}
