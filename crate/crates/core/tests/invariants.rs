use std::f64::consts::PI;
use std::sync::Arc;

use affleg::calculus::ImmersionGeometry;
use affleg::cone::{calibration_check, legendrian_angle, ConeStructure};
use affleg::density::{gram_rho_oracle, reparametrization_check, rho_phi};
use affleg::immersion::{build_immersion, CircleDiffeo, TorusCurve};
use affleg::model::identities::sample_points;
use affleg::model::{Heisenberg, SasakianModel, Sphere};
use affleg::spectral::PeriodicGrid;
use proptest::prelude::*;

fn s3() -> Arc<dyn SasakianModel> {
    Arc::new(Sphere::new(1).unwrap())
}

fn torus(a: f64, k: f64, nodes: usize) -> affleg::immersion::DiscretizedImmersion {
    build_immersion(s3(), &TorusCurve { a, k }, PeriodicGrid::new(1, nodes).unwrap()).unwrap()
}

/// Integer winding numbers other than the Hopf value k = 1.
fn winding() -> impl Strategy<Value = f64> {
    prop_oneof![-4i32..=0, 2i32..=4].prop_map(f64::from)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn phi_is_compatible(seed in any::<u64>(), n in 1usize..=2, heis in any::<bool>()) {
        let model: Arc<dyn SasakianModel> =
            if heis { Arc::new(Heisenberg::new(n).unwrap()) } else { Arc::new(Sphere::new(n).unwrap()) };
        for p in sample_points(model.as_ref(), 4, seed) {
            let phi = model.phi(&p);
            let eta = model.eta(&p);
            let xi = model.reeb(&p);
            let basis = model.tangent_basis(&p);
            for u in &basis {
                let phi2 = &phi * &phi * u;
                let expected = -u + &xi * eta.dot(u);
                prop_assert!((phi2 - expected).amax() < 1e-10);
                for v in &basis {
                    let lhs = model.inner(&p, &(&phi * u), &(&phi * v));
                    let rhs = model.inner(&p, u, v) - eta.dot(u) * eta.dot(v);
                    prop_assert!((lhs - rhs).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn torus_density_is_bounded_and_matches_oracle(a in 0.1f64..1.45, k in winding()) {
        let imm = torus(a, k, 32);
        let d = rho_phi(&imm).unwrap();
        for node in 0..32 {
            prop_assert!(d.rho[node] > 0.0 && d.rho[node] <= 1.0 + 1e-12);
            let oracle = gram_rho_oracle(imm.model().as_ref(), imm.value(node), imm.partials(node));
            prop_assert!((d.rho[node] - oracle).abs() < 1e-12);
        }
        // Closed form for the whole family.
        let expected = PI * (1.0 - k).abs() * (2.0 * a).sin();
        prop_assert!((d.vol_phi - expected).abs() < 1e-10 * expected.max(1.0));
    }

    #[test]
    fn phi_volume_ignores_reparametrization(a in 0.2f64..1.3, k in winding(), c in -0.8f64..0.8, reverse in any::<bool>()) {
        let r = reparametrization_check(s3(), &TorusCurve { a, k }, CircleDiffeo { amplitude: c, reverse }, PeriodicGrid::new(1, 256).unwrap()).unwrap();
        prop_assert!(r < 1e-9, "{r}");
    }

    #[test]
    fn calibration_chain_and_modulus(a in 0.1f64..1.45, k in winding()) {
        let imm = torus(a, k, 32);
        let geo = ImmersionGeometry::new(&imm).unwrap();
        let cone = ConeStructure::new(imm.model().as_ref()).unwrap();
        prop_assert!(calibration_check(&cone, &geo).holds());
        prop_assert!(legendrian_angle(&cone, &geo).unwrap().modulus_residual() < 1e-10);
    }
}
