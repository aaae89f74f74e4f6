use std::f64::consts::FRAC_PI_2;
use std::sync::OnceLock;

use latqpt::channels::{bloch_affine, choi_from_kraus, ellipsoid_metrics, ChoiMatrix, KrausSet};
use latqpt::lattice::LatticeConfig;
use latqpt::sim::{
    simulate_drive, DriveKind, DriveSpec, NoiseModel, PulseSequence, Simulator, Step, DEFAULT_ANALYSIS_DX,
    DRIVE_TOLERANCE,
};
use latqpt::states::{project, reconstruct_linear, AnalysisBasis, DensityMatrix};
use latqpt::Complex64;
use nalgebra::Matrix2;
use proptest::prelude::*;

fn lossless() -> &'static Simulator {
    static SIM: OnceLock<Simulator> = OnceLock::new();
    SIM.get_or_init(|| Simulator::new(&LatticeConfig::rb85_reference(), &NoiseModel::default(), DEFAULT_ANALYSIS_DX).unwrap())
}

fn lossy() -> &'static Simulator {
    static SIM: OnceLock<Simulator> = OnceLock::new();
    SIM.get_or_init(|| {
        let noise = NoiseModel { loss: true, ..NoiseModel::default() };
        Simulator::new(&LatticeConfig::rb85_reference(), &noise, DEFAULT_ANALYSIS_DX).unwrap()
    })
}

fn bloch_ball() -> impl Strategy<Value = [f64; 3]> {
    (0.0..=1.0f64, -1.0..=1.0f64, 0.0..std::f64::consts::TAU)
        .prop_map(|(r, z, phi)| {
            let s = (1.0 - z * z).sqrt();
            let r = r.cbrt();
            [r * s * phi.cos(), r * s * phi.sin(), r * z]
        })
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        (-200e-9..200e-9f64).prop_map(|dx| Step::Displace { dx }),
        (0.0..1e-3f64).prop_map(|dt| Step::Wait { dt }),
        Just(Step::Decohere),
    ]
}

fn complex_matrix() -> impl Strategy<Value = Matrix2<Complex64>> {
    prop::array::uniform8(-1.0..1.0f64).prop_map(|v| {
        Matrix2::new(
            Complex64::new(v[0], v[1]),
            Complex64::new(v[2], v[3]),
            Complex64::new(v[4], v[5]),
            Complex64::new(v[6], v[7]),
        )
    })
}

proptest! {
    #[test]
    fn projections_determine_the_state(r in bloch_ball(), theta in 0.05..FRAC_PI_2 - 0.05) {
        let basis = AnalysisBasis::new(theta).unwrap();
        let rho = DensityMatrix::from_bloch(r).unwrap().inner();
        let back = reconstruct_linear(&project(&rho, &basis), &basis).unwrap();
        prop_assert!(back.frobenius_distance(&rho) < 1e-12);
    }

    #[test]
    fn trace_never_grows_with_loss(steps in prop::collection::vec(step(), 1..8)) {
        let sim = lossy();
        let mut previous = 1.0;
        for n in 1..=steps.len() {
            let trace = sim.prepare(&PulseSequence::new(steps[..n].to_vec())).unwrap().trace().re;
            prop_assert!(trace <= previous + 1e-12, "{trace} after {previous}");
            previous = trace;
        }
    }

    #[test]
    fn lossless_preparation_keeps_unit_trace(steps in prop::collection::vec(step(), 1..8)) {
        let x = lossless().prepare(&PulseSequence::new(steps)).unwrap();
        prop_assert!((x.trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn band_measurement_realizes_the_analysis_projectors(
        steps in prop::collection::vec(step(), 0..6),
        loss in any::<bool>(),
    ) {
        let sim = if loss { lossy() } else { lossless() };
        let mut all = vec![Step::Filter];
        all.extend(steps);
        let x = sim.prepare(&PulseSequence::new(all)).unwrap();
        let realized = sim.measure(&x);
        let ideal = sim.ideal_projections(&x);
        for i in 0..4 {
            prop_assert!((realized[i] - ideal[i]).abs() < 1e-6, "{realized:?} vs {ideal:?}");
        }
    }

    #[test]
    fn kraus_sets_give_cp_choi_matrices(ops in prop::collection::vec(complex_matrix(), 1..5)) {
        let choi = choi_from_kraus(&KrausSet::new(ops));
        prop_assert!(choi.min_eigenvalue() > -1e-12);
        prop_assert!(choi.hermiticity_error() < 1e-12);
    }

    #[test]
    fn choi_json_round_trip(ops in prop::collection::vec(complex_matrix(), 1..4)) {
        let choi = choi_from_kraus(&KrausSet::new(ops));
        let back: ChoiMatrix = serde_json::from_str(&serde_json::to_string(&choi).unwrap()).unwrap();
        prop_assert!(back.frobenius_distance(&choi) == 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn drive_propagator_is_converged_and_unitary(
        amplitude in 0.0..40e-9f64,
        periods in 0.1..2.0f64,
        sine in any::<bool>(),
    ) {
        let kind = if sine { DriveKind::Sine } else { DriveKind::Cosine };
        let out = lossless().drive(kind, amplitude, periods).unwrap();
        prop_assert!(out.change < DRIVE_TOLERANCE);
        let defect = (out.propagator.adjoint() * out.propagator - Matrix2::identity()).norm();
        prop_assert!(defect < 1e-8, "unitarity defect {defect}");
    }
}

#[test]
fn off_resonant_drive_barely_rotates() {
    let sim = lossless();
    let spec = DriveSpec {
        frequency: Some(2.0 * sim.omega),
        interaction_frame: true,
        ..DriveSpec::resonant(DriveKind::Sine, 2.6e-9, 1.0)
    };
    let angle = simulate_drive(&sim.lattice, &sim.states, &spec).unwrap().rotation().rotation_angle;
    let resonant = sim.drive(DriveKind::Sine, 2.6e-9, 1.0).unwrap().rotation().rotation_angle;
    assert!(angle < 0.5, "detuned rotation {angle}°");
    assert!(resonant > 5.0 * angle, "resonant {resonant}° vs detuned {angle}°");
}

#[test]
fn drive_rotation_grows_linearly_at_small_amplitude() {
    let sim = lossless();
    let a = sim.drive(DriveKind::Sine, 2e-9, 1.0).unwrap().rotation().rotation_angle;
    let b = sim.drive(DriveKind::Sine, 4e-9, 1.0).unwrap().rotation().rotation_angle;
    assert!((b / a - 2.0).abs() < 0.02, "{a}° then {b}°");
}

#[test]
fn free_period_is_identity_up_to_phase_without_dephasing() {
    let sim = lossless();
    let choi = sim.operation_channel(&latqpt::sim::Operation::FreePeriod { periods: 1.0 }).unwrap();
    let m = ellipsoid_metrics(&bloch_affine(&choi));
    assert!(m.rotation_angle.abs() < 1e-6);
    assert!(m.semi_axes.iter().all(|s| (s - 1.0).abs() < 1e-9));
}
