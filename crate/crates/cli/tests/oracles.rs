//! Library results checked against the independent test-side oracles.

#[path = "support/mathieu.rs"]
mod mathieu;
#[path = "support/random.rs"]
mod random;

use latqpt::channels::{bloch_affine, choi_from_kraus, ellipsoid_metrics, unitary_channel};
use latqpt::lattice::{compute_bands, LatticeConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn oracle_free_particle_limit() {
    let c = mathieu::zone_center(0.0, 3);
    assert!(c[0].abs() < 1e-12 && (c[1] - 4.0).abs() < 1e-12 && (c[2] - 4.0).abs() < 1e-12);
    let e = mathieu::zone_edge(0.0, 2);
    assert!((e[0] - 1.0).abs() < 1e-12 && (e[1] - 1.0).abs() < 1e-12);
}

#[test]
fn bands_match_mathieu_values_across_depths() {
    for depth in [0.5, 2.0, 7.0, 13.0, 22.0, 40.0] {
        let bands = compute_bands(&LatticeConfig::rb85_reference().with_depth(depth)).unwrap();
        let center = mathieu::zone_center(depth, 4);
        let edge = mathieu::zone_edge(depth, 4);
        for n in 0..4 {
            assert!((bands.zone_center[n] - center[n]).abs() < 1e-6, "depth {depth}, band {n} at q = 0");
            assert!((bands.zone_edge[n] - edge[n]).abs() < 1e-6, "depth {depth}, band {n} at the edge");
        }
    }
}

#[test]
fn random_kraus_sets_are_trace_preserving() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for rank in 1..=4 {
        let k = random::cptp_kraus(&mut rng, rank);
        assert!(k.is_trace_preserving(1e-10));
        assert!(choi_from_kraus(&k).tp_deviation() < 1e-10);
    }
}

#[test]
fn arbitrary_axis_rotations_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for angle in [1.0, 17.0, 90.0, 135.0, 179.0] {
        let n = random::unit_vector(&mut rng);
        let m = ellipsoid_metrics(&bloch_affine(&unitary_channel(&random::rotation_about(n, angle))));
        assert!((m.rotation_angle - angle).abs() < 1e-9, "{angle}");
        for k in 0..3 {
            assert!((m.rotation_axis[k] - n[k]).abs() < 1e-9, "{angle}: {:?} vs {n:?}", m.rotation_axis);
        }
    }
}
