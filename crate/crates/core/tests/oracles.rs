mod common;

use common::*;

#[test]
fn search_routines_match_brute_force() {
    for (name, bad) in oracle_mismatches(60, 3) {
        assert_eq!(bad, 0, "{name} disagreed with its oracle");
    }
}

#[test]
fn lrf_quantities_follow_global_rotations() {
    let dev = lrf_equivariance(2000, 5);
    assert!(dev.rir < 1e-7, "rir {}", dev.rir);
    assert!(
        dev.relative_rotation < 1e-7,
        "relative rotation {}",
        dev.relative_rotation
    );
    assert!(dev.basis < 1e-9, "basis {}", dev.basis);
}
