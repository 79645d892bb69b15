use hofx_bench::{cube, fill, matrix, state, unit_cube};

#[test]
fn fill_is_bounded_and_deterministic() {
    let a = fill(500, 0.3);
    assert_eq!(a, fill(500, 0.3));
    assert!(a.iter().all(|v| v.abs() <= 1.0));
    assert_ne!(a, fill(500, 0.4));
}

#[test]
fn shapes_match_requests() {
    let m = matrix(5, 4, 0.0);
    assert_eq!((m.nrows(), m.ncols()), (5, 4));
    assert_eq!(cube(4, 0.0).extents(), [4, 4, 4]);
}

#[test]
fn state_sized_to_discretization() {
    let disc = unit_cube(1);
    let s = state(&disc);
    assert_eq!((s.u.len(), s.p.len()), (disc.num_u(), disc.num_p()));
}
