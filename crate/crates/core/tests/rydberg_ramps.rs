use kzcoarse::rydberg::*;

fn final_order(geom: ArrayGeometry, tau: f64) -> f64 {
    let params = RydbergParams { omega: 1.0, delta: -1.0, rb_over_a: 1.1, range: InteractionRange::default() };
    let h = Hamiltonian::new(geom, params).unwrap();
    let ramp = [DriveSegment { duration: tau, omega: (1.0, 1.0), delta: (-1.0, 2.0) }];
    let opts = EvolveOptions { tolerance: 1e-7, ..EvolveOptions::default() };
    let psi = evolve(&h, &ramp, &StateVector::basis(geom.sites(), 0), &opts, &[], |_| {}).unwrap();
    assert!((psi.norm_sqr() - 1.0).abs() < 1e-9);
    psi.staggered_structure_factor(&geom)
}

#[test]
fn slow_ramp_orders_more_than_fast() {
    let geom = ArrayGeometry::new(4, 4).unwrap();
    let slow = final_order(geom, 10.0);
    let fast = final_order(geom, 1.0);
    assert!(slow > 1.5 * fast, "S(tau = 10) = {slow}, S(tau = 1) = {fast}");
}

#[test]
fn undriven_array_keeps_its_basis_state() {
    let geom = ArrayGeometry::new(3, 3).unwrap();
    let params = RydbergParams { omega: 1.0, delta: 1.3, rb_over_a: 1.2, range: InteractionRange::Full };
    let h = Hamiltonian::new(geom, params).unwrap();
    let idx = neel_index(&geom);
    let psi0 = StateVector::basis(geom.sites(), idx);
    let hold = [DriveSegment::constant(7.5, 0.0, 1.3)];
    let psi = evolve(&h, &hold, &psi0, &EvolveOptions::default(), &[], |_| {}).unwrap();
    let e = h.diagonal(idx);
    // only a global phase exp(-i E t)
    let phase = num_complex::Complex64::from_polar(1.0, -e * 7.5);
    assert!((psi.amps[idx] - phase).norm() < 1e-9);
    for (a, b) in psi.densities().iter().zip(psi0.densities()) {
        assert!((a - b).abs() < 1e-12);
    }
}
