use kzcoarse::estimators::{excess_defect_length, mann_kendall, second_moment_xi, Channel, Field, XiMethod};
use kzcoarse::ising::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

fn batch_mean_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let n = xs.len() / batches;
    let means: Vec<f64> = xs.chunks(n).take(batches).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (m, (var / batches as f64).sqrt())
}

#[test]
fn infinite_temperature_gives_coin_flips() {
    let mut lat = SpinLattice::new(64, 64, 11).unwrap();
    for _ in 0..30 {
        lat.glauber_sweep(f64::INFINITY).unwrap();
    }
    // horizontal neighbour pairs: four equally likely classes
    let mut counts = [0f64; 4];
    let s = lat.spins();
    for y in 0..64 {
        for x in (0..64).step_by(2) {
            let a = (s[y * 64 + x] > 0) as usize;
            let b = (s[y * 64 + x + 1] > 0) as usize;
            counts[2 * a + b] += 1.0;
        }
    }
    let expect = counts.iter().sum::<f64>() / 4.0;
    let chi2: f64 = counts.iter().map(|c| (c - expect).powi(2) / expect).sum();
    // 3 degrees of freedom, p = 0.001
    assert!(chi2 < 16.27, "chi2 = {chi2}, counts {counts:?}");
}

/// Sequential-sweep Metropolis, written independently of the library.
fn metropolis_energy(l: usize, t: f64, sweeps: usize, burn: usize, seed: u64) -> Vec<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut s = vec![1i32; l * l];
    let mut out = Vec::with_capacity(sweeps);
    for sweep in 0..burn + sweeps {
        for y in 0..l {
            for x in 0..l {
                let nb = s[y * l + (x + 1) % l] + s[y * l + (x + l - 1) % l] + s[((y + 1) % l) * l + x] + s[((y + l - 1) % l) * l + x];
                let de = 2.0 * (s[y * l + x] * nb) as f64;
                if de <= 0.0 || rng.random::<f64>() < (-de / t).exp() {
                    s[y * l + x] = -s[y * l + x];
                }
            }
        }
        if sweep >= burn {
            let mut e = 0i64;
            for y in 0..l {
                for x in 0..l {
                    e -= (s[y * l + x] * (s[y * l + (x + 1) % l] + s[((y + 1) % l) * l + x])) as i64;
                }
            }
            out.push(e as f64 / (l * l) as f64);
        }
    }
    out
}

#[test]
fn detailed_balance_against_metropolis() {
    let (l, t) = (24, 1.9);
    let mut lat = SpinLattice::new(l, l, 5).unwrap();
    for _ in 0..500 {
        lat.glauber_sweep(t).unwrap();
    }
    let mut heat_bath = Vec::new();
    for _ in 0..40_000 {
        lat.glauber_sweep(t).unwrap();
        heat_bath.push(lat.energy_per_site());
    }
    let metro = metropolis_energy(l, t, 40_000, 500, 6);
    let (m1, s1) = batch_mean_se(&heat_bath, 40);
    let (m2, s2) = batch_mean_se(&metro, 40);
    let se = (s1 * s1 + s2 * s2).sqrt();
    assert!((m1 - m2).abs() < 2.0 * se, "heat bath {m1} +- {s1}, Metropolis {m2} +- {s2}");
    // both sit near the infinite-lattice value at this temperature
    assert!((m1 - equilibrium_energy(t)).abs() < 0.01);
}

#[test]
fn domains_grow_monotonically_after_quench() {
    let times: Vec<u64> = (0..=12).map(|k| (10f64 * 10f64.powf(k as f64 / 6.0)).round() as u64).collect();
    let t = 0.5 * T_C;
    let rho = equilibrium_wall_density(t);
    let runs = run_ensemble(128, 128, &[1, 2, 3, 4], &ThermalProtocol::quench(t, 1000), &times, |s| {
        excess_defect_length(s.lx, s.ly, &s.spins, rho)
    })
    .unwrap();
    let mean: Vec<f64> = (0..times.len()).map(|i| runs.iter().map(|r| r[i]).sum::<f64>() / runs.len() as f64).collect();
    let (s, z) = mann_kendall(&mean);
    assert!(s > 0 && z > 1.96, "S = {s}, z = {z}, series {mean:?}");
}

#[test]
fn disordered_phase_plateau() {
    let t = 1.5 * T_C;
    let times = [100u64, 300, 1000, 3000];
    let runs = run_ensemble(128, 128, &[7, 8, 9, 10], &ThermalProtocol::quench(t, 3000), &times, |s| {
        Field::from_spins(s.lx, s.ly, &s.spins)
    })
    .unwrap();
    let xi: Vec<f64> = (0..times.len())
        .map(|i| {
            let fields: Vec<Field> = runs.iter().map(|r| r[i].clone()).collect();
            second_moment_xi(&fields, Channel::Magnetization, XiMethod::OrnsteinZernike).unwrap()
        })
        .collect();
    assert!(xi.iter().all(|&x| x > 0.3 && x < 5.0), "{xi:?}");
    let drift = (xi[3] / xi[0]).ln().abs() / (times[3] as f64 / times[0] as f64).log10();
    assert!(drift < 0.05, "drift {drift} per decade, {xi:?}");
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let protocol = ThermalProtocol {
        initial: InitialCondition::Random,
        segments: vec![
            Segment::Ramp { from: 2.0 * T_C, to: 0.8 * T_C, duration: 40, power: 1.0 },
            Segment::Hold { temperature: 0.8 * T_C, duration: 20 },
        ],
    };
    let run = |seed| {
        let mut lat = SpinLattice::new(48, 32, seed).unwrap();
        run_protocol(&mut lat, &protocol, &[0, 10, 40, 60]).unwrap().iter().map(|s| s.to_bytes()).collect::<Vec<_>>()
    };
    assert_eq!(run(99), run(99));
    assert_ne!(run(99), run(100));
}

#[test]
fn snapshot_times_outside_schedule_rejected() {
    let mut lat = SpinLattice::new(8, 8, 0).unwrap();
    let err = run_protocol(&mut lat, &ThermalProtocol::quench(1.0, 10), &[5, 11]).unwrap_err();
    assert!(matches!(err, IsingError::SnapshotOutOfRange { time: 11, total: 10 }));
}

#[test]
fn kz_ramp_excludes_short_ramps() {
    let mut cfg = KzRampConfig::new(64, 64, vec![1, 2, 3], vec![5, 15, 40]);
    cfg.pre_hold = 20;
    let res = kz_ramp_experiment(&cfg).unwrap();
    assert_eq!(res.excluded_taus, vec![5]);
    assert_eq!(res.rows.iter().map(|r| r.tau).collect::<Vec<_>>(), vec![15, 40]);
    assert!(res.rows.iter().all(|r| r.xi > 0.0 && r.xi_err.is_finite()));
    assert!(res.exponent.is_finite());

    cfg.taus = vec![2, 20];
    assert!(matches!(kz_ramp_experiment(&cfg), Err(IsingError::InvalidProtocol(_))));
}
