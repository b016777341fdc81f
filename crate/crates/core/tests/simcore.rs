use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ttflab_core::oracle::{equilibrated_liquid, LennardJones, LjParams, SimConfig};
use ttflab_core::simcore::{
    build_neighbor_table, minimum_image, total_energy, vec3, ForceEval, Integrator, NeighborForces, SystemState,
    Thermostat,
};

fn brute_force_pairs(s: &SystemState, reach: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..s.n_atoms() {
        for j in i + 1..s.n_atoms() {
            let d = minimum_image(vec3::sub(s.positions[j], s.positions[i]), s.box_length);
            if vec3::norm(d) <= reach {
                out.push((i, j));
            }
        }
    }
    out
}

#[test]
fn cell_list_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..100 {
        let n = rng.random_range(2..=128);
        let l = rng.random_range(5.0..12.0);
        let positions = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(0.0..l))).collect();
        let s = SystemState::at_rest(positions, l).unwrap();
        let (cutoff, skin) = (rng.random_range(0.8..2.3), rng.random_range(0.0..0.3));
        let table = build_neighbor_table(&s, cutoff, skin).unwrap();
        assert_eq!(table.pairs, brute_force_pairs(&s, cutoff + skin), "trial {trial}");
    }
}

fn liquid(seed: u64) -> (SystemState, SimConfig) {
    let sim = SimConfig::default();
    (equilibrated_liquid(64, 0.7, &sim, 2000, seed).unwrap(), sim)
}

#[test]
fn nve_conserves_energy() {
    let (mut s, sim) = liquid(1);
    let mut integ = Integrator::new(NeighborForces::new(LennardJones(sim.lj), sim.skin));
    let energy = |integ: &mut Integrator<_>, s: &SystemState| s.kinetic_energy() + integ.current(s).unwrap().energy;
    let e0 = energy(&mut integ, &s);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        integ.step_nve(&mut s, 0.002).unwrap();
        worst = worst.max(((energy(&mut integ, &s) - e0) / e0).abs());
    }
    assert!(worst < 1e-4, "relative drift {worst}");
}

#[test]
fn one_step_is_time_reversible() {
    let (mut s, sim) = liquid(2);
    let start = s.positions.clone();
    let mut integ = Integrator::new(NeighborForces::new(LennardJones(sim.lj), sim.skin));
    integ.step_nve(&mut s, 0.002).unwrap();
    integ.step_nve(&mut s, -0.002).unwrap();
    for (a, b) in s.positions.iter().zip(&start) {
        assert!(vec3::norm(minimum_image(vec3::sub(*a, *b), s.box_length)) < 1e-10);
    }
}

#[test]
fn momentum_is_conserved() {
    let (mut s, sim) = liquid(3);
    s.remove_drift();
    let p0 = s.total_momentum();
    let mut integ = Integrator::new(NeighborForces::new(LennardJones(sim.lj), sim.skin));
    for _ in 0..1000 {
        integ.step_nve(&mut s, 0.002).unwrap();
    }
    assert!(vec3::norm(vec3::sub(s.total_momentum(), p0)) < 1e-10);
}

#[test]
fn positions_stay_in_box() {
    let (mut s, sim) = liquid(4);
    let mut integ = Integrator::new(NeighborForces::new(LennardJones(sim.lj), sim.skin));
    for _ in 0..2000 {
        integ.step_nve(&mut s, 0.002).unwrap();
        assert!(s.positions.iter().flatten().all(|&c| (0.0..s.box_length).contains(&c)));
    }
}

#[test]
fn thermostat_holds_temperature() {
    let sim = SimConfig::default();
    let target = 0.7;
    for seed in 0..5 {
        let mut s = equilibrated_liquid(64, target, &sim, 0, 10 + seed).unwrap();
        let mut thermostat = sim.thermostat(64, target).unwrap();
        let mut integ = Integrator::new(NeighborForces::new(LennardJones(sim.lj), sim.skin));
        let mut sum = 0.0;
        let steps = 50_000;
        for _ in 0..steps {
            integ.step_nvt(&mut s, sim.dt, &mut thermostat).unwrap();
            sum += s.instantaneous_temperature();
        }
        let mean = sum / steps as f64;
        assert!((mean - target).abs() < 0.05 * target, "seed {seed}: mean T {mean}");
    }
}

#[test]
fn infinite_coupling_mass_is_nve() {
    let (s, sim) = liquid(5);
    let mut a = s.clone();
    let mut b = s;
    let mut t = Thermostat::new(0.7, 1e300).unwrap();
    let mut ia = Integrator::new(NeighborForces::new(LennardJones(sim.lj), sim.skin));
    let mut ib = Integrator::new(NeighborForces::new(LennardJones(sim.lj), sim.skin));
    ia.step_nvt(&mut a, 0.002, &mut t).unwrap();
    ib.step_nve(&mut b, 0.002).unwrap();
    for (x, y) in a.positions.iter().zip(&b.positions) {
        assert!(vec3::norm(vec3::sub(*x, *y)) < 1e-12);
    }
}

#[test]
fn pair_at_minimum_stays_put() {
    let r = 2f64.powf(1.0 / 6.0);
    let mut s = SystemState::at_rest(vec![[2.0, 2.0, 2.0], [2.0 + r, 2.0, 2.0]], 8.0).unwrap();
    let lj = LjParams::new(1.0, 1.0, 2.5).unwrap();
    let e = total_energy(&s, &LennardJones(lj)).unwrap();
    assert!((e - (-1.0 + lj.energy_shift)).abs() < 1e-12);
    let mut integ = Integrator::new(NeighborForces::new(LennardJones(lj), 0.3));
    let start = s.positions.clone();
    for _ in 0..10 {
        integ.step_nve(&mut s, 0.002).unwrap();
    }
    for (a, b) in s.positions.iter().zip(&start) {
        assert!(vec3::norm(vec3::sub(*a, *b)) < 1e-12);
    }
}

#[test]
fn isolated_atom_energy_is_kinetic() {
    let mut s = SystemState::at_rest(vec![[1.0, 1.0, 1.0]], 8.0).unwrap();
    s.velocities[0] = [1.0, 2.0, 2.0];
    assert_eq!(total_energy(&s, &LennardJones(LjParams::default())).unwrap(), 4.5);
}

#[test]
fn temperature_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut s = SystemState::lattice(27, 0.8, 1.3, &mut rng).unwrap();
    for v in &mut s.velocities {
        *v = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
    }
    let mut twice_k = 0.0;
    for (v, m) in s.velocities.iter().zip(&s.masses) {
        twice_k += m * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    }
    let t = twice_k / (3.0 * 27.0);
    assert!((s.instantaneous_temperature() - t).abs() < 1e-13 * t);
}

#[test]
fn closure_forces_drive_the_integrator() {
    let mut s = SystemState::at_rest(vec![[1.0, 1.0, 1.0]], 4.0).unwrap();
    let mut integ = Integrator::new(|st: &SystemState| Ok(ForceEval { energy: 0.0, forces: vec![[1.0, 0.0, 0.0]; st.n_atoms()] }));
    integ.step_nve(&mut s, 0.1).unwrap();
    assert!((s.positions[0][0] - 1.005).abs() < 1e-15);
    assert!((s.velocities[0][0] - 0.1).abs() < 1e-15);
}

proptest! {
    #[test]
    fn minimum_image_is_shortest(dx in -30.0f64..30.0, dy in -30.0f64..30.0, dz in -30.0f64..30.0, l in 1.0f64..10.0) {
        let d = minimum_image([dx, dy, dz], l);
        for k in 0..3 {
            prop_assert!(d[k] >= -0.5 * l && d[k] < 0.5 * l + 1e-12);
            let n = ([dx, dy, dz][k] - d[k]) / l;
            prop_assert!((n - n.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn wrap_lands_in_box(x in -100.0f64..100.0, l in 0.5f64..10.0) {
        let w = ttflab_core::simcore::wrap([x, -x, 0.5 * x], l);
        prop_assert!(w.iter().all(|c| (0.0..l).contains(c)));
    }
}
