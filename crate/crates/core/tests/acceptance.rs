//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the verdict lines always reach the console. The slow
//! criterion 7 runs only with `--ignored` or `--include-ignored`:
//! `cargo test --release -p ttflab-core --test acceptance -- --include-ignored`

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use ttflab_core::fidelity::{
    compute_force_baseline, fit_power_law, fit_power_law_points, mean_lifetimes, rho_sweep, run_ttf_grid, write_outliers_jsonl,
    write_ttf_csv, TtfProtocol, TtfRecord, DEFAULT_RHO_GRID,
};
use ttflab_core::nnff::{
    Checkpoint, DescriptorConfig, ForceField, LossCoefficients, MlpArchitecture, Normalization, Objective, ParamVector,
};
use ttflab_core::oracle::{equilibrated_liquid, Dataset, DatasetSpec, LennardJones, SimConfig, TrainExample};
use ttflab_core::pardomain::{dims_for, domain_pair_set, parallel_forces};
use ttflab_core::probes::{loss_scan, measure_sharpness, uniform_grid};
use ttflab_core::simcore::{build_neighbor_table, minimum_image, vec3, Integrator, NeighborForces, Potential, SystemState, Vec3};
use ttflab_core::train::{adam_step, sam_step, train, AdamState, ModelSpec, OptimizerChoice, SamConfig, TrainConfig};
use ttflab_core::{seeds, Result};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

/// Runs one criterion, turning panics and errors into FAIL lines.
fn criterion(id: &str, title: &str, limit: Option<Duration>, body: impl FnOnce() -> Result<Verdict>) -> bool {
    let t0 = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(body));
    let elapsed = t0.elapsed();
    let (mut pass, mut detail) = match outcome {
        Ok(Ok(v)) => (v.pass, v.detail),
        Ok(Err(e)) => (false, format!("error: {e}")),
        Err(p) => {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panic: {}", msg.unwrap_or_default()))
        }
    };
    if let Some(limit) = limit {
        if elapsed > limit {
            pass = false;
            detail.push_str(&format!("; over the {:.0} s budget", limit.as_secs_f64()));
        }
    }
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id} {tag}: {title}: {detail} [{:.1} s]", elapsed.as_secs_f64());
    pass
}

fn close(a: f64, b: f64, rtol: f64, atol: f64) -> bool {
    (a - b).abs() <= atol + rtol * a.abs().max(b.abs())
}

fn random_positions(rng: &mut ChaCha8Rng, n: usize, l: f64, dmin: f64) -> Vec<Vec3> {
    let mut out: Vec<Vec3> = Vec::new();
    while out.len() < n {
        let p = [rng.random_range(0.0..l), rng.random_range(0.0..l), rng.random_range(0.0..l)];
        if out.iter().all(|q| vec3::norm(minimum_image(vec3::sub(p, *q), l)) >= dmin) {
            out.push(p);
        }
    }
    out
}

fn random_model(rng: &mut ChaCha8Rng) -> ForceField {
    let d = DescriptorConfig::uniform(6, 0.8, 2.1).unwrap();
    let arch = MlpArchitecture::new(6, &[7, 5]).unwrap();
    let norm = Normalization {
        mean: (0..6).map(|_| rng.random_range(0.0..1.0)).collect(),
        std: (0..6).map(|_| rng.random_range(0.5..2.0)).collect(),
    };
    let mut m = ForceField::initialized(d, arch, norm, -0.5, rng).unwrap();
    for w in m.params.0.iter_mut() {
        *w += rng.random_range(-0.2..0.2);
    }
    m
}

fn energy_at(model: &ForceField, positions: &[Vec3], l: f64) -> f64 {
    let s = SystemState::at_rest(positions.to_vec(), l).unwrap();
    let t = build_neighbor_table(&s, model.cutoff(), 0.0).unwrap();
    model.energy_forces(&s, &t).unwrap().energy
}

fn random_example(rng: &mut ChaCha8Rng, n: usize, l: f64) -> TrainExample {
    TrainExample {
        positions: random_positions(rng, n, l, 0.85),
        box_length: l,
        energy: rng.random_range(-3.0..0.0) * n as f64,
        forces: (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0))).collect(),
    }
}

fn c1_exactness() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let h = 1e-5;
    let (mut worst_f, mut worst_g) = (0.0f64, 0.0f64);
    let mut bad = 0;
    for _ in 0..10 {
        let model = random_model(&mut rng);
        let l = 5.0;
        let pos = random_positions(&mut rng, 16, l, 0.85);
        let s = SystemState::at_rest(pos.clone(), l)?;
        let t = build_neighbor_table(&s, model.cutoff(), 0.0)?;
        let f = model.energy_forces(&s, &t)?.forces;
        for i in 0..pos.len() {
            for c in 0..3 {
                let mut p = pos.clone();
                p[i][c] += h;
                let ep = energy_at(&model, &p, l);
                p[i][c] -= 2.0 * h;
                let em = energy_at(&model, &p, l);
                let fd = -(ep - em) / (2.0 * h);
                worst_f = worst_f.max((f[i][c] - fd).abs() / f[i][c].abs().max(fd.abs()).max(1e-300));
                bad += usize::from(!close(f[i][c], fd, 1e-5, 1e-9));
            }
        }
    }
    let coefficients = LossCoefficients { energy: 1.0, force: 1.0 };
    for _ in 0..10 {
        let model = random_model(&mut rng);
        let batch: Vec<_> = (0..2).map(|_| random_example(&mut rng, 10, 4.6)).collect();
        let obj = Objective::new(&model, &batch, coefficients)?;
        let w = model.params.0.clone();
        let (_, grad) = obj.loss_gradient(&w)?;
        for k in 0..w.len() {
            let mut wp = w.clone();
            wp[k] += h;
            let lp = obj.loss(&wp)?.total;
            wp[k] -= 2.0 * h;
            let lm = obj.loss(&wp)?.total;
            let fd = (lp - lm) / (2.0 * h);
            worst_g = worst_g.max((grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-300));
            bad += usize::from(!close(grad[k], fd, 1e-4, 0.0));
        }
    }
    Ok(verdict(
        bad == 0,
        format!("10 force and 10 gradient instances, {bad} mismatches; worst relative error forces {worst_f:.2e}, gradient {worst_g:.2e}"),
    ))
}

fn c2_nve() -> Result<Verdict> {
    let sim = SimConfig::default();
    let mut state = equilibrated_liquid(64, 0.7, &sim, 2000, 5)?;
    let mut integ = Integrator::new(NeighborForces::new(LennardJones(sim.lj), sim.skin));
    let total = |integ: &mut Integrator<NeighborForces<LennardJones>>, s: &SystemState| -> Result<f64> {
        Ok(integ.current(s)?.energy + s.kinetic_energy())
    };
    let e0 = total(&mut integ, &state)?;
    let mut drift = 0.0f64;
    for _ in 0..10_000 {
        integ.step_nve(&mut state, 0.002)?;
        drift = drift.max(((total(&mut integ, &state)? - e0) / e0).abs());
    }
    Ok(verdict(drift < 1e-4, format!("64-atom liquid, 1e4 steps at dt 0.002, max relative drift {drift:.2e} (limit 1e-4)")))
}

fn c3_sam() -> Result<Verdict> {
    // rho = 0 against plain Adam on a real force-matching objective
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = random_model(&mut rng);
    let batch: Vec<_> = (0..2).map(|_| random_example(&mut rng, 10, 4.6)).collect();
    let obj = Objective::new(&model, &batch, LossCoefficients { energy: 1.0, force: 1.0 })?;
    let mut grad = |w: &[f64]| -> Result<Vec<f64>> { Ok(obj.loss_gradient(w)?.1) };
    let (mut wa, mut sa) = (model.params.clone(), AdamState::new(model.params.len(), 2e-3));
    let (mut ws, mut ss) = (wa.clone(), sa.clone());
    let mut bitwise = true;
    for _ in 0..20 {
        let g = grad(&wa.0)?;
        (wa, sa) = adam_step(&wa, &g, &sa)?;
        (ws, ss) = sam_step(&ws, &mut grad, &ss, SamConfig::new(0.0)?)?;
        bitwise &= wa.0.iter().zip(&ws.0).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    // L = |w|^2 / 2 at (3, 4), rho 0.5: ascent to (3.3, 4.4), whose gradient is (3.3, 4.4)
    let mut seen = Vec::new();
    let mut quad = |w: &[f64]| -> Result<Vec<f64>> {
        seen.push(w.to_vec());
        Ok(w.to_vec())
    };
    let w0 = ParamVector(vec![3.0, 4.0]);
    let adam = AdamState::new(2, 0.1);
    let (w1, _) = sam_step(&w0, &mut quad, &adam, SamConfig::new(0.5)?)?;
    let calls = seen.len();
    let perturbed_ok = calls == 2 && close(seen[1][0], 3.3, 1e-15, 0.0) && close(seen[1][1], 4.4, 1e-15, 0.0);
    let (expected, _) = adam_step(&w0, &[3.3, 4.4], &adam)?;
    let update_ok = w1.0.iter().zip(&expected.0).all(|(a, b)| close(*a, *b, 1e-15, 0.0));
    Ok(verdict(
        bitwise && perturbed_ok && update_ok,
        format!(
            "rho 0 bitwise Adam over 20 steps: {bitwise}; gradient calls per step {calls}; perturbed point {:?}; update matches Adam on g(w+e): {update_ok}",
            seen.get(1)
        ),
    ))
}

fn c4_sharpness() -> Result<Verdict> {
    let rho = 0.05;
    let mut worst: f64 = f64::INFINITY;
    let mut ok = true;
    for dim in 1..=4 {
        for lambda in [0.5, 2.0, 10.0] {
            let loss = |w: &[f64]| -> Result<f64> { Ok(0.5 * lambda * w.iter().map(|x| x * x).sum::<f64>()) };
            let est = measure_sharpness(loss, &vec![0.0; dim], rho, 1000, dim as u64)?;
            let ratio = est.value / (0.5 * lambda * rho * rho);
            worst = worst.min(ratio);
            ok &= (0.9..=1.0 + 1e-12).contains(&ratio);
        }
    }
    Ok(verdict(ok, format!("dims 1-4, lambda in {{0.5, 2, 10}}, 1000 samples: lowest estimate/(lambda rho^2 / 2) = {worst:.6}")))
}

fn c5_fit() -> Result<Verdict> {
    let pts: Vec<(f64, f64)> = [64.0f64, 128.0, 256.0, 512.0, 1024.0].iter().map(|&n| (n, 2.0e5 * n.powf(-0.29))).collect();
    let exact = fit_power_law_points(&pts)?;
    let dbeta = (exact.beta - 0.29).abs();
    // 100 noisy trials: log-normal scatter (sigma 0.2) at 200 log-spaced sizes
    let mut rng = seeds::rng(0, "acceptance-fit");
    let noise = Normal::new(0.0, 0.2).expect("valid normal");
    let sizes: Vec<f64> = (0..200).map(|k| 64.0 * 2f64.powf(k as f64 / 40.0)).collect();
    let mut covered = 0;
    for _ in 0..100 {
        let pts: Vec<(f64, f64)> =
            sizes.iter().map(|&n| (n, 2.0e5 * n.powf(-0.29) * f64::exp(noise.sample(&mut rng)))).collect();
        let fit = fit_power_law_points(&pts)?;
        let se = fit.beta_stderr.expect("many points give a standard error");
        covered += usize::from((fit.beta - 0.29).abs() <= 2.0 * se);
    }
    Ok(verdict(
        dbeta < 1e-9 && covered >= 95,
        format!("exact |dbeta| = {dbeta:.1e}; coverage of beta within 2 stderr {covered}/100"),
    ))
}

fn jittered(n: usize, seed: u64, lj: LennardJones) -> Result<SystemState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = SystemState::lattice(n, 0.8, 0.7, &mut rng)?;
    let l = s.box_length;
    let offset: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..l));
    for p in &mut s.positions {
        for (c, o) in p.iter_mut().zip(offset) {
            *c = (*c + o).rem_euclid(l);
        }
    }
    let mut integ = Integrator::new(NeighborForces::new(lj, 0.05));
    for _ in 0..100 {
        integ.step_nve(&mut s, 0.002)?;
    }
    Ok(s)
}

fn c6_parallel() -> Result<Verdict> {
    let lj = LennardJones(SimConfig::default().lj);
    let mut worst = 0.0f64;
    let mut pairs_equal = true;
    for seed in 0..20 {
        let s = jittered(512, 1000 + seed, lj)?;
        let t = build_neighbor_table(&s, lj.cutoff(), 0.05)?;
        let reference = lj.energy_forces(&s, &t)?;
        let mut global: Vec<(usize, usize)> =
            t.pair_geometry(&s, lj.cutoff()).iter().map(|p| (p.i.min(p.j), p.i.max(p.j))).collect();
        global.sort_unstable();
        for p in [1, 2, 4, 8] {
            let par = parallel_forces(&lj, &s, dims_for(p), 0.05)?;
            for (a, b) in par.forces.iter().zip(&reference.forces) {
                for k in 0..3 {
                    worst = worst.max((a[k] - b[k]).abs());
                }
            }
            if p > 1 {
                let grid = ttflab_core::pardomain::DomainGrid::for_potential(dims_for(p), s.box_length, &lj, 0.05)?;
                pairs_equal &= domain_pair_set(&grid, &s, lj.cutoff())? == global;
            }
        }
    }
    Ok(verdict(
        worst <= 1e-12 && pairs_equal,
        format!("20 configs x P in {{1,2,4,8}}: max force difference {worst:.1e}; ghost pair set equals global: {pairs_equal}"),
    ))
}

fn liquid_dataset(n_train: usize, n_val: usize, burn_in: usize, root: u64) -> Result<Dataset> {
    let spec = DatasetSpec { n_train, n_val, n_atoms: 64, sample_interval: 50, temperature: 0.7, seed: seeds::derive(root, "data") };
    let sim = SimConfig { burn_in_steps: burn_in, ..SimConfig::default() };
    Dataset::generate(&spec, &sim)
}

fn c8_controls() -> Result<Verdict> {
    let protocol = TtfProtocol { max_steps: 11_000, seeds: (0..5).collect(), ..TtfProtocol::default() };
    let budget = protocol.nve_budget();
    let data = liquid_dataset(500, 100, 5000, 0)?;
    let baseline = compute_force_baseline(&data.train)?;
    let lj = LennardJones(protocol.sim.lj);
    let oracle = run_ttf_grid(&lj, Some(&baseline), &protocol, &[64, 256], 1)?;
    let oracle_ok = oracle.iter().all(TtfRecord::censored);
    // untrained model straight from the training pipeline's initializer
    let spec = ModelSpec::default();
    let norm = Normalization::fit(&data.train, &spec.descriptor)?;
    let bias = data.train.iter().map(|e| e.energy / 64.0).sum::<f64>() / data.train.len() as f64;
    let mut random = Vec::new();
    for seed in 0..5 {
        let model = ForceField::initialized(spec.descriptor.clone(), spec.architecture()?, norm.clone(), bias, &mut seeds::rng(seed, "init"))?;
        let p = TtfProtocol { seeds: vec![seed], ..protocol.clone() };
        random.extend(run_ttf_grid::<ForceField>(&model, Some(&baseline), &p, &[64], 1)?);
    }
    let random_failed = random.iter().filter(|r| !r.censored()).count();
    let random_ok = random_failed == random.len();
    let fmt = |rs: &[TtfRecord]| rs.iter().map(|r| format!("{}:{}", r.steps_survived, r.failure_reason.as_str())).collect::<Vec<_>>().join(" ");
    Ok(verdict(
        oracle_ok && random_ok,
        format!(
            "(a) oracle censored in {}/{} runs at N 64/256; (b) untrained models failed in {random_failed}/{} runs within {budget} NVE steps [{}]; (c) outlier shape is checked on the failing runs of criterion 7",
            oracle.iter().filter(|r| r.censored()).count(),
            oracle.len(),
            random.len(),
            fmt(&random)
        ),
    ))
}

fn c9_determinism() -> Result<Verdict> {
    let bytes = |d: &Dataset| -> Result<Vec<u8>> {
        let mut v = Vec::new();
        d.write_jsonl(&mut v)?;
        Ok(v)
    };
    let d1 = liquid_dataset(24, 8, 200, 3)?;
    let d2 = liquid_dataset(24, 8, 200, 3)?;
    let data_same = bytes(&d1)? == bytes(&d2)?;
    let spec = ModelSpec { descriptor: DescriptorConfig::uniform(4, 0.8, 2.1)?, hidden: vec![6] };
    let config = TrainConfig { max_epochs: 3, ..TrainConfig::default() };
    let mut models_same = true;
    let mut models = Vec::new();
    for opt in [OptimizerChoice::Adam, OptimizerChoice::Sam { rho: 0.01 }] {
        let a = train(&d1.train, &d1.val, &spec, opt, &config, 3)?;
        let b = train(&d1.train, &d1.val, &spec, opt, &config, 3)?;
        let ja = Checkpoint::from_model(&a.model, Some(a.metadata.clone())).to_json()?;
        let jb = Checkpoint::from_model(&b.model, Some(b.metadata)).to_json()?;
        models_same &= ja == jb;
        models.push(a.model);
    }
    let model = &models[1];
    let obj = Objective::new(model, &d1.train, LossCoefficients::default())?;
    let loss = |w: &[f64]| Ok(obj.loss(w)?.total);
    let w = model.params.0.clone();
    let probes_same = measure_sharpness(loss, &w, 0.05, 50, 3)? == measure_sharpness(loss, &w, 0.05, 50, 3)?
        && loss_scan(loss, &w, &uniform_grid(9), 0.05, 3)? == loss_scan(loss, &w, &uniform_grid(9), 0.05, 3)?;
    let baseline = compute_force_baseline(&d1.train)?;
    let protocol = TtfProtocol { max_steps: 2000, equilibration_steps: 500, seeds: vec![0, 1], ..TtfProtocol::default() };
    let ttf_bytes = |workers: usize| -> Result<Vec<u8>> {
        let records = run_ttf_grid::<ForceField>(model, Some(&baseline), &protocol, &[64], workers)?;
        let mut v = Vec::new();
        write_ttf_csv(&mut v, "m", 0.01, &records)?;
        write_outliers_jsonl(&mut v, &records)?;
        Ok(v)
    };
    let ttf_same = ttf_bytes(1)? == ttf_bytes(2)?;
    let s = jittered(512, 9, LennardJones(SimConfig::default().lj))?;
    let lj = LennardJones(SimConfig::default().lj);
    let f1 = parallel_forces(&lj, &s, dims_for(4), 0.05)?;
    let f2 = parallel_forces(&lj, &s, dims_for(4), 0.05)?;
    let par_same = f1.forces.iter().flatten().zip(f2.forces.iter().flatten()).all(|(a, b)| a.to_bits() == b.to_bits());
    let all = data_same && models_same && probes_same && ttf_same && par_same;
    Ok(verdict(
        all,
        format!("dataset {data_same}, checkpoints (Adam, SAM) {models_same}, probes {probes_same}, TTF csv+outliers (1 vs 2 workers) {ttf_same}, parallel forces {par_same}"),
    ))
}

/// Fragile-preset replication: small training set, identical data and seeds for both optimizers.
fn c7_replication() -> Result<Verdict> {
    const TRAIN_SEEDS: u64 = 10;
    const RUN_SEEDS: u64 = 10;
    const CAP: usize = 21_000;
    let t0 = Instant::now();
    let log = |msg: String| println!("  [{:>7.0} s] {msg}", t0.elapsed().as_secs_f64());
    let data = liquid_dataset(500, 100, 5000, 0)?;
    let spec = ModelSpec::default();
    let config = TrainConfig::default();
    let protocol = TtfProtocol { max_steps: CAP, seeds: (0..RUN_SEEDS).collect(), ..TtfProtocol::default() };
    let sweep = rho_sweep(&data.train, &data.val, &spec, &config, &DEFAULT_RHO_GRID[1..], &protocol, 0, 1)?;
    for r in &sweep.rows {
        log(format!("sweep rho {} mean t {:?} censored {}/{} {:?}", r.rho, r.mean_t_failure, r.n_censored, r.n_runs, r.error));
    }
    let rho = sweep.best_rho.ok_or_else(|| ttflab_core::Error::Fit("sweep produced no usable rho".into()))?;
    log(format!("chosen rho {rho}"));
    let mut sharper = 0;
    let mut pair0 = None;
    for seed in 0..TRAIN_SEEDS {
        let adam = train(&data.train, &data.val, &spec, OptimizerChoice::Adam, &config, seed)?;
        let sam = train(&data.train, &data.val, &spec, OptimizerChoice::Sam { rho }, &config, seed)?;
        let sharp = |m: &ForceField| -> Result<f64> {
            let obj = Objective::new(m, &data.train, config.loss_coefficients)?;
            Ok(measure_sharpness(|w| Ok(obj.loss(w)?.total), &m.params.0, 0.05, 1000, seed)?.value)
        };
        let (sa, ss) = (sharp(&adam.model)?, sharp(&sam.model)?);
        sharper += usize::from(ss < sa);
        log(format!(
            "seed {seed}: Adam val {:.4e} sharpness {sa:.4e} | SAM val {:.4e} sharpness {ss:.4e}",
            adam.report.best_val_loss, sam.report.best_val_loss
        ));
        if seed == 0 {
            pair0 = Some((adam.model, sam.model));
        }
    }
    let (adam, sam) = pair0.expect("seed 0 trained");
    let baseline = compute_force_baseline(&data.train)?;
    let sizes = [64, 256, 1024];
    let ra = run_ttf_grid::<ForceField>(&adam, Some(&baseline), &protocol, &sizes, 1)?;
    let rs = run_ttf_grid::<ForceField>(&sam, Some(&baseline), &protocol, &sizes, 1)?;
    let (ma, ms) = (mean_lifetimes(&ra), mean_lifetimes(&rs));
    let b_ok = ma.iter().zip(&ms).all(|(a, s)| s.1 >= a.1);
    for (a, s) in ma.iter().zip(&ms) {
        let cens = |rs: &[TtfRecord], n| rs.iter().filter(|r| r.n_atoms == n && r.censored()).count();
        log(format!("N {}: mean t Adam {:.0} ({} censored) SAM {:.0} ({} censored)", a.0, a.1, cens(&ra, a.0), s.1, cens(&rs, s.0)));
    }
    let (fa, fs) = (fit_power_law(&ra), fit_power_law(&rs));
    let c_ok = matches!((&fa, &fs), (Ok(a), Ok(s)) if s.beta <= a.beta);
    let describe = |f: &Result<ttflab_core::fidelity::FitResult>| match f {
        Ok(f) => format!("beta {:.3}", f.beta),
        Err(e) => format!("no fit ({e})"),
    };
    let failing: Vec<&TtfRecord> = ra.iter().chain(&rs).filter(|r| !r.censored()).collect();
    let rising = failing.iter().filter(|r| r.outliers_rise() == Some(true)).count();
    let shape = if failing.is_empty() { "no failing runs to check".to_owned() } else { format!("{rising}/{} failing runs", failing.len()) };
    log(format!("outlier rise toward failure (criterion 8c): {shape}"));
    let a_ok = sharper >= 8;
    Ok(verdict(
        a_ok && b_ok && c_ok,
        format!(
            "rho* {rho}; (a) SAM flatter in {sharper}/{TRAIN_SEEDS} seeds; (b) mean t SAM >= Adam at every N: {b_ok}; (c) Adam {}, SAM {}; 8c: {shape}",
            describe(&fa),
            describe(&fs)
        ),
    ))
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for k in 1..=9 {
            println!("criterion_{k}: test");
        }
        return;
    }
    let only_slow = args.iter().any(|a| a == "--ignored");
    let slow = only_slow || args.iter().any(|a| a == "--include-ignored");
    let minute = Some(Duration::from_secs(60));
    let mut results = Vec::new();
    if !only_slow {
        results.push(criterion("1", "force and loss-gradient exactness", minute, c1_exactness));
        results.push(criterion("2", "NVE energy conservation", minute, c2_nve));
        results.push(criterion("3", "SAM correctness", minute, c3_sam));
        results.push(criterion("4", "sharpness estimator", minute, c4_sharpness));
        results.push(criterion("5", "power-law fit", minute, c5_fit));
        results.push(criterion("6", "parallel equivalence", Some(Duration::from_secs(120)), c6_parallel));
    }
    if slow {
        results.push(criterion("7", "directional replication (fragile preset)", None, c7_replication));
    } else {
        println!("criterion 7 IGNORED: slow (hours); run with `-- --include-ignored`");
    }
    if !only_slow {
        results.push(criterion("8", "harness controls", None, c8_controls));
        results.push(criterion("9", "determinism", None, c9_determinism));
    }
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
