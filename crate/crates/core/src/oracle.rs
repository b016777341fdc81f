//! Ground-truth Lennard-Jones potential and training-set generation from its trajectories.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simcore::{
    vec3, ForceEval, Integrator, NeighborForces, NeighborTable, PairGeometry, Potential, SystemState,
    Thermostat, Vec3,
};

/// How the pair potential is brought to zero at the cutoff.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LjForm {
    /// Energy shifted to vanish at the cutoff; the force jumps there.
    #[default]
    TruncatedShifted,
    /// Energy and force both vanish at the cutoff (adds a linear term).
    ForceShifted,
}

/// Lennard-Jones parameters with a cutoff and the matching energy shift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LjParams {
    pub epsilon: f64,
    pub sigma: f64,
    pub cutoff: f64,
    pub energy_shift: f64,
    #[serde(default)]
    pub form: LjForm,
}

impl LjParams {
    pub fn new(epsilon: f64, sigma: f64, cutoff: f64) -> Result<Self> {
        if !(epsilon > 0.0 && sigma > 0.0) {
            return Err(Error::Invalid("epsilon and sigma must be positive".into()));
        }
        if !(cutoff > sigma) {
            return Err(Error::Invalid(format!("cutoff {cutoff} must exceed sigma {sigma}")));
        }
        let mut p = Self { epsilon, sigma, cutoff, energy_shift: 0.0, form: LjForm::TruncatedShifted };
        p.energy_shift = -p.unshifted(cutoff);
        Ok(p)
    }

    pub fn force_shifted(epsilon: f64, sigma: f64, cutoff: f64) -> Result<Self> {
        Ok(Self { form: LjForm::ForceShifted, ..Self::new(epsilon, sigma, cutoff)? })
    }

    fn unshifted_derivative(&self, r: f64) -> f64 {
        let sr6 = (self.sigma / r).powi(6);
        4.0 * self.epsilon * (-12.0 * sr6 * sr6 + 6.0 * sr6) / r
    }

    /// `4 eps [(s/r)^12 - (s/r)^6]` without the shift.
    pub fn unshifted(&self, r: f64) -> f64 {
        let sr6 = (self.sigma / r).powi(6);
        4.0 * self.epsilon * (sr6 * sr6 - sr6)
    }

    /// Shifted pair energy and `dV/dr`.
    #[inline]
    pub fn pair(&self, r: f64) -> (f64, f64) {
        let inv = 1.0 / r;
        let sr6 = (self.sigma * inv).powi(6);
        let v = 4.0 * self.epsilon * (sr6 * sr6 - sr6) + self.energy_shift;
        let dv = 4.0 * self.epsilon * (-12.0 * sr6 * sr6 + 6.0 * sr6) * inv;
        match self.form {
            LjForm::TruncatedShifted => (v, dv),
            LjForm::ForceShifted => {
                let dc = self.unshifted_derivative(self.cutoff);
                (v - (r - self.cutoff) * dc, dv - dc)
            }
        }
    }
}

impl Default for LjParams {
    fn default() -> Self {
        Self::new(1.0, 1.0, 2.5).expect("valid defaults")
    }
}

/// Closest pair separation tolerated before the evaluation is declared an overlap.
pub const MIN_SEPARATION: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LennardJones(pub LjParams);

impl Potential for LennardJones {
    fn cutoff(&self) -> f64 {
        self.0.cutoff
    }

    fn evaluate(&self, n_atoms: usize, n_owned: usize, pairs: &[PairGeometry]) -> Result<ForceEval> {
        let mut forces = vec![[0.0; 3]; n_atoms];
        let mut energy = 0.0;
        for p in pairs {
            if p.r > self.0.cutoff {
                continue;
            }
            if p.r < MIN_SEPARATION {
                return Err(Error::Numerical(format!("atoms {} and {} overlap (r = {:e})", p.i, p.j, p.r)));
            }
            let (v, dv) = self.0.pair(p.r);
            match (p.i < n_owned, p.j < n_owned) {
                (true, true) => energy += v,
                (true, false) | (false, true) => energy += 0.5 * v,
                (false, false) => {}
            }
            let f = vec3::scale(p.delta, dv / p.r);
            forces[p.i] = vec3::add(forces[p.i], f);
            forces[p.j] = vec3::sub(forces[p.j], f);
        }
        Ok(ForceEval { energy, forces })
    }
}

/// Energy and forces of the oracle on a periodic state.
pub fn lj_energy_forces(state: &SystemState, params: &LjParams, table: &NeighborTable) -> Result<ForceEval> {
    LennardJones(*params).energy_forces(state, table)
}

/// One labelled configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainExample {
    pub positions: Vec<Vec3>,
    pub box_length: f64,
    pub energy: f64,
    pub forces: Vec<Vec3>,
}

impl TrainExample {
    pub fn n_atoms(&self) -> usize {
        self.positions.len()
    }

    pub fn net_force(&self) -> Vec3 {
        self.forces.iter().fold([0.0; 3], |a, f| vec3::add(a, *f))
    }

    pub fn to_state(&self) -> Result<SystemState> {
        SystemState::at_rest(self.positions.clone(), self.box_length)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_atoms: usize,
    pub sample_interval: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 {
            return Err(Error::Invalid("n_train and n_val must be positive".into()));
        }
        if self.sample_interval == 0 {
            return Err(Error::Invalid("sample_interval must be at least 1".into()));
        }
        if self.n_atoms < 2 {
            return Err(Error::Invalid("need at least two atoms".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Invalid("temperature must be positive".into()));
        }
        Ok(())
    }
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self { n_train: 2000, n_val: 200, n_atoms: 64, sample_interval: 50, temperature: 0.7, seed: 0 }
    }
}

/// Molecular-dynamics settings shared by data generation and the stability runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub density: f64,
    pub dt: f64,
    pub skin: f64,
    pub lj: LjParams,
    /// NVT steps discarded before sampling starts.
    pub burn_in_steps: usize,
    /// Thermostat relaxation time in units of `dt`; `Q = 3 N T tau^2`.
    pub thermostat_tau_steps: f64,
    /// Explicit coupling mass, overriding `thermostat_tau_steps`.
    pub thermostat_q: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            density: 0.8,
            dt: 0.002,
            skin: 0.05,
            lj: LjParams::force_shifted(1.0, 1.0, 2.1).expect("valid default oracle"),
            burn_in_steps: 5000,
            thermostat_tau_steps: 100.0,
            thermostat_q: None,
        }
    }
}

impl SimConfig {
    pub fn thermostat(&self, n_atoms: usize, temperature: f64) -> Result<Thermostat> {
        match self.thermostat_q {
            Some(q) => Thermostat::new(temperature, q),
            None => Thermostat::with_relaxation_time(n_atoms, temperature, self.thermostat_tau_steps * self.dt),
        }
    }
}

/// Lattice start followed by `steps` of oracle NVT, returning a liquid configuration.
pub fn equilibrated_liquid(n_atoms: usize, temperature: f64, sim: &SimConfig, steps: usize, seed: u64) -> Result<SystemState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = SystemState::lattice(n_atoms, sim.density, temperature, &mut rng)?;
    let mut thermostat = sim.thermostat(n_atoms, temperature)?;
    let mut integ = Integrator::new(NeighborForces::new(LennardJones(sim.lj), sim.skin));
    for _ in 0..steps {
        integ.step_nvt(&mut state, sim.dt, &mut thermostat)?;
    }
    state.step_count = 0;
    Ok(state)
}

/// Samples oracle NVT trajectories into training and validation sets.
///
/// The last `n_val` samples form the validation set.
pub fn generate_dataset(spec: &DatasetSpec, sim: &SimConfig) -> Result<(Vec<TrainExample>, Vec<TrainExample>)> {
    spec.validate()?;
    let mut state = equilibrated_liquid(spec.n_atoms, spec.temperature, sim, 0, spec.seed)?;
    let mut thermostat = sim.thermostat(spec.n_atoms, spec.temperature)?;
    let mut integ = Integrator::new(NeighborForces::new(LennardJones(sim.lj), sim.skin));
    for _ in 0..sim.burn_in_steps {
        integ.step_nvt(&mut state, sim.dt, &mut thermostat)?;
    }
    let total = spec.n_train + spec.n_val;
    let mut examples = Vec::with_capacity(total);
    while examples.len() < total {
        for _ in 0..spec.sample_interval {
            integ.step_nvt(&mut state, sim.dt, &mut thermostat)?;
        }
        let eval = integ.current(&state)?;
        examples.push(TrainExample {
            positions: state.positions.clone(),
            box_length: state.box_length,
            energy: eval.energy,
            forces: eval.forces.clone(),
        });
    }
    let val = examples.split_off(spec.n_train);
    Ok((examples, val))
}

pub const DATASET_FORMAT: &str = "ttflab-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub spec: DatasetSpec,
    pub sim: SimConfig,
}

/// A generated dataset with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub train: Vec<TrainExample>,
    pub val: Vec<TrainExample>,
}

impl Dataset {
    pub fn generate(spec: &DatasetSpec, sim: &SimConfig) -> Result<Self> {
        let (train, val) = generate_dataset(spec, sim)?;
        let header = DatasetHeader {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            spec: spec.clone(),
            sim: sim.clone(),
        };
        Ok(Self { header, train, val })
    }

    /// Header line, then one example per line: training examples first, validation last.
    pub fn write_jsonl<W: Write>(&self, out: &mut W) -> Result<()> {
        serde_json::to_writer(&mut *out, &self.header)?;
        out.write_all(b"\n")?;
        for ex in self.train.iter().chain(&self.val) {
            serde_json::to_writer(&mut *out, ex)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let first = lines.next().ok_or_else(|| Error::Format("empty dataset file".into()))??;
        let header: DatasetHeader = serde_json::from_str(&first)?;
        if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset format {} v{}",
                header.format, header.version
            )));
        }
        let mut all = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: TrainExample = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("line {}: {e}", k + 2)))?;
            all.push(ex);
        }
        let expected = header.spec.n_train + header.spec.n_val;
        if all.len() != expected {
            return Err(Error::Format(format!("expected {expected} examples, found {}", all.len())));
        }
        let val = all.split_off(header.spec.n_train);
        Ok(Self { header, train: all, val })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }
}
