//! Explicit Euler integration of the particle flow
//! `dx_i/dt = s (A(x_i) + u(x_i))`, `s = +1` (ascent) or `-1` (descent), where
//! `A` is the unnormalized or softmax-normalized attention field and `u` the
//! perceptron drift. Each step is retracted onto the sphere by normalization.
//!
//! A run stops once the cluster count has been constant over `window`
//! consecutive snapshots and the largest particle speed is at most `speed_tol`,
//! or when the step budget is exhausted.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::{attention_fields_flat, check_beta, interaction_energy_flat, Normalization};
use crate::clusters::count_clusters;
use crate::error::{Error, Result};
use crate::perceptron::PerceptronParams;
use crate::sphere::{norm, project_in_place, retract_in_place, Ensemble, TangentVector, UnitVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ascent,
    Descent,
}

impl Mode {
    fn sign(self) -> f64 {
        match self {
            Mode::Ascent => 1.0,
            Mode::Descent => -1.0,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ascent" => Ok(Self::Ascent),
            "descent" => Ok(Self::Descent),
            other => Err(Error::InvalidInput(format!("unknown mode {other:?}"))),
        }
    }
}

fn default_dt() -> f64 {
    0.1
}
fn default_max_steps() -> u64 {
    200_000
}
fn default_snapshot_every() -> u64 {
    10
}
fn default_window() -> usize {
    5
}
fn default_speed_tol() -> f64 {
    1e-4
}
fn default_store_every() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub beta: f64,
    pub mode: Mode,
    pub normalization: Normalization,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_speed_tol")]
    pub speed_tol: f64,
    #[serde(default)]
    pub seed: u64,
    /// Keep particle positions for every k-th snapshot (the final one is always kept).
    #[serde(default = "default_store_every")]
    pub store_positions_every: usize,
}

impl DynamicsConfig {
    pub fn new(beta: f64, mode: Mode, normalization: Normalization) -> Self {
        Self {
            beta,
            mode,
            normalization,
            dt: default_dt(),
            max_steps: default_max_steps(),
            snapshot_every: default_snapshot_every(),
            window: default_window(),
            speed_tol: default_speed_tol(),
            seed: 0,
            store_positions_every: default_store_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        if self.window == 0 || self.snapshot_every == 0 || self.max_steps == 0 {
            return Err(Error::InvalidInput(
                "window, snapshot_every and max_steps must be at least 1".into(),
            ));
        }
        if !(self.speed_tol > 0.0) {
            return Err(Error::InvalidInput("speed_tol must be positive".into()));
        }
        if self.store_positions_every == 0 {
            return Err(Error::InvalidInput("store_positions_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: u64,
    pub energy: f64,
    pub max_speed: f64,
    pub n_clusters: usize,
    pub ensemble: Option<Ensemble>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    StepBudget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub final_ensemble: Ensemble,
    pub termination: Termination,
    pub steps: u64,
    pub final_max_speed: f64,
    pub final_energy: f64,
}

/// `N` i.i.d. points: uniform angles for d = 2, normalized Gaussians otherwise. Equal masses.
pub fn uniform_init(d: usize, n: usize, seed: u64) -> Result<Ensemble> {
    if d < 2 || n == 0 {
        return Err(Error::InvalidInput(format!("need d >= 2 and N >= 1, got d={d}, N={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = (0..n)
        .map(|_| {
            if d == 2 {
                UnitVector::from_angle(rng.gen_range(0.0..TAU))
            } else {
                loop {
                    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                    if let Ok(u) = UnitVector::normalize(v) {
                        break u;
                    }
                }
            }
        })
        .collect();
    Ensemble::uniform(positions)
}

/// Flat working state of a run.
struct State<'a> {
    config: &'a DynamicsConfig,
    params: Option<&'a PerceptronParams>,
    d: usize,
    coords: Vec<f64>,
    masses: Vec<f64>,
    vel: Vec<f64>,
    weights: Vec<f64>,
}

impl<'a> State<'a> {
    fn new(config: &'a DynamicsConfig, params: Option<&'a PerceptronParams>, ens: &Ensemble) -> Result<Self> {
        config.validate()?;
        let d = ens.dim();
        if let Some(p) = params {
            if p.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: p.dim() });
            }
        }
        Ok(Self {
            config,
            params,
            d,
            coords: ens.flat_coords(),
            masses: ens.masses().to_vec(),
            vel: vec![0.0; ens.len() * d],
            weights: vec![0.0; ens.len()],
        })
    }

    /// Fills `vel` and returns the largest speed.
    fn compute_velocity(&mut self) -> Result<f64> {
        let d = self.d;
        attention_fields_flat(&self.coords, &self.masses, d, self.config.beta, &mut self.vel, &mut self.weights)?;
        let sign = self.config.mode.sign();
        let mut max_speed = 0.0f64;
        for i in 0..self.masses.len() {
            let x = &self.coords[i * d..(i + 1) * d];
            let v = &mut self.vel[i * d..(i + 1) * d];
            let w = self.weights[i];
            if self.config.normalization == Normalization::Softmax {
                v.iter_mut().for_each(|c| *c /= w);
            }
            if let Some(p) = self.params {
                let mut u = vec![0.0; d];
                p.add_raw_drift(x, 1.0, &mut u);
                project_in_place(x, &mut u);
                v.iter_mut().zip(&u).for_each(|(a, b)| *a += b);
            }
            if self.config.normalization == Normalization::Conformal {
                v.iter_mut().for_each(|c| *c /= w);
            }
            v.iter_mut().for_each(|c| *c *= sign);
            max_speed = max_speed.max(norm(v));
        }
        Ok(max_speed)
    }

    fn advance(&mut self) -> Result<()> {
        let d = self.d;
        for i in 0..self.masses.len() {
            retract_in_place(&mut self.coords[i * d..(i + 1) * d], &self.vel[i * d..(i + 1) * d], self.config.dt)?;
        }
        Ok(())
    }

    fn energy(&self) -> Result<f64> {
        let d = self.d;
        let mut e = interaction_energy_flat(&self.coords, &self.masses, d, self.config.beta)?;
        if let Some(p) = self.params {
            let pot: f64 = (0..self.masses.len())
                .map(|i| self.masses[i] * p.potential_raw(&self.coords[i * d..(i + 1) * d]))
                .sum();
            e += 0.5 * pot;
        }
        Ok(e)
    }

    fn ensemble(&self) -> Ensemble {
        let positions = self
            .coords
            .chunks_exact(self.d)
            .map(|c| UnitVector::from_raw(c.to_vec()))
            .collect();
        Ensemble::from_parts_unchecked(positions, self.masses.clone())
    }
}

/// Per-atom velocity `s (A(x_i) + u(x_i))`.
pub fn velocity(
    config: &DynamicsConfig,
    params: Option<&PerceptronParams>,
    ens: &Ensemble,
) -> Result<Vec<TangentVector>> {
    let mut state = State::new(config, params, ens)?;
    state.compute_velocity()?;
    Ok(ens
        .positions()
        .iter()
        .zip(state.vel.chunks_exact(state.d))
        .map(|(x, v)| TangentVector { base: x.clone(), vec: v.to_vec() })
        .collect())
}

/// One Euler step with retraction; masses are carried over unchanged.
pub fn step(config: &DynamicsConfig, params: Option<&PerceptronParams>, ens: &Ensemble) -> Result<Ensemble> {
    let mut state = State::new(config, params, ens)?;
    state.compute_velocity()?;
    state.advance()?;
    Ok(state.ensemble())
}

/// Integrates until convergence or the step budget.
pub fn run(config: &DynamicsConfig, params: Option<&PerceptronParams>, init: &Ensemble) -> Result<RunOutcome> {
    run_with_observer(config, params, init, |_| {})
}

/// As [`run`], calling `observer` after each recorded snapshot.
pub fn run_with_observer<F: FnMut(&Snapshot)>(
    config: &DynamicsConfig,
    params: Option<&PerceptronParams>,
    init: &Ensemble,
    mut observer: F,
) -> Result<RunOutcome> {
    let mut state = State::new(config, params, init)?;
    let mut trajectory = Trajectory::default();
    let mut snapshot_index = 0usize;
    let mut step_idx = 0u64;
    let termination;
    let mut max_speed;
    loop {
        max_speed = state.compute_velocity()?;
        if step_idx % config.snapshot_every == 0 {
            let ens = state.ensemble();
            let n_clusters = count_clusters(&ens, config.beta);
            let energy = state.energy()?;
            let keep = snapshot_index % config.store_positions_every == 0;
            trajectory.snapshots.push(Snapshot {
                step: step_idx,
                energy,
                max_speed,
                n_clusters,
                ensemble: keep.then_some(ens),
            });
            snapshot_index += 1;
            observer(trajectory.snapshots.last().expect("just pushed"));
            if converged(&trajectory, config) {
                termination = Termination::Converged;
                break;
            }
        }
        if step_idx >= config.max_steps {
            termination = Termination::StepBudget;
            break;
        }
        state.advance()?;
        step_idx += 1;
    }
    let final_ensemble = state.ensemble();
    let final_energy = state.energy()?;
    match trajectory.snapshots.last_mut() {
        Some(last) if last.step == step_idx => {
            if last.ensemble.is_none() {
                last.ensemble = Some(final_ensemble.clone());
            }
        }
        _ => trajectory.snapshots.push(Snapshot {
            step: step_idx,
            energy: final_energy,
            max_speed,
            n_clusters: count_clusters(&final_ensemble, config.beta),
            ensemble: Some(final_ensemble.clone()),
        }),
    }
    Ok(RunOutcome {
        trajectory,
        final_ensemble,
        termination,
        steps: step_idx,
        final_max_speed: max_speed,
        final_energy,
    })
}

fn converged(traj: &Trajectory, config: &DynamicsConfig) -> bool {
    let snaps = &traj.snapshots;
    if snaps.len() < config.window {
        return false;
    }
    let recent = &snaps[snaps.len() - config.window..];
    let count = recent[0].n_clusters;
    recent.iter().all(|s| s.n_clusters == count) && recent[recent.len() - 1].max_speed <= config.speed_tol
}
