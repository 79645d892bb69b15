//! Explicit RK4 time stepping of `M x' = -A x + f`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::mass::LumpedMass;
use super::mesh::BoundaryTag;
use super::operator::{BlockOperator, Discretization};
use super::{FemError, State};

/// Uniform sea-floor velocity `db/dt = amplitude * sin(omega t)`, entering the pressure
/// equation as the load `<db/dt, v>` on bottom faces.
#[derive(Debug, Clone, PartialEq)]
pub struct BottomForcing {
    pub load: Vec<f64>,
    pub amplitude: f64,
    pub angular_frequency: f64,
}

/// Right-hand side `[f; g]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Forcing {
    pub constant: Option<State>,
    pub bottom: Option<BottomForcing>,
}

impl Forcing {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn constant(rhs: State) -> Self {
        Self { constant: Some(rhs), bottom: None }
    }

    pub fn bottom_velocity(disc: &Discretization, amplitude: f64, frequency: f64) -> Self {
        let load = disc.boundary_load(BoundaryTag::Bottom, |_| 1.0);
        Self { constant: None, bottom: Some(BottomForcing { load, amplitude, angular_frequency: 2.0 * PI * frequency }) }
    }

    /// Forcing at time `t`, or `None` when identically zero.
    pub fn eval(&self, t: f64) -> Option<State> {
        if self.constant.is_none() && self.bottom.is_none() {
            return None;
        }
        let mut out = self.constant.clone().unwrap_or_else(|| {
            let np = self.bottom.as_ref().map_or(0, |b| b.load.len());
            State::zeros(0, np)
        });
        if let Some(b) = &self.bottom {
            let s = b.amplitude * (b.angular_frequency * t).sin();
            if out.p.is_empty() {
                out.p = vec![0.0; b.load.len()];
            }
            for (o, l) in out.p.iter_mut().zip(&b.load) {
                *o += s * l;
            }
        }
        Some(out)
    }
}

/// `M^-1 (f(t) - A x)`.
fn stage(op: &BlockOperator, mass: &LumpedMass, forcing: &Forcing, x: &State, t: f64) -> Result<State, FemError> {
    let mut r = op.apply_block(x)?.scaled(-1.0);
    if let Some(f) = forcing.eval(t) {
        if f.u.is_empty() {
            for (a, b) in r.p.iter_mut().zip(&f.p) {
                *a += b;
            }
        } else {
            r.axpy(1.0, &f);
        }
    }
    mass.apply_mass_inverse(&r)
}

/// One classical RK4 step from time `t`; `step` is reported if the result is not finite.
pub fn rk4_step(
    op: &BlockOperator,
    mass: &LumpedMass,
    forcing: &Forcing,
    state: &State,
    t: f64,
    dt: f64,
    step: usize,
) -> Result<State, FemError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(FemError::InvalidTimeStep(dt));
    }
    let k1 = stage(op, mass, forcing, state, t)?;
    let mut x = state.clone();
    x.axpy(0.5 * dt, &k1);
    let k2 = stage(op, mass, forcing, &x, t + 0.5 * dt)?;
    let mut x = state.clone();
    x.axpy(0.5 * dt, &k2);
    let k3 = stage(op, mass, forcing, &x, t + 0.5 * dt)?;
    let mut x = state.clone();
    x.axpy(dt, &k3);
    let k4 = stage(op, mass, forcing, &x, t + dt)?;
    let mut next = state.clone();
    next.axpy(dt / 6.0, &k1);
    next.axpy(dt / 3.0, &k2);
    next.axpy(dt / 3.0, &k3);
    next.axpy(dt / 6.0, &k4);
    if !next.is_finite() {
        return Err(FemError::Divergence { step });
    }
    Ok(next)
}

/// `1/2 (u^T M_u u + p^T M_p p)` with the lumped mass.
pub fn acoustic_energy(state: &State, mass: &LumpedMass) -> f64 {
    let mx = mass.apply(state);
    0.5 * mx.dot(state)
}

/// Energy history and final state of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dt: f64,
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub final_state: State,
    pub apply_block_calls: u64,
}

impl RunSummary {
    /// `max |E(t) - E(0)| / E(0)`; zero when the initial energy is zero.
    pub fn max_relative_drift(&self) -> f64 {
        let e0 = self.energy[0];
        if e0 == 0.0 {
            return 0.0;
        }
        self.energy.iter().map(|e| (e - e0).abs() / e0).fold(0.0, f64::max)
    }
}

pub fn run(
    op: &BlockOperator,
    mass: &LumpedMass,
    forcing: &Forcing,
    initial: State,
    dt: f64,
    steps: usize,
) -> Result<RunSummary, FemError> {
    let calls0 = op.counters().snapshot().apply_block_calls;
    let mut state = initial;
    let mut times = vec![0.0];
    let mut energy = vec![acoustic_energy(&state, mass)];
    for step in 1..=steps {
        let t = (step - 1) as f64 * dt;
        state = rk4_step(op, mass, forcing, &state, t, dt, step)?;
        times.push(step as f64 * dt);
        energy.push(acoustic_energy(&state, mass));
    }
    let apply_block_calls = op.counters().snapshot().apply_block_calls - calls0;
    Ok(RunSummary { dt, times, energy, final_state: state, apply_block_calls })
}

/// Rigid-wall standing mode `p = cos(pi x) cos(pi c t)`, `u_x = sin(pi x) sin(pi c t) / (rho c)`,
/// interpolated at time `t`. Uses the coefficients of element 0.
pub fn standing_wave(disc: &Discretization, t: f64) -> State {
    let c = disc.coefficients.sound_speed(0);
    let rho = disc.coefficients.rho[0];
    let wt = PI * c * t;
    disc.interpolate(|x| [(PI * x[0]).sin() * wt.sin() / (rho * c), 0.0, 0.0], |x| (PI * x[0]).cos() * wt.cos())
}

/// Period `2 / c` of the standing mode on a unit-length domain.
pub fn standing_wave_period(disc: &Discretization) -> f64 {
    2.0 / disc.coefficients.sound_speed(0)
}

/// Surface height `eta = p / (rho g)` at the surface pressure DOFs.
pub fn surface_height(disc: &Discretization, state: &State) -> Vec<f64> {
    let rho = disc.coefficients.rho[0];
    disc.boundary_dofs(BoundaryTag::Surface).into_iter().map(|g| state.p[g] / (rho * disc.coefficients.gravity)).collect()
}
