use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{CostModel, DynamicsModel};
use crate::distribution::Control;
use crate::error::{Error, Result};

const GRAVITY: f64 = 9.81;

/// Cart with a massless pole carrying a point mass at its tip.
///
/// State is `(p, φ, v, φ̇)`: cart position, pole angle (`0` hanging down,
/// `π` upright), and their rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartpoleConfig {
    pub cart_mass: f64,
    pub tip_mass: f64,
    pub pole_length_true: f64,
    pub pole_length_model: f64,
    pub dt: f64,
    pub control_noise_std: f64,
    pub control_clamp: [f64; 2],
    pub angle_threshold: f64,
    pub discrete_forces: Vec<f64>,
    pub initial_state: [f64; 4],
}

impl Default for CartpoleConfig {
    fn default() -> Self {
        Self {
            cart_mass: 0.711,
            tip_mass: 0.209,
            pole_length_true: 0.326,
            pole_length_model: 0.346,
            dt: 0.02,
            control_noise_std: 5.0,
            control_clamp: [-25.0, 25.0],
            angle_threshold: 0.21,
            discrete_forces: vec![-10.0, 0.0, 10.0],
            initial_state: [0.0; 4],
        }
    }
}

impl CartpoleConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cart_mass", self.cart_mass),
            ("tip_mass", self.tip_mass),
            ("pole_length_true", self.pole_length_true),
            ("pole_length_model", self.pole_length_model),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("cartpole {name} must be positive, got {v}")));
            }
        }
        if !(self.control_noise_std >= 0.0) {
            return Err(Error::Config("cartpole control_noise_std must be non-negative".into()));
        }
        if !(self.control_clamp[0] < self.control_clamp[1]) {
            return Err(Error::Config("cartpole control_clamp needs min < max".into()));
        }
        if self.discrete_forces.is_empty() {
            return Err(Error::Config("cartpole discrete_forces is empty".into()));
        }
        Ok(())
    }

    /// The biased planning model.
    pub fn planning_model(&self) -> CartpoleModel {
        CartpoleModel {
            config: self.clone(),
            pole_length: self.pole_length_model,
        }
    }

    /// The true environment.
    pub fn true_model(&self) -> CartpoleModel {
        CartpoleModel {
            config: self.clone(),
            pole_length: self.pole_length_true,
        }
    }

    pub fn cost(&self) -> CartpoleCost {
        CartpoleCost {
            angle_threshold: self.angle_threshold,
        }
    }
}

/// One forward-Euler step. The commanded force is clamped to the actuator
/// range, then `control_noise_std · noise` is added.
pub fn cartpole_step(config: &CartpoleConfig, pole_length: f64, state: &[f64], force: f64, noise: f64, next: &mut [f64]) {
    let [lo, hi] = config.control_clamp;
    let f = force.clamp(lo, hi) + config.control_noise_std * noise;
    let (mc, mp, l) = (config.cart_mass, config.tip_mass, pole_length);
    let (phi, v, omega) = (state[1], state[2], state[3]);
    let (s, c) = phi.sin_cos();
    let denom = mc + mp * s * s;
    let acc = (f + mp * s * (l * omega * omega + GRAVITY * c)) / denom;
    let alpha = (-f * c - mp * l * omega * omega * c * s - (mc + mp) * GRAVITY * s) / (l * denom);
    let dt = config.dt;
    next[0] = state[0] + dt * v;
    next[1] = phi + dt * omega;
    next[2] = v + dt * acc;
    next[3] = omega + dt * alpha;
}

/// Total mechanical energy, zero potential at the pivot height.
pub fn cartpole_energy(config: &CartpoleConfig, pole_length: f64, state: &[f64]) -> f64 {
    let (mc, mp, l) = (config.cart_mass, config.tip_mass, pole_length);
    let (phi, v, omega) = (state[1], state[2], state[3]);
    0.5 * (mc + mp) * v * v + mp * v * l * omega * phi.cos() + 0.5 * mp * l * l * omega * omega
        - mp * GRAVITY * l * phi.cos()
}

/// `10p² + 500(φ-π)² + v² + 15φ̇² + 1000·𝟙{|φ-π| ≥ Δ}`; the control is not
/// penalized.
pub fn cartpole_cost(state: &[f64], angle_threshold: f64) -> f64 {
    let (p, phi, v, omega) = (state[0], state[1], state[2], state[3]);
    let err = phi - PI;
    let penalty = if err.abs() >= angle_threshold { 1000.0 } else { 0.0 };
    10.0 * p * p + 500.0 * err * err + v * v + 15.0 * omega * omega + penalty
}

/// `c_end(x) = c(x, 0)`.
pub fn cartpole_terminal(state: &[f64], angle_threshold: f64) -> f64 {
    cartpole_cost(state, angle_threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartpoleModel {
    pub config: CartpoleConfig,
    pub pole_length: f64,
}

impl CartpoleModel {
    pub fn force(&self, control: Control<'_>) -> f64 {
        match control {
            Control::Continuous(u) => u[0],
            Control::Discrete(k) => self.config.discrete_forces[k],
        }
    }
}

impl DynamicsModel for CartpoleModel {
    fn state_dim(&self) -> usize {
        4
    }

    fn noise_dim(&self) -> usize {
        if self.config.control_noise_std > 0.0 {
            1
        } else {
            0
        }
    }

    fn step(&self, state: &[f64], control: Control<'_>, noise: &[f64], next: &mut [f64]) {
        let w = noise.first().copied().unwrap_or(0.0);
        cartpole_step(&self.config, self.pole_length, state, self.force(control), w, next);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartpoleCost {
    pub angle_threshold: f64,
}

impl CostModel for CartpoleCost {
    fn stage(&self, state: &[f64], _control: Control<'_>) -> f64 {
        cartpole_cost(state, self.angle_threshold)
    }

    fn terminal(&self, state: &[f64]) -> f64 {
        cartpole_terminal(state, self.angle_threshold)
    }
}
