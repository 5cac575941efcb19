use nalgebra::DMatrix;

use super::{CostModel, DynamicsModel};
use crate::analytic::LtiSystem;
use crate::distribution::Control;

/// Linear dynamics `x' = A x + B u + w` with `w = chol(W) z`.
#[derive(Debug, Clone)]
pub struct LtiModel {
    pub system: LtiSystem,
    /// Disable the process noise (the planning model of a certainty-equivalent
    /// controller, or a deterministic test).
    pub noiseless: bool,
}

impl LtiModel {
    pub fn new(system: LtiSystem) -> Self {
        Self { system, noiseless: false }
    }
}

impl DynamicsModel for LtiModel {
    fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    fn noise_dim(&self) -> usize {
        if self.noiseless {
            0
        } else {
            self.system.state_dim()
        }
    }

    fn step(&self, state: &[f64], control: Control<'_>, noise: &[f64], next: &mut [f64]) {
        let (a, b) = (&self.system.a, &self.system.b);
        let u = match control {
            Control::Continuous(u) => u,
            Control::Discrete(_) => panic!("linear system driven by a discrete control"),
        };
        let l = self.system.noise_factor();
        for i in 0..a.nrows() {
            let mut acc = 0.0;
            for j in 0..a.ncols() {
                acc += a[(i, j)] * state[j];
            }
            for j in 0..b.ncols() {
                acc += b[(i, j)] * u[j];
            }
            if !self.noiseless {
                for j in 0..=i {
                    acc += l[(i, j)] * noise[j];
                }
            }
            next[i] = acc;
        }
    }
}

/// `c(x, u) = ½xᵀQx + ½uᵀRu`, `c_end(x) = ½xᵀQ_end x`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticStageCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_end: DMatrix<f64>,
}

fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            total += x[i] * m[(i, j)] * x[j];
        }
    }
    0.5 * total
}

impl CostModel for QuadraticStageCost {
    fn stage(&self, state: &[f64], control: Control<'_>) -> f64 {
        let u = match control {
            Control::Continuous(u) => u,
            Control::Discrete(_) => panic!("quadratic cost on a discrete control"),
        };
        quad_form(&self.q, state) + quad_form(&self.r, u)
    }

    fn terminal(&self, state: &[f64]) -> f64 {
        quad_form(&self.q_end, state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::ControlSequence;
    use crate::simulation::rollout;

    #[test]
    fn scalar_integrator_hand_unrolled() {
        let sys = LtiSystem::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let model = LtiModel { system: sys, noiseless: true };
        let cost = QuadraticStageCost {
            q: DMatrix::from_element(1, 1, 1.0),
            r: DMatrix::from_element(1, 1, 0.0),
            q_end: DMatrix::from_element(1, 1, 1.0),
        };
        let seq = ControlSequence::Continuous { dim: 1, values: vec![0.0, 0.0] };
        let (_, c) = rollout(&model, &cost, &[1.0], &seq, &[]);
        assert!((c - 1.5).abs() < 1e-15);
    }
}
