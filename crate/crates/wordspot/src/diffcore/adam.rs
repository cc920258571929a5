//! Adam optimizer with bias correction.

use super::{Array, DiffError};

/// Per-parameter first/second moment estimates plus the hyperparameters.
///
/// The update is the standard bias-corrected form:
/// `m <- b1*m + (1-b1)*g`, `v <- b2*v + (1-b2)*g^2`,
/// `theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)`.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    step_count: u64,
    first_moment: Vec<Array>,
    second_moment: Vec<Array>,
}

impl AdamState {
    /// Fresh state with the recommended moment coefficients (0.9, 0.999)
    /// and variance floor 1e-8; moments start at zero.
    pub fn new(learning_rate: f64, shapes: &[&[usize]]) -> AdamState {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
            step_count: 0,
            first_moment: shapes.iter().map(|s| Array::zeros(s)).collect(),
            second_moment: shapes.iter().map(|s| Array::zeros(s)).collect(),
        }
    }

    /// Rebuild a state from checkpointed parts.
    pub fn restore(
        learning_rate: f64,
        step_count: u64,
        first_moment: Vec<Array>,
        second_moment: Vec<Array>,
    ) -> AdamState {
        assert_eq!(first_moment.len(), second_moment.len());
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
            step_count,
            first_moment,
            second_moment,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn moments(&self) -> (&[Array], &[Array]) {
        (&self.first_moment, &self.second_moment)
    }

    /// One optimizer step over all parameter blocks.
    pub fn step(&mut self, params: &mut [&mut Array], grads: &[Array]) -> Result<(), DiffError> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(DiffError::shape(
                "adam_step",
                format!(
                    "{} params, {} grads, {} moment blocks",
                    params.len(),
                    grads.len(),
                    self.first_moment.len()
                ),
            ));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (((param, grad), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            if !param.same_shape(grad) || !param.same_shape(m) {
                return Err(DiffError::shape(
                    "adam_step",
                    format!(
                        "parameter shape {:?} vs gradient shape {:?}",
                        param.shape(),
                        grad.shape()
                    ),
                ));
            }
            for (((p, &g), m), v) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
