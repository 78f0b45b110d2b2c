//! Adam optimizer with bias correction.

use crate::{Tensor, TensorError};

/// First/second-moment state for one fixed list of parameters.
///
/// The caller owns the parameter tensors and passes them (with matching
/// gradients, in the same order) to [`AdamState::step`]. A `None` gradient
/// means "zero gradient this step": the moments still decay, which matches
/// the behaviour of running the update with an explicit zero gradient.
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Number of completed steps (used for bias correction).
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh state for parameters of the given sizes (element counts).
    pub fn new(param_sizes: &[usize]) -> Self {
        AdamState {
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// State sized to match a list of parameter tensors.
    pub fn for_params(params: &[&mut Tensor]) -> Self {
        let sizes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(&sizes)
    }

    /// One Adam update in place.
    ///
    /// `grads[i]` is the gradient for `params[i]`. Shapes must match the
    /// state; a mismatch is an error rather than a silent skip.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Option<&Tensor>],
        lr: f64,
    ) -> Result<(), TensorError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TensorError::InvalidArgument {
                op: "adam_step",
                message: format!(
                    "expected {} parameters and gradients, got {} and {}",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, param) in params.iter_mut().enumerate() {
            if param.len() != self.m[i].len() {
                return Err(TensorError::InvalidArgument {
                    op: "adam_step",
                    message: format!(
                        "parameter {i} has {} elements but state expects {}",
                        param.len(),
                        self.m[i].len()
                    ),
                });
            }
            if let Some(g) = grads[i] {
                if g.len() != param.len() {
                    return Err(TensorError::ShapeMismatch {
                        op: "adam_step",
                        lhs: param.shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    });
                }
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let data = param.data_mut();
            for j in 0..data.len() {
                let g = grads[i].map_or(0.0, |g| g.data()[j]);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
