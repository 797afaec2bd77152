//! Adam and global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.999;
pub const ADAM_EPS: f32 = 1e-8;

/// Adam optimizer state for an ordered list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState {
    lr: f32,
    step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
    frozen: Vec<bool>,
}

impl AdamState {
    pub fn new(params: &[Tensor], lr: f32) -> Self {
        Self {
            lr,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            frozen: vec![false; params.len()],
        }
    }

    /// Parameters whose mask entry is `true` are never updated.
    pub fn with_frozen(mut self, frozen: Vec<bool>) -> Self {
        assert_eq!(frozen.len(), self.first.len(), "frozen mask length");
        self.frozen = frozen;
        self
    }

    pub fn lr(&self) -> f32 {
        self.lr
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. `names` label parameters in errors.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f32>], names: &[&str]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::contract(format!(
                "adam: {} params, {} grads, {} state slots",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first[i].len() {
                return Err(Error::shape("adam_step", p.shape(), &[g.len()]));
            }
            if g.iter().any(|x| !x.is_finite()) {
                let name = names.get(i).copied().unwrap_or("?");
                return Err(Error::numeric(format!("non-finite gradient in parameter `{name}`")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if self.frozen[i] {
                continue;
            }
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (((w, &gx), mx), vx) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mx = ADAM_BETA1 * *mx + (1.0 - ADAM_BETA1) * gx;
                *vx = ADAM_BETA2 * *vx + (1.0 - ADAM_BETA2) * gx * gx;
                let m_hat = *mx / bc1;
                let v_hat = *vx / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f32>], max_norm: f32) -> f32 {
    let total: f64 = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&x| f64::from(x) * f64::from(x))
        .sum();
    let norm = total.sqrt() as f32;
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|x| *x *= s);
    }
    norm
}
