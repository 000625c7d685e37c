//! AdamW with decoupled weight decay.

use super::tensor::Element;
use super::NumericsError;

/// Optimizer hyperparameters. Defaults follow the usual transformer recipes.
#[derive(Debug, Clone, Copy)]
pub struct AdamWHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        AdamWHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

impl AdamWHyper {
    fn validate(&self) -> Result<(), NumericsError> {
        // lr = 0 is legal: the warmup ramp starts there and the step then
        // only advances the moment estimates.
        let ok = self.lr >= 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(NumericsError::Invalid {
                op: "adamw",
                msg: format!("bad hyperparameters {self:?}"),
            })
        }
    }
}

/// Per-parameter first/second moment buffers plus the shared step counter.
pub struct AdamWState<E: Element> {
    pub first_moment: Vec<Vec<E>>,
    pub second_moment: Vec<Vec<E>>,
    pub step_count: u64,
}

impl<E: Element> AdamWState<E> {
    pub fn new(param_lens: &[usize]) -> Self {
        AdamWState {
            first_moment: param_lens.iter().map(|&n| vec![E::ZERO; n]).collect(),
            second_moment: param_lens.iter().map(|&n| vec![E::ZERO; n]).collect(),
            step_count: 0,
        }
    }
}

/// One AdamW update over a parameter group.
///
/// `grads[i]` must be `Some` and match `params[i]` in length. The decoupled
/// rule `p <- p - lr*(wd*p + m_hat/(sqrt(v_hat)+eps))` is applied with bias
/// correction, and the state's step count advances by one.
pub fn adamw_step<E: Element>(
    params: &mut [&mut [E]],
    grads: &[Option<&[E]>],
    state: &mut AdamWState<E>,
    hp: &AdamWHyper,
) -> Result<(), NumericsError> {
    hp.validate()?;
    if params.len() != grads.len()
        || params.len() != state.first_moment.len()
        || params.len() != state.second_moment.len()
    {
        return Err(NumericsError::Invalid {
            op: "adamw",
            msg: format!(
                "group size mismatch: {} params, {} grads, {} state slots",
                params.len(),
                grads.len(),
                state.first_moment.len()
            ),
        });
    }
    let t = state.step_count + 1;
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);

    for (i, param) in params.iter_mut().enumerate() {
        let grad = grads[i].ok_or(NumericsError::MissingGrad(i))?;
        if grad.len() != param.len() || state.first_moment[i].len() != param.len() {
            return Err(NumericsError::Invalid {
                op: "adamw",
                msg: format!(
                    "parameter {i}: {} values, grad {}, moment {}",
                    param.len(),
                    grad.len(),
                    state.first_moment[i].len()
                ),
            });
        }
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for j in 0..param.len() {
            let g = grad[j].to_f64();
            let mj = hp.beta1 * m[j].to_f64() + (1.0 - hp.beta1) * g;
            let vj = hp.beta2 * v[j].to_f64() + (1.0 - hp.beta2) * g * g;
            m[j] = E::from_f64(mj);
            v[j] = E::from_f64(vj);
            let m_hat = mj / bc1;
            let v_hat = vj / bc2;
            let p = param[j].to_f64();
            let next = p - hp.lr * (hp.weight_decay * p + m_hat / (v_hat.sqrt() + hp.eps));
            if !next.is_finite() {
                return Err(NumericsError::NonFinite { op: "adamw" });
            }
            param[j] = E::from_f64(next);
        }
    }
    state.step_count = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_applies_pure_decay() {
        let mut p = vec![1.0f64];
        let mut state = AdamWState::new(&[1]);
        let hp = AdamWHyper { lr: 1e-3, weight_decay: 0.05, ..Default::default() };
        let g = vec![0.0f64];
        adamw_step(&mut [&mut p], &[Some(&g)], &mut state, &hp).unwrap();
        assert!((p[0] - 0.99995).abs() < 1e-12, "{}", p[0]);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        let mut p = vec![0.0f64];
        let mut state = AdamWState::new(&[1]);
        let hp = AdamWHyper { lr: 1e-3, weight_decay: 0.0, ..Default::default() };
        let g = vec![0.5f64];
        let mut prev = p[0];
        for _ in 0..200 {
            prev = p[0];
            adamw_step(&mut [&mut p], &[Some(&g)], &mut state, &hp).unwrap();
        }
        let step = prev - p[0];
        // Positive gradient: update moves in -g direction with magnitude -> lr.
        assert!(step > 0.0);
        assert!((step - hp.lr).abs() < 1e-5, "step {step}");
    }

    #[test]
    fn quadratic_bowl_loss_decreases_monotonically() {
        // f(p) = p^2, grad = 2p; allow the first step to settle the moments.
        let mut p = vec![1.0f64];
        let mut state = AdamWState::new(&[1]);
        let hp = AdamWHyper { lr: 0.05, weight_decay: 0.0, ..Default::default() };
        let mut losses = Vec::new();
        for _ in 0..10 {
            let g = vec![2.0 * p[0]];
            adamw_step(&mut [&mut p], &[Some(&g)], &mut state, &hp).unwrap();
            losses.push(p[0] * p[0]);
        }
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "loss did not decrease: {losses:?}");
        }
    }

    #[test]
    fn missing_grad_rejected() {
        let mut p = vec![1.0f32];
        let mut state = AdamWState::new(&[1]);
        let err = adamw_step(&mut [&mut p], &[None], &mut state, &AdamWHyper::default());
        assert!(matches!(err, Err(NumericsError::MissingGrad(0))));
    }

    #[test]
    fn step_count_advances_once_per_update() {
        let mut p = vec![1.0f32];
        let mut state = AdamWState::new(&[1]);
        let g = vec![0.1f32];
        for expect in 1..=5 {
            adamw_step(&mut [&mut p], &[Some(&g)], &mut state, &AdamWHyper::default()).unwrap();
            assert_eq!(state.step_count, expect);
        }
    }
}
