use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
struct Moments<T> {
    first: Vec<T>,
    second: Vec<T>,
}

/// Adam moments keyed by slot index. Slots are allocated on first use.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    config: AdamConfig,
    step: u64,
    slots: Vec<Option<Moments<T>>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            slots: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Advances the step counter; call once before the `update_slot` calls of an
    /// optimizer step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Bias-corrected update of one parameter buffer.
    pub fn update_slot(&mut self, slot: usize, param: &mut [T], grad: &[T]) -> Result<()> {
        if param.len() != grad.len() {
            return Err(Error::dim(format!(
                "slot {slot}: parameter has {} values, gradient {}",
                param.len(),
                grad.len()
            )));
        }
        if self.step == 0 {
            return Err(Error::Contract("update_slot before begin_step".into()));
        }
        if self.slots.len() <= slot {
            self.slots.resize(slot + 1, None);
        }
        let m = self.slots[slot].get_or_insert_with(|| Moments {
            first: vec![T::zero(); param.len()],
            second: vec![T::zero(); param.len()],
        });
        if m.first.len() != param.len() {
            return Err(Error::dim(format!(
                "slot {slot}: moments sized {}, parameter {}",
                m.first.len(),
                param.len()
            )));
        }
        let c = &self.config;
        let t = self.step as i32;
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let one = T::one();
        let corr1 = T::from_f64(1.0 - c.beta1.powi(t));
        let corr2 = T::from_f64(1.0 - c.beta2.powi(t));
        let lr = T::from_f64(c.lr);
        let eps = T::from_f64(c.epsilon);
        for ((p, &g), (mo, ve)) in param
            .iter_mut()
            .zip(grad)
            .zip(m.first.iter_mut().zip(m.second.iter_mut()))
        {
            *mo = b1 * *mo + (one - b1) * g;
            *ve = b2 * *ve + (one - b2) * g * g;
            let m_hat = *mo / corr1;
            let v_hat = *ve / corr2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// One Adam step over every unfrozen parameter. Frozen tensors are skipped even
/// when a gradient is supplied. Validation happens before any value changes.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &[Option<Tensor<T>>],
    state: &mut AdamState<T>,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::dim(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.frozen {
            continue;
        }
        match g {
            None => {
                return Err(Error::Contract(format!("missing gradient for {}", p.name)));
            }
            Some(g) if g.len() != p.value.len() => {
                return Err(Error::dim(format!(
                    "gradient {i} has {} values, {} expects {}",
                    g.len(),
                    p.name,
                    p.value.len()
                )));
            }
            _ => {}
        }
    }
    state.begin_step();
    for (i, g) in grads.iter().enumerate() {
        let p = params.get_mut(i);
        if p.frozen {
            continue;
        }
        let g = g.as_ref().expect("validated above");
        state.update_slot(i, p.value.data_mut(), g.data())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g² at step 1, so |Δ| = lr·|g|/(|g| + ε)
        let mut st = AdamState::<f64>::new(AdamConfig::with_lr(1e-3));
        let mut p = [0.5];
        st.begin_step();
        st.update_slot(0, &mut p, &[1.0]).unwrap();
        let expected = 0.5 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!(((0.5 - p[0]) - 1e-3).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut st = AdamState::<f32>::new(AdamConfig::default());
        let mut p = [1.25f32, -3.0];
        for _ in 0..5 {
            st.begin_step();
            st.update_slot(0, &mut p, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(p, [1.25, -3.0]);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn slot_shape_is_checked() {
        let mut st = AdamState::<f64>::new(AdamConfig::default());
        st.begin_step();
        st.update_slot(0, &mut [0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(st.update_slot(0, &mut [0.0], &[1.0]).is_err());
    }
}
