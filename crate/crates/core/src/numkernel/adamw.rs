use crate::error::{Error, Result};
use crate::numkernel::tensor::Tensor2;

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor2,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor2) -> Self {
        Param {
            name: name.into(),
            value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Configuration(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Configuration(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.eps > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Configuration(
                "eps must be positive and weight_decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Moment estimates for AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamWState {
    config: AdamWConfig,
    step: u64,
    first: Vec<Tensor2>,
    second: Vec<Tensor2>,
}

impl AdamWState {
    pub fn new(config: AdamWConfig, params: &[Param]) -> Result<Self> {
        config.validate()?;
        let zeros = || -> Vec<Tensor2> {
            params
                .iter()
                .map(|p| Tensor2::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        Ok(AdamWState {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        })
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. Nothing is modified if any gradient is invalid.
    pub fn step(&mut self, params: &mut [Param], grads: &[Tensor2]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.value.shape() != g.shape() || p.value.shape() != m.shape() {
                return Err(Error::Dimension(format!(
                    "parameter {} is {:?}, gradient {:?}, state {:?}",
                    p.name,
                    p.value.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
            if g.data().iter().any(|x| x.is_nan()) {
                return Err(Error::Training(format!("NaN gradient for parameter {}", p.name)));
            }
        }

        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            let pw = p.value.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pw.len() {
                let gi = g.data()[i];
                pw[i] -= lr * weight_decay * pw[i];
                md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pw[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Vec<Param> {
        vec![Param::new("w", Tensor2::scalar(v))]
    }

    #[test]
    fn zero_grad_without_decay_is_fixed_point() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut params = vec![Param::new(
            "w",
            Tensor2::from_rows(&[vec![0.3, -1.0], vec![2.0, 5.5]]).unwrap(),
        )];
        let before = params.clone();
        let mut state = AdamWState::new(cfg, &params).unwrap();
        for _ in 0..5 {
            state.step(&mut params, &[Tensor2::zeros(2, 2)]).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn first_step_is_normalized_gradient() {
        let cfg = AdamWConfig {
            lr: 1e-3,
            weight_decay: 0.0,
            ..Default::default()
        };
        for g in [0.37, -2.5, 1e-3] {
            let mut params = scalar_param(1.0);
            let mut state = AdamWState::new(cfg, &params).unwrap();
            state.step(&mut params, &[Tensor2::scalar(g)]).unwrap();
            let expected = 1.0 - cfg.lr * g / (g.abs() + cfg.eps);
            assert!((params[0].value.get(0, 0) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn weight_decay_is_decoupled() {
        // With zero gradient the only movement is the multiplicative decay.
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut params = scalar_param(2.0);
        let mut state = AdamWState::new(cfg, &params).unwrap();
        state.step(&mut params, &[Tensor2::scalar(0.0)]).unwrap();
        assert!((params[0].value.get(0, 0) - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    /// Plain scalar AdamW written without the tensor machinery.
    fn reference_scalar_adamw(w0: f64, lr: f64, steps: usize) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
        let mut trace = vec![w];
        for t in 1..=steps {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
            trace.push(w);
        }
        trace
    }

    #[test]
    fn quadratic_descent_matches_reference_and_shrinks() {
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let reference = reference_scalar_adamw(1.0, 0.1, 10);
        let mut params = scalar_param(1.0);
        let mut state = AdamWState::new(cfg, &params).unwrap();
        let mut prev = 1.0f64;
        for expected in &reference[1..] {
            let g = 2.0 * params[0].value.get(0, 0);
            state.step(&mut params, &[Tensor2::scalar(g)]).unwrap();
            let w = params[0].value.get(0, 0);
            assert!((w - expected).abs() < 1e-15);
            assert!(w.abs() < prev.abs(), "|w| did not shrink: {prev} -> {w}");
            prev = w;
        }
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut params = scalar_param(1.0);
        let mut state = AdamWState::new(AdamWConfig::default(), &params).unwrap();
        let err = state.step(&mut params, &[Tensor2::from_raw(1, 1, vec![f64::NAN])]).unwrap_err();
        assert!(matches!(&err, Error::Training(m) if m.contains('w')));
        assert_eq!(params[0].value.get(0, 0), 1.0);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn invalid_betas_are_rejected() {
        let cfg = AdamWConfig {
            beta1: 1.0,
            ..Default::default()
        };
        assert!(AdamWState::new(cfg, &scalar_param(0.0)).is_err());
    }
}
