use serde::{Deserialize, Serialize};

use super::{Matrix, NumericsError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.005, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers and the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, state: AdamState::default() }
    }

    /// One update of `params` in place. `names` label the parameters for
    /// error reporting. A non-finite gradient aborts the whole step before
    /// anything is modified.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix], names: &[&str]) -> Result<(), NumericsError> {
        let name = |i: usize| names.get(i).map_or_else(|| format!("#{i}"), |s| s.to_string());
        if params.len() != grads.len() {
            return Err(NumericsError::ParamMismatch {
                param: "*".into(),
                detail: format!("{} params but {} gradients", params.len(), grads.len()),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(NumericsError::ParamMismatch {
                    param: name(i),
                    detail: format!("gradient shape {:?} vs parameter {:?}", g.shape(), p.shape()),
                });
            }
            if !g.is_finite() {
                return Err(NumericsError::NonFiniteGradient { param: name(i) });
            }
        }
        let st = &mut self.state;
        if st.t == 0 && st.m.is_empty() {
            st.m = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            st.v = st.m.clone();
        }
        if st.m.len() != params.len() || st.m.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape()) {
            return Err(NumericsError::ParamMismatch {
                param: "*".into(),
                detail: "parameter set changed between steps".into(),
            });
        }
        st.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(st.t as i32);
        let bc2 = 1.0 - beta2.powi(st.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(st.m.iter_mut().zip(st.v.iter_mut())) {
            let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((w, &gv), (mv, vv)) in it {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
