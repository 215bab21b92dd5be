use crate::error::{Error, Result};
use crate::model::Params;
use crate::nn::{ParamTree, Tensor};

/// RMSprop with one squared-gradient accumulator per parameter.
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub learning_rate: f32,
    pub decay: f32,
    pub eps: f32,
    state: Vec<Vec<f32>>,
}

impl RmsProp {
    pub fn new(params: &Params<f32>, learning_rate: f64, decay: f64, eps: f64) -> Self {
        let mut state = Vec::new();
        params.visit("", &mut |_, t| state.push(vec![0.0; t.len()]));
        Self {
            learning_rate: learning_rate as f32,
            decay: decay as f32,
            eps: eps as f32,
            state,
        }
    }

    pub fn state(&self) -> &[Vec<f32>] {
        &self.state
    }

    /// One update. `grads` follows the parameters' visiting order; `None`
    /// means the array received no gradient. The padding embedding row is
    /// re-zeroed afterwards.
    pub fn step(&mut self, params: &mut Params<f32>, grads: &[Option<Vec<f32>>]) -> Result<()> {
        if grads.len() != self.state.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameter arrays",
                grads.len(),
                self.state.len()
            )));
        }
        let (lr, decay, eps) = (self.learning_rate, self.decay, self.eps);
        let mut i = 0;
        let state = &mut self.state;
        let mut mismatch = None;
        params.visit_mut("", &mut |name, t: &mut Tensor<f32>| {
            if let Some(g) = &grads[i] {
                if g.len() != t.len() {
                    mismatch.get_or_insert(name);
                } else {
                    for ((p, s), &gi) in t.data_mut().iter_mut().zip(state[i].iter_mut()).zip(g) {
                        *s = decay * *s + (1.0 - decay) * gi * gi;
                        *p -= lr * gi / (*s + eps).sqrt();
                    }
                }
            }
            i += 1;
        });
        if let Some(name) = mismatch {
            return Err(Error::Shape(format!("gradient for `{name}` has the wrong length")));
        }
        params.zero_padding_row();
        Ok(())
    }
}
