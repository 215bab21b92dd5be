use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Differences below this are finite-difference round-off, not disagreement.
pub const ABS_NOISE_FLOOR: f64 = 1e-10;

/// Multiple of the central difference's round-off error, `ε·|f| / eps`,
/// under which a disagreement is treated as noise.
pub const ROUNDOFF_FACTOR: f64 = 100.0;

/// Largest elementwise relative error between the analytic gradient of `f`
/// and a central finite difference, over every element of every input.
///
/// Relative error is `|a − n| / max(|a|, |n|, 1e-8)`. Entries whose absolute
/// difference is under [`ABS_NOISE_FLOOR`], or under [`ROUNDOFF_FACTOR`]
/// times the round-off of that difference quotient, count as agreement.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t)).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.data(out)[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad_tensor(v)).collect();

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..probe[t].len() {
            let orig = probe[t].data()[i];
            probe[t].data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe[t].data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grad.data()[i];
            let diff = (a - numeric).abs();
            let roundoff = f64::EPSILON * up.abs().max(down.abs()).max(1.0) / eps;
            if diff <= ABS_NOISE_FLOOR.max(ROUNDOFF_FACTOR * roundoff) {
                continue;
            }
            worst = worst.max(diff / a.abs().max(numeric.abs()).max(1e-8));
        }
    }
    Ok(worst)
}
