use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const REL_FLOOR: f64 = 1e-6;

/// Compare reverse-mode gradients of a scalar function against central
/// finite differences. Returns `maxᵢ |g_ad − g_fd| / max(REL_FLOOR, |g_ad| + |g_fd|)`
/// over every coordinate of every input. The floor keeps coordinates whose
/// gradient is zero up to finite-difference roundoff from dominating.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let o = f(&mut t, &vs)?;
        Ok(t.value(o).item())
    };

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let ad = grads.get(*v).cloned().unwrap_or_else(|| {
            let [r, c] = inputs[k].shape();
            Tensor::zeros(r, c)
        });
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data()[i];
            probe[k].data_mut()[i] = x0 + step;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = x0 - step;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = x0;
            let fd = (up - down) / (2.0 * step);
            if !fd.is_finite() {
                return Err(Error::Autodiff("non-finite finite difference".into()));
            }
            let a = ad.data()[i];
            let err = (a - fd).abs() / f64::max(REL_FLOOR, a.abs() + fd.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
