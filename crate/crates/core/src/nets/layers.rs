use crate::autodiff::{Graph, ParamSet, Unary, Var};
use crate::real::Real;
use crate::rng::SplitMix64;

use super::{NetsError, Result};

/// Looks parameters up by name and places them in a graph, either as
/// trainable leaves or as constants.
pub(crate) struct Binder<'a, T: Real> {
    pub set: &'a ParamSet<T>,
    pub train: bool,
}

impl<T: Real> Binder<'_, T> {
    pub fn get(&self, g: &mut Graph<T>, name: &str) -> Result<Var> {
        let i = self
            .set
            .index_of(name)
            .ok_or_else(|| NetsError::MissingParam(name.to_string()))?;
        Ok(if self.train {
            self.set.leaf(g, i)?
        } else {
            self.set.frozen(g, i)?
        })
    }

    /// Weight-normalized convolution registered by [`init_conv`].
    pub fn conv(&self, g: &mut Graph<T>, name: &str, x: Var, dilation: usize) -> Result<Var> {
        let v = self.get(g, &format!("{name}.v"))?;
        let gain = self.get(g, &format!("{name}.g"))?;
        let b = self.get(g, &format!("{name}.b"))?;
        let w = g.weight_norm(v, gain)?;
        Ok(g.conv1d(x, w, Some(b), dilation)?)
    }

    pub fn conv_act(&self, g: &mut Graph<T>, name: &str, x: Var, dilation: usize, act: Unary) -> Result<Var> {
        let y = self.conv(g, name, x, dilation)?;
        Ok(g.unary(act, y)?)
    }
}

/// Direction `v` uniform with std `1/sqrt(fan_in)`, gain set to the row
/// norm so the effective weight starts equal to `v`, bias zero.
pub(crate) fn init_conv<T: Real>(
    set: &mut ParamSet<T>,
    rng: &mut SplitMix64,
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
) {
    let fan_in = c_in * k;
    let vi = set.add_uniform(format!("{name}.v"), &[c_out, c_in, k], fan_in, rng);
    let v = &set.get(vi).data;
    let gains = v
        .chunks_exact(fan_in)
        .map(|row| crate::real::dot(row, row).sqrt())
        .collect();
    set.add(format!("{name}.g"), &[c_out], gains);
    set.add(format!("{name}.b"), &[c_out], vec![T::zero(); c_out]);
}

pub(crate) fn conv_params(c_in: usize, c_out: usize, k: usize) -> usize {
    c_out * c_in * k + 2 * c_out
}
