//! Finite-difference verification of whole modules with respect to their parameters.

use indexmap::IndexMap;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::context::{Ctx, Mode};
use super::params::{BatchNormBuffers, ParamStore};
use crate::error::Result;
use crate::tensor::{grad_check_at, GradReport, Tensor, Var};

/// Which coordinates of each tensor are perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    All,
    /// Up to this many distinct coordinates per tensor, drawn from the seed.
    Sample {
        per_tensor: usize,
        seed: u64,
    },
}

impl Coverage {
    fn pick(&self, len: usize, salt: u64) -> Vec<usize> {
        match *self {
            Coverage::All => (0..len).collect(),
            Coverage::Sample { per_tensor, seed } => {
                if per_tensor >= len {
                    return (0..len).collect();
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut idx = sample(&mut rng, len, per_tensor).into_vec();
                idx.sort_unstable();
                idx
            }
        }
    }
}

/// Compare reverse-mode gradients of a scalar `head(ctx, x)` against central
/// differences, over the input and every parameter not rejected by `skip`.
#[allow(clippy::too_many_arguments)]
pub fn grad_check_module<F>(
    name: &str,
    params: &ParamStore<f64>,
    buffers: &BatchNormBuffers,
    mode: Mode,
    x: &Tensor<f64>,
    coverage: Coverage,
    eps: f64,
    skip: &dyn Fn(&str) -> bool,
    head: F,
) -> Result<GradReport>
where
    F: Fn(&Ctx<'_, f64>, Var) -> Result<Var>,
{
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut inputs = vec![x.clone()];
    inputs.extend(params.iter().map(|(_, t)| t.clone()));
    let mut indices = vec![coverage.pick(x.len(), 0)];
    for (i, (pname, t)) in params.iter().enumerate() {
        indices.push(if skip(pname) {
            Vec::new()
        } else {
            coverage.pick(t.len(), i as u64 + 1)
        });
    }
    grad_check_at(
        name,
        |g, vars| {
            let bound: IndexMap<String, Var> = names.iter().cloned().zip(vars[1..].iter().copied()).collect();
            let ctx = Ctx::from_vars(g, bound, buffers, mode);
            head(&ctx, vars[0])
        },
        &inputs,
        eps,
        &indices,
    )
}
