//! Channel pixel attention (CPA), spatial pixel attention (SPA) and global average pooling.

use super::context::Ctx;
use super::params::Init;
use crate::error::{Error, Result};
use crate::tensor::{Element, Var};

/// Per-pixel weighted sum across channels, `C_in → C_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpaLayer {
    pub path: String,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Both branches end in 2×2 stride-2 average pooling.
    pub downsample: bool,
}

impl CpaLayer {
    pub fn new(path: impl Into<String>, in_channels: usize, out_channels: usize, downsample: bool) -> Self {
        CpaLayer {
            path: path.into(),
            in_channels,
            out_channels,
            downsample,
        }
    }

    /// Residual input is added whenever the widths agree.
    pub fn has_residual(&self) -> bool {
        self.in_channels == self.out_channels
    }

    pub fn declare<T: Element>(&self, init: &mut Init<T>) -> Result<()> {
        let p = &self.path;
        init.fan_in_uniform(
            format!("{p}.weight"),
            &[self.in_channels, self.out_channels],
            self.in_channels,
        )?;
        init.fan_in_uniform(format!("{p}.bias"), &[self.out_channels], self.in_channels)?;
        init.batch_norm(&format!("{p}.bn"), self.out_channels)
    }

    /// Records `path.attn`, the attention output before any normalization.
    pub fn forward<T: Element>(&self, ctx: &Ctx<'_, T>, x: Var) -> Result<Var> {
        let g = ctx.graph;
        let (_, c, h, w) = dims(ctx, x, "cpa")?;
        if c != self.in_channels {
            return Err(Error::Dimension {
                op: "cpa",
                detail: format!("{}: expected {} input channels, got {c}", self.path, self.in_channels),
            });
        }
        let p = &self.path;
        let pixels = g.to_channels_last(x)?;
        let mixed = g.matmul(pixels, ctx.param(&format!("{p}.weight"))?)?;
        let mixed = g.add_bias_last(mixed, ctx.param(&format!("{p}.bias"))?)?;
        let attn = g.from_channels_last(mixed, h, w)?;
        ctx.record(format!("{p}.attn"), attn);

        let mut y = ctx.batch_norm(&format!("{p}.bn"), attn)?;
        if self.downsample {
            y = g.avg_pool2d(y, 2, 2)?;
        }
        if self.has_residual() {
            let carry = if self.downsample { g.avg_pool2d(x, 2, 2)? } else { x };
            y = g.add(y, carry)?;
        }
        ctx.layer_norm_sample(y)
    }
}

/// Learned spatial pooling: one weight per pixel, shared by every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaLayer {
    pub path: String,
    pub height: usize,
    pub width: usize,
    pub bias: bool,
}

impl SpaLayer {
    pub fn new(path: impl Into<String>, height: usize, width: usize, bias: bool) -> Self {
        SpaLayer {
            path: path.into(),
            height,
            width,
            bias,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Weight 1/L and bias 0, which makes the layer an exact global average pool.
    pub fn declare<T: Element>(&self, init: &mut Init<T>) -> Result<()> {
        let l = self.len();
        init.constant(format!("{}.weight", self.path), &[l], 1.0 / l as f64)?;
        if self.bias {
            init.constant(format!("{}.bias", self.path), &[1], 0.0)?;
        }
        Ok(())
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<'_, T>, x: Var) -> Result<Var> {
        let g = ctx.graph;
        let (n, c, h, w) = dims(ctx, x, "spa")?;
        if h * w != self.len() {
            return Err(Error::Dimension {
                op: "spa",
                detail: format!(
                    "{}: weight covers {} pixels, input map is {h}×{w}",
                    self.path,
                    self.len()
                ),
            });
        }
        let weight = g.reshape(ctx.param(&format!("{}.weight", self.path))?, &[h * w, 1])?;
        let flat = g.reshape(x, &[n, c, h * w])?;
        let pooled = g.reshape(g.matmul(flat, weight)?, &[n, c])?;
        if self.bias {
            g.add_bias_last(pooled, ctx.param(&format!("{}.bias", self.path))?)
        } else {
            Ok(pooled)
        }
    }
}

/// Per-channel spatial mean, `N×C×H×W → N×C`.
pub fn gap<T: Element>(ctx: &Ctx<'_, T>, x: Var) -> Result<Var> {
    ctx.graph.global_avg_pool(x)
}

pub(crate) fn dims<T: Element>(ctx: &Ctx<'_, T>, x: Var, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match ctx.graph.shape(x)[..] {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(Error::Dimension {
            op,
            detail: format!("expected N×C×H×W, got {s:?}"),
        }),
    }
}
