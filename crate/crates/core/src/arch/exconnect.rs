use std::fmt;
use std::str::FromStr;

use super::attention::{dims, gap, SpaLayer};
use super::context::Ctx;
use super::params::Init;
use crate::error::{Error, Result};
use crate::tensor::{Element, Var};

/// How tap feature maps are pooled into the classifier input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExcMode {
    /// Global average pool of the last layer only.
    FinalGap,
    /// SPA of the last layer only.
    FinalSpa,
    /// Global average pool of every tap.
    ExcGap,
    /// SPA of every tap.
    ExcSpa,
    /// Per tap: layer-normalized SPA plus layer-normalized global average pool.
    ExcSpaAndGap,
}

impl ExcMode {
    pub const ALL: [ExcMode; 5] = [
        ExcMode::FinalGap,
        ExcMode::FinalSpa,
        ExcMode::ExcGap,
        ExcMode::ExcSpa,
        ExcMode::ExcSpaAndGap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExcMode::FinalGap => "final_gap",
            ExcMode::FinalSpa => "final_spa",
            ExcMode::ExcGap => "exc_gap",
            ExcMode::ExcSpa => "exc_spa",
            ExcMode::ExcSpaAndGap => "exc_spa_and_gap",
        }
    }

    /// Stable small integer used by the checkpoint metadata.
    pub fn code(self) -> u8 {
        ExcMode::ALL.iter().position(|&m| m == self).expect("listed") as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        ExcMode::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::config(format!("unknown ex-connect code {code}")))
    }

    pub fn final_only(self) -> bool {
        matches!(self, ExcMode::FinalGap | ExcMode::FinalSpa)
    }

    fn uses_spa(self) -> bool {
        !matches!(self, ExcMode::FinalGap | ExcMode::ExcGap)
    }
}

impl fmt::Display for ExcMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExcMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExcMode::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            let valid: Vec<_> = ExcMode::ALL.iter().map(|m| m.as_str()).collect();
            Error::config(format!("unknown ex-connect mode {s:?}; valid: {}", valid.join(", ")))
        })
    }
}

/// One pooled feature source: a named map of `channels × size × size`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tap {
    pub name: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExConnect {
    pub mode: ExcMode,
    taps: Vec<Tap>,
    spa: Vec<Option<SpaLayer>>,
}

impl ExConnect {
    pub fn new(mode: ExcMode, taps: Vec<Tap>, spa_bias: bool) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::config("extreme connection needs at least one tap"));
        }
        // A scalar shift is removed exactly by the per-tap layer norm.
        let spa_bias = spa_bias && mode != ExcMode::ExcSpaAndGap;
        let spa = taps
            .iter()
            .map(|t| {
                mode.uses_spa()
                    .then(|| SpaLayer::new(format!("exc.{}.spa", t.name), t.height, t.width, spa_bias))
            })
            .collect();
        Ok(ExConnect { mode, taps, spa })
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn out_len(&self) -> usize {
        self.taps.iter().map(|t| t.channels).sum()
    }

    pub fn declare<T: Element>(&self, init: &mut Init<T>) -> Result<()> {
        for (tap, spa) in self.taps.iter().zip(&self.spa) {
            if let Some(spa) = spa {
                spa.declare(init)?;
            }
            if self.mode == ExcMode::ExcSpaAndGap {
                init.layer_norm(&format!("exc.{}.ln_spa", tap.name), &[tap.channels])?;
                init.layer_norm(&format!("exc.{}.ln_gap", tap.name), &[tap.channels])?;
            }
        }
        Ok(())
    }

    /// Flatten-concatenate the pooled taps in declaration order.
    pub fn forward<T: Element>(&self, ctx: &Ctx<'_, T>, maps: &[Var]) -> Result<Var> {
        if maps.len() != self.taps.len() {
            return Err(Error::config(format!(
                "extreme connection expects {} taps, got {}",
                self.taps.len(),
                maps.len()
            )));
        }
        let g = ctx.graph;
        let mut parts = Vec::with_capacity(maps.len());
        for ((tap, spa), &x) in self.taps.iter().zip(&self.spa).zip(maps) {
            let (_, c, _, _) = dims(ctx, x, "exconnect")?;
            if c != tap.channels {
                return Err(Error::Dimension {
                    op: "exconnect",
                    detail: format!("tap {} declared {} channels, got {c}", tap.name, tap.channels),
                });
            }
            let v = match (self.mode, spa) {
                (ExcMode::ExcSpaAndGap, Some(spa)) => {
                    let s = ctx.layer_norm_affine(&format!("exc.{}.ln_spa", tap.name), spa.forward(ctx, x)?)?;
                    let a = ctx.layer_norm_affine(&format!("exc.{}.ln_gap", tap.name), gap(ctx, x)?)?;
                    g.add(s, a)?
                }
                (_, Some(spa)) => spa.forward(ctx, x)?,
                (_, None) => gap(ctx, x)?,
            };
            ctx.record(format!("exc.{}", tap.name), v);
            parts.push(v);
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        // Concatenate N×C vectors as N×C×1×1 maps.
        let n = g.shape(parts[0])[0];
        let maps: Vec<Var> = parts
            .iter()
            .map(|&p| {
                let c = g.shape(p)[1];
                g.reshape(p, &[n, c, 1, 1])
            })
            .collect::<Result<_>>()?;
        let joined = g.concat_channels(&maps)?;
        g.reshape(joined, &[n, self.out_len()])
    }
}
