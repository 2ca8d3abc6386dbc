use super::attention::{dims, CpaLayer};
use super::context::Ctx;
use super::params::Init;
use crate::error::{Error, Result};
use crate::tensor::{Conv2dSpec, Element, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpaBlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub use_cpa: bool,
    pub groups: usize,
    pub shuffle: bool,
}

impl UpaBlockConfig {
    /// Default block: CPA on, dense convolutions, no shuffle.
    pub fn new(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        UpaBlockConfig {
            in_channels,
            out_channels,
            stride,
            use_cpa: true,
            groups: 1,
            shuffle: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("block widths must be positive"));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(Error::config(format!("block stride {} not in {{1, 2}}", self.stride)));
        }
        if !matches!(self.groups, 1 | 2 | 4) {
            return Err(Error::config(format!(
                "block groups {} not in {{1, 2, 4}}",
                self.groups
            )));
        }
        let mid = 2 * self.out_channels;
        for (what, c) in [
            ("input", self.in_channels),
            ("inner", mid),
            ("output", self.out_channels),
        ] {
            if c % self.groups != 0 {
                return Err(Error::config(format!(
                    "groups {} do not divide the {what} width {c}",
                    self.groups
                )));
            }
        }
        Ok(())
    }
}

/// Inverted-triangle conv path in parallel with a CPA path, summed and layer-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct UpaBlock {
    pub path: String,
    pub cfg: UpaBlockConfig,
    cpa: Option<CpaLayer>,
}

impl UpaBlock {
    pub fn new(path: impl Into<String>, cfg: UpaBlockConfig) -> Result<Self> {
        cfg.validate()?;
        let path = path.into();
        let cpa = cfg.use_cpa.then(|| {
            CpaLayer::new(
                format!("{path}.cpa"),
                cfg.in_channels,
                cfg.out_channels,
                cfg.stride == 2,
            )
        });
        Ok(UpaBlock { path, cfg, cpa })
    }

    pub fn cpa(&self) -> Option<&CpaLayer> {
        self.cpa.as_ref()
    }

    pub fn declare<T: Element>(&self, init: &mut Init<T>) -> Result<()> {
        let p = &self.path;
        let c = &self.cfg;
        let mid = 2 * c.out_channels;
        init.conv_kernel(format!("{p}.conv1.weight"), [mid, c.in_channels / c.groups, 3, 3])?;
        init.batch_norm(&format!("{p}.bn1"), mid)?;
        init.conv_kernel(format!("{p}.conv2.weight"), [c.out_channels, mid / c.groups, 3, 3])?;
        init.batch_norm(&format!("{p}.bn2"), c.out_channels)?;
        if let Some(cpa) = &self.cpa {
            cpa.declare(init)?;
        }
        Ok(())
    }

    /// Records `path.conv`, `path.cpa` and `path.sum` (the pre-normalization add).
    pub fn forward<T: Element>(&self, ctx: &Ctx<'_, T>, x: Var) -> Result<Var> {
        let g = ctx.graph;
        let (_, c, _, _) = dims(ctx, x, "upa_block")?;
        if c != self.cfg.in_channels {
            return Err(Error::Dimension {
                op: "upa_block",
                detail: format!(
                    "{}: expected {} input channels, got {c}",
                    self.path, self.cfg.in_channels
                ),
            });
        }
        let p = &self.path;
        let spec = Conv2dSpec::same3x3(self.cfg.groups);
        let mut y = g.conv2d(x, ctx.param(&format!("{p}.conv1.weight"))?, None, spec)?;
        y = ctx.batch_norm(&format!("{p}.bn1"), y)?;
        y = g.relu(y)?;
        if self.cfg.shuffle && self.cfg.groups > 1 {
            y = g.channel_shuffle(y, self.cfg.groups)?;
        }
        y = g.conv2d(y, ctx.param(&format!("{p}.conv2.weight"))?, None, spec)?;
        y = ctx.batch_norm(&format!("{p}.bn2"), y)?;
        if self.cfg.stride == 2 {
            y = g.avg_pool2d(y, 2, 2)?;
        }
        ctx.record(format!("{p}.conv"), y);

        let sum = match &self.cpa {
            Some(cpa) => {
                let a = cpa.forward(ctx, x)?;
                ctx.record(format!("{p}.cpa"), a);
                g.add(y, a)?
            }
            None => y,
        };
        ctx.record(format!("{p}.sum"), sum);
        let out = ctx.layer_norm_sample(sum)?;
        ctx.record(p.clone(), out);
        Ok(out)
    }
}
