use super::attention::dims;
use super::block::{UpaBlock, UpaBlockConfig};
use super::context::Ctx;
use super::params::Init;
use crate::error::{Error, Result};
use crate::tensor::{Element, Var};

/// Width arithmetic of one densely connected layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpaLayerPlan {
    pub in_width: usize,
    /// Dense blocks after the leading full-width block.
    pub blocks: usize,
    /// Channels each dense block appends.
    pub growth: usize,
    pub downsample_first: bool,
}

impl UpaLayerPlan {
    pub fn out_width(&self) -> usize {
        self.in_width + self.blocks * self.growth
    }

    /// Same widths, with block 0 halving the resolution.
    pub fn downsampling(self) -> Self {
        UpaLayerPlan {
            downsample_first: true,
            ..self
        }
    }
}

/// `growth = in_width / blocks`, so the layer doubles its width.
pub fn plan_layer(in_width: usize, blocks: usize) -> Result<UpaLayerPlan> {
    plan_named("layer", in_width, blocks, false)
}

pub(crate) fn plan_named(name: &str, in_width: usize, blocks: usize, downsample_first: bool) -> Result<UpaLayerPlan> {
    if blocks == 0 || in_width == 0 {
        return Err(Error::config(format!(
            "{name}: width {in_width} and block count {blocks} must be positive"
        )));
    }
    if !in_width.is_multiple_of(blocks) {
        return Err(Error::config(format!(
            "{name}: width {in_width} is not divisible by {blocks} blocks"
        )));
    }
    Ok(UpaLayerPlan {
        in_width,
        blocks,
        growth: in_width / blocks,
        downsample_first,
    })
}

/// Block-level overrides applied to every block of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockOverrides {
    pub use_cpa: bool,
    pub groups: usize,
    pub shuffle: bool,
}

impl Default for BlockOverrides {
    fn default() -> Self {
        BlockOverrides {
            use_cpa: true,
            groups: 1,
            shuffle: false,
        }
    }
}

impl BlockOverrides {
    pub(crate) fn apply(&self, mut cfg: UpaBlockConfig) -> UpaBlockConfig {
        cfg.use_cpa = self.use_cpa;
        cfg.groups = self.groups;
        cfg.shuffle = self.shuffle;
        cfg
    }
}

/// Block 0 keeps the width (and halves the resolution when downsampling);
/// every later block appends `growth` channels to the running tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct UpaLayer {
    pub path: String,
    pub plan: UpaLayerPlan,
    blocks: Vec<UpaBlock>,
}

impl UpaLayer {
    pub fn new(path: impl Into<String>, plan: UpaLayerPlan, overrides: BlockOverrides) -> Result<Self> {
        let path = path.into();
        let stride = if plan.downsample_first { 2 } else { 1 };
        let mut blocks = Vec::with_capacity(plan.blocks + 1);
        let first = overrides.apply(UpaBlockConfig::new(plan.in_width, plan.in_width, stride));
        blocks.push(block(&path, 0, first)?);
        for b in 1..=plan.blocks {
            let cin = plan.in_width + (b - 1) * plan.growth;
            let cfg = overrides.apply(UpaBlockConfig::new(cin, plan.growth, 1));
            blocks.push(block(&path, b, cfg)?);
        }
        Ok(UpaLayer { path, plan, blocks })
    }

    pub fn blocks(&self) -> &[UpaBlock] {
        &self.blocks
    }

    pub fn declare<T: Element>(&self, init: &mut Init<T>) -> Result<()> {
        self.blocks.iter().try_for_each(|b| b.declare(init))
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<'_, T>, x: Var) -> Result<Var> {
        let (_, c, _, _) = dims(ctx, x, "upa_layer")?;
        if c != self.plan.in_width {
            return Err(Error::Dimension {
                op: "upa_layer",
                detail: format!("{}: expected {} input channels, got {c}", self.path, self.plan.in_width),
            });
        }
        let mut running = self.blocks[0].forward(ctx, x).map_err(|e| at_block(e, &self.path, 0))?;
        for (b, blk) in self.blocks.iter().enumerate().skip(1) {
            let grown = blk.forward(ctx, running).map_err(|e| at_block(e, &self.path, b))?;
            running = ctx.graph.concat_channels(&[running, grown])?;
        }
        ctx.record(self.path.clone(), running);
        Ok(running)
    }
}

fn block(path: &str, index: usize, cfg: UpaBlockConfig) -> Result<UpaBlock> {
    UpaBlock::new(format!("{path}.block{index}"), cfg).map_err(|e| Error::config(format!("{path}.block{index}: {e}")))
}

fn at_block(e: Error, path: &str, index: usize) -> Error {
    match e {
        Error::Dimension { op, detail } => Error::Dimension {
            op,
            detail: format!("{path} block {index}: {detail}"),
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_width_rule() {
        let p = plan_layer(32, 4).unwrap();
        assert_eq!((p.growth, p.out_width()), (8, 64));
        let p = plan_layer(16, 4).unwrap();
        assert_eq!((p.growth, p.out_width()), (4, 32));
    }

    #[test]
    fn plan_rejects_indivisible_width_by_name() {
        let err = plan_named("layer3", 16, 3, true).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("layer3"), "{msg}"),
            other => panic!("unexpected {other}"),
        }
        assert!(matches!(plan_layer(16, 3), Err(Error::Config(_))));
    }

    #[test]
    fn block_widths_follow_dense_growth() {
        let layer = UpaLayer::new("layer2", plan_layer(32, 4).unwrap(), BlockOverrides::default()).unwrap();
        let widths: Vec<_> = layer
            .blocks()
            .iter()
            .map(|b| (b.cfg.in_channels, b.cfg.out_channels))
            .collect();
        assert_eq!(widths, vec![(32, 32), (32, 8), (40, 8), (48, 8), (56, 8)]);
    }
}
