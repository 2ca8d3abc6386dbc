use std::fmt::Write as _;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::block::{UpaBlock, UpaBlockConfig};
use super::context::{Ctx, Mode};
use super::exconnect::{ExConnect, ExcMode, Tap};
use super::layer::{plan_named, BlockOverrides, UpaLayer};
use super::params::{BatchNormBuffers, Init, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{BatchStats, Element, Graph, Tensor, Var, BATCH_NORM_MOMENTUM};

pub const LAYERS: usize = 4;
pub const IN_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct UpaNetsConfig {
    /// Base width F.
    pub base_width: usize,
    /// Depth multiplier d; every layer has 4d dense blocks.
    pub depth: usize,
    pub classes: usize,
    pub exc_mode: ExcMode,
    pub ablation: BlockOverrides,
    /// Scalar bias on every SPA.
    pub spa_bias: bool,
    /// Square input extent; must be divisible by 8.
    pub image_size: usize,
}

impl UpaNetsConfig {
    pub fn new(base_width: usize, classes: usize) -> Self {
        UpaNetsConfig {
            base_width,
            depth: 1,
            classes,
            exc_mode: ExcMode::ExcSpaAndGap,
            ablation: BlockOverrides::default(),
            spa_bias: true,
            image_size: 32,
        }
    }

    /// `upa16`, `upa32` or `upa64`, all with d = 1.
    pub fn preset(name: &str, classes: usize) -> Result<Self> {
        let f = match name {
            "upa16" => 16,
            "upa32" => 32,
            "upa64" => 64,
            other => {
                return Err(Error::config(format!(
                    "unknown model {other:?}; valid: upa16, upa32, upa64"
                )))
            }
        };
        Ok(Self::new(f, classes))
    }

    pub fn blocks_per_layer(&self) -> usize {
        4 * self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.depth == 0 {
            return Err(Error::config("base width and depth must be at least 1"));
        }
        if self.classes < 2 {
            return Err(Error::config(format!("{} classes; need at least 2", self.classes)));
        }
        if self.image_size < 8 || !self.image_size.is_multiple_of(8) {
            return Err(Error::config(format!(
                "image size {} must be a positive multiple of 8",
                self.image_size
            )));
        }
        Ok(())
    }
}

/// Root block, four dense layers, extreme connection and a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct UpaNets {
    pub cfg: UpaNetsConfig,
    root: UpaBlock,
    layers: Vec<UpaLayer>,
    exc: ExConnect,
}

impl UpaNets {
    pub fn new(cfg: UpaNetsConfig) -> Result<Self> {
        cfg.validate()?;
        let f = cfg.base_width;
        let mut root_cfg = UpaBlockConfig::new(IN_CHANNELS, f, 1);
        // The RGB input admits no channel grouping.
        root_cfg.use_cpa = cfg.ablation.use_cpa;
        let root = UpaBlock::new("root", root_cfg)?;

        let mut layers = Vec::with_capacity(LAYERS);
        let mut taps = vec![Tap {
            name: "root".into(),
            channels: f,
            height: cfg.image_size,
            width: cfg.image_size,
        }];
        let mut width = f;
        let mut size = cfg.image_size;
        for k in 1..=LAYERS {
            let name = format!("layer{k}");
            let plan = plan_named(&name, width, cfg.blocks_per_layer(), k > 1)?;
            if k > 1 {
                size /= 2;
            }
            layers.push(UpaLayer::new(name.clone(), plan, cfg.ablation)?);
            width = plan.out_width();
            taps.push(Tap {
                name,
                channels: width,
                height: size,
                width: size,
            });
        }
        if cfg.exc_mode.final_only() {
            taps.drain(..LAYERS);
        }
        let exc = ExConnect::new(cfg.exc_mode, taps, cfg.spa_bias)?;
        Ok(UpaNets { cfg, root, layers, exc })
    }

    pub fn root(&self) -> &UpaBlock {
        &self.root
    }

    pub fn layers(&self) -> &[UpaLayer] {
        &self.layers
    }

    pub fn exconnect(&self) -> &ExConnect {
        &self.exc
    }

    pub fn feature_len(&self) -> usize {
        self.exc.out_len()
    }

    /// Every block path, in forward order.
    pub fn block_paths(&self) -> Vec<String> {
        std::iter::once(self.root.path.clone())
            .chain(
                self.layers
                    .iter()
                    .flat_map(|l| l.blocks().iter().map(|b| b.path.clone())),
            )
            .collect()
    }

    pub fn find_block(&self, path: &str) -> Option<&UpaBlock> {
        std::iter::once(&self.root)
            .chain(self.layers.iter().flat_map(|l| l.blocks()))
            .find(|b| b.path == path)
    }

    pub fn declare<T: Element>(&self, init: &mut Init<T>) -> Result<()> {
        self.root.declare(init)?;
        for layer in &self.layers {
            layer.declare(init)?;
        }
        self.exc.declare(init)?;
        let feat = self.feature_len();
        init.fan_in_uniform("head.weight".into(), &[feat, self.cfg.classes], feat)?;
        init.fan_in_uniform("head.bias".into(), &[self.cfg.classes], feat)
    }

    /// Logits `N×classes` for an `N×3×S×S` batch.
    pub fn forward<T: Element>(&self, ctx: &Ctx<'_, T>, x: Var) -> Result<Var> {
        let g = ctx.graph;
        let shape = g.shape(x);
        let s = self.cfg.image_size;
        if shape.len() != 4 || shape[1..] != [IN_CHANNELS, s, s] {
            return Err(Error::Dimension {
                op: "upanets",
                detail: format!("expected N×{IN_CHANNELS}×{s}×{s} input, got {shape:?}"),
            });
        }
        let mut y = self.root.forward(ctx, x)?;
        let mut maps = vec![y];
        for layer in &self.layers {
            y = layer.forward(ctx, y)?;
            maps.push(y);
        }
        if self.cfg.exc_mode.final_only() {
            maps.drain(..LAYERS);
        }
        let feats = self.exc.forward(ctx, &maps)?;
        ctx.record("exc", feats);
        let logits = g.matmul(feats, ctx.param("head.weight")?)?;
        let logits = g.add_bias_last(logits, ctx.param("head.bias")?)?;
        ctx.record("head", logits);
        Ok(logits)
    }

    /// Table-style rows of (path, input shape, output shape, parameter count) for batch `n`.
    pub fn summary<T: Element>(&self, params: &ParamStore<T>, n: usize) -> Vec<SummaryRow> {
        let s = self.cfg.image_size;
        let mut rows = Vec::new();
        let f = self.cfg.base_width;
        rows.push(SummaryRow {
            path: "root".into(),
            input: vec![n, IN_CHANNELS, s, s],
            output: vec![n, f, s, s],
            params: params.count_under("root"),
        });
        let mut size = s;
        for layer in &self.layers {
            let plan = layer.plan;
            let w = plan.in_width;
            let out_size = if plan.downsample_first { size / 2 } else { size };
            let first = &layer.blocks()[0];
            rows.push(SummaryRow {
                path: first.path.clone(),
                input: vec![n, w, size, size],
                output: vec![n, w, out_size, out_size],
                params: params.count_under(&first.path),
            });
            let dense: usize = layer.blocks()[1..].iter().map(|b| params.count_under(&b.path)).sum();
            rows.push(SummaryRow {
                path: format!("{}.block1-{}", layer.path, plan.blocks),
                input: vec![n, w, out_size, out_size],
                output: vec![n, plan.out_width(), out_size, out_size],
                params: dense,
            });
            size = out_size;
        }
        rows.push(SummaryRow {
            path: "exc".into(),
            input: self.exc.taps().iter().map(|t| t.channels).collect(),
            output: vec![n, self.feature_len()],
            params: params.count_under("exc"),
        });
        rows.push(SummaryRow {
            path: "head".into(),
            input: vec![n, self.feature_len()],
            output: vec![n, self.cfg.classes],
            params: params.count_under("head"),
        });
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRow {
    pub path: String,
    /// For `exc`, the channel count of each tap.
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub params: usize,
}

/// Plain-text table with a closing total line.
pub fn render_summary(rows: &[SummaryRow]) -> String {
    let shape = |s: &[usize]| s.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:>18} {:>18} {:>12}",
        "module", "input", "output", "params"
    );
    for r in rows {
        let input = if r.path == "exc" {
            format!(
                "taps {}",
                r.input.iter().map(usize::to_string).collect::<Vec<_>>().join("+")
            )
        } else {
            shape(&r.input)
        };
        let _ = writeln!(
            out,
            "{:<20} {:>18} {:>18} {:>12}",
            r.path,
            input,
            shape(&r.output),
            r.params
        );
    }
    let total: usize = rows.iter().map(|r| r.params).sum();
    let _ = writeln!(out, "{:<20} {:>18} {:>18} {:>12}", "total", "", "", total);
    out
}

/// Everything one forward pass produced.
pub struct Pass {
    pub logits: Var,
    pub params: IndexMap<String, Var>,
    pub updates: Vec<(String, BatchStats)>,
    pub trace: Vec<(String, Var)>,
}

/// Network description plus its parameters and batch-norm buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub net: UpaNets,
    pub params: ParamStore<T>,
    pub buffers: BatchNormBuffers,
}

impl<T: Element> Model<T> {
    pub fn new(cfg: UpaNetsConfig, seed: u64) -> Result<Self> {
        let net = UpaNets::new(cfg)?;
        let mut init = Init::new(ChaCha8Rng::seed_from_u64(seed));
        net.declare(&mut init)?;
        let (params, buffers) = init.finish();
        Ok(Model { net, params, buffers })
    }

    pub fn config(&self) -> &UpaNetsConfig {
        &self.net.cfg
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// `track` marks parameters as requiring gradients.
    pub fn forward(&self, graph: &Graph<T>, x: Var, mode: Mode, track: bool) -> Result<Pass> {
        let ctx = Ctx::bind(graph, &self.params, &self.buffers, mode, track);
        self.run(ctx, x)
    }

    /// Forward with caller-provided parameter variables (for gradient checks).
    pub fn forward_with(&self, graph: &Graph<T>, params: IndexMap<String, Var>, x: Var, mode: Mode) -> Result<Pass> {
        self.run(Ctx::from_vars(graph, params, &self.buffers, mode), x)
    }

    fn run(&self, ctx: Ctx<'_, T>, x: Var) -> Result<Pass> {
        let logits = self.net.forward(&ctx, x)?;
        Ok(Pass {
            logits,
            updates: ctx.take_updates(),
            trace: ctx.trace(),
            params: ctx.params().clone(),
        })
    }

    /// Eval-mode logits with no gradient tracking.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let graph = Graph::new();
        let xv = graph.constant(x.clone());
        let pass = self.forward(&graph, xv, Mode::Eval, false)?;
        Ok((*graph.value(pass.logits)).clone())
    }

    pub fn apply_updates(&mut self, updates: &[(String, BatchStats)]) -> Result<()> {
        self.buffers.apply(updates, BATCH_NORM_MOMENTUM)
    }

    pub fn summary(&self, n: usize) -> Vec<SummaryRow> {
        self.net.summary(&self.params, n)
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            net: self.net.clone(),
            params: self.params.cast(),
            buffers: self.buffers.clone(),
        }
    }
}
