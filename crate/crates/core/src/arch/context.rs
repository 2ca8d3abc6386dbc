use std::cell::RefCell;

use indexmap::IndexMap;

use super::params::{BatchNormBuffers, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormMode, BatchStats, Element, Graph, Var, BATCH_NORM_EPS, LAYER_NORM_EPS};

/// Whether batch norm uses batch statistics (and reports them) or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Parameters bound into one graph, plus whatever the forward pass observed.
pub struct Ctx<'a, T> {
    pub graph: &'a Graph<T>,
    params: IndexMap<String, Var>,
    buffers: &'a BatchNormBuffers,
    mode: Mode,
    updates: RefCell<Vec<(String, BatchStats)>>,
    trace: RefCell<Vec<(String, Var)>>,
}

impl<'a, T: Element> Ctx<'a, T> {
    /// Bind each parameter as a leaf; `track` decides whether it receives a gradient.
    pub fn bind(
        graph: &'a Graph<T>,
        params: &ParamStore<T>,
        buffers: &'a BatchNormBuffers,
        mode: Mode,
        track: bool,
    ) -> Self {
        let vars = params
            .iter()
            .map(|(k, v)| (k.to_string(), graph.leaf(v.clone(), track)))
            .collect();
        Self::from_vars(graph, vars, buffers, mode)
    }

    /// Use parameter variables that already live in `graph`.
    pub fn from_vars(
        graph: &'a Graph<T>,
        params: IndexMap<String, Var>,
        buffers: &'a BatchNormBuffers,
        mode: Mode,
    ) -> Self {
        Ctx {
            graph,
            params,
            buffers,
            mode,
            updates: RefCell::new(Vec::new()),
            trace: RefCell::new(Vec::new()),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&self, name: &str) -> Result<Var> {
        self.params
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("no parameter named {name}")))
    }

    pub fn params(&self) -> &IndexMap<String, Var> {
        &self.params
    }

    /// Batch norm over `path.weight` / `path.bias` with the running statistics of `path`.
    pub fn batch_norm(&self, path: &str, x: Var) -> Result<Var> {
        let gamma = self.param(&format!("{path}.weight"))?;
        let beta = self.param(&format!("{path}.bias"))?;
        match self.mode {
            Mode::Train => {
                let (y, stats) = self
                    .graph
                    .batch_norm2d(x, gamma, beta, BatchNormMode::Train, BATCH_NORM_EPS)?;
                if let Some(stats) = stats {
                    self.updates.borrow_mut().push((path.to_string(), stats));
                }
                Ok(y)
            }
            Mode::Eval => {
                let (mean, var) = self.buffers.get(path)?.eval_view::<T>()?;
                let mode = BatchNormMode::Eval { mean: &mean, var: &var };
                Ok(self.graph.batch_norm2d(x, gamma, beta, mode, BATCH_NORM_EPS)?.0)
            }
        }
    }

    /// Affine-free layer norm over every extent after the batch axis.
    pub fn layer_norm_sample(&self, x: Var) -> Result<Var> {
        let shape = self.graph.shape(x);
        self.graph.layer_norm(x, &shape[1..], None, LAYER_NORM_EPS)
    }

    /// Layer norm over the last extent with `path.weight` / `path.bias`.
    pub fn layer_norm_affine(&self, path: &str, x: Var) -> Result<Var> {
        let shape = self.graph.shape(x);
        let gamma = self.param(&format!("{path}.weight"))?;
        let beta = self.param(&format!("{path}.bias"))?;
        self.graph
            .layer_norm(x, &shape[shape.len() - 1..], Some((gamma, beta)), LAYER_NORM_EPS)
    }

    pub fn record(&self, name: impl Into<String>, v: Var) {
        self.trace.borrow_mut().push((name.into(), v));
    }

    pub fn traced(&self, name: &str) -> Option<Var> {
        self.trace
            .borrow()
            .iter()
            .rev()
            .find(|(k, _)| k == name)
            .map(|&(_, v)| v)
    }

    pub fn trace(&self) -> Vec<(String, Var)> {
        self.trace.borrow().clone()
    }

    /// Batch statistics gathered so far, in call order.
    pub fn take_updates(&self) -> Vec<(String, BatchStats)> {
        std::mem::take(&mut self.updates.borrow_mut())
    }
}
