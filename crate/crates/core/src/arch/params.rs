use indexmap::IndexMap;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{BatchStats, Element, RunningStats, Tensor};

/// Named trainable tensors in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            entries: IndexMap::new(),
        }
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Names must be non-empty and unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::config("parameter name must be non-empty"));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter {name}")));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::config(format!("no parameter named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("no parameter named {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Scalar count of every parameter whose name starts with `prefix.` or equals it.
    pub fn count_under(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(k, _)| {
                k.as_str() == prefix || (k.starts_with(prefix) && k.as_bytes().get(prefix.len()) == Some(&b'.'))
            })
            .map(|(_, v)| v.len())
            .sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

/// Running statistics of every batch-norm layer, keyed by layer path.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchNormBuffers {
    entries: IndexMap<String, RunningStats>,
}

impl BatchNormBuffers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, stats: RunningStats) -> Result<()> {
        let path = path.into();
        if self.entries.contains_key(&path) {
            return Err(Error::config(format!("duplicate batch norm {path}")));
        }
        self.entries.insert(path, stats);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Result<&RunningStats> {
        self.entries
            .get(path)
            .ok_or_else(|| Error::config(format!("no batch norm named {path}")))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut RunningStats> {
        self.entries
            .get_mut(path)
            .ok_or_else(|| Error::config(format!("no batch norm named {path}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RunningStats)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fold one step's batch statistics into the running averages.
    pub fn apply(&mut self, updates: &[(String, BatchStats)], momentum: f64) -> Result<()> {
        for (path, stats) in updates {
            self.get_mut(path)?.update(stats, momentum)?;
        }
        Ok(())
    }
}

/// Parameter factory used while a network declares its tensors.
pub struct Init<T> {
    rng: ChaCha8Rng,
    pub params: ParamStore<T>,
    pub buffers: BatchNormBuffers,
}

impl<T: Element> Init<T> {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Init {
            rng,
            params: ParamStore::new(),
            buffers: BatchNormBuffers::new(),
        }
    }

    /// He-normal: std = sqrt(2 / fan_in), fan_in = in/groups · kh · kw.
    pub fn conv_kernel(&mut self, name: String, shape: [usize; 4]) -> Result<()> {
        let fan_in = shape[1] * shape[2] * shape[3];
        let std = (2.0 / fan_in as f64).sqrt();
        let t = Tensor::randn(shape.to_vec(), std, &mut self.rng);
        self.params.insert(name, t)
    }

    /// Uniform on ±1/sqrt(fan_in).
    pub fn fan_in_uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<()> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let t = Tensor::rand_uniform(shape.to_vec(), -bound, bound, &mut self.rng);
        self.params.insert(name, t)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) -> Result<()> {
        self.params
            .insert(name, Tensor::full(shape.to_vec(), T::from_f64_lossy(value)))
    }

    /// Gain 1 and shift 0 under `path.weight` / `path.bias`, plus fresh running statistics.
    pub fn batch_norm(&mut self, path: &str, channels: usize) -> Result<()> {
        self.constant(format!("{path}.weight"), &[channels], 1.0)?;
        self.constant(format!("{path}.bias"), &[channels], 0.0)?;
        self.buffers.insert(path, RunningStats::new(channels))
    }

    pub fn layer_norm(&mut self, path: &str, shape: &[usize]) -> Result<()> {
        self.constant(format!("{path}.weight"), shape, 1.0)?;
        self.constant(format!("{path}.bias"), shape, 0.0)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn finish(self) -> (ParamStore<T>, BatchNormBuffers) {
        (self.params, self.buffers)
    }
}
