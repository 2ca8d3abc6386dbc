use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Which statistics a batch-norm call normalizes with.
#[derive(Debug, Clone, Copy)]
pub enum BatchNormMode<'a, T> {
    /// Use (and report) the statistics of the current batch.
    Train,
    /// Use stored running statistics.
    Eval { mean: &'a [T], var: &'a [T] },
}

/// Per-channel statistics of one training batch.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance (`m/(m−1)` correction) for running-average updates.
    pub var_unbiased: Vec<f64>,
    pub count: usize,
}

/// Exponential moving averages that eval-mode batch norm normalizes with.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub batches_tracked: u64,
}

impl RunningStats {
    /// Mean 0, variance 1, no batches seen.
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            batches_tracked: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// `running ← (1 − momentum)·running + momentum·batch`.
    pub fn update(&mut self, batch: &BatchStats, momentum: f64) -> Result<()> {
        if batch.mean.len() != self.channels() || batch.var_unbiased.len() != self.channels() {
            return Err(Error::dim(
                "batchnorm2d",
                format!(
                    "batch statistics over {} channels, running statistics over {}",
                    batch.mean.len(),
                    self.channels()
                ),
            ));
        }
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var_unbiased) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        self.batches_tracked += 1;
        Ok(())
    }

    /// Statistics in the working precision; fails until one training batch has been seen.
    pub fn eval_view<T: Element>(&self) -> Result<(Vec<T>, Vec<T>)> {
        if self.batches_tracked == 0 {
            return Err(Error::State(
                "batch norm evaluated before any training step populated its running statistics".into(),
            ));
        }
        Ok((
            self.mean.iter().map(|&v| T::from_f64_lossy(v)).collect(),
            self.var.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        ))
    }
}

impl<T: Element> Graph<T> {
    /// Per-channel normalization over `N×H×W` followed by `gamma·x̂ + beta`.
    pub fn batch_norm2d(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let (n, c, h, w) = xv.dims4("batchnorm2d")?;
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::dim(
                "batchnorm2d",
                format!(
                    "gamma {:?} / beta {:?} must both have shape [{c}]",
                    gv.shape(),
                    bv.shape()
                ),
            ));
        }
        let plane = h * w;
        let m = n * plane;

        let (mean, var, stats) = match mode {
            BatchNormMode::Train => {
                let mut sum = vec![0.0f64; c];
                for (p, chunk) in xv.data().chunks(plane).enumerate() {
                    sum[p % c] += chunk.iter().map(|v| v.to_f64_lossy()).sum::<f64>();
                }
                let mean: Vec<f64> = sum.iter().map(|s| s / m as f64).collect();
                let mut sq = vec![0.0f64; c];
                for (p, chunk) in xv.data().chunks(plane).enumerate() {
                    let mu = mean[p % c];
                    sq[p % c] += chunk
                        .iter()
                        .map(|v| {
                            let d = v.to_f64_lossy() - mu;
                            d * d
                        })
                        .sum::<f64>();
                }
                let var: Vec<f64> = sq.iter().map(|s| s / m as f64).collect();
                let var_unbiased = if m > 1 {
                    sq.iter().map(|s| s / (m - 1) as f64).collect()
                } else {
                    var.clone()
                };
                let stats = BatchStats {
                    mean: mean.clone(),
                    var_unbiased,
                    count: m,
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::dim(
                        "batchnorm2d",
                        format!("running statistics must have {c} entries"),
                    ));
                }
                (
                    mean.iter().map(|v| v.to_f64_lossy()).collect(),
                    var.iter().map(|v| v.to_f64_lossy()).collect(),
                    None,
                )
            }
        };
        let train = stats.is_some();
        let mean: Vec<T> = mean.into_iter().map(T::from_f64_lossy).collect();
        let inv_std: Vec<T> = var.iter().map(|v| T::from_f64_lossy(1.0 / (v + eps).sqrt())).collect();

        let mut out = Vec::with_capacity(xv.len());
        for (p, chunk) in xv.data().chunks(plane).enumerate() {
            let ch = p % c;
            let (mu, is, ga, be) = (mean[ch], inv_std[ch], gv.data()[ch], bv.data()[ch]);
            out.extend(chunk.iter().map(|&v| ga * ((v - mu) * is) + be));
        }
        let out = Tensor::new(vec![n, c, h, w], out)?;
        let var = self.push(
            "batchnorm2d",
            out,
            vec![x, gamma, beta],
            Box::new(move |dy, needs| {
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for (p, (gc, xc)) in dy.data().chunks(plane).zip(xv.data().chunks(plane)).enumerate() {
                    let ch = p % c;
                    let (mu, is) = (mean[ch], inv_std[ch]);
                    let mut s = T::zero();
                    let mut sx = T::zero();
                    for (&g, &v) in gc.iter().zip(xc) {
                        s = s + g;
                        sx = sx + g * ((v - mu) * is);
                    }
                    sum_dy[ch] = sum_dy[ch] + s;
                    sum_dy_xhat[ch] = sum_dy_xhat[ch] + sx;
                }
                let dx = needs[0].then(|| {
                    let mf = T::from_usize_lossy(m);
                    let mut data = Vec::with_capacity(dy.len());
                    for (p, (gc, xc)) in dy.data().chunks(plane).zip(xv.data().chunks(plane)).enumerate() {
                        let ch = p % c;
                        let (mu, is) = (mean[ch], inv_std[ch]);
                        let scale = gv.data()[ch] * is;
                        if train {
                            let mean_dy = sum_dy[ch] / mf;
                            let mean_dy_xhat = sum_dy_xhat[ch] / mf;
                            data.extend(
                                gc.iter()
                                    .zip(xc)
                                    .map(|(&g, &v)| scale * (g - mean_dy - (v - mu) * is * mean_dy_xhat)),
                            );
                        } else {
                            data.extend(gc.iter().map(|&g| scale * g));
                        }
                    }
                    Tensor::new(vec![n, c, h, w], data).expect("batchnorm dx")
                });
                let dgamma = needs[1].then(|| Tensor::new(vec![c], sum_dy_xhat.clone()).expect("dgamma"));
                let dbeta = needs[2].then(|| Tensor::new(vec![c], sum_dy.clone()).expect("dbeta"));
                Ok(vec![dx, dgamma, dbeta])
            }),
        )?;
        Ok((var, stats))
    }

    /// Normalize each sample over its trailing `normalized` extents, then
    /// apply an optional elementwise affine map shaped like `normalized`.
    pub fn layer_norm(&self, x: Var, normalized: &[usize], affine: Option<(Var, Var)>, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if normalized.is_empty()
            || normalized.len() > shape.len()
            || shape[shape.len() - normalized.len()..] != *normalized
        {
            return Err(Error::dim(
                "layernorm",
                format!("normalized extents {normalized:?} are not a suffix of {shape:?}"),
            ));
        }
        let d: usize = normalized.iter().product();
        let (gv, bv) = match affine {
            Some((g, b)) => {
                let (gv, bv) = (self.value(g), self.value(b));
                if gv.shape() != normalized || bv.shape() != normalized {
                    return Err(Error::dim(
                        "layernorm",
                        format!(
                            "gamma {:?} / beta {:?} must match normalized extents {normalized:?}",
                            gv.shape(),
                            bv.shape()
                        ),
                    ));
                }
                (Some(gv), Some(bv))
            }
            None => (None, None),
        };

        let rows = xv.len() / d;
        let mut mean = Vec::with_capacity(rows);
        let mut inv_std = Vec::with_capacity(rows);
        for row in xv.data().chunks(d) {
            let mu = row.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / d as f64;
            let var = row
                .iter()
                .map(|v| {
                    let e = v.to_f64_lossy() - mu;
                    e * e
                })
                .sum::<f64>()
                / d as f64;
            mean.push(T::from_f64_lossy(mu));
            inv_std.push(T::from_f64_lossy(1.0 / (var + eps).sqrt()));
        }
        let mut out = Vec::with_capacity(xv.len());
        for (r, row) in xv.data().chunks(d).enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let xhat = (v - mean[r]) * inv_std[r];
                out.push(match (&gv, &bv) {
                    (Some(g), Some(b)) => g.data()[j] * xhat + b.data()[j],
                    _ => xhat,
                });
            }
        }
        let out = Tensor::new(shape.clone(), out)?;
        let mut parents = vec![x];
        if let Some((g, b)) = affine {
            parents.push(g);
            parents.push(b);
        }
        let norm_shape = normalized.to_vec();
        self.push(
            "layernorm",
            out,
            parents,
            Box::new(move |dy, needs| {
                let df = T::from_usize_lossy(d);
                let mut dx = needs[0].then(|| vec![T::zero(); rows * d]);
                let mut dgamma = gv.as_ref().map(|_| vec![T::zero(); d]);
                let mut dbeta = bv.as_ref().map(|_| vec![T::zero(); d]);
                let mut gscaled = vec![T::zero(); d];
                for r in 0..rows {
                    let xr = &xv.data()[r * d..(r + 1) * d];
                    let gr = &dy.data()[r * d..(r + 1) * d];
                    let mut sum_g = T::zero();
                    let mut sum_gx = T::zero();
                    for j in 0..d {
                        let xhat = (xr[j] - mean[r]) * inv_std[r];
                        if let Some(dg) = dgamma.as_mut() {
                            dg[j] = dg[j] + gr[j] * xhat;
                        }
                        if let Some(db) = dbeta.as_mut() {
                            db[j] = db[j] + gr[j];
                        }
                        let g = match &gv {
                            Some(gamma) => gr[j] * gamma.data()[j],
                            None => gr[j],
                        };
                        gscaled[j] = g;
                        sum_g = sum_g + g;
                        sum_gx = sum_gx + g * xhat;
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dr = &mut dx[r * d..(r + 1) * d];
                        for j in 0..d {
                            let xhat = (xr[j] - mean[r]) * inv_std[r];
                            dr[j] = inv_std[r] * (gscaled[j] - sum_g / df - xhat * sum_gx / df);
                        }
                    }
                }
                let mut grads = vec![dx.map(|v| Tensor::new(shape.clone(), v).expect("layernorm dx"))];
                if gv.is_some() {
                    grads.push(dgamma.map(|v| Tensor::new(norm_shape.clone(), v).expect("dgamma")));
                    grads.push(dbeta.map(|v| Tensor::new(norm_shape.clone(), v).expect("dbeta")));
                }
                Ok(grads)
            }),
        )
    }
}
