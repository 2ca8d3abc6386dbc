use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

fn pooled_extent(input: usize, k: usize, stride: usize, axis: &str) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(Error::config("avgpool2d kernel and stride must be positive"));
    }
    if k > input {
        return Err(Error::dim(
            "avgpool2d",
            format!("window {k} larger than {axis} extent {input}"),
        ));
    }
    if !(input - k).is_multiple_of(stride) {
        return Err(Error::config(format!(
            "avgpool2d {axis} extent {input} does not tile with window {k} and stride {stride}"
        )));
    }
    Ok((input - k) / stride + 1)
}

impl<T: Element> Graph<T> {
    /// Mean over each `k×k` window.
    pub fn avg_pool2d(&self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4("avgpool2d")?;
        let ho = pooled_extent(h, k, stride, "height")?;
        let wo = pooled_extent(w, k, stride, "width")?;
        let inv = T::one() / T::from_usize_lossy(k * k);
        let src = xv.data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        for (m, dst) in out.chunks_mut(ho * wo).enumerate() {
            let plane = &src[m * h * w..(m + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = T::zero();
                    for dy in 0..k {
                        let row = &plane[(oy * stride + dy) * w..];
                        for dx in 0..k {
                            acc = acc + row[ox * stride + dx];
                        }
                    }
                    dst[oy * wo + ox] = acc * inv;
                }
            }
        }
        let out = Tensor::new(vec![n, c, ho, wo], out)?;
        self.push(
            "avgpool2d",
            out,
            vec![x],
            Box::new(move |dy, _| {
                let mut dx = vec![T::zero(); n * c * h * w];
                for (m, g) in dy.data().chunks(ho * wo).enumerate() {
                    let plane = &mut dx[m * h * w..(m + 1) * h * w];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let share = g[oy * wo + ox] * inv;
                            for ky in 0..k {
                                let row = &mut plane[(oy * stride + ky) * w..];
                                for kx in 0..k {
                                    let v = &mut row[ox * stride + kx];
                                    *v = *v + share;
                                }
                            }
                        }
                    }
                }
                Ok(vec![Some(Tensor::new(vec![n, c, h, w], dx)?)])
            }),
        )
    }

    /// Per-channel spatial mean, `N×C×H×W → N×C`.
    pub fn global_avg_pool(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4("gap")?;
        let plane = h * w;
        let inv = T::one() / T::from_usize_lossy(plane);
        let out: Vec<T> = xv
            .data()
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new(vec![n, c], out)?;
        self.push(
            "gap",
            out,
            vec![x],
            Box::new(move |dy, _| {
                let mut dx = Vec::with_capacity(n * c * plane);
                for &g in dy.data() {
                    dx.extend(std::iter::repeat_n(g * inv, plane));
                }
                Ok(vec![Some(Tensor::new(vec![n, c, h, w], dx)?)])
            }),
        )
    }
}
