use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

impl<T: Element> Graph<T> {
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim("add", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let out = av.zip_map(&bv, |x, y| x + y)?;
        self.push(
            "add",
            out,
            vec![a, b],
            Box::new(|dy, needs| Ok(vec![needs[0].then(|| dy.clone()), needs[1].then(|| dy.clone())])),
        )
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim("mul", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let out = av.zip_map(&bv, |x, y| x * y)?;
        self.push(
            "mul",
            out,
            vec![a, b],
            Box::new(move |dy, needs| {
                Ok(vec![
                    if needs[0] {
                        Some(dy.zip_map(&bv, |g, y| g * y)?)
                    } else {
                        None
                    },
                    if needs[1] {
                        Some(dy.zip_map(&av, |g, x| g * x)?)
                    } else {
                        None
                    },
                ])
            }),
        )
    }

    pub fn scale(&self, x: Var, factor: f64) -> Result<Var> {
        let s = T::from_f64_lossy(factor);
        let out = self.value(x).map(|v| v * s);
        self.push(
            "scale",
            out,
            vec![x],
            Box::new(move |dy, _| Ok(vec![Some(dy.map(|g| g * s))])),
        )
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = xv.map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(
            "relu",
            out,
            vec![x],
            Box::new(move |dy, _| {
                Ok(vec![Some(dy.zip_map(&xv, |g, v| {
                    if v > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                })?)])
            }),
        )
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let out = Tensor::scalar(xv.sum());
        self.push(
            "sum",
            out,
            vec![x],
            Box::new(move |dy, _| Ok(vec![Some(Tensor::full(shape.clone(), dy.data()[0]))])),
        )
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Concatenate `N×Ci×H×W` parts along channels, in argument order.
    pub fn concat_channels(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat_channels", "no parts given"));
        }
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let (n, _, h, w) = values[0].dims4("concat_channels")?;
        let mut widths = Vec::with_capacity(parts.len());
        for v in &values {
            let (pn, pc, ph, pw) = v.dims4("concat_channels")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::dim(
                    "concat_channels",
                    format!("part {:?} disagrees with N={n}, H={h}, W={w}", v.shape()),
                ));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total * plane);
        for i in 0..n {
            for (v, &c) in values.iter().zip(&widths) {
                out.extend_from_slice(&v.data()[i * c * plane..(i + 1) * c * plane]);
            }
        }
        let out = Tensor::new(vec![n, total, h, w], out)?;
        self.push(
            "concat_channels",
            out,
            parts.to_vec(),
            Box::new(move |dy, needs| {
                let mut grads = Vec::with_capacity(widths.len());
                let mut start = 0;
                for (&c, &need) in widths.iter().zip(needs) {
                    grads.push(if need { Some(dy.slice_channels(start, c)?) } else { None });
                    start += c;
                }
                Ok(grads)
            }),
        )
    }

    pub fn slice_channels(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let out = xv.slice_channels(start, len)?;
        let (n, c, h, w) = xv.dims4("slice_channels")?;
        self.push(
            "slice_channels",
            out,
            vec![x],
            Box::new(move |dy, _| {
                let plane = h * w;
                let mut dx = vec![T::zero(); n * c * plane];
                for i in 0..n {
                    let dst = (i * c + start) * plane;
                    let src = i * len * plane;
                    dx[dst..dst + len * plane].copy_from_slice(&dy.data()[src..src + len * plane]);
                }
                Ok(vec![Some(Tensor::new(vec![n, c, h, w], dx)?)])
            }),
        )
    }

    /// View channels as `groups × (C/groups)` and transpose to
    /// `(C/groups) × groups`, interleaving the groups.
    pub fn channel_shuffle(&self, x: Var, groups: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4("channel_shuffle")?;
        if groups == 0 || c % groups != 0 {
            return Err(Error::config(format!(
                "channel_shuffle: {groups} groups do not divide {c} channels"
            )));
        }
        let per = c / groups;
        // output channel j·groups + g takes input channel g·per + j
        let src_of: Vec<usize> = (0..c).map(|o| (o % groups) * per + o / groups).collect();
        let plane = h * w;
        let permute = move |data: &[T], map: &[usize]| {
            let mut out = vec![T::zero(); data.len()];
            for i in 0..n {
                for (o, &s) in map.iter().enumerate() {
                    let dst = (i * c + o) * plane;
                    let src = (i * c + s) * plane;
                    out[dst..dst + plane].copy_from_slice(&data[src..src + plane]);
                }
            }
            out
        };
        let out = Tensor::new(vec![n, c, h, w], permute(xv.data(), &src_of))?;
        let mut inverse = vec![0; c];
        for (o, &s) in src_of.iter().enumerate() {
            inverse[s] = o;
        }
        self.push(
            "channel_shuffle",
            out,
            vec![x],
            Box::new(move |dy, _| Ok(vec![Some(Tensor::new(vec![n, c, h, w], permute(dy.data(), &inverse))?)])),
        )
    }
}
