use crate::error::{Error, Result};
use crate::tensor::element::{gemm, MatRef};
use crate::tensor::{Element, Graph, Tensor, Var};

impl<T: Element> Graph<T> {
    /// `a: [..., M, K]` times `b: [K, P]`, batched over the leading extents of `a`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let (ashape, bshape) = (av.shape().to_vec(), bv.shape().to_vec());
        if ashape.len() < 2 || bshape.len() != 2 {
            return Err(Error::dim(
                "matmul",
                format!("expected [..., M, K] × [K, P], got {ashape:?} × {bshape:?}"),
            ));
        }
        let k = ashape[ashape.len() - 1];
        if k != bshape[0] {
            return Err(Error::dim(
                "matmul",
                format!("inner extents differ: {ashape:?} × {bshape:?}"),
            ));
        }
        let p = bshape[1];
        let rows = av.len() / k;
        let mut out = vec![T::zero(); rows * p];
        gemm(
            MatRef::new(av.data(), rows, k),
            MatRef::new(bv.data(), k, p),
            T::zero(),
            &mut out,
        );
        let mut oshape = ashape.clone();
        *oshape.last_mut().expect("rank >= 2") = p;
        let out = Tensor::new(oshape, out)?;
        self.push(
            "matmul",
            out,
            vec![a, b],
            Box::new(move |dc, needs| {
                let da = if needs[0] {
                    let mut da = vec![T::zero(); rows * k];
                    gemm(
                        MatRef::new(dc.data(), rows, p),
                        MatRef::new(bv.data(), k, p).t(),
                        T::zero(),
                        &mut da,
                    );
                    Some(Tensor::new(ashape.clone(), da)?)
                } else {
                    None
                };
                let db = if needs[1] {
                    let mut db = vec![T::zero(); k * p];
                    gemm(
                        MatRef::new(av.data(), rows, k).t(),
                        MatRef::new(dc.data(), rows, p),
                        T::zero(),
                        &mut db,
                    );
                    Some(Tensor::new(bshape.clone(), db)?)
                } else {
                    None
                };
                Ok(vec![da, db])
            }),
        )
    }

    /// Add `bias` along the last extent of `x`. A one-element bias is
    /// broadcast to every element.
    pub fn add_bias_last(&self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let last = *xv.shape().last().expect("non-empty shape");
        let width = bv.len();
        if bv.rank() != 1 || (width != last && width != 1) {
            return Err(Error::dim(
                "add_bias",
                format!(
                    "bias {:?} does not broadcast over last extent of {:?}",
                    bv.shape(),
                    xv.shape()
                ),
            ));
        }
        let out: Vec<T> = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv.data()[if width == 1 { 0 } else { i % last }])
            .collect();
        let shape = xv.shape().to_vec();
        let out = Tensor::new(shape.clone(), out)?;
        self.push(
            "add_bias",
            out,
            vec![x, bias],
            Box::new(move |dy, needs| {
                let db = needs[1].then(|| {
                    let mut db = vec![T::zero(); width];
                    for (i, &g) in dy.data().iter().enumerate() {
                        let j = if width == 1 { 0 } else { i % last };
                        db[j] = db[j] + g;
                    }
                    Tensor::new(vec![width], db).expect("bias grad")
                });
                Ok(vec![needs[0].then(|| dy.clone()), db])
            }),
        )
    }

    /// `N×C×H×W → N×(H·W)×C`: one row of channel values per pixel.
    pub fn to_channels_last(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4("to_channels_last")?;
        let out = nchw_to_nlc(xv.data(), n, c, h * w);
        let out = Tensor::new(vec![n, h * w, c], out)?;
        self.push(
            "to_channels_last",
            out,
            vec![x],
            Box::new(move |dy, _| {
                let dx = nlc_to_nchw(dy.data(), n, c, h * w);
                Ok(vec![Some(Tensor::new(vec![n, c, h, w], dx)?)])
            }),
        )
    }

    /// Inverse of [`Graph::to_channels_last`].
    pub fn from_channels_last(&self, x: Var, h: usize, w: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, l, c) = match xv.shape()[..] {
            [n, l, c] if l == h * w => (n, l, c),
            _ => {
                return Err(Error::dim(
                    "from_channels_last",
                    format!("expected N×{}×C, got {:?}", h * w, xv.shape()),
                ))
            }
        };
        let out = nlc_to_nchw(xv.data(), n, c, l);
        let out = Tensor::new(vec![n, c, h, w], out)?;
        self.push(
            "from_channels_last",
            out,
            vec![x],
            Box::new(move |dy, _| {
                let dx = nchw_to_nlc(dy.data(), n, c, l);
                Ok(vec![Some(Tensor::new(vec![n, l, c], dx)?)])
            }),
        )
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let original = xv.shape().to_vec();
        let out = (*xv).clone().reshape(shape.to_vec())?;
        self.push(
            "reshape",
            out,
            vec![x],
            Box::new(move |dy, _| Ok(vec![Some(dy.clone().reshape(original.clone())?)])),
        )
    }
}

fn nchw_to_nlc<T: Element>(src: &[T], n: usize, c: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * c * l];
    for i in 0..n {
        let s = &src[i * c * l..(i + 1) * c * l];
        let d = &mut out[i * c * l..(i + 1) * c * l];
        for ch in 0..c {
            for p in 0..l {
                d[p * c + ch] = s[ch * l + p];
            }
        }
    }
    out
}

fn nlc_to_nchw<T: Element>(src: &[T], n: usize, c: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * c * l];
    for i in 0..n {
        let s = &src[i * c * l..(i + 1) * c * l];
        let d = &mut out[i * c * l..(i + 1) * c * l];
        for p in 0..l {
            for ch in 0..c {
                d[ch * l + p] = s[p * c + ch];
            }
        }
    }
    out
}
