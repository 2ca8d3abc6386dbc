//! 2-D convolution through explicit patch matrices.
//!
//! Per image and group, the input window is unrolled into a
//! `(C_g·kh·kw) × (H'·W')` matrix so that the forward pass is one GEMM with
//! the `C_out_g × (C_g·kh·kw)` kernel block. Backward uses the transposes of
//! the same products and folds patch gradients back with `col2im`.

use crate::error::{Error, Result};
use crate::tensor::element::{gemm, MatRef};
use crate::tensor::{Element, Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            pad: 0,
            groups: 1,
        }
    }
}

impl Conv2dSpec {
    pub fn same3x3(groups: usize) -> Self {
        Self {
            stride: 1,
            pad: 1,
            groups,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    spec: Conv2dSpec,
}

impl Geometry {
    fn patch_rows(&self) -> usize {
        self.cin_g * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }
}

fn out_extent(input: usize, k: usize, stride: usize, pad: usize, axis: &str) -> Result<usize> {
    let padded = input + 2 * pad;
    if k > padded {
        return Err(Error::dim(
            "conv2d",
            format!("kernel {axis} extent {k} exceeds padded input {padded}"),
        ));
    }
    if !(padded - k).is_multiple_of(stride) {
        return Err(Error::config(format!(
            "conv2d {axis}: ({input} + 2·{pad} − {k}) is not divisible by stride {stride}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

fn geometry(x: &[usize], k: &[usize], spec: Conv2dSpec) -> Result<Geometry> {
    let [n, cin, h, w] = x[..] else {
        return Err(Error::dim("conv2d", format!("input must be N×C×H×W, got {x:?}")));
    };
    let [cout, cin_g, kh, kw] = k[..] else {
        return Err(Error::dim(
            "conv2d",
            format!("kernel must be Cout×Cin/g×kh×kw, got {k:?}"),
        ));
    };
    if spec.stride == 0 || spec.groups == 0 {
        return Err(Error::config("conv2d stride and groups must be positive"));
    }
    if cin % spec.groups != 0 || cout % spec.groups != 0 {
        return Err(Error::config(format!(
            "conv2d groups {} must divide both {cin} input and {cout} output channels",
            spec.groups
        )));
    }
    if cin_g * spec.groups != cin {
        return Err(Error::dim(
            "conv2d",
            format!(
                "kernel expects {} input channels per group, input has {cin} over {} groups",
                cin_g, spec.groups
            ),
        ));
    }
    let ho = out_extent(h, kh, spec.stride, spec.pad, "height")?;
    let wo = out_extent(w, kw, spec.stride, spec.pad, "width")?;
    Ok(Geometry {
        n,
        cin,
        h,
        w,
        cout,
        cin_g,
        cout_g: cout / spec.groups,
        kh,
        kw,
        ho,
        wo,
        spec,
    })
}

/// Output columns `[lo, hi)` whose input column `o·stride + k − pad` lies inside `[0, extent)`.
fn valid_range(out: usize, extent: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if extent + pad > k {
        ((extent + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unroll channels `[c0, c0+g.cin_g)` of one `C×H×W` image into `cols`.
fn im2col<T: Element>(image: &[T], c0: usize, g: &Geometry, cols: &mut [T]) {
    let plane = g.out_plane();
    let (stride, pad) = (g.spec.stride, g.spec.pad);
    for ci in 0..g.cin_g {
        let src = &image[(c0 + ci) * g.h * g.w..(c0 + ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (y_lo, y_hi) = valid_range(g.ho, g.h, ki, stride, pad);
            for kj in 0..g.kw {
                let (x_lo, x_hi) = valid_range(g.wo, g.w, kj, stride, pad);
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                dst[..y_lo * g.wo].fill(T::zero());
                dst[y_hi * g.wo..].fill(T::zero());
                for oy in y_lo..y_hi {
                    let iy = oy * stride + ki - pad;
                    let src_row = &src[iy * g.w..(iy + 1) * g.w];
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    out_row[..x_lo].fill(T::zero());
                    out_row[x_hi..].fill(T::zero());
                    if x_lo == x_hi {
                        continue;
                    }
                    let ix0 = x_lo * stride + kj - pad;
                    if stride == 1 {
                        out_row[x_lo..x_hi].copy_from_slice(&src_row[ix0..ix0 + (x_hi - x_lo)]);
                    } else {
                        for (o, s) in out_row[x_lo..x_hi]
                            .iter_mut()
                            .zip(src_row[ix0..].iter().step_by(stride))
                        {
                            *o = *s;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add patch gradients back onto channels `[c0, c0+g.cin_g)`.
fn col2im<T: Element>(cols: &[T], c0: usize, g: &Geometry, image: &mut [T]) {
    let plane = g.out_plane();
    let (stride, pad) = (g.spec.stride, g.spec.pad);
    for ci in 0..g.cin_g {
        let dst = &mut image[(c0 + ci) * g.h * g.w..(c0 + ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (y_lo, y_hi) = valid_range(g.ho, g.h, ki, stride, pad);
            for kj in 0..g.kw {
                let (x_lo, x_hi) = valid_range(g.wo, g.w, kj, stride, pad);
                if x_lo == x_hi {
                    continue;
                }
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in y_lo..y_hi {
                    let iy = oy * stride + ki - pad;
                    let dst_row = &mut dst[iy * g.w..(iy + 1) * g.w];
                    let src_row = &src[oy * g.wo + x_lo..oy * g.wo + x_hi];
                    let ix0 = x_lo * stride + kj - pad;
                    if stride == 1 {
                        for (d, &v) in dst_row[ix0..ix0 + src_row.len()].iter_mut().zip(src_row) {
                            *d = *d + v;
                        }
                    } else {
                        for (d, &v) in dst_row[ix0..].iter_mut().step_by(stride).zip(src_row) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `rows × cols` into row-major `cols × rows`, in cache-sized tiles.
fn transpose<T: Element>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    const TILE: usize = 32;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

fn conv_forward<T: Element>(x: &Tensor<T>, k: &Tensor<T>, bias: Option<&Tensor<T>>, g: &Geometry) -> Tensor<T> {
    let plane = g.out_plane();
    let rows = g.patch_rows();
    let in_image = g.cin * g.h * g.w;
    let out_image = g.cout * plane;
    let mut out = vec![T::zero(); g.n * out_image];
    let mut cols = vec![T::zero(); rows * plane];
    for i in 0..g.n {
        let image = &x.data()[i * in_image..(i + 1) * in_image];
        for grp in 0..g.spec.groups {
            im2col(image, grp * g.cin_g, g, &mut cols);
            let kern = &k.data()[grp * g.cout_g * rows..(grp + 1) * g.cout_g * rows];
            let o0 = i * out_image + grp * g.cout_g * plane;
            gemm(
                MatRef::new(kern, g.cout_g, rows),
                MatRef::new(&cols, rows, plane),
                T::zero(),
                &mut out[o0..o0 + g.cout_g * plane],
            );
        }
        if let Some(b) = bias {
            for co in 0..g.cout {
                let bv = b.data()[co];
                let o0 = i * out_image + co * plane;
                for v in &mut out[o0..o0 + plane] {
                    *v = *v + bv;
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.cout, g.ho, g.wo], out).expect("conv output extents")
}

/// Gradients for input, kernel and bias; `None` where not requested.
type ConvGrads<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>);

fn conv_backward<T: Element>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    dy: &Tensor<T>,
    g: &Geometry,
    need_x: bool,
    need_k: bool,
    need_b: bool,
) -> ConvGrads<T> {
    let plane = g.out_plane();
    let rows = g.patch_rows();
    let in_image = g.cin * g.h * g.w;
    let out_image = g.cout * plane;
    let mut dx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut dk = need_k.then(|| vec![T::zero(); k.len()]);
    let mut cols = vec![T::zero(); rows * plane];
    let mut cols_t = vec![T::zero(); if need_k { rows * plane } else { 0 }];
    let mut dcols = vec![T::zero(); rows * plane];
    for i in 0..g.n {
        let image = &x.data()[i * in_image..(i + 1) * in_image];
        for grp in 0..g.spec.groups {
            let kern_range = grp * g.cout_g * rows..(grp + 1) * g.cout_g * rows;
            let o0 = i * out_image + grp * g.cout_g * plane;
            let dy_g = MatRef::new(&dy.data()[o0..o0 + g.cout_g * plane], g.cout_g, plane);
            if let Some(dk) = dk.as_mut() {
                im2col(image, grp * g.cin_g, g, &mut cols);
                transpose(&cols, rows, plane, &mut cols_t);
                gemm(
                    dy_g,
                    MatRef::new(&cols_t, plane, rows),
                    T::one(),
                    &mut dk[kern_range.clone()],
                );
            }
            if let Some(dx) = dx.as_mut() {
                gemm(
                    MatRef::new(&k.data()[kern_range], g.cout_g, rows).t(),
                    dy_g,
                    T::zero(),
                    &mut dcols,
                );
                col2im(&dcols, grp * g.cin_g, g, &mut dx[i * in_image..(i + 1) * in_image]);
            }
        }
    }
    let db = need_b.then(|| {
        let mut db = vec![T::zero(); g.cout];
        for i in 0..g.n {
            for (co, acc) in db.iter_mut().enumerate() {
                let o0 = i * out_image + co * plane;
                *acc = *acc + dy.data()[o0..o0 + plane].iter().copied().sum::<T>();
            }
        }
        Tensor::new(vec![g.cout], db).expect("bias grad extents")
    });
    (
        dx.map(|d| Tensor::new(x.shape().to_vec(), d).expect("input grad extents")),
        dk.map(|d| Tensor::new(k.shape().to_vec(), d).expect("kernel grad extents")),
        db,
    )
}

impl<T: Element> Graph<T> {
    /// Cross-correlation of `x: N×Cin×H×W` with `kernel: Cout×(Cin/groups)×kh×kw`.
    pub fn conv2d(&self, x: Var, kernel: Var, bias: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let xv = self.value(x);
        let kv = self.value(kernel);
        let g = geometry(xv.shape(), kv.shape(), spec)?;
        let bv = bias.map(|b| self.value(b));
        if let Some(b) = &bv {
            if b.shape() != [g.cout] {
                return Err(Error::dim(
                    "conv2d",
                    format!("bias must have shape [{}], got {:?}", g.cout, b.shape()),
                ));
            }
        }
        let out = conv_forward(&xv, &kv, bv.as_deref(), &g);
        let mut parents = vec![x, kernel];
        parents.extend(bias);
        let has_bias = bias.is_some();
        self.push(
            "conv2d",
            out,
            parents,
            Box::new(move |dy, needs| {
                let need_b = has_bias && needs[2];
                let (dx, dk, db) = conv_backward(&xv, &kv, dy, &g, needs[0], needs[1], need_b);
                let mut grads = vec![dx, dk];
                if has_bias {
                    grads.push(db);
                }
                Ok(grads)
            }),
        )
    }
}
