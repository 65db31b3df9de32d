//! Primitive tensor operations: forward construction plus the backward rule
//! each op contributes to the reverse sweep.

use rayon::prelude::*;

use super::{NnError, Tensor};
use crate::scalar::Scalar;

pub(crate) struct OpCtx<'a, S: Scalar> {
    pub out_data: &'a [S],
    #[allow(dead_code)]
    pub out_shape: &'a [usize],
    pub parents: &'a [Tensor<S>],
}

pub(crate) trait BackwardOp<S: Scalar> {
    /// d(loss)/d(parent) for each parent given d(loss)/d(output).
    fn backward(&self, ctx: &OpCtx<'_, S>, grad_out: &[S]) -> Vec<Option<Vec<S>>>;
}

fn assert_same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: operand shapes {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

// ---------------------------------------------------------------- elementwise

struct AddOp;
impl<S: Scalar> BackwardOp<S> for AddOp {
    fn backward(&self, _ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        vec![Some(g.to_vec()), Some(g.to_vec())]
    }
}

struct SubOp;
impl<S: Scalar> BackwardOp<S> for SubOp {
    fn backward(&self, _ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        vec![
            Some(g.to_vec()),
            Some(g.iter().map(|&v| -v).collect()),
        ]
    }
}

struct MulOp;
impl<S: Scalar> BackwardOp<S> for MulOp {
    fn backward(&self, ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        let a = ctx.parents[0].data();
        let b = ctx.parents[1].data();
        vec![
            Some(g.iter().zip(&*b).map(|(&g, &b)| g * b).collect()),
            Some(g.iter().zip(&*a).map(|(&g, &a)| g * a).collect()),
        ]
    }
}

struct AffineOp<S> {
    mul: S,
}
impl<S: Scalar> BackwardOp<S> for AffineOp<S> {
    fn backward(&self, _ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        vec![Some(g.iter().map(|&v| v * self.mul).collect())]
    }
}

struct AbsOp;
impl<S: Scalar> BackwardOp<S> for AbsOp {
    fn backward(&self, ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        let a = ctx.parents[0].data();
        vec![Some(
            g.iter()
                .zip(&*a)
                .map(|(&g, &a)| {
                    if a > S::zero() {
                        g
                    } else if a < S::zero() {
                        -g
                    } else {
                        S::zero()
                    }
                })
                .collect(),
        )]
    }
}

struct ReluOp;
impl<S: Scalar> BackwardOp<S> for ReluOp {
    fn backward(&self, ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        let a = ctx.parents[0].data();
        vec![Some(
            g.iter()
                .zip(&*a)
                .map(|(&g, &a)| if a > S::zero() { g } else { S::zero() })
                .collect(),
        )]
    }
}

struct LeakyReluOp<S> {
    slope: S,
}
impl<S: Scalar> BackwardOp<S> for LeakyReluOp<S> {
    fn backward(&self, ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        let a = ctx.parents[0].data();
        vec![Some(
            g.iter()
                .zip(&*a)
                .map(|(&g, &a)| if a > S::zero() { g } else { g * self.slope })
                .collect(),
        )]
    }
}

struct SigmoidOp;
impl<S: Scalar> BackwardOp<S> for SigmoidOp {
    fn backward(&self, ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        vec![Some(
            g.iter()
                .zip(ctx.out_data)
                .map(|(&g, &y)| g * y * (S::one() - y))
                .collect(),
        )]
    }
}

struct NegLogOp;
impl<S: Scalar> BackwardOp<S> for NegLogOp {
    fn backward(&self, ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        let a = ctx.parents[0].data();
        let tiny = S::epsilon();
        vec![Some(
            g.iter()
                .zip(&*a)
                .map(|(&g, &a)| -g / a.max(tiny))
                .collect(),
        )]
    }
}

struct NegLog1mOp;
impl<S: Scalar> BackwardOp<S> for NegLog1mOp {
    fn backward(&self, ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        let a = ctx.parents[0].data();
        let tiny = S::epsilon();
        vec![Some(
            g.iter()
                .zip(&*a)
                .map(|(&g, &a)| g / (S::one() - a).max(tiny))
                .collect(),
        )]
    }
}

struct PowGuardedOp<S> {
    exponent: S,
    floor: S,
}
impl<S: Scalar> BackwardOp<S> for PowGuardedOp<S> {
    fn backward(&self, ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        let a = ctx.parents[0].data();
        vec![Some(
            g.iter()
                .zip(&*a)
                .map(|(&g, &a)| {
                    if a > self.floor {
                        g * self.exponent * a.powf(self.exponent - S::one())
                    } else {
                        S::zero()
                    }
                })
                .collect(),
        )]
    }
}

struct Clamp01Op;
impl<S: Scalar> BackwardOp<S> for Clamp01Op {
    fn backward(&self, ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        let a = ctx.parents[0].data();
        vec![Some(
            g.iter()
                .zip(&*a)
                .map(|(&g, &a)| {
                    if a >= S::zero() && a <= S::one() {
                        g
                    } else {
                        S::zero()
                    }
                })
                .collect(),
        )]
    }
}

struct ClampMaxOp<S> {
    max: S,
}
impl<S: Scalar> BackwardOp<S> for ClampMaxOp<S> {
    fn backward(&self, ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        let a = ctx.parents[0].data();
        vec![Some(
            g.iter()
                .zip(&*a)
                .map(|(&g, &a)| if a <= self.max { g } else { S::zero() })
                .collect(),
        )]
    }
}

struct PerItemAffineOp<S> {
    mul: Vec<S>,
    item_size: usize,
}
impl<S: Scalar> BackwardOp<S> for PerItemAffineOp<S> {
    fn backward(&self, _ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        vec![Some(
            g.iter()
                .enumerate()
                .map(|(i, &v)| v * self.mul[i / self.item_size])
                .collect(),
        )]
    }
}

struct PowGuardedPerItemOp<S> {
    exps: Vec<S>,
    floor: S,
    item_size: usize,
}
impl<S: Scalar> BackwardOp<S> for PowGuardedPerItemOp<S> {
    fn backward(&self, ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        let a = ctx.parents[0].data();
        vec![Some(
            g.iter()
                .zip(&*a)
                .enumerate()
                .map(|(i, (&g, &a))| {
                    let e = self.exps[i / self.item_size];
                    if a > self.floor {
                        g * e * a.powf(e - S::one())
                    } else {
                        S::zero()
                    }
                })
                .collect(),
        )]
    }
}

struct SumOp;
impl<S: Scalar> BackwardOp<S> for SumOp {
    fn backward(&self, ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        vec![Some(vec![g[0]; ctx.parents[0].numel()])]
    }
}

struct ReshapeOp;
impl<S: Scalar> BackwardOp<S> for ReshapeOp {
    fn backward(&self, _ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        vec![Some(g.to_vec())]
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn add(&self, other: &Tensor<S>) -> Tensor<S> {
        assert_same_shape("add", self, other);
        let data = self
            .data()
            .iter()
            .zip(&*other.data())
            .map(|(&a, &b)| a + b)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(AddOp),
        )
    }

    pub fn sub(&self, other: &Tensor<S>) -> Tensor<S> {
        assert_same_shape("sub", self, other);
        let data = self
            .data()
            .iter()
            .zip(&*other.data())
            .map(|(&a, &b)| a - b)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(SubOp),
        )
    }

    pub fn mul(&self, other: &Tensor<S>) -> Tensor<S> {
        assert_same_shape("mul", self, other);
        let data = self
            .data()
            .iter()
            .zip(&*other.data())
            .map(|(&a, &b)| a * b)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(MulOp),
        )
    }

    /// `mul * x + add` elementwise.
    pub fn affine(&self, mul: S, add: S) -> Tensor<S> {
        let data = self.data().iter().map(|&v| mul * v + add).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(AffineOp { mul }),
        )
    }

    pub fn abs(&self) -> Tensor<S> {
        let data = self.data().iter().map(|&v| v.abs()).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(AbsOp),
        )
    }

    pub fn relu(&self) -> Tensor<S> {
        let data = self.data().iter().map(|&v| v.max(S::zero())).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(ReluOp),
        )
    }

    pub fn leaky_relu(&self, slope: S) -> Tensor<S> {
        let data = self
            .data()
            .iter()
            .map(|&v| if v > S::zero() { v } else { v * slope })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(LeakyReluOp { slope }),
        )
    }

    pub fn sigmoid(&self) -> Tensor<S> {
        let data = self
            .data()
            .iter()
            .map(|&v| S::one() / (S::one() + (-v).exp()))
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(SigmoidOp),
        )
    }

    /// `-ln(x)`, guarded against zero from below.
    pub fn neg_log(&self) -> Tensor<S> {
        let tiny = S::epsilon();
        let data = self.data().iter().map(|&v| -(v.max(tiny)).ln()).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(NegLogOp),
        )
    }

    /// `-ln(1 - x)`, guarded against one from above.
    pub fn neg_log1m(&self) -> Tensor<S> {
        let tiny = S::epsilon();
        let data = self
            .data()
            .iter()
            .map(|&v| -((S::one() - v).max(tiny)).ln())
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(NegLog1mOp),
        )
    }

    /// `max(x, floor)^exponent`; the floor keeps the derivative bounded at
    /// zero for exponents below one.
    pub fn pow_guarded(&self, exponent: S, floor: S) -> Tensor<S> {
        let data = self
            .data()
            .iter()
            .map(|&v| v.max(floor).powf(exponent))
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(PowGuardedOp { exponent, floor }),
        )
    }

    pub fn clamp01(&self) -> Tensor<S> {
        let data = self.data().iter().map(|&v| v.clamp01()).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(Clamp01Op),
        )
    }

    pub fn clamp_max(&self, max: S) -> Tensor<S> {
        let data = self.data().iter().map(|&v| v.min(max)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(ClampMaxOp { max }),
        )
    }

    /// `mul[b] * x + add[b]` with one coefficient pair per leading-axis item.
    pub fn per_item_affine(&self, mul: Vec<S>, add: Vec<S>) -> Tensor<S> {
        let items = self.shape()[0];
        assert_eq!(mul.len(), items, "per_item_affine: one mul per item");
        assert_eq!(add.len(), items, "per_item_affine: one add per item");
        let item_size = self.numel() / items;
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| mul[i / item_size] * v + add[i / item_size])
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(PerItemAffineOp { mul, item_size }),
        )
    }

    /// [`Tensor::pow_guarded`] with one exponent per leading-axis item.
    pub fn pow_guarded_per_item(&self, exps: Vec<S>, floor: S) -> Tensor<S> {
        let items = self.shape()[0];
        assert_eq!(exps.len(), items, "pow_guarded_per_item: one exponent per item");
        let item_size = self.numel() / items;
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v.max(floor).powf(exps[i / item_size]))
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(PowGuardedPerItemOp {
                exps,
                floor,
                item_size,
            }),
        )
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum_all(&self) -> Tensor<S> {
        let total = self.data().iter().copied().sum();
        Tensor::from_op(vec![], vec![total], vec![self.clone()], Box::new(SumOp))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Tensor<S> {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.numel(),
            "reshape changes element count"
        );
        let data = self.data().clone();
        Tensor::from_op(shape, data, vec![self.clone()], Box::new(ReshapeOp))
    }
}

// ------------------------------------------------------------------- conv2d

struct Conv2dOp {
    stride: usize,
    pad: usize,
}

struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> Result<ConvDims, NnError> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
        return Err(NnError::ShapeMismatch {
            op: "conv2d",
            expected: "input (N,C,H,W) with C matching weight (O,C,kh,kw)".into(),
            got: format!("{xs:?} vs {ws:?}"),
        });
    }
    let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(NnError::ShapeMismatch {
            op: "conv2d",
            expected: format!("spatial dims at least {kh}x{kw} after padding {pad}"),
            got: format!("{h}x{w}"),
        });
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    Ok(ConvDims {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh,
        ow,
    })
}

/// Parallel work threshold: below this many MACs the serial path is faster.
const PAR_FLOP_LIMIT: usize = 1 << 17;

/// Cross-correlation with bias: input `(N,C,H,W)`, weight `(O,C,kh,kw)`,
/// bias `(O)`.
pub fn conv2d<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>, NnError> {
    assert!(stride >= 1);
    let d = conv_dims(x, weight, stride, pad)?;
    if bias.shape() != [d.cout] {
        return Err(NnError::ShapeMismatch {
            op: "conv2d",
            expected: format!("bias ({},)", d.cout),
            got: format!("{:?}", bias.shape()),
        });
    }
    let xd_guard = x.data();
    let wd_guard = weight.data();
    let bd_guard = bias.data();
    let (xd, wd, bd): (&[S], &[S], &[S]) = (&xd_guard, &wd_guard, &bd_guard);
    let mut out = vec![S::zero(); d.n * d.cout * d.oh * d.ow];
    let work = d.n * d.cout * d.oh * d.ow * d.cin * d.kh * d.kw;

    let fill_plane = |(plane, chunk): (usize, &mut [S])| {
        let (n, co) = (plane / d.cout, plane % d.cout);
        let x_item = &xd[n * d.cin * d.h * d.w..(n + 1) * d.cin * d.h * d.w];
        let w_co = &wd[co * d.cin * d.kh * d.kw..(co + 1) * d.cin * d.kh * d.kw];
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                let mut acc = bd[co];
                for ci in 0..d.cin {
                    let x_ch = &x_item[ci * d.h * d.w..(ci + 1) * d.h * d.w];
                    let w_ch = &w_co[ci * d.kh * d.kw..(ci + 1) * d.kh * d.kw];
                    for ky in 0..d.kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let xrow = &x_ch[iy as usize * d.w..(iy as usize + 1) * d.w];
                        let wrow = &w_ch[ky * d.kw..(ky + 1) * d.kw];
                        for kx in 0..d.kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < d.w as isize {
                                acc += xrow[ix as usize] * wrow[kx];
                            }
                        }
                    }
                }
                chunk[oy * d.ow + ox] = acc;
            }
        }
    };
    if work > PAR_FLOP_LIMIT {
        out.par_chunks_mut(d.oh * d.ow).enumerate().for_each(fill_plane);
    } else {
        out.chunks_mut(d.oh * d.ow).enumerate().for_each(fill_plane);
    }
    drop(xd_guard);
    drop(wd_guard);
    drop(bd_guard);
    Ok(Tensor::from_op(
        vec![d.n, d.cout, d.oh, d.ow],
        out,
        vec![x.clone(), weight.clone(), bias.clone()],
        Box::new(Conv2dOp { stride, pad }),
    ))
}

impl<S: Scalar> BackwardOp<S> for Conv2dOp {
    fn backward(&self, ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        let (x, weight) = (&ctx.parents[0], &ctx.parents[1]);
        let d = conv_dims(x, weight, self.stride, self.pad).expect("validated in forward");
        let (stride, pad) = (self.stride, self.pad);
        let xd_guard = x.data();
        let wd_guard = weight.data();
        let (xd, wd): (&[S], &[S]) = (&xd_guard, &wd_guard);
        let work = d.n * d.cout * d.oh * d.ow * d.cin * d.kh * d.kw;
        let par = work > PAR_FLOP_LIMIT;

        // d/d input: scatter each output grad through the kernel
        let mut dx = vec![S::zero(); d.n * d.cin * d.h * d.w];
        let item = |(n, dx_item): (usize, &mut [S])| {
            for co in 0..d.cout {
                let g_plane = &g[(n * d.cout + co) * d.oh * d.ow..];
                let w_co = &wd[co * d.cin * d.kh * d.kw..(co + 1) * d.cin * d.kh * d.kw];
                for oy in 0..d.oh {
                    for ox in 0..d.ow {
                        let gv = g_plane[oy * d.ow + ox];
                        if gv == S::zero() {
                            continue;
                        }
                        for ci in 0..d.cin {
                            for ky in 0..d.kh {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= d.h as isize {
                                    continue;
                                }
                                for kx in 0..d.kw {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix >= 0 && ix < d.w as isize {
                                        dx_item[(ci * d.h + iy as usize) * d.w + ix as usize] +=
                                            gv * w_co[(ci * d.kh + ky) * d.kw + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        };
        if par {
            dx.par_chunks_mut(d.cin * d.h * d.w).enumerate().for_each(item);
        } else {
            dx.chunks_mut(d.cin * d.h * d.w).enumerate().for_each(item);
        }

        // d/d weight and d/d bias: each output channel owned by one task
        let mut dw = vec![S::zero(); d.cout * d.cin * d.kh * d.kw];
        let mut db = vec![S::zero(); d.cout];
        let wslice = |(co, out): (usize, (&mut [S], &mut S))| {
            let (dw_co, db_co) = out;
            for n in 0..d.n {
                let x_item = &xd[n * d.cin * d.h * d.w..(n + 1) * d.cin * d.h * d.w];
                let g_plane = &g[(n * d.cout + co) * d.oh * d.ow..];
                for oy in 0..d.oh {
                    for ox in 0..d.ow {
                        let gv = g_plane[oy * d.ow + ox];
                        if gv == S::zero() {
                            continue;
                        }
                        *db_co += gv;
                        for ci in 0..d.cin {
                            for ky in 0..d.kh {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= d.h as isize {
                                    continue;
                                }
                                for kx in 0..d.kw {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix >= 0 && ix < d.w as isize {
                                        dw_co[(ci * d.kh + ky) * d.kw + kx] += gv
                                            * x_item[(ci * d.h + iy as usize) * d.w + ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        };
        if par {
            dw.par_chunks_mut(d.cin * d.kh * d.kw)
                .zip(db.par_iter_mut())
                .enumerate()
                .for_each(wslice);
        } else {
            dw.chunks_mut(d.cin * d.kh * d.kw)
                .zip(db.iter_mut())
                .enumerate()
                .for_each(wslice);
        }

        vec![Some(dx), Some(dw), Some(db)]
    }
}

// -------------------------------------------------------------------- dense

struct DenseOp;

/// Fully connected layer: input `(N,F)`, weight `(O,F)`, bias `(O)` giving
/// `(N,O)`.
pub(crate) fn dense<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<Tensor<S>, NnError> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bias.shape() != [ws[0]] {
        return Err(NnError::ShapeMismatch {
            op: "dense",
            expected: "(N,F) x (O,F) + (O,)".into(),
            got: format!("{xs:?} x {ws:?} + {:?}", bias.shape()),
        });
    }
    let (n, f, o) = (xs[0], xs[1], ws[0]);
    let xd = x.data();
    let wd = weight.data();
    let bd = bias.data();
    let mut out = vec![S::zero(); n * o];
    for i in 0..n {
        for j in 0..o {
            let mut acc = bd[j];
            let xrow = &xd[i * f..(i + 1) * f];
            let wrow = &wd[j * f..(j + 1) * f];
            for k in 0..f {
                acc += xrow[k] * wrow[k];
            }
            out[i * o + j] = acc;
        }
    }
    drop(xd);
    drop(wd);
    drop(bd);
    Ok(Tensor::from_op(
        vec![n, o],
        out,
        vec![x.clone(), weight.clone(), bias.clone()],
        Box::new(DenseOp),
    ))
}

impl<S: Scalar> BackwardOp<S> for DenseOp {
    fn backward(&self, ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        let (x, weight) = (&ctx.parents[0], &ctx.parents[1]);
        let (n, f) = (x.shape()[0], x.shape()[1]);
        let o = weight.shape()[0];
        let xd = x.data();
        let wd = weight.data();
        let mut dx = vec![S::zero(); n * f];
        let mut dw = vec![S::zero(); o * f];
        let mut db = vec![S::zero(); o];
        for i in 0..n {
            for j in 0..o {
                let gv = g[i * o + j];
                if gv == S::zero() {
                    continue;
                }
                db[j] += gv;
                for k in 0..f {
                    dx[i * f + k] += gv * wd[j * f + k];
                    dw[j * f + k] += gv * xd[i * f + k];
                }
            }
        }
        vec![Some(dx), Some(dw), Some(db)]
    }
}

// ---------------------------------------------------------------- batchnorm

pub(crate) enum BnMode<S> {
    /// Normalized with batch statistics; backward must differentiate them.
    Train,
    /// Normalized with constant running statistics.
    Infer { marker: std::marker::PhantomData<S> },
}

pub(crate) struct BatchNormOp<S> {
    pub xnorm: Vec<S>,
    /// One per channel.
    pub inv_std: Vec<S>,
    pub mode: BnMode<S>,
}

/// Iterates channel elements of an NCHW buffer.
fn for_each_channel<S: Scalar>(
    channels: usize,
    plane: usize,
    total: usize,
    mut f: impl FnMut(usize, usize),
) {
    let per_item = channels * plane;
    let items = total / per_item;
    for c in 0..channels {
        for n in 0..items {
            let base = n * per_item + c * plane;
            for i in 0..plane {
                f(c, base + i);
            }
        }
    }
}

impl<S: Scalar> BackwardOp<S> for BatchNormOp<S> {
    fn backward(&self, ctx: &OpCtx<'_, S>, g: &[S]) -> Vec<Option<Vec<S>>> {
        let x = &ctx.parents[0];
        let gamma = &ctx.parents[1];
        let channels = gamma.numel();
        let shape = x.shape();
        let plane = shape[2] * shape[3];
        let total = x.numel();
        let m = S::of((total / channels) as f64);
        let gd = gamma.data();

        let mut dgamma = vec![S::zero(); channels];
        let mut dbeta = vec![S::zero(); channels];
        for_each_channel::<S>(channels, plane, total, |c, idx| {
            dgamma[c] += g[idx] * self.xnorm[idx];
            dbeta[c] += g[idx];
        });

        let mut dx = vec![S::zero(); total];
        match self.mode {
            BnMode::Infer { .. } => {
                for_each_channel::<S>(channels, plane, total, |c, idx| {
                    dx[idx] = g[idx] * gd[c] * self.inv_std[c];
                });
            }
            BnMode::Train => {
                // dL/dx = gamma*inv_std*(g - mean(g) - xnorm*mean(g*xnorm))
                let mut mean_g = vec![S::zero(); channels];
                let mut mean_gx = vec![S::zero(); channels];
                for_each_channel::<S>(channels, plane, total, |c, idx| {
                    mean_g[c] += g[idx];
                    mean_gx[c] += g[idx] * self.xnorm[idx];
                });
                for c in 0..channels {
                    mean_g[c] /= m;
                    mean_gx[c] /= m;
                }
                for_each_channel::<S>(channels, plane, total, |c, idx| {
                    dx[idx] = gd[c]
                        * self.inv_std[c]
                        * (g[idx] - mean_g[c] - self.xnorm[idx] * mean_gx[c]);
                });
            }
        }
        vec![Some(dx), Some(dgamma), Some(dbeta)]
    }
}
