use super::graph::{needs, shape_err, Contributions, Graph, Node, Op, Var};
use super::tensor::{gemm, Scalar, Tensor};
use super::Result;

/// Geometry of a "same"-padded strided convolution over `[batch, ch, h, w]`.
#[derive(Debug, Clone, Copy)]
pub(super) struct ConvGeom {
    batch: usize,
    ch: usize,
    h: usize,
    w: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

impl ConvGeom {
    fn new(x: &[usize], w: &[usize], stride: (usize, usize)) -> Result<Self> {
        let (&[batch, ch, h, wd], &[out_ch, wch, kh, kw]) = (x, w) else {
            return shape_err(format!("conv2d: input {x:?}, kernel {w:?}"));
        };
        if wch != ch || kh == 0 || kw == 0 || stride.0 == 0 || stride.1 == 0 {
            return shape_err(format!("conv2d: input {x:?}, kernel {w:?}, stride {stride:?}"));
        }
        let oh = h.div_ceil(stride.0);
        let ow = wd.div_ceil(stride.1);
        let pad_h = ((oh.max(1) - 1) * stride.0 + kh).saturating_sub(h);
        let pad_w = ((ow.max(1) - 1) * stride.1 + kw).saturating_sub(wd);
        Ok(Self {
            batch,
            ch,
            h,
            w: wd,
            out_ch,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            oh,
            ow,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
        })
    }

    fn patch(&self) -> usize {
        self.ch * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Input coordinate read by output `(o, kernel offset)`, if inside.
    #[inline]
    fn src(&self, o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        (o * stride + k).checked_sub(pad).filter(|&i| i < len)
    }

    /// `cols [patch, positions]` for one batch item.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let p = self.positions();
        for c in 0..self.ch {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &mut cols[((c * self.kh + i) * self.kw + j) * p..][..p];
                    for oy in 0..self.oh {
                        let out = &mut row[oy * self.ow..(oy + 1) * self.ow];
                        match self.src(oy, i, self.sh, self.pad_top, self.h) {
                            None => out.fill(T::zero()),
                            Some(y) => {
                                let line = &plane[y * self.w..(y + 1) * self.w];
                                for (ox, o) in out.iter_mut().enumerate() {
                                    *o = self
                                        .src(ox, j, self.sw, self.pad_left, self.w)
                                        .map_or(T::zero(), |x| line[x]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let p = self.positions();
        for c in 0..self.ch {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &cols[((c * self.kh + i) * self.kw + j) * p..][..p];
                    for oy in 0..self.oh {
                        let Some(y) = self.src(oy, i, self.sh, self.pad_top, self.h) else {
                            continue;
                        };
                        for ox in 0..self.ow {
                            if let Some(x) = self.src(ox, j, self.sw, self.pad_left, self.w) {
                                plane[y * self.w + x] += row[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(super) struct Conv2dOp {
    x: Var,
    w: Var,
    b: Var,
    geom: ConvGeom,
}

pub(super) struct MaxPoolOp {
    x: Var,
    /// Flat input index of each output cell's maximum.
    argmax: Vec<usize>,
}

impl<T: Scalar> Graph<T> {
    /// Cross-correlation with zero "same" padding: output spatial size is
    /// `ceil(in / stride)`. `x [batch, ch, h, w]`, `w [out, ch, kh, kw]`, `b [out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: (usize, usize)) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride)?;
        if self.shape(b) != [geom.out_ch] {
            return shape_err(format!("conv2d: bias {:?}", self.shape(b)));
        }
        let (patch, p) = (geom.patch(), geom.positions());
        let in_len = geom.ch * geom.h * geom.w;
        let out_len = geom.out_ch * p;
        let mut y = vec![T::zero(); geom.batch * out_len];
        let mut cols = vec![T::zero(); patch * p];
        let (xv, wv, bv) = (&self.value(x).data, &self.value(w).data, &self.value(b).data);
        for n in 0..geom.batch {
            geom.im2col(&xv[n * in_len..(n + 1) * in_len], &mut cols);
            let out = &mut y[n * out_len..(n + 1) * out_len];
            for (row, &bias) in out.chunks_mut(p).zip(bv) {
                row.fill(bias);
            }
            gemm(geom.out_ch, patch, p, wv, false, &cols, false, out, true);
        }
        let shape = [geom.batch, geom.out_ch, geom.oh, geom.ow];
        Ok(self.push(
            Tensor::new(&shape, y),
            Op::Conv2d(Box::new(Conv2dOp { x, w, b, geom })),
            &[x, w, b],
        ))
    }

    /// Non-overlapping max pooling over the last two axes; remainders dropped.
    pub fn maxpool2d(&mut self, x: Var, pool: (usize, usize)) -> Result<Var> {
        let v = self.value(x);
        let &[batch, ch, h, w] = v.shape.as_slice() else {
            return shape_err(format!("maxpool2d expects 4 axes, got {:?}", v.shape));
        };
        let (ph, pw) = pool;
        if ph == 0 || pw == 0 || h < ph || w < pw {
            return shape_err(format!("maxpool2d: pool {pool:?} on {:?}", v.shape));
        }
        let (oh, ow) = (h / ph, w / pw);
        let mut y = Vec::with_capacity(batch * ch * oh * ow);
        let mut argmax = Vec::with_capacity(batch * ch * oh * ow);
        for plane in 0..batch * ch {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * ph * w + ox * pw;
                    for i in 0..ph {
                        for j in 0..pw {
                            let idx = base + (oy * ph + i) * w + ox * pw + j;
                            if v.data[idx] > v.data[best] {
                                best = idx;
                            }
                        }
                    }
                    y.push(v.data[best]);
                    argmax.push(best);
                }
            }
        }
        let t = Tensor::new(&[batch, ch, oh, ow], y);
        Ok(self.push(t, Op::MaxPool(Box::new(MaxPoolOp { x, argmax })), &[x]))
    }
}

impl Conv2dOp {
    pub(super) fn backward<T: Scalar>(&self, dy: &[T], nodes: &[Node<T>], out: &mut Contributions<T>) {
        let g = &self.geom;
        let (patch, p) = (g.patch(), g.positions());
        let in_len = g.ch * g.h * g.w;
        let out_len = g.out_ch * p;
        let xv = &nodes[self.x.0].value.data;
        let wv = &nodes[self.w.0].value.data;
        let need_x = needs(nodes, self.x);
        let need_w = needs(nodes, self.w);
        let mut dw = vec![T::zero(); g.out_ch * patch];
        let mut db = vec![T::zero(); g.out_ch];
        let mut dx = if need_x { vec![T::zero(); xv.len()] } else { Vec::new() };
        let mut cols = vec![T::zero(); patch * p];
        for n in 0..g.batch {
            let dyn_ = &dy[n * out_len..(n + 1) * out_len];
            for (d, row) in db.iter_mut().zip(dyn_.chunks(p)) {
                *d += row.iter().copied().sum::<T>();
            }
            if need_w {
                g.im2col(&xv[n * in_len..(n + 1) * in_len], &mut cols);
                gemm(g.out_ch, p, patch, dyn_, false, &cols, true, &mut dw, true);
            }
            if need_x {
                gemm(patch, g.out_ch, p, wv, true, dyn_, false, &mut cols, false);
                g.col2im(&cols, &mut dx[n * in_len..(n + 1) * in_len]);
            }
        }
        if need_x {
            out.push((self.x, dx));
        }
        out.push((self.w, dw));
        out.push((self.b, db));
    }
}

impl MaxPoolOp {
    pub(super) fn backward<T: Scalar>(&self, dy: &[T], nodes: &[Node<T>], out: &mut Contributions<T>) {
        let mut dx = vec![T::zero(); nodes[self.x.0].value.len()];
        for (&i, &g) in self.argmax.iter().zip(dy) {
            dx[i] += g;
        }
        out.push((self.x, dx));
    }
}
