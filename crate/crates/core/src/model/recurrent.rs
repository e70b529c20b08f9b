//! Bidirectional LSTM with hand-written backpropagation through time.
//! Gate order within the `4H` axis is input, forget, cell, output.

use super::graph::{needs, shape_err, Contributions, Graph, Node, Op, Var};
use super::tensor::{gemm, Scalar, Tensor};
use super::Result;

/// Per-direction parameters: `wx [feat, 4H]`, `wh [H, 4H]`, `b [4H]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
}

struct DirCache<T> {
    /// Post-activation gates `[batch * time, 4H]`, row `b * time + t`.
    gates: Vec<T>,
    cell: Vec<T>,
    hidden: Vec<T>,
}

pub(super) struct BlstmOp<T> {
    x: Var,
    fwd: LstmParams,
    bwd: LstmParams,
    dims: Dims,
    caches: [DirCache<T>; 2],
}

#[derive(Debug, Clone, Copy)]
struct Dims {
    batch: usize,
    time: usize,
    feat: usize,
    hidden: usize,
}

impl Dims {
    fn order(&self, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
        if reverse {
            Box::new((0..self.time).rev())
        } else {
            Box::new(0..self.time)
        }
    }

    fn prev(&self, t: usize, reverse: bool) -> Option<usize> {
        if reverse {
            (t + 1 < self.time).then_some(t + 1)
        } else {
            t.checked_sub(1)
        }
    }
}

fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

fn run_direction<T: Scalar>(x: &[T], d: Dims, wx: &[T], wh: &[T], b: &[T], reverse: bool) -> DirCache<T> {
    let (h4, hs) = (4 * d.hidden, d.hidden);
    let rows = d.batch * d.time;
    let mut gates = vec![T::zero(); rows * h4];
    for row in gates.chunks_mut(h4) {
        row.copy_from_slice(b);
    }
    gemm(rows, d.feat, h4, x, false, wx, false, &mut gates, true);
    let mut cell = vec![T::zero(); rows * hs];
    let mut hidden = vec![T::zero(); rows * hs];
    let mut h_prev = vec![T::zero(); d.batch * hs];
    let mut rec = vec![T::zero(); d.batch * h4];
    for t in d.order(reverse) {
        let prev = d.prev(t, reverse);
        if let Some(p) = prev {
            for n in 0..d.batch {
                h_prev[n * hs..(n + 1) * hs].copy_from_slice(&hidden[(n * d.time + p) * hs..][..hs]);
            }
            gemm(d.batch, hs, h4, &h_prev, false, wh, false, &mut rec, false);
        }
        for n in 0..d.batch {
            let r = n * d.time + t;
            let z = &mut gates[r * h4..(r + 1) * h4];
            if prev.is_some() {
                for (zi, &ri) in z.iter_mut().zip(&rec[n * h4..(n + 1) * h4]) {
                    *zi += ri;
                }
            }
            for j in 0..hs {
                z[j] = sigmoid(z[j]);
                z[hs + j] = sigmoid(z[hs + j]);
                z[2 * hs + j] = z[2 * hs + j].tanh();
                z[3 * hs + j] = sigmoid(z[3 * hs + j]);
            }
            for j in 0..hs {
                let c_prev = prev.map_or(T::zero(), |p| cell[(n * d.time + p) * hs + j]);
                let c = z[hs + j] * c_prev + z[j] * z[2 * hs + j];
                cell[r * hs + j] = c;
                hidden[r * hs + j] = z[3 * hs + j] * c.tanh();
            }
        }
    }
    DirCache { gates, cell, hidden }
}

impl<T: Scalar> Graph<T> {
    /// `x [batch, time, feat] -> [batch, time, 2H]`: forward-direction state
    /// in the first half of each step, backward-direction state in the second.
    pub fn blstm(&mut self, x: Var, fwd: LstmParams, bwd: LstmParams) -> Result<Var> {
        let &[batch, time, feat] = self.shape(x) else {
            return shape_err(format!("blstm expects [batch, time, feat], got {:?}", self.shape(x)));
        };
        if time == 0 {
            return shape_err("blstm needs at least one time step");
        }
        let wxs = self.shape(fwd.wx);
        if wxs.len() != 2 || wxs[0] != feat || !wxs[1].is_multiple_of(4) || wxs[1] == 0 {
            return shape_err(format!("blstm: wx {wxs:?} for {feat} features"));
        }
        let hidden = wxs[1] / 4;
        for p in [fwd, bwd] {
            if self.shape(p.wx) != [feat, 4 * hidden]
                || self.shape(p.wh) != [hidden, 4 * hidden]
                || self.shape(p.b) != [4 * hidden]
            {
                return shape_err("blstm: inconsistent direction parameters");
            }
        }
        let dims = Dims {
            batch,
            time,
            feat,
            hidden,
        };
        let xv = &self.value(x).data;
        let run = |p: LstmParams, reverse| {
            run_direction(
                xv,
                dims,
                &self.value(p.wx).data,
                &self.value(p.wh).data,
                &self.value(p.b).data,
                reverse,
            )
        };
        let caches = [run(fwd, false), run(bwd, true)];
        let mut y = vec![T::zero(); batch * time * 2 * hidden];
        for r in 0..batch * time {
            let out = &mut y[r * 2 * hidden..(r + 1) * 2 * hidden];
            out[..hidden].copy_from_slice(&caches[0].hidden[r * hidden..(r + 1) * hidden]);
            out[hidden..].copy_from_slice(&caches[1].hidden[r * hidden..(r + 1) * hidden]);
        }
        let inputs = [x, fwd.wx, fwd.wh, fwd.b, bwd.wx, bwd.wh, bwd.b];
        Ok(self.push(
            Tensor::new(&[batch, time, 2 * hidden], y),
            Op::Blstm(Box::new(BlstmOp {
                x,
                fwd,
                bwd,
                dims,
                caches,
            })),
            &inputs,
        ))
    }
}

impl<T: Scalar> BlstmOp<T> {
    pub(super) fn backward(&self, dy: &[T], nodes: &[Node<T>], out: &mut Contributions<T>) {
        let d = self.dims;
        let (hs, h4, rows) = (d.hidden, 4 * d.hidden, d.batch * d.time);
        let xv = &nodes[self.x.0].value.data;
        let mut dx = vec![T::zero(); xv.len()];
        for (k, (p, cache)) in [self.fwd, self.bwd].iter().zip(&self.caches).enumerate() {
            let reverse = k == 1;
            let wh = &nodes[p.wh.0].value.data;
            let wx = &nodes[p.wx.0].value.data;
            let mut dz_all = vec![T::zero(); rows * h4];
            let mut dwh = vec![T::zero(); hs * h4];
            let mut dh_next = vec![T::zero(); d.batch * hs];
            let mut dc_next = vec![T::zero(); d.batch * hs];
            let mut dz = vec![T::zero(); d.batch * h4];
            let mut h_prev = vec![T::zero(); d.batch * hs];
            let order: Vec<usize> = d.order(reverse).collect();
            for &t in order.iter().rev() {
                let prev = d.prev(t, reverse);
                for n in 0..d.batch {
                    let r = n * d.time + t;
                    let g = &cache.gates[r * h4..(r + 1) * h4];
                    let dzn = &mut dz[n * h4..(n + 1) * h4];
                    for j in 0..hs {
                        let (i, f, gg, o) = (g[j], g[hs + j], g[2 * hs + j], g[3 * hs + j]);
                        let c = cache.cell[r * hs + j];
                        let c_prev = prev.map_or(T::zero(), |p| cache.cell[(n * d.time + p) * hs + j]);
                        let dh = dy[r * 2 * hs + k * hs + j] + dh_next[n * hs + j];
                        let tc = c.tanh();
                        let dc = dh * o * (T::one() - tc * tc) + dc_next[n * hs + j];
                        dc_next[n * hs + j] = dc * f;
                        dzn[j] = dc * gg * i * (T::one() - i);
                        dzn[hs + j] = dc * c_prev * f * (T::one() - f);
                        dzn[2 * hs + j] = dc * i * (T::one() - gg * gg);
                        dzn[3 * hs + j] = dh * tc * o * (T::one() - o);
                    }
                    dz_all[r * h4..(r + 1) * h4].copy_from_slice(dzn);
                }
                match prev {
                    Some(p) => {
                        for n in 0..d.batch {
                            h_prev[n * hs..(n + 1) * hs]
                                .copy_from_slice(&cache.hidden[(n * d.time + p) * hs..][..hs]);
                        }
                        gemm(hs, d.batch, h4, &h_prev, true, &dz, false, &mut dwh, true);
                        gemm(d.batch, h4, hs, &dz, false, wh, true, &mut dh_next, false);
                    }
                    None => dh_next.fill(T::zero()),
                }
            }
            let mut dwx = vec![T::zero(); d.feat * h4];
            gemm(d.feat, rows, h4, xv, true, &dz_all, false, &mut dwx, false);
            let mut db = vec![T::zero(); h4];
            for row in dz_all.chunks(h4) {
                for (a, &b) in db.iter_mut().zip(row) {
                    *a += b;
                }
            }
            if needs(nodes, self.x) {
                gemm(rows, h4, d.feat, &dz_all, false, wx, true, &mut dx, true);
            }
            out.push((p.wx, dwx));
            out.push((p.wh, dwh));
            out.push((p.b, db));
        }
        if needs(nodes, self.x) {
            out.push((self.x, dx));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gradcheck::check_gradients;

    fn params(g: &mut Graph<f64>, feat: usize, h: usize, f: impl Fn(usize) -> f64) -> LstmParams {
        let mk = |g: &mut Graph<f64>, shape: &[usize], off: usize| {
            let n: usize = shape.iter().product();
            g.input(Tensor::new(shape, (0..n).map(|i| f(i + off)).collect()), false)
        };
        LstmParams {
            wx: mk(g, &[feat, 4 * h], 0),
            wh: mk(g, &[h, 4 * h], 1000),
            b: mk(g, &[4 * h], 2000),
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_f64(&[2, 3, 4], &[0.7; 24]), false);
        let p = params(&mut g, 4, 5, |_| 0.0);
        let y = g.blstm(x, p, p).unwrap();
        assert_eq!(g.shape(y), [2, 3, 10]);
        assert!(g.value(y).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn time_reversal_swaps_directions() {
        let (b, t, f, h) = (2, 5, 3, 4);
        let data: Vec<f64> = (0..b * t * f).map(|i| (i as f64 * 0.73).sin()).collect();
        let mut rev = vec![0.0; data.len()];
        for n in 0..b {
            for s in 0..t {
                let src = (n * t + s) * f;
                let dst = (n * t + (t - 1 - s)) * f;
                rev[dst..dst + f].copy_from_slice(&data[src..src + f]);
            }
        }
        let w = |i: usize| ((i * 37 % 17) as f64 - 8.0) * 0.05;
        let out = |input: &[f64]| {
            let mut g = Graph::<f64>::new();
            let x = g.input(Tensor::from_f64(&[b, t, f], input), false);
            let p = params(&mut g, f, h, w);
            let y = g.blstm(x, p, p).unwrap();
            g.value(y).data.clone()
        };
        let (y, yr) = (out(&data), out(&rev));
        for n in 0..b {
            for s in 0..t {
                let a = &y[(n * t + s) * 2 * h..][..2 * h];
                let r = &yr[(n * t + (t - 1 - s)) * 2 * h..][..2 * h];
                for j in 0..h {
                    assert!((a[j] - r[h + j]).abs() < 1e-12);
                    assert!((a[h + j] - r[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn blstm_gradients() {
        for seed in 0..20 {
            check_gradients(
                seed,
                &[&[2, 3, 4], &[4, 12], &[3, 12], &[12], &[4, 12], &[3, 12], &[12]],
                |g, v| {
                    let fwd = LstmParams { wx: v[1], wh: v[2], b: v[3] };
                    let bwd = LstmParams { wx: v[4], wh: v[5], b: v[6] };
                    g.blstm(v[0], fwd, bwd)
                },
            );
        }
    }
}
