//! Additive attention pooling over the time axis.

use super::graph::{needs, shape_err, softmax_rows, Contributions, Graph, Node, Op, Var};
use super::tensor::{gemm, Scalar, Tensor};
use super::Result;

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    /// `[d, a]`
    pub w: Var,
    /// `[a]`
    pub b: Var,
    /// `[a]`
    pub v: Var,
}

pub(super) struct AttentionOp<T> {
    x: Var,
    p: AttentionParams,
    batch: usize,
    time: usize,
    dim: usize,
    att: usize,
    /// `tanh(x w + b)`, `[batch * time, a]`.
    u: Vec<T>,
    /// Softmax weights over time, `[batch, time]`.
    pub(super) alpha: Vec<T>,
}

impl<T: Scalar> Graph<T> {
    /// `e_t = v . tanh(W h_t + b)`, `alpha = softmax_t(e)`, output `sum_t alpha_t h_t`.
    /// `x [batch, time, d] -> [batch, d]`.
    pub fn attention(&mut self, x: Var, p: AttentionParams) -> Result<Var> {
        let &[batch, time, dim] = self.shape(x) else {
            return shape_err(format!("attention expects [batch, time, d], got {:?}", self.shape(x)));
        };
        if time == 0 {
            return shape_err("attention needs at least one time step");
        }
        let ws = self.shape(p.w);
        if ws.len() != 2 || ws[0] != dim {
            return shape_err(format!("attention: w {ws:?} for d = {dim}"));
        }
        let att = ws[1];
        if self.shape(p.b) != [att] || self.shape(p.v) != [att] {
            return shape_err("attention: b and v must have length a");
        }
        let xv = &self.value(x).data;
        let rows = batch * time;
        let mut u = vec![T::zero(); rows * att];
        for row in u.chunks_mut(att) {
            row.copy_from_slice(&self.value(p.b).data);
        }
        gemm(rows, dim, att, xv, false, &self.value(p.w).data, false, &mut u, true);
        for z in u.iter_mut() {
            *z = z.tanh();
        }
        let vv = &self.value(p.v).data;
        let scores: Vec<T> = u
            .chunks(att)
            .map(|row| row.iter().zip(vv).map(|(&a, &b)| a * b).sum())
            .collect();
        let alpha = softmax_rows(&scores, time);
        let mut y = vec![T::zero(); batch * dim];
        for n in 0..batch {
            let out = &mut y[n * dim..(n + 1) * dim];
            for t in 0..time {
                let a = alpha[n * time + t];
                for (o, &h) in out.iter_mut().zip(&xv[(n * time + t) * dim..][..dim]) {
                    *o += a * h;
                }
            }
        }
        Ok(self.push(
            Tensor::new(&[batch, dim], y),
            Op::Attention(Box::new(AttentionOp {
                x,
                p,
                batch,
                time,
                dim,
                att,
                u,
                alpha,
            })),
            &[x, p.w, p.b, p.v],
        ))
    }

    /// Attention weights `[batch, time]` recorded by an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<Tensor<T>> {
        match &self.nodes[v.0].op {
            Op::Attention(op) => Some(Tensor::new(&[op.batch, op.time], op.alpha.clone())),
            _ => None,
        }
    }
}

impl<T: Scalar> AttentionOp<T> {
    pub(super) fn backward(&self, dy: &[T], nodes: &[Node<T>], out: &mut Contributions<T>) {
        let (b, t, d, a) = (self.batch, self.time, self.dim, self.att);
        let xv = &nodes[self.x.0].value.data;
        let vv = &nodes[self.p.v.0].value.data;
        let mut dx = vec![T::zero(); xv.len()];
        let mut de = vec![T::zero(); b * t];
        for n in 0..b {
            let g = &dy[n * d..(n + 1) * d];
            let mut dalpha = vec![T::zero(); t];
            for s in 0..t {
                let r = n * t + s;
                let h = &xv[r * d..(r + 1) * d];
                let al = self.alpha[r];
                for (dxi, &gi) in dx[r * d..(r + 1) * d].iter_mut().zip(g) {
                    *dxi += al * gi;
                }
                dalpha[s] = h.iter().zip(g).map(|(&x, &y)| x * y).sum();
            }
            let mean: T = (0..t).map(|s| self.alpha[n * t + s] * dalpha[s]).sum();
            for s in 0..t {
                de[n * t + s] = self.alpha[n * t + s] * (dalpha[s] - mean);
            }
        }
        let mut dv = vec![T::zero(); a];
        let mut dz = vec![T::zero(); b * t * a];
        for (r, &e) in de.iter().enumerate() {
            let u = &self.u[r * a..(r + 1) * a];
            for j in 0..a {
                dv[j] += e * u[j];
                dz[r * a + j] = e * vv[j] * (T::one() - u[j] * u[j]);
            }
        }
        let mut dw = vec![T::zero(); d * a];
        gemm(d, b * t, a, xv, true, &dz, false, &mut dw, false);
        let mut db = vec![T::zero(); a];
        for row in dz.chunks(a) {
            for (x, &y) in db.iter_mut().zip(row) {
                *x += y;
            }
        }
        if needs(nodes, self.x) {
            gemm(b * t, a, d, &dz, false, &nodes[self.p.w.0].value.data, true, &mut dx, true);
            out.push((self.x, dx));
        }
        out.push((self.p.w, dw));
        out.push((self.p.b, db));
        out.push((self.p.v, dv));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gradcheck::check_gradients;

    fn setup(g: &mut Graph<f64>, d: usize, a: usize) -> AttentionParams {
        let w: Vec<f64> = (0..d * a).map(|i| (i as f64 * 0.31).sin()).collect();
        let v: Vec<f64> = (0..a).map(|i| (i as f64 * 0.7).cos()).collect();
        AttentionParams {
            w: g.input(Tensor::from_f64(&[d, a], &w), false),
            b: g.input(Tensor::from_f64(&[a], &vec![0.1; a]), false),
            v: g.input(Tensor::from_f64(&[a], &v), false),
        }
    }

    #[test]
    fn single_step_passes_through() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_f64(&[2, 1, 3], &[1., -2., 3., 0.5, 0.25, -4.]), false);
        let p = setup(&mut g, 3, 5);
        let y = g.attention(x, p).unwrap();
        assert_eq!(g.value(y).data, g.value(x).data);
        assert_eq!(g.attention_weights(y).unwrap().data, [1.0, 1.0]);
    }

    #[test]
    fn identical_steps_give_uniform_weights() {
        let mut g = Graph::<f64>::new();
        let step = [0.3, -0.7, 1.1];
        let x = g.input(Tensor::from_f64(&[1, 4, 3], &step.repeat(4)), false);
        let p = setup(&mut g, 3, 2);
        let y = g.attention(x, p).unwrap();
        for (o, s) in g.value(y).data.iter().zip(step) {
            assert!((o - s).abs() < 1e-12);
        }
        for w in g.attention_weights(y).unwrap().data {
            assert!((w - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_gradients_and_distribution() {
        for seed in 0..20 {
            check_gradients(seed, &[&[2, 3, 4], &[4, 5], &[5], &[5]], |g, v| {
                let y = g.attention(v[0], AttentionParams { w: v[1], b: v[2], v: v[3] })?;
                let w = g.attention_weights(y).unwrap();
                for row in w.data.chunks(3) {
                    assert!(row.iter().all(|&a| a >= 0.0));
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                }
                Ok(y)
            });
        }
    }
}
