use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{shape_err, Contributions, Graph, Node, Op, Var};
use super::tensor::{Scalar, Tensor};
use super::{Mode, ModelError, Result};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BnState<T> {
    pub fn new(features: usize) -> Self {
        Self {
            mean: vec![T::zero(); features],
            var: vec![T::one(); features],
        }
    }
}

pub(super) struct BatchNormOp<T> {
    x: Var,
    gamma: Var,
    beta: Var,
    /// `(outer, features, inner)` view of the input.
    layout: (usize, usize, usize),
    xhat: Vec<T>,
    inv_std: Vec<T>,
    train: bool,
}

pub(super) struct DropoutOp<T> {
    x: Var,
    /// Zero for dropped cells, `1 / (1 - rate)` for kept ones.
    mask: Vec<T>,
}

impl<T: Scalar> Graph<T> {
    /// Normalize each slice along `axis`. Train mode uses batch statistics
    /// over all other axes and updates `state`; eval mode uses `state`.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        state: &mut BnState<T>,
        mode: Mode,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return shape_err(format!("batchnorm axis {axis} on {shape:?}"));
        }
        let f = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        if self.shape(gamma) != [f] || self.shape(beta) != [f] || state.mean.len() != f {
            return shape_err(format!("batchnorm: {f} features"));
        }
        let count = outer * inner;
        let train = mode == Mode::Train;
        if train && count < 2 {
            return Err(ModelError::BatchTooSmall(count));
        }
        let xv = &self.value(x).data;
        let idx = |o: usize, c: usize, i: usize| (o * f + c) * inner + i;
        let eps = T::lit(BN_EPS);
        let mut inv_std = vec![T::zero(); f];
        let mut mean = vec![T::zero(); f];
        for c in 0..f {
            let (m, var) = if train {
                let n = T::lit(count as f64);
                let mut s = T::zero();
                for o in 0..outer {
                    for i in 0..inner {
                        s += xv[idx(o, c, i)];
                    }
                }
                let m = s / n;
                let mut ss = T::zero();
                for o in 0..outer {
                    for i in 0..inner {
                        let dlt = xv[idx(o, c, i)] - m;
                        ss += dlt * dlt;
                    }
                }
                (m, ss / n)
            } else {
                (state.mean[c], state.var[c])
            };
            mean[c] = m;
            inv_std[c] = T::one() / (var + eps).sqrt();
            if train {
                let k = T::lit(BN_MOMENTUM);
                state.mean[c] = k * state.mean[c] + (T::one() - k) * m;
                state.var[c] = k * state.var[c] + (T::one() - k) * var;
            }
        }
        let (gv, bv) = (&self.value(gamma).data, &self.value(beta).data);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut y = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for c in 0..f {
                for i in 0..inner {
                    let j = idx(o, c, i);
                    xhat[j] = (xv[j] - mean[c]) * inv_std[c];
                    y[j] = gv[c] * xhat[j] + bv[c];
                }
            }
        }
        Ok(self.push(
            Tensor::new(&shape, y),
            Op::BatchNorm(Box::new(BatchNormOp {
                x,
                gamma,
                beta,
                layout: (outer, f, inner),
                xhat,
                inv_std,
                train,
            })),
            &[x, gamma, beta],
        ))
    }

    /// Inverted dropout. Identity in eval mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64, mode: Mode, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(ModelError::BadRate(rate));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = T::lit(1.0 / (1.0 - rate));
        let v = self.value(x);
        let mask: Vec<T> = (0..v.len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let y: Vec<T> = v.data.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let t = Tensor::new(&v.shape, y);
        Ok(self.push(t, Op::Dropout(Box::new(DropoutOp { x, mask })), &[x]))
    }
}

impl<T: Scalar> BatchNormOp<T> {
    pub(super) fn backward(&self, dy: &[T], nodes: &[Node<T>], out: &mut Contributions<T>) {
        let (outer, f, inner) = self.layout;
        let idx = |o: usize, c: usize, i: usize| (o * f + c) * inner + i;
        let gv = &nodes[self.gamma.0].value.data;
        let n = T::lit((outer * inner) as f64);
        let mut dgamma = vec![T::zero(); f];
        let mut dbeta = vec![T::zero(); f];
        let mut dx = vec![T::zero(); dy.len()];
        for c in 0..f {
            let (mut sum_d, mut sum_dx) = (T::zero(), T::zero());
            for o in 0..outer {
                for i in 0..inner {
                    let j = idx(o, c, i);
                    dgamma[c] += dy[j] * self.xhat[j];
                    dbeta[c] += dy[j];
                    let dxh = dy[j] * gv[c];
                    sum_d += dxh;
                    sum_dx += dxh * self.xhat[j];
                }
            }
            for o in 0..outer {
                for i in 0..inner {
                    let j = idx(o, c, i);
                    let dxh = dy[j] * gv[c];
                    dx[j] = if self.train {
                        self.inv_std[c] * (dxh - sum_d / n - self.xhat[j] * sum_dx / n)
                    } else {
                        self.inv_std[c] * dxh
                    };
                }
            }
        }
        out.push((self.x, dx));
        out.push((self.gamma, dgamma));
        out.push((self.beta, dbeta));
    }
}

impl<T: Scalar> DropoutOp<T> {
    pub(super) fn backward(&self, dy: &[T], out: &mut Contributions<T>) {
        out.push((self.x, dy.iter().zip(&self.mask).map(|(&g, &m)| g * m).collect()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gradcheck::check_gradients;

    #[test]
    fn train_mode_standardizes() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..30).map(|i| (i as f64 * 1.7).sin() * 5.0 + 2.0).collect();
        let x = g.input(Tensor::from_f64(&[10, 3], &data), false);
        let gamma = g.input(Tensor::from_f64(&[3], &[1.0; 3]), false);
        let beta = g.input(Tensor::zeros(&[3]), false);
        let mut state = BnState::new(3);
        let y = g.batchnorm(x, gamma, beta, 1, &mut state, Mode::Train).unwrap();
        let yv = &g.value(y).data;
        for c in 0..3 {
            let col: Vec<f64> = (0..10).map(|r| yv[r * 3 + c]).collect();
            let m = col.iter().sum::<f64>() / 10.0;
            let v = col.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 10.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
        assert!(state.mean.iter().any(|&m| m != 0.0));
    }

    #[test]
    fn eval_mode_is_batch_independent() {
        let state = BnState {
            mean: vec![0.5, -1.0],
            var: vec![4.0, 0.25],
        };
        let run = |rows: &[f64]| {
            let mut g = Graph::<f64>::new();
            let x = g.input(Tensor::from_f64(&[rows.len() / 2, 2], rows), false);
            let gamma = g.input(Tensor::from_f64(&[2], &[2.0, 0.5]), false);
            let beta = g.input(Tensor::from_f64(&[2], &[0.1, 0.2]), false);
            let mut s = state.clone();
            let y = g.batchnorm(x, gamma, beta, 1, &mut s, Mode::Eval).unwrap();
            assert_eq!(s, state);
            g.value(y).data[..2].to_vec()
        };
        assert_eq!(run(&[1.0, 2.0]), run(&[1.0, 2.0, 9.0, -3.0, 7.0, 7.0]));
    }

    #[test]
    fn batch_too_small() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[1, 3]), false);
        let gamma = g.input(Tensor::zeros(&[3]), false);
        let beta = g.input(Tensor::zeros(&[3]), false);
        assert!(matches!(
            g.batchnorm(x, gamma, beta, 1, &mut BnState::new(3), Mode::Train),
            Err(ModelError::BatchTooSmall(1))
        ));
    }

    #[test]
    fn batchnorm_gradients() {
        for seed in 0..20 {
            check_gradients(seed, &[&[4, 3], &[3], &[3]], |g, v| {
                g.batchnorm(v[0], v[1], v[2], 1, &mut BnState::new(3), Mode::Train)
            });
            check_gradients(seed, &[&[2, 3, 2, 2], &[3], &[3]], |g, v| {
                g.batchnorm(v[0], v[1], v[2], 1, &mut BnState::new(3), Mode::Train)
            });
            let mut state = BnState { mean: vec![0.1, -0.2, 0.3], var: vec![1.5, 0.5, 2.0] };
            check_gradients(seed, &[&[4, 3], &[3], &[3]], |g, v| {
                g.batchnorm(v[0], v[1], v[2], 1, &mut state, Mode::Eval)
            });
        }
    }

    #[test]
    fn dropout_behaviour() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_f64(&[100_000], &[1.0; 100_000]), true);
        assert_eq!(g.dropout(x, 0.0, Mode::Train, 1).unwrap(), x);
        assert_eq!(g.dropout(x, 0.2, Mode::Eval, 1).unwrap(), x);
        assert!(matches!(g.dropout(x, 1.0, Mode::Train, 1), Err(ModelError::BadRate(_))));
        let y = g.dropout(x, 0.2, Mode::Train, 7).unwrap();
        let yv = &g.value(y).data;
        let dropped = yv.iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((dropped - 0.2).abs() < 0.01, "{dropped}");
        assert!(yv.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
        for seed in 0..20 {
            check_gradients(seed, &[&[3, 7]], |g, v| g.dropout(v[0], 0.3, Mode::Train, 11));
        }
    }
}
