//! Central finite-difference oracle for tape gradients at `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use super::Result;

/// Cells probed per input; larger inputs are subsampled deterministically.
const MAX_PROBES: usize = 64;
const STEP: f64 = 1e-6;

/// Worst relative error between analytic and numeric gradients over all
/// probed input cells. Inputs are uniform in `[-1, 1]`; the scalar loss is a
/// random projection of the built output.
pub fn max_relative_error<F>(seed: u64, shapes: &[&[usize]], mut build: F) -> Result<f64>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<f64>> = shapes
        .iter()
        .map(|s| {
            let n = s.iter().product();
            Tensor::new(s, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        })
        .collect();

    let mut projection: Option<Vec<f64>> = None;
    let mut eval = |inputs: &[Tensor<f64>], grads: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
        let y = build(&mut g, &vars)?;
        let c = projection
            .get_or_insert_with(|| {
                let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
                (0..g.value(y).len()).map(|_| r.random_range(-1.0..1.0)).collect()
            })
            .clone();
        let loss = g.dot_const(y, c)?;
        let value = g.value(loss).data[0];
        let mut out = Vec::new();
        if grads {
            g.backward(loss)?;
            for (v, t) in vars.iter().zip(inputs) {
                out.push(g.grad(*v).map_or(vec![0.0; t.len()], <[f64]>::to_vec));
            }
        }
        Ok((value, out))
    };

    let (_, analytic) = eval(&inputs, true)?;
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let n = input.len();
        let stride = n.div_ceil(MAX_PROBES).max(1);
        for cell in (0..n).step_by(stride) {
            let mut plus = inputs.clone();
            plus[k].data[cell] += STEP;
            let mut minus = inputs.clone();
            minus[k].data[cell] -= STEP;
            let numeric = (eval(&plus, false)?.0 - eval(&minus, false)?.0) / (2.0 * STEP);
            let a = analytic[k][cell];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-7 {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / scale
            };
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Panic unless the worst relative error is below `1e-4`.
pub fn check_gradients<F>(seed: u64, shapes: &[&[usize]], build: F)
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let err = max_relative_error(seed, shapes, build).expect("graph builds");
    assert!(err < 1e-4, "seed {seed}: relative gradient error {err:e}");
}
