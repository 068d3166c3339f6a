//! Central finite differences, used to check analytic gradients.

/// Step used by the gradient checks throughout the workspace.
pub const FD_STEP: f64 = 1e-5;

/// Numerical gradient of `f` at `x` by central differences.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(x: &[f64], step: f64, mut f: F) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Graph, Result, Tensor, Var};

/// Builds an op from leaf inputs on a fresh graph.
pub type OpBuilder = fn(&mut Graph, &[Var]) -> Result<Var>;

/// Relative error between the analytic gradient of `Σ r ⊙ op(inputs)` and
/// its central-difference estimate, maximised over inputs. `r` is a fixed
/// random projection so every output element contributes. Graphs are built
/// in training mode with a fixed seed so dropout masks repeat exactly.
pub fn op_gradient_error(inputs: &[Tensor], build: OpBuilder, proj_seed: u64) -> Result<f64> {
    let eval = |vals: &[Tensor], want_grad: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::training(17);
        let leaves: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &leaves)?;
        let shape = g.shape(out).to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(proj_seed);
        let n: usize = shape.iter().product();
        let r = Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let r = g.constant(r);
        let weighted = g.mul(out, r)?;
        let loss = g.sum(weighted)?;
        let value = g.value(loss).data()[0];
        let mut grads = Vec::new();
        if want_grad {
            g.backward(loss)?;
            for (leaf, t) in leaves.iter().zip(vals) {
                grads.push(g.grad(*leaf).map_or(vec![0.0; t.len()], Tensor::into_data));
            }
        }
        Ok((value, grads))
    };
    let (_, analytic) = eval(inputs, true)?;
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let numeric = central_difference(input.data(), FD_STEP, |x| {
            let mut vals = inputs.to_vec();
            vals[i] = Tensor::new(input.shape().to_vec(), x.to_vec()).expect("same shape");
            eval(&vals, false).expect("forward").0
        });
        worst = worst.max(relative_error(&analytic[i], &numeric));
    }
    Ok(worst)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("valid shape")
}

/// Runs the finite-difference check for every differentiable op on random
/// shapes (each extent at most 8) and returns `(op name, relative error)`.
pub fn op_suite(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = |rng: &mut ChaCha8Rng| rng.gen_range(1..=8usize);
    let mut results = Vec::new();
    let mut run = |name: &'static str, inputs: Vec<Tensor>, build: OpBuilder, rng: &mut ChaCha8Rng| -> Result<()> {
        let err = op_gradient_error(&inputs, build, rng.gen())?;
        results.push((name, err));
        Ok(())
    };

    let (m, k, n, b) = (dim(&mut rng), dim(&mut rng), dim(&mut rng), dim(&mut rng));
    let same = [m, n];
    run("add", vec![rand_tensor(&mut rng, &same), rand_tensor(&mut rng, &same)], |g, v| g.add(v[0], v[1]), &mut rng)?;
    run("sub", vec![rand_tensor(&mut rng, &same), rand_tensor(&mut rng, &same)], |g, v| g.sub(v[0], v[1]), &mut rng)?;
    run("mul", vec![rand_tensor(&mut rng, &same), rand_tensor(&mut rng, &same)], |g, v| g.mul(v[0], v[1]), &mut rng)?;
    run("add_row", vec![rand_tensor(&mut rng, &[b, m, n]), rand_tensor(&mut rng, &[n])], |g, v| g.add_row(v[0], v[1]), &mut rng)?;
    run("scale", vec![rand_tensor(&mut rng, &same)], |g, v| g.scale(v[0], -1.7), &mut rng)?;
    run("matmul", vec![rand_tensor(&mut rng, &[m, k]), rand_tensor(&mut rng, &[k, n])], |g, v| g.matmul(v[0], v[1]), &mut rng)?;
    run("bmm", vec![rand_tensor(&mut rng, &[b, m, k]), rand_tensor(&mut rng, &[b, k, n])], |g, v| g.bmm(v[0], v[1]), &mut rng)?;
    run("transpose", vec![rand_tensor(&mut rng, &[b, m, n])], |g, v| g.transpose(v[0]), &mut rng)?;
    run("reshape", vec![rand_tensor(&mut rng, &[b, m, n])], |g, v| {
        let n: usize = g.shape(v[0]).iter().product();
        g.reshape(v[0], &[n])
    }, &mut rng)?;
    run("narrow", vec![rand_tensor(&mut rng, &[b, m, n + 1])], |g, v| {
        let len = g.shape(v[0])[2] - 1;
        g.narrow(v[0], 2, 1, len)
    }, &mut rng)?;
    run("concat", vec![rand_tensor(&mut rng, &[b, m, n]), rand_tensor(&mut rng, &[b, k, n])], |g, v| g.concat(&[v[0], v[1]], 1), &mut rng)?;
    run("sum", vec![rand_tensor(&mut rng, &same)], |g, v| g.sum(v[0]), &mut rng)?;
    run("mean_axis", vec![rand_tensor(&mut rng, &[b, m, n])], |g, v| g.mean_axis(v[0], 1), &mut rng)?;
    run("max_axis", vec![rand_tensor(&mut rng, &[b, m, n])], |g, v| g.max_axis(v[0], 1), &mut rng)?;
    run("softmax", vec![rand_tensor(&mut rng, &[b, m, n])], |g, v| g.softmax(v[0], 2), &mut rng)?;
    run("softmax_inner_axis", vec![rand_tensor(&mut rng, &[b, m, n])], |g, v| g.softmax(v[0], 1), &mut rng)?;
    run("log_softmax", vec![rand_tensor(&mut rng, &[m, n])], |g, v| g.log_softmax(v[0], 1), &mut rng)?;
    let ln = n.max(2);
    run("layer_norm", vec![rand_tensor(&mut rng, &[b, m, ln]), rand_tensor(&mut rng, &[ln]), rand_tensor(&mut rng, &[ln])], |g, v| g.layer_norm(v[0], v[1], v[2]), &mut rng)?;
    run("relu", vec![rand_tensor(&mut rng, &[b, m, n])], |g, v| g.relu(v[0]), &mut rng)?;
    run("embedding_lookup", vec![rand_tensor(&mut rng, &[5, n])], |g, v| g.embedding_lookup(v[0], &[4, 0, 4, 2]), &mut rng)?;
    let kw = rng.gen_range(1..=m.max(1));
    let conv_w = rand_tensor(&mut rng, &[kw, k, n]);
    run("conv1d", vec![rand_tensor(&mut rng, &[b, m, k]), conv_w, rand_tensor(&mut rng, &[n])], |g, v| g.conv1d(v[0], v[1], v[2]), &mut rng)?;
    run("dropout", vec![rand_tensor(&mut rng, &[b, m, n])], |g, v| g.dropout(v[0], 0.7), &mut rng)?;
    run("cosine_rows", vec![rand_tensor(&mut rng, &[m, n.max(2)]), rand_tensor(&mut rng, &[m, n.max(2)])], |g, v| g.cosine_rows(v[0], v[1]), &mut rng)?;
    Ok(results)
}
