//! Central-difference verification of the reverse sweep. The graph is
//! rebuilt from scratch for every perturbed evaluation so the check never
//! trusts cached forward state.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;

/// Largest relative error between analytic and numeric gradients over all
/// elements of all inputs. `build` must construct the same scalar loss from
/// the given leaf values every time it is called.
pub fn max_rel_err<F>(inputs: &[Tensor<f64>], build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &ids);
    let grads = g.backward(loss).expect("scalar loss");

    let eval = |perturbed: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = perturbed.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &ids);
        g.value(loss).item()
    };

    let mut worst = 0.0f64;
    for (ti, t) in inputs.iter().enumerate() {
        let analytic = grads
            .get(ids[ti])
            .map(|a| a.data().to_vec())
            .unwrap_or_else(|| vec![0.0; t.numel()]);
        for ei in 0..t.numel() {
            let x = t.data()[ei];
            let eps = 1e-5 * x.abs().max(1.0);
            let mut plus = inputs.to_vec();
            let mut pv = t.data().to_vec();
            pv[ei] = x + eps;
            plus[ti] = Tensor::from_vec(t.shape().to_vec(), pv);
            let mut minus = inputs.to_vec();
            let mut mv = t.data().to_vec();
            mv[ei] = x - eps;
            minus[ti] = Tensor::from_vec(t.shape().to_vec(), mv);
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let a = analytic[ei];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, v)
}

/// Values bounded away from zero so ReLU is checked off its kink.
fn rand_offzero(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.2..1.2);
            if rng.gen::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_vec(shape, v)
}

pub struct OpCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
}

/// Runs the central-difference check once per op kind and reports the worst
/// element for each. Inputs are frozen by seed, sized small enough that the
/// whole battery runs in well under a minute.
pub fn check_all_ops() -> Vec<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(7001);
    let mut out = Vec::new();
    let mut push = |name: &'static str, err: f64| out.push(OpCheck { name, max_rel_err: err });

    {
        let a = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
        let b = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
        push(
            "add",
            max_rel_err(&[a, b], |g, ids| {
                let s = g.add(ids[0], ids[1]).unwrap();
                let s = g.sin(s);
                g.sum(s)
            }),
        );
    }
    {
        let x = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
        let b = rand_tensor(&mut rng, vec![4], -1.0, 1.0);
        push(
            "add_bias",
            max_rel_err(&[x, b], |g, ids| {
                let s = g.add_bias(ids[0], ids[1]).unwrap();
                let s = g.cos(s);
                g.sum(s)
            }),
        );
    }
    {
        let a = rand_tensor(&mut rng, vec![2, 5], -1.0, 1.0);
        let b = rand_tensor(&mut rng, vec![2, 5], -1.0, 1.0);
        push(
            "sub",
            max_rel_err(&[a, b], |g, ids| {
                let s = g.sub(ids[0], ids[1]).unwrap();
                let s = g.mul(s, s).unwrap();
                g.sum(s)
            }),
        );
    }
    {
        let a = rand_tensor(&mut rng, vec![4, 4], -1.0, 1.0);
        let b = rand_tensor(&mut rng, vec![4, 4], -1.0, 1.0);
        push(
            "mul",
            max_rel_err(&[a, b], |g, ids| {
                let s = g.mul(ids[0], ids[1]).unwrap();
                g.sum(s)
            }),
        );
    }
    {
        let x = rand_tensor(&mut rng, vec![6], -2.0, 2.0);
        push(
            "affine",
            max_rel_err(&[x], |g, ids| {
                let s = g.affine(ids[0], 1.75, -0.3);
                let s = g.sin(s);
                g.sum(s)
            }),
        );
    }
    {
        let a = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
        let b = rand_tensor(&mut rng, vec![4, 2], -1.0, 1.0);
        push(
            "matmul",
            max_rel_err(&[a, b], |g, ids| {
                let s = g.matmul(ids[0], ids[1]).unwrap();
                let s = g.sigmoid(s);
                g.sum(s)
            }),
        );
    }
    {
        let x = rand_offzero(&mut rng, vec![4, 4]);
        push(
            "relu",
            max_rel_err(&[x], |g, ids| {
                let s = g.relu(ids[0]);
                let s = g.mul(s, s).unwrap();
                g.sum(s)
            }),
        );
    }
    {
        let x = rand_tensor(&mut rng, vec![7], -3.0, 3.0);
        push(
            "sin",
            max_rel_err(&[x], |g, ids| {
                let s = g.sin(ids[0]);
                g.sum(s)
            }),
        );
    }
    {
        let x = rand_tensor(&mut rng, vec![7], -3.0, 3.0);
        push(
            "cos",
            max_rel_err(&[x], |g, ids| {
                let s = g.cos(ids[0]);
                g.sum(s)
            }),
        );
    }
    {
        let x = rand_tensor(&mut rng, vec![9], -4.0, 4.0);
        push(
            "softplus",
            max_rel_err(&[x], |g, ids| {
                let s = g.softplus(ids[0]);
                g.sum(s)
            }),
        );
    }
    {
        let x = rand_tensor(&mut rng, vec![9], -4.0, 4.0);
        push(
            "sigmoid",
            max_rel_err(&[x], |g, ids| {
                let s = g.sigmoid(ids[0]);
                g.sum(s)
            }),
        );
    }
    {
        let x = rand_tensor(&mut rng, vec![6], 0.5, 2.5);
        push(
            "ln",
            max_rel_err(&[x], |g, ids| {
                let s = g.ln(ids[0]);
                g.sum(s)
            }),
        );
    }
    {
        let x = rand_tensor(&mut rng, vec![6], 0.3, 2.0);
        push(
            "pow_scalar",
            max_rel_err(&[x], |g, ids| {
                let s = g.pow_scalar(ids[0], 1.7);
                g.sum(s)
            }),
        );
    }
    {
        let x = rand_tensor(&mut rng, vec![3, 5], -1.0, 1.0);
        push(
            "sum",
            max_rel_err(&[x], |g, ids| {
                let s = g.mul(ids[0], ids[0]).unwrap();
                g.sum(s)
            }),
        );
    }
    {
        let x = rand_tensor(&mut rng, vec![3, 5], -1.0, 1.0);
        push(
            "mean",
            max_rel_err(&[x], |g, ids| {
                let s = g.mul(ids[0], ids[0]).unwrap();
                g.mean(s)
            }),
        );
    }
    {
        let a = rand_tensor(&mut rng, vec![2, 3], -1.0, 1.0);
        let b = rand_tensor(&mut rng, vec![2, 2], -1.0, 1.0);
        let c = rand_tensor(&mut rng, vec![2, 4], -1.0, 1.0);
        push(
            "concat",
            max_rel_err(&[a, b, c], |g, ids| {
                let s = g.concat(&[ids[0], ids[1], ids[2]]).unwrap();
                let s = g.sin(s);
                g.sum(s)
            }),
        );
    }
    {
        let x = rand_tensor(&mut rng, vec![2, 6], -1.0, 1.0);
        push(
            "reshape",
            max_rel_err(&[x], |g, ids| {
                let s = g.reshape(ids[0], vec![3, 4]).unwrap();
                let s = g.sigmoid(s);
                g.sum(s)
            }),
        );
    }
    {
        let input = rand_tensor(&mut rng, vec![2, 4, 4, 4], -1.0, 1.0);
        let weight = rand_tensor(&mut rng, vec![2, 2, 3, 3, 3], -0.5, 0.5);
        push(
            "conv3d",
            max_rel_err(&[input, weight], |g, ids| {
                let s = g.conv3d(ids[0], ids[1], 2, 1).unwrap();
                let s = g.mul(s, s).unwrap();
                g.sum(s)
            }),
        );
    }
    {
        let grid = rand_tensor(&mut rng, vec![2, 3, 3, 3], -1.0, 1.0);
        let points = Arc::new(vec![
            [0.4, 1.2, 0.7],
            [1.9, 0.1, 1.4],
            [2.6, 2.6, 0.2],
            [-1.0, 5.0, 1.0], // clamped
        ]);
        push(
            "gather",
            max_rel_err(&[grid], move |g, ids| {
                let s = g.gather(ids[0], points.clone()).unwrap();
                let s = g.sin(s);
                g.sum(s)
            }),
        );
    }
    {
        let x = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
        let sc = rand_tensor(&mut rng, vec![3, 4], 0.5, 1.5);
        let sh = rand_tensor(&mut rng, vec![3, 4], -0.5, 0.5);
        push(
            "film",
            max_rel_err(&[x, sc, sh], |g, ids| {
                let s = g.film(ids[0], ids[1], ids[2]).unwrap();
                let s = g.sigmoid(s);
                g.sum(s)
            }),
        );
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_matches_central_differences() {
        for check in check_all_ops() {
            assert!(
                check.max_rel_err < 1e-6,
                "{}: rel err {:.3e}",
                check.name,
                check.max_rel_err
            );
        }
    }

    #[test]
    fn composite_network_gradient_checks() {
        // A little two-layer net with bias, FiLM and a focal-style loss
        // term, exercising op interactions rather than single ops.
        let mut rng = ChaCha8Rng::seed_from_u64(7002);
        let w1 = rand_tensor(&mut rng, vec![3, 8], -0.5, 0.5);
        let b1 = rand_tensor(&mut rng, vec![8], -0.1, 0.1);
        let w2 = rand_tensor(&mut rng, vec![8, 1], -0.5, 0.5);
        let x = rand_tensor(&mut rng, vec![4, 3], -1.0, 1.0);
        let scale = rand_tensor(&mut rng, vec![4, 8], 0.8, 1.2);
        let err = max_rel_err(&[w1, b1, w2, x, scale], |g, ids| {
            let h = g.matmul(ids[3], ids[0]).unwrap();
            let h = g.add_bias(h, ids[1]).unwrap();
            let zeros = g.constant(Tensor::zeros(vec![4, 8]));
            let h = g.film(h, ids[4], zeros).unwrap();
            let h = g.softplus(h);
            let y = g.matmul(h, ids[2]).unwrap();
            let p = g.sigmoid(y);
            let p2 = g.mul(p, p).unwrap();
            let sp = g.softplus(y);
            let term = g.mul(p2, sp).unwrap();
            g.mean(term)
        });
        assert!(err < 1e-6, "rel err {err:.3e}");
    }
}
