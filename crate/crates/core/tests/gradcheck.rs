//! Every primitive's reverse-mode gradient against central differences.

use metashift::autodiff::{finite_difference, max_relative_error, nn, Graph, Var};
use metashift::{Result, Tensor};
use proptest::prelude::*;

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-3;

/// Reduces an arbitrary-shaped output to a scalar with fixed random weights,
/// so every output element contributes a distinct cotangent.
fn probe(out: &Var, weights: &[f64]) -> Result<Var> {
    let shape = out.shape();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| weights[i % weights.len()]).collect();
    let r = out.graph().constant(Tensor::new(shape, w)?);
    nn::sum(&out.mul(&r)?)
}

fn check<F>(inputs: Vec<Tensor>, weights: Vec<f64>, f: F) -> std::result::Result<(), TestCaseError>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
        let g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&vars)?;
        let loss = probe(&out, &weights)?;
        Ok((g, vars, loss))
    };
    let (g, vars, loss) = eval(&inputs).unwrap();
    let analytic = g.backward(&loss, &vars).unwrap();
    let numeric = finite_difference(|p| Ok(eval(p)?.2.value().data()[0]), &inputs, EPS).unwrap();
    let err = max_relative_error(&analytic, &numeric, FLOOR);
    prop_assert!(err < TOL, "relative error {err}");
    Ok(())
}

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

/// Values kept away from zero so activation kinks stay outside the stencil.
fn tensor_off_zero(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(prop_oneof![-2.0f64..-0.01, 0.01f64..2.0], n)
        .prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, 1..8)
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=8, 1usize..=8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn add_sub_mul((m, n) in dims(), seed in any::<u64>(), w in weights()) {
        let mk = |s: u64| -> Tensor {
            let data = (0..m * n).map(|i| (((s.wrapping_add(i as u64 * 2654435761)) % 1000) as f64 / 250.0) - 2.0).collect();
            Tensor::new(vec![m, n], data).unwrap()
        };
        let (a, b) = (mk(seed), mk(seed.rotate_left(17)));
        check(vec![a.clone(), b.clone()], w.clone(), |v| v[0].add(&v[1]))?;
        check(vec![a.clone(), b.clone()], w.clone(), |v| v[0].sub(&v[1]))?;
        check(vec![a, b], w, |v| v[0].mul(&v[1]))?;
    }

    #[test]
    fn scalar_broadcast(s in tensor(vec![1]), x in tensor(vec![3, 4]), w in weights()) {
        check(vec![s, x], w, |v| v[1].mul(&nn::broadcast_scalar(&v[0], &[3, 4])?))?;
    }

    #[test]
    fn matmul((m, k) in dims(), n in 1usize..=6, seed in 0u64..10_000, w in weights()) {
        let a = Tensor::new(vec![m, k], (0..m * k).map(|i| ((i as f64 + seed as f64) * 0.37).sin()).collect()).unwrap();
        let b = Tensor::new(vec![k, n], (0..k * n).map(|i| ((i as f64 * 1.3 + seed as f64) * 0.11).cos()).collect()).unwrap();
        check(vec![a, b], w, |v| v[0].matmul(&v[1]))?;
    }

    #[test]
    fn conv2d_padded(x in tensor(vec![1, 2, 4, 4]), k in tensor(vec![2, 2, 3, 3]), pad in 0usize..=1, w in weights()) {
        check(vec![x, k], w, |v| nn::conv2d(&v[0], &v[1], pad))?;
    }

    #[test]
    fn conv2d_batch(x in tensor(vec![2, 1, 3, 3]), k in tensor(vec![3, 1, 2, 2]), w in weights()) {
        check(vec![x, k], w, |v| nn::conv2d(&v[0], &v[1], 0))?;
    }

    #[test]
    fn relu_and_leaky(x in tensor_off_zero(vec![4, 6]), w in weights()) {
        check(vec![x.clone()], w.clone(), |v| nn::relu(&v[0]))?;
        check(vec![x], w, |v| nn::leaky_relu(&v[0]))?;
    }

    #[test]
    fn max_pool(x in tensor(vec![1, 2, 4, 4]), w in weights()) {
        // Require a clear winner in every window so the stencil cannot swap it.
        let d = x.data();
        let clear = (0..2).all(|c| (0..2).all(|i| (0..2).all(|j| {
            let mut vals: Vec<f64> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                .iter().map(|(a, b)| d[c * 16 + (2 * i + a) * 4 + 2 * j + b]).collect();
            vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
            vals[0] - vals[1] > 1e-3
        })));
        prop_assume!(clear);
        check(vec![x], w, |v| nn::max_pool2(&v[0]))?;
    }

    #[test]
    fn global_mean_pool(x in tensor(vec![2, 3, 3, 3]), w in weights()) {
        check(vec![x], w, |v| nn::global_mean_pool(&v[0]))?;
    }

    #[test]
    fn linear_layer(x in tensor(vec![4, 5]), wt in tensor(vec![3, 5]), b in tensor(vec![3]), w in weights()) {
        check(vec![x, wt, b], w, |v| nn::linear(&v[0], &v[1], &v[2]))?;
    }

    #[test]
    fn channel_bias(x in tensor(vec![2, 3, 2, 2]), b in tensor(vec![3]), w in weights()) {
        check(vec![x, b], w, |v| nn::add_channel_bias(&v[0], &v[1]))?;
    }

    #[test]
    fn softmax_cross_entropy(logits in tensor(vec![6, 5]), labels in prop::collection::vec(0usize..5, 6)) {
        check(vec![logits], vec![1.0], |v| nn::softmax_cross_entropy(&v[0], &labels))?;
    }

    #[test]
    fn exp_and_scale(x in tensor(vec![7]), k in -3.0f64..3.0, w in weights()) {
        check(vec![x], w, |v| Ok(v[0].exp().scale(k)))?;
    }

    /// Hessian-vector products through the record: the gradient of
    /// `<grad L, u>` against finite differences of the gradient itself.
    #[test]
    fn second_order_through_cross_entropy(
        feats in tensor(vec![5, 4]),
        wt in tensor(vec![3, 4]),
        labels in prop::collection::vec(0usize..3, 5),
        u in tensor(vec![3, 4]),
    ) {
        let grad_dot = |vals: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
            let g = Graph::new();
            let x = g.constant(feats.clone());
            let w = g.leaf(vals[0].clone());
            let logits = x.matmul(&w.transpose()?)?;
            let loss = nn::softmax_cross_entropy(&logits, &labels)?;
            let gw = g.grad(&loss, std::slice::from_ref(&w), true)?.remove(0);
            let dot = nn::sum(&gw.mul(&g.constant(u.clone()))?)?;
            Ok((g, vec![w], dot))
        };
        let (g, vars, dot) = grad_dot(std::slice::from_ref(&wt)).unwrap();
        let analytic = g.backward(&dot, &vars).unwrap();
        let numeric = finite_difference(|p| Ok(grad_dot(p)?.2.value().data()[0]), &[wt], EPS).unwrap();
        let err = max_relative_error(&analytic, &numeric, FLOOR);
        prop_assert!(err < TOL, "relative error {err}");
    }
}
