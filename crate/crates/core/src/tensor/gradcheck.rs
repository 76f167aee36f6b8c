//! Central-difference checks of analytic gradients.

use super::{Graph, Prng, Real, Tensor, Var};
use crate::error::Result;

/// Outcome of one named gradient check.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub trials: usize,
}

/// Largest per-coordinate discrepancy between the analytic gradient returned
/// by `f` at `x` and a central difference of its value.
///
/// The step for coordinate `i` is `h * max(1, |x_i|)`. The error for a
/// coordinate is `|analytic - numeric| / max(1, |numeric|)`.
pub fn finite_diff_check<T, F>(f: F, x: &Tensor<T>, h: T) -> Result<T>
where
    T: Real,
    F: Fn(&Tensor<T>) -> Result<(T, Tensor<T>)>,
{
    let (_, analytic) = f(x)?;
    let mut worst = T::zero();
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let xi = x.data()[i];
        let step = h * xi.abs().max(T::one());
        probe.data_mut()[i] = xi + step;
        let (fp, _) = f(&probe)?;
        probe.data_mut()[i] = xi - step;
        let (fm, _) = f(&probe)?;
        probe.data_mut()[i] = xi;
        let numeric = (fp - fm) / (step + step);
        let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(T::one());
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Runs [`finite_diff_check`] on a scalar function expressed as graph code.
/// `build` receives the input as a parameter node and returns the scalar output.
pub fn check_graph_fn<T, B>(build: B, x: &Tensor<T>, h: T) -> Result<T>
where
    T: Real,
    B: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    finite_diff_check(
        |t| {
            let mut g = Graph::new();
            let v = g.param(t.clone());
            let out = build(&mut g, v)?;
            let value = g.value(out).item();
            g.backward(out)?;
            let grad = g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape()));
            Ok((value, grad))
        },
        x,
        h,
    )
}

type Builder = Box<dyn Fn(&mut Graph<f64>, Var, &[Tensor<f64>]) -> Result<Var>>;

struct Case {
    name: &'static str,
    input: Vec<usize>,
    lo: f64,
    hi: f64,
    /// shapes of fixed random operands passed to the builder
    aux: Vec<Vec<usize>>,
    build: Builder,
}

fn case(
    name: &'static str,
    input: &[usize],
    aux: &[&[usize]],
    build: impl Fn(&mut Graph<f64>, Var, &[Tensor<f64>]) -> Result<Var> + 'static,
) -> Case {
    Case {
        name,
        input: input.to_vec(),
        lo: -1.0,
        hi: 1.0,
        aux: aux.iter().map(|s| s.to_vec()).collect(),
        build: Box::new(build),
    }
}

/// Reduces `y` to a scalar through a fixed random weighting so that no
/// gradient vanishes by symmetry.
fn project(g: &mut Graph<f64>, y: Var, w: &Tensor<f64>) -> Result<Var> {
    let wv = g.constant(w.clone());
    let prod = g.mul(y, wv)?;
    Ok(g.sum(prod))
}

fn cases() -> Vec<Case> {
    let mut v = vec![
        case("matmul.lhs", &[3, 4], &[&[4, 5], &[3, 5]], |g, x, a| {
            let b = g.constant(a[0].clone());
            let y = g.matmul(x, b)?;
            project(g, y, &a[1])
        }),
        case("matmul.rhs", &[4, 5], &[&[3, 4], &[3, 5]], |g, x, a| {
            let lhs = g.constant(a[0].clone());
            let y = g.matmul(lhs, x)?;
            project(g, y, &a[1])
        }),
        case("matmul.batched", &[2, 3, 4], &[&[2, 4, 2], &[2, 3, 2]], |g, x, a| {
            let b = g.constant(a[0].clone());
            let y = g.matmul(x, b)?;
            project(g, y, &a[1])
        }),
        case("conv3x3.input", &[2, 5, 5], &[&[2, 2, 3, 3], &[2], &[2, 5, 5]], |g, x, a| {
            let k = g.constant(a[0].clone());
            let b = g.constant(a[1].clone());
            let y = g.conv3x3(x, k, b)?;
            project(g, y, &a[2])
        }),
        case("conv3x3.kernel", &[2, 2, 3, 3], &[&[3, 2, 4, 4], &[2], &[3, 2, 4, 4]], |g, k, a| {
            let x = g.constant(a[0].clone());
            let b = g.constant(a[1].clone());
            let y = g.conv3x3(x, k, b)?;
            project(g, y, &a[2])
        }),
        case("conv3x3.bias", &[2], &[&[2, 4, 4], &[2, 2, 3, 3], &[2, 4, 4]], |g, b, a| {
            let x = g.constant(a[0].clone());
            let k = g.constant(a[1].clone());
            let y = g.conv3x3(x, k, b)?;
            project(g, y, &a[2])
        }),
        case("layer_norm.input", &[3, 6], &[&[6], &[6], &[3, 6]], |g, x, a| {
            let gm = g.constant(a[0].clone());
            let bt = g.constant(a[1].clone());
            let y = g.layer_norm(x, gm, bt, 1e-6)?;
            project(g, y, &a[2])
        }),
        case("layer_norm.gamma", &[6], &[&[3, 6], &[6], &[3, 6]], |g, gm, a| {
            let x = g.constant(a[0].clone());
            let bt = g.constant(a[1].clone());
            let y = g.layer_norm(x, gm, bt, 1e-6)?;
            project(g, y, &a[2])
        }),
        case("layer_norm.beta", &[6], &[&[3, 6], &[6], &[3, 6]], |g, bt, a| {
            let x = g.constant(a[0].clone());
            let gm = g.constant(a[1].clone());
            let y = g.layer_norm(x, gm, bt, 1e-6)?;
            project(g, y, &a[2])
        }),
        case("softmax", &[3, 5], &[&[3, 5]], |g, x, a| {
            let y = g.softmax(x);
            project(g, y, &a[0])
        }),
        case("gelu", &[12], &[&[12]], |g, x, a| {
            let y = g.gelu(x);
            project(g, y, &a[0])
        }),
        case("sigmoid", &[12], &[&[12]], |g, x, a| {
            let y = g.sigmoid(x);
            project(g, y, &a[0])
        }),
        case("add", &[2, 3], &[&[2, 3], &[2, 3]], |g, x, a| {
            let c = g.constant(a[0].clone());
            let y = g.add(x, c)?;
            let z = g.add(y, x)?;
            project(g, z, &a[1])
        }),
        case("sub", &[2, 3], &[&[2, 3], &[2, 3]], |g, x, a| {
            let c = g.constant(a[0].clone());
            let y = g.sub(c, x)?;
            project(g, y, &a[1])
        }),
        case("mul", &[2, 3], &[&[2, 3], &[2, 3]], |g, x, a| {
            let c = g.constant(a[0].clone());
            let y = g.mul(x, c)?;
            let z = g.mul(y, x)?;
            project(g, z, &a[1])
        }),
        case("add_bias", &[4], &[&[3, 4], &[3, 4]], |g, b, a| {
            let x = g.constant(a[0].clone());
            let y = g.add_bias(x, b)?;
            let z = g.mul(y, y)?;
            project(g, z, &a[1])
        }),
        case("scale.add_scalar", &[5], &[&[5]], |g, x, a| {
            let y = g.scale(x, 1.7);
            let z = g.add_scalar(y, -0.3);
            let w = g.mul(z, z)?;
            project(g, w, &a[0])
        }),
        case("mean", &[7], &[&[7]], |g, x, a| {
            let y = project(g, x, &a[0])?;
            let sq = g.mul(x, x)?;
            let m = g.mean(sq);
            g.add(y, m)
        }),
        case("mse_mean", &[2, 4], &[&[2, 4]], |g, x, a| {
            let t = g.constant(a[0].clone());
            g.mse_mean(x, t)
        }),
        case("gather.permute", &[2, 3, 4], &[&[4, 2, 3]], |g, x, a| {
            let y = g.permute(x, &[2, 0, 1])?;
            let z = g.mul(y, y)?;
            project(g, z, &a[0])
        }),
        case("gather.repeat", &[3, 2], &[&[5, 2]], |g, x, a| {
            let y = g.gather_rows(x, &[0, 2, 2, 1, 0])?;
            let z = g.mul(y, y)?;
            project(g, z, &a[0])
        }),
        case("concat", &[2, 3], &[&[1, 3], &[3, 3]], |g, x, a| {
            let c = g.constant(a[0].clone());
            let y = g.concat(&[x, c])?;
            let z = g.mul(y, y)?;
            project(g, z, &a[1])
        }),
        case("reshape", &[2, 6], &[&[3, 4]], |g, x, a| {
            let y = g.reshape(x, &[3, 4])?;
            let z = g.gelu(y);
            project(g, z, &a[0])
        }),
    ];
    let mut div = case("div", &[2, 3], &[&[2, 3], &[2, 3]], |g, x, a| {
        let c = g.constant(a[0].clone());
        let y = g.div(c, x)?;
        let z = g.div(y, x)?;
        project(g, z, &a[1])
    });
    div.lo = 0.5;
    div.hi = 2.0;
    v.push(div);
    let mut bce = case("bce_map", &[3, 3], &[&[3, 3], &[3, 3]], |g, p, a| {
        let t = g.constant(a[0].map(|v| 0.5 + 0.5 * v));
        let y = g.bce_map(p, t, 1e-7)?;
        project(g, y, &a[1])
    });
    bce.lo = 0.05;
    bce.hi = 0.95;
    v.push(bce);
    v
}

/// Gradient check of every differentiable primitive in `f64`, each on
/// `trials` random inputs drawn from `seed`.
pub fn primitive_suite(seed: u64, trials: usize) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for c in cases() {
        let mut rng = Prng::derive(seed, c.name);
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let x = Tensor::from_fn(&c.input, |_| rng.uniform(c.lo, c.hi));
            let aux: Vec<Tensor<f64>> = c
                .aux
                .iter()
                .map(|s| Tensor::from_fn(s, |_| rng.uniform(-1.0, 1.0)))
                .collect();
            let err = check_graph_fn(|g, v| (c.build)(g, v, &aux), &x, 1e-5)?;
            worst = worst.max(err);
        }
        out.push(CheckResult {
            name: c.name.to_string(),
            max_rel_error: worst,
            trials,
        });
    }
    Ok(out)
}
