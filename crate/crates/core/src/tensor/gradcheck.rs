//! Central finite-difference checks of reverse-mode gradients, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{self, Mode};
use super::{Result, Tensor};
use crate::model::{input_tensor, model_forward, Forward, Msdan};

/// Perturbation used for every central difference.
pub const STEP: f64 = 1e-4;

/// Largest accepted `|analytic - numeric| / max(1, |numeric|)`.
pub const TOLERANCE: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Outcome of one check. Coordinates where a ReLU or max-pool switch lies
/// inside the perturbation are counted in `skipped`, not compared.
#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub max_error: f64,
    pub failures: Vec<String>,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.failures.is_empty()
    }

    fn record(&mut self, what: String, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        self.max_error = self.max_error.max(err);
        if !(err < TOLERANCE) {
            self.failures.push(format!("{what}: analytic {analytic} numeric {numeric}"));
        }
    }

    pub fn merge(&mut self, other: GradCheck) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.max_error = self.max_error.max(other.max_error);
        self.failures.extend(other.failures);
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Dot product of `y` with fixed random weights, so every output element
/// contributes a distinct amount to the scalar.
pub fn project(y: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::new(y.shape().to_vec(), uniform(&mut rng, y.numel()))?;
    Ok(ops::sum(&ops::mul(y, &w)?))
}

/// Compares the gradient of `project(f(inputs))` with respect to every
/// element of every input against central differences.
pub fn check_op<F>(name: &str, inputs: &[(Vec<usize>, Vec<f64>)], f: F) -> Result<GradCheck>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let vars = inputs.iter().map(|(s, d)| Tensor::variable(s.clone(), d.clone())).collect::<Result<Vec<_>>>()?;
    project(&f(&vars)?, 99)?.backward()?;
    let mut out = GradCheck::default();
    for (k, (shape, data)) in inputs.iter().enumerate() {
        let grad = vars[k].grad().unwrap_or_else(|| vec![0.0; data.len()]);
        for i in 0..data.len() {
            let eval = |delta: f64| -> Result<f64> {
                let xs = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, (s, d))| {
                        let mut d = d.clone();
                        if j == k {
                            d[i] += delta;
                        }
                        Tensor::new(s.clone(), d)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(project(&f(&xs)?, 99)?.item())
            };
            let numeric = (eval(STEP)? - eval(-STEP)?) / (2.0 * STEP);
            out.record(format!("{name}: input {k} {shape:?} element {i}"), grad[i], numeric);
        }
    }
    Ok(out)
}

/// Checks train-mode parameter gradients of the whole network on `epochs`,
/// sampling up to `per_param` coordinates of each trainable array.
pub fn check_model(model: &Msdan<f64>, epochs: &[&[f32]], per_param: usize, seed: u64) -> crate::model::Result<GradCheck> {
    let x = input_tensor::<f64>(epochs, model.config.input_length)?;
    let loss_of = |m: &Msdan<f64>| -> crate::model::Result<f64> {
        let mut ctx = Forward::new(&m.config, &m.params, Mode::Train, false);
        Ok(project(&model_forward(&mut ctx, &x)?, 7)?.item())
    };
    let mut ctx = Forward::new(&model.config, &model.params, Mode::Train, true);
    project(&model_forward(&mut ctx, &x)?, 7)?.backward()?;
    let grads = ctx.grads();
    let base = loss_of(model)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck::default();
    for p in 0..model.params.len() {
        let param = model.params.at(p);
        if !param.trainable {
            if grads[p].is_some() {
                out.failures.push(format!("{} is a buffer but received a gradient", param.array.name));
            }
            continue;
        }
        let Some(g) = grads[p].as_ref() else {
            out.failures.push(format!("no gradient for {}", param.array.name));
            continue;
        };
        let n = param.array.values.len();
        let picks: Vec<usize> =
            if n <= per_param { (0..n).collect() } else { (0..per_param).map(|_| rng.random_range(0..n)).collect() };
        for i in picks {
            let mut plus = model.clone();
            plus.params.at_mut(p).array.values[i] += STEP;
            let mut minus = model.clone();
            minus.params.at_mut(p).array.values[i] -= STEP;
            let (up, down) = (loss_of(&plus)?, loss_of(&minus)?);
            let numeric = (up - down) / (2.0 * STEP);
            // Disagreeing one-sided slopes: a kink inside [-h, h].
            let (fwd, bwd) = ((up - base) / STEP, (base - down) / STEP);
            if (fwd - bwd).abs() > 1e-3 * numeric.abs().max(1.0) {
                out.skipped += 1;
                continue;
            }
            out.record(format!("{}[{i}]", param.array.name), g[i], numeric);
        }
    }
    Ok(out)
}

/// Every differentiable operator on small random inputs.
pub fn check_all_ops(seed: u64) -> Result<GradCheck> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut all = GradCheck::default();
    let x = uniform(&mut r, 12);
    let m = vec![(vec![3, 4], x.clone())];
    all.merge(check_op("relu", &m, |t| Ok(ops::relu(&t[0])))?);
    all.merge(check_op("sigmoid", &[(vec![3, 4], x.iter().map(|v| v * 8.0).collect())], |t| Ok(ops::sigmoid(&t[0])))?);
    all.merge(check_op("abs", &m, |t| Ok(ops::abs(&t[0])))?);
    all.merge(check_op("scale", &m, |t| Ok(ops::scale(&t[0], -2.5)))?);
    all.merge(check_op("reshape", &m, |t| ops::reshape(&t[0], vec![2, 6]))?);
    all.merge(check_op("softmax", &m, |t| ops::softmax(&t[0]))?);

    let a = (vec![2, 3, 4], uniform(&mut r, 24));
    let b = (vec![2, 1, 4], uniform(&mut r, 8));
    let c = (vec![2, 3, 1], uniform(&mut r, 6));
    all.merge(check_op("add", &[a.clone(), b], |t| ops::add(&t[0], &t[1]))?);
    all.merge(check_op("sub", &[c.clone(), a.clone()], |t| ops::sub(&t[0], &t[1]))?);
    all.merge(check_op("mul", &[a.clone(), c], |t| ops::mul(&t[0], &t[1]))?);
    all.merge(check_op("mul same shape", &[a.clone(), a], |t| ops::mul(&t[0], &t[1]))?);

    let parts = [(vec![2, 1, 3], uniform(&mut r, 6)), (vec![2, 2, 3], uniform(&mut r, 12))];
    all.merge(check_op("concat", &parts, ops::concat)?);
    let lin = [(vec![3, 4], uniform(&mut r, 12)), (vec![4, 2], uniform(&mut r, 8)), (vec![2], uniform(&mut r, 2))];
    all.merge(check_op("linear", &lin, |t| ops::linear(&t[0], &t[1], &t[2]))?);

    for (stride, padding, k) in [(1, 0, 3), (1, 1, 3), (1, 3, 7), (2, 1, 3), (3, 2, 5)] {
        let conv = [
            (vec![2, 3, 11], uniform(&mut r, 66)),
            (vec![4, 3, k], uniform(&mut r, 12 * k)),
            (vec![4], uniform(&mut r, 4)),
        ];
        all.merge(check_op(&format!("conv1d stride {stride} pad {padding} k {k}"), &conv, |t| {
            ops::conv1d(&t[0], &t[1], &t[2], stride, padding)
        })?);
    }

    let gamma = (vec![3], uniform(&mut r, 3));
    let beta = (vec![3], uniform(&mut r, 3));
    for shape in [vec![4, 3], vec![2, 3, 5]] {
        let n = shape.iter().product();
        let x = (shape.clone(), uniform(&mut r, n));
        for mode in [Mode::Train, Mode::Eval] {
            let inputs = [x.clone(), gamma.clone(), beta.clone()];
            all.merge(check_op(&format!("batch_norm {shape:?} {mode:?}"), &inputs, |t| {
                let mut running = ops::RunningStats { mean: vec![0.1, -0.2, 0.3], var: vec![0.5, 1.5, 2.0] };
                ops::batch_norm1d(&t[0], &t[1], &t[2], &mut running, mode, 1e-5, 0.1)
            })?);
        }
    }

    let x = [(vec![2, 3, 12], uniform(&mut r, 72))];
    all.merge(check_op("max_pool1d", &x, |t| ops::max_pool1d(&t[0], 4, 4))?);
    all.merge(check_op("max_pool1d overlapping", &x, |t| ops::max_pool1d(&t[0], 3, 2))?);
    all.merge(check_op("global_avg_pool", &x, |t| ops::global_avg_pool(&t[0]))?);
    all.merge(check_op("global_max_pool", &x, |t| ops::global_max_pool(&t[0]))?);
    all.merge(check_op("channel_pool", &x, |t| ops::channel_pool(&t[0]))?);

    let st = [
        (vec![2, 3, 5], uniform(&mut r, 30)),
        (vec![2, 3, 1], uniform(&mut r, 6).iter().map(|v| 0.3 * v.abs() + 0.05).collect()),
    ];
    all.merge(check_op("soft_threshold", &st, |t| ops::soft_threshold(&t[0], &t[1]))?);
    Ok(all)
}

/// Three short deterministic inputs of `length` samples.
pub fn probe_epochs(length: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let a = (0..length).map(|i| (i as f32 * 0.3).sin() + r.random_range(-0.3..0.3)).collect();
    let b = (0..length).map(|i| (i as f32 * 0.9).cos() + r.random_range(-0.3..0.3)).collect();
    let c = (0..length).map(|_| r.random_range(-1.0..1.0)).collect();
    vec![a, b, c]
}
