use std::collections::HashMap;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError, Result};
use crate::tensor::NamedArray;
use crate::Scalar;

/// A named array plus whether the optimizer updates it. Batch-norm running
/// statistics are stored here too, as non-trainable entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<S> {
    pub array: NamedArray<S>,
    pub trainable: bool,
}

/// Every array of a model, in a fixed order, addressable by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    params: Vec<Param<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> ModelParams<S> {
    fn new() -> Self {
        Self { params: Vec::new(), index: HashMap::new() }
    }

    fn push(&mut self, name: String, shape: Vec<usize>, values: Vec<S>, trainable: bool) {
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { array: NamedArray::new(name, shape, values), trainable });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray<S>> {
        self.position(name)
            .map(|i| &self.params[i].array)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut NamedArray<S>> {
        match self.position(name) {
            Some(i) => Ok(&mut self.params[i].array),
            None => Err(ModelError::MissingParam(name.to_string())),
        }
    }

    pub fn at(&self, i: usize) -> &Param<S> {
        &self.params[i]
    }

    pub fn at_mut(&mut self, i: usize) -> &mut Param<S> {
        &mut self.params[i]
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.array.values.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.array.values.iter().all(|v| v.is_finite()))
    }

    pub fn to_arrays(&self) -> Vec<NamedArray<S>> {
        self.params.iter().map(|p| p.array.clone()).collect()
    }

    /// Loads arrays from a checkpoint into the layout `cfg` expects.
    pub fn from_arrays(cfg: &ModelConfig, arrays: Vec<NamedArray<S>>) -> Result<Self> {
        let mut params = init_params::<S>(cfg, 0)?;
        let mut seen = vec![false; params.len()];
        for a in arrays {
            let i = params.position(&a.name).ok_or_else(|| ModelError::MissingParam(a.name.clone()))?;
            let slot = &mut params.params[i].array;
            if slot.shape != a.shape {
                return Err(ModelError::ParamShape { name: a.name, expected: slot.shape.clone(), found: a.shape });
            }
            slot.values = a.values;
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(ModelError::MissingParam(params.params[i].array.name.clone()));
        }
        Ok(params)
    }
}

/// Half-width of the Xavier/Glorot uniform distribution.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

struct Builder<S> {
    params: ModelParams<S>,
    rng: ChaCha8Rng,
}

impl<S: Scalar> Builder<S> {
    fn uniform(&mut self, name: String, shape: Vec<usize>, fan_in: usize, fan_out: usize) {
        let a = xavier_bound(fan_in, fan_out);
        let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
        let n = shape.iter().product();
        let values = (0..n).map(|_| S::from_f64_lossy(dist.sample(&mut self.rng))).collect();
        self.params.push(name, shape, values, true);
    }

    fn fill(&mut self, name: String, shape: Vec<usize>, value: f64, trainable: bool) {
        let n = shape.iter().product();
        self.params.push(name, shape, vec![S::from_f64_lossy(value); n], trainable);
    }

    fn conv(&mut self, prefix: &str, cout: usize, cin: usize, k: usize) {
        self.uniform(format!("{prefix}.weight"), vec![cout, cin, k], cin * k, cout * k);
        self.fill(format!("{prefix}.bias"), vec![cout], 0.0, true);
    }

    fn linear(&mut self, prefix: &str, fin: usize, fout: usize) {
        self.uniform(format!("{prefix}.weight"), vec![fin, fout], fin, fout);
        self.fill(format!("{prefix}.bias"), vec![fout], 0.0, true);
    }

    fn batch_norm(&mut self, prefix: &str, c: usize) {
        self.fill(format!("{prefix}.gamma"), vec![c], 1.0, true);
        self.fill(format!("{prefix}.beta"), vec![c], 0.0, true);
        self.fill(format!("{prefix}.running_mean"), vec![c], 0.0, false);
        self.fill(format!("{prefix}.running_var"), vec![c], 1.0, false);
    }
}

/// Deterministic initialization: conv and linear weights Xavier-uniform,
/// biases 0, batch-norm scale 1 and shift 0.
pub fn init_params<S: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<S>> {
    cfg.validate()?;
    let mut b = Builder { params: ModelParams::new(), rng: ChaCha8Rng::seed_from_u64(seed) };
    let c = cfg.branch_channels;
    for &k in &cfg.branch_kernel_sizes {
        let p = format!("branch{k}");
        b.conv(&format!("{p}.conv1"), c, 1, k);
        b.batch_norm(&format!("{p}.bn1"), c);
        b.conv(&format!("{p}.conv2"), c, c, k);
        b.batch_norm(&format!("{p}.bn2"), c);
        b.conv(&format!("{p}.proj"), c, 1, 1);
    }
    let a = cfg.attention_channels;
    let h = cfg.reduced_channels();
    let kb = cfg.block_kernel_size;
    for i in 0..cfg.attention_blocks {
        let p = format!("block{i}");
        b.conv(&format!("{p}.conv1"), a, a, kb);
        b.batch_norm(&format!("{p}.bn1"), a);
        b.conv(&format!("{p}.conv2"), a, a, kb);
        b.batch_norm(&format!("{p}.bn2"), a);
        b.linear(&format!("{p}.ca.fc1"), a, h);
        b.batch_norm(&format!("{p}.ca.bn"), h);
        b.linear(&format!("{p}.ca.fc2"), h, a);
        b.conv(&format!("{p}.sa.gate"), 1, 2, cfg.spatial_kernel);
        b.conv(&format!("{p}.sa.proj"), a, a, 1);
    }
    b.linear("head", a, cfg.num_classes);
    Ok(b.params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params() {
        let cfg = ModelConfig::micro(4, 64);
        let a = init_params::<f64>(&cfg, 7).unwrap();
        assert_eq!(a, init_params::<f64>(&cfg, 7).unwrap());
        assert_ne!(a, init_params::<f64>(&cfg, 8).unwrap());
    }

    #[test]
    fn names_unique_and_layout_fixed() {
        let p = init_params::<f64>(&ModelConfig::default(), 0).unwrap();
        let mut names: Vec<_> = p.iter().map(|x| x.array.name.clone()).collect();
        assert_eq!(names[0], "branch3.conv1.weight");
        assert_eq!(names.last().unwrap(), "head.bias");
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        assert_eq!(p.get("block1.sa.gate.weight").unwrap().shape, vec![1, 2, 3]);
        assert_eq!(p.get("block2.ca.fc1.weight").unwrap().shape, vec![96, 24]);
        assert!(!p.at(p.position("branch5.bn2.running_var").unwrap()).trainable);
    }

    #[test]
    fn weight_spread_matches_xavier() {
        // Uniform(-a, a) has standard deviation a / sqrt(3).
        let p = init_params::<f64>(&ModelConfig::default(), 11).unwrap();
        for name in ["block0.conv1.weight", "branch7.conv2.weight", "block2.ca.fc1.weight"] {
            let w = p.get(name).unwrap();
            assert!(w.values.len() >= 1000);
            let (fan_in, fan_out) = match w.shape[..] {
                [o, i, k] => (i * k, o * k),
                [i, o] => (i, o),
                _ => unreachable!(),
            };
            let analytic = xavier_bound(fan_in, fan_out) / 3f64.sqrt();
            let n = w.values.len() as f64;
            let mean = w.values.iter().sum::<f64>() / n;
            let std = (w.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!((std - analytic).abs() < 0.2 * analytic, "{name}: {std} vs {analytic}");
            assert!(w.values.iter().all(|v| v.abs() <= xavier_bound(fan_in, fan_out)));
        }
    }

    #[test]
    fn from_arrays_checks_layout() {
        let cfg = ModelConfig::micro(4, 64);
        let p = init_params::<f64>(&cfg, 3).unwrap();
        assert_eq!(ModelParams::from_arrays(&cfg, p.to_arrays()).unwrap(), p);
        let mut arrays = p.to_arrays();
        arrays.pop();
        assert!(ModelParams::<f64>::from_arrays(&cfg, arrays).is_err());
        let mut arrays = p.to_arrays();
        arrays[0].shape = vec![1, 1, 1];
        assert!(ModelParams::<f64>::from_arrays(&cfg, arrays).is_err());
        assert!(ModelParams::<f64>::from_arrays(&ModelConfig::micro(8, 64), p.to_arrays()).is_err());
    }
}
