use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rccm_autograd::{BatchStats, Real, Tensor};

use crate::error::{Error, Result};

/// Index of a trainable tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Index of a normalization layer's running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NormId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Momentum of the exponential running averages kept for evaluation.
pub const NORM_MOMENTUM: f64 = 0.1;

/// All trainable tensors and normalization buffers of a network, in
/// creation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    norms: Vec<RunningStats<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn norms(&self) -> &[RunningStats<T>] {
        &self.norms
    }

    pub fn norms_mut(&mut self) -> &mut [RunningStats<T>] {
        &mut self.norms
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn running(&self, id: NormId) -> &RunningStats<T> {
        &self.norms[id.0]
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Folds batch statistics observed in a training step into the running
    /// averages.
    pub fn apply_batch_stats(&mut self, stats: &[(NormId, BatchStats<T>)]) {
        let m = T::from_f64_lossy(NORM_MOMENTUM);
        let keep = T::one() - m;
        for (id, s) in stats {
            let r = &mut self.norms[id.0];
            for (run, &b) in r.mean.iter_mut().zip(&s.mean) {
                *run = keep * *run + m * b;
            }
            for (run, &b) in r.var.iter_mut().zip(&s.var) {
                *run = keep * *run + m * b;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            norms: self
                .norms
                .iter()
                .map(|r| RunningStats {
                    name: r.name.clone(),
                    mean: r.mean.iter().map(|&v| U::from_f64_lossy(v.as_f64())).collect(),
                    var: r.var.iter().map(|&v| U::from_f64_lossy(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    /// Replaces every tensor with the same-named, same-shaped one from
    /// `other`.
    pub fn copy_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::Checkpoint("parameter layout differs".into()));
        }
        self.params.clone_from(&other.params);
        self.norms.clone_from(&other.norms);
        Ok(())
    }

    pub fn same_layout(&self, other: &ParamStore<T>) -> bool {
        self.params.len() == other.params.len()
            && self.norms.len() == other.norms.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
            && self
                .norms
                .iter()
                .zip(&other.norms)
                .all(|(a, b)| a.name == b.name && a.mean.len() == b.mean.len())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
            && self
                .norms
                .iter()
                .all(|r| r.mean.iter().chain(&r.var).all(|v| v.is_finite()))
    }
}

/// Creates parameters in a fixed order from a seeded stream.
pub(crate) struct ParamBuilder<T> {
    store: ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> ParamBuilder<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            store: ParamStore {
                params: Vec::new(),
                norms: Vec::new(),
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn push(&mut self, name: String, value: Tensor<T>) -> ParamId {
        self.store.params.push(Param { name, value });
        ParamId(self.store.params.len() - 1)
    }

    /// Uniform on `±sqrt(3 / fan_in)`, i.e. variance `1 / fan_in`.
    pub fn fan_in_uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = (3.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64_lossy(self.rng.random_range(-bound..bound)))
            .collect();
        let t = Tensor::new(shape, data).expect("shape matches data");
        self.push(name, t)
    }

    pub fn filled(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.push(name, Tensor::full(shape, T::from_f64_lossy(value)))
    }

    pub fn running_stats(&mut self, name: String, channels: usize) -> NormId {
        self.store.norms.push(RunningStats {
            name,
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        });
        NormId(self.store.norms.len() - 1)
    }

    pub fn finish(self) -> ParamStore<T> {
        self.store
    }
}
