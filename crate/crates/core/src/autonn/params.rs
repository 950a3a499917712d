use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use core::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{NnError, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId {
    store: usize,
    index: usize,
}

impl ParamId {
    /// Position within its store.
    pub fn index(self) -> usize {
        self.index
    }
}

static NEXT_STORE: AtomicUsize = AtomicUsize::new(0);

/// Initialization scheme recorded per parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on `±1/√fan_in`, where fan-in is the product of all but the
    /// leading dimension.
    FanInUniform,
    /// Normal with standard deviation `√(2/fan_in)`.
    HeNormal,
    Const(f64),
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub init: Init,
    pub seed: u64,
}

/// Named parameters with a stable insertion order.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: BTreeMap<String, ParamId>,
    seed: u64,
    /// Distinguishes ids of different stores bound into one graph; shared
    /// by clones and casts.
    tag: usize,
}

fn split_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer over (base, index)
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            index: BTreeMap::new(),
            seed,
            tag: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId, NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        let seed = split_seed(self.seed, self.params.len() as u64);
        let value = match init {
            Init::Const(v) => Tensor::full(shape, T::from_f64(v)),
            Init::FanInUniform => {
                let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
                let bound = 1.0 / libm::sqrt(fan_in as f64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
                Tensor::from_vec(shape, data)?
            }
            Init::HeNormal => {
                let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
                let std = libm::sqrt(2.0 / fan_in as f64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        T::from_f64(std * z)
                    })
                    .collect::<Vec<_>>();
                Tensor::from_vec(shape, data)?
            }
        };
        let id = self.make_id(self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            init,
            seed,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    fn make_id(&self, index: usize) -> ParamId {
        ParamId { store: self.tag, index }
    }

    fn slot(&self, id: ParamId) -> usize {
        debug_assert_eq!(id.store, self.tag, "parameter id from another store");
        id.index
    }

    /// Whether `id` was issued by this store (or a clone/cast of it).
    pub fn owns(&self, id: ParamId) -> bool {
        id.store == self.tag && id.index < self.params.len()
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NnError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[self.slot(id)].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        let i = self.slot(id);
        &mut self.params[i].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[self.slot(id)].name
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        let tag = self.tag;
        (0..self.params.len()).map(move |index| ParamId { store: tag, index })
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        let tag = self.tag;
        self.params.iter().enumerate().map(move |(index, p)| (ParamId { store: tag, index }, p))
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Ids whose name starts with `prefix`.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.iter().filter(move |(_, p)| p.name.starts_with(prefix)).map(|(id, _)| id)
    }

    /// Overwrites a parameter's value, checking the shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<(), NnError> {
        let i = self.slot(id);
        let cur = &mut self.params[i].value;
        if cur.shape() != value.shape() {
            return Err(NnError::Shape {
                op: "ParamStore::set",
                expected: cur.shape().to_vec(),
                got: value.shape().to_vec(),
            });
        }
        *cur = value;
        Ok(())
    }

    /// Same names and values in another precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    init: p.init,
                    seed: p.seed,
                })
                .collect(),
            index: self.index.clone(),
            seed: self.seed,
            tag: self.tag,
        }
    }
}
