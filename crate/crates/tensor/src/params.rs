use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors, kept in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a parameter.
    pub fn insert(&mut self, name: &str, value: Tensor) -> ParamId {
        if let Some(&id) = self.index.get(name) {
            self.values[id.0] = value;
            return id;
        }
        let id = ParamId(self.names.len());
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), id);
        id
    }

    /// Xavier-uniform initialisation seeded from `(seed, name)`, so the same
    /// parameter name receives the same values regardless of what else the
    /// store contains.
    pub fn insert_xavier(&mut self, name: &str, shape: &[usize], seed: u64) -> ParamId {
        let (fan_in, fan_out) = match shape {
            [n] => (*n, *n),
            [a, b] => (*a, *b),
            [k, c, o] => (k * c, k * o),
            _ => {
                let n: usize = shape.iter().product();
                (n, n)
            }
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
        let data = (0..shape.iter().product::<usize>())
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("valid shape"))
    }

    pub fn insert_filled(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.insert(name, Tensor::filled(shape, value))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        Ok(self.get(self.id(name)?))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// FNV-1a over the name, mixed with the seed.
fn name_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_init_depends_only_on_seed_and_name() {
        let mut a = ParamStore::new();
        a.insert_xavier("enc.w", &[4, 4], 7);
        let mut b = ParamStore::new();
        b.insert_xavier("other", &[3], 7);
        b.insert_xavier("enc.w", &[4, 4], 7);
        assert_eq!(a.by_name("enc.w").unwrap(), b.by_name("enc.w").unwrap());

        let mut c = ParamStore::new();
        c.insert_xavier("enc.w", &[4, 4], 8);
        assert_ne!(a.by_name("enc.w").unwrap(), c.by_name("enc.w").unwrap());
    }

    #[test]
    fn insert_replaces_existing_name() {
        let mut s = ParamStore::new();
        let id = s.insert("b", Tensor::scalar(1.0));
        let id2 = s.insert("b", Tensor::scalar(2.0));
        assert_eq!(id, id2);
        assert_eq!(s.len(), 1);
        assert_eq!(s.get(id).item(), Some(2.0));
    }
}
