use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Named parameter set. BTreeMap keeps iteration order deterministic, which
/// the optimizer and checkpoint averaging rely on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    map: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.map.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(|t| t.all_finite())
    }

    /// Merge another set under a prefix, e.g. `merge("scout", ...)` maps
    /// `frontend.w1` to `scout.frontend.w1`.
    pub fn merge(&mut self, prefix: &str, other: &Params) {
        for (name, tensor) in other.iter() {
            self.map.insert(format!("{prefix}.{name}"), tensor.clone());
        }
    }

    /// Extract the subset under `prefix.`, stripping the prefix.
    pub fn strip_prefix(&self, prefix: &str) -> Params {
        let mut out = Params::new();
        let full = format!("{prefix}.");
        for (name, tensor) in self.iter() {
            if let Some(rest) = name.strip_prefix(&full) {
                out.insert(rest, tensor.clone());
            }
        }
        out
    }

    /// Parameter-wise mean of several checkpoints. All sets must share names
    /// and shapes.
    pub fn average(checkpoints: &[Params]) -> Result<Params> {
        if checkpoints.is_empty() {
            return Err(Error::invalid("average: no checkpoints"));
        }
        let mut out = checkpoints[0].clone();
        for ckpt in &checkpoints[1..] {
            for (name, acc) in out.iter_mut() {
                let t = ckpt.get(name)?;
                if !acc.same_shape(t) {
                    return Err(Error::shape(format!("average: shape of `{name}` differs")));
                }
                *acc = acc.add(t)?;
            }
        }
        let inv = 1.0 / checkpoints.len() as f64;
        for (_, t) in out.iter_mut() {
            *t = t.scale(inv);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_of_identical_is_identity() {
        let mut p = Params::new();
        p.insert("w", Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap());
        let avg = Params::average(&[p.clone(), p.clone(), p.clone()]).unwrap();
        assert_eq!(avg, p);
    }

    #[test]
    fn average_means_elementwise() {
        let mut a = Params::new();
        a.insert("w", Tensor::scalar(1.0));
        let mut b = Params::new();
        b.insert("w", Tensor::scalar(3.0));
        let avg = Params::average(&[a, b]).unwrap();
        assert_eq!(avg.get("w").unwrap().scalar_value(), 2.0);
    }

    #[test]
    fn prefix_roundtrip() {
        let mut inner = Params::new();
        inner.insert("w", Tensor::scalar(5.0));
        let mut outer = Params::new();
        outer.merge("model", &inner);
        assert_eq!(outer.strip_prefix("model"), inner);
    }
}
