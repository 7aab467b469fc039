//! Named parameter groups shared by every network.
//!
//! A group is one conv or linear layer: a weight and an optional bias. The
//! group is also the unit of attribution and of freezing.

use indexmap::IndexMap;
use rand::Rng as _;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::tensor::{Gradients, Graph, Real, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub trainable: bool,
}

impl<T: Real> ParamGroup<T> {
    /// Kaiming-uniform (fan-in, ReLU gain) weights and zero bias.
    pub fn kaiming(shape: &[usize], with_bias: bool, seed: u64, index: u64) -> Self {
        let fan_in: usize = shape[1..].iter().product();
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut rng = stream(seed, Purpose::Init, index);
        let weight = Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)));
        ParamGroup {
            weight,
            bias: with_bias.then(|| Tensor::zeros(&shape[..1])),
            trainable: true,
        }
    }

    pub fn zeros(shape: &[usize], with_bias: bool) -> Self {
        ParamGroup {
            weight: Tensor::zeros(shape),
            bias: with_bias.then(|| Tensor::zeros(&shape[..1])),
            trainable: true,
        }
    }

    pub fn numel(&self) -> usize {
        self.weight.numel() + self.bias.as_ref().map_or(0, |b| b.numel())
    }

    fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref())
    }
}

/// Graph handles for one bound group.
#[derive(Clone, Copy, Debug)]
pub struct GroupVars {
    pub weight: Var,
    pub bias: Option<Var>,
}

/// A parameter set recorded onto a graph for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    groups: IndexMap<String, GroupVars>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<GroupVars> {
        self.groups
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownName(name.to_string()))
    }
}

/// Per-group gradients gathered from one or more backward sweeps.
#[derive(Clone, Debug, Default)]
pub struct GradSet<T: Real> {
    groups: IndexMap<String, (Vec<T>, Option<Vec<T>>)>,
}

impl<T: Real> GradSet<T> {
    pub fn get(&self, name: &str) -> Option<(&[T], Option<&[T]>)> {
        self.groups
            .get(name)
            .map(|(w, b)| (w.as_slice(), b.as_deref()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Adds `other` into `self`, creating groups as needed.
    pub fn merge(&mut self, other: &GradSet<T>) {
        for (name, (w, b)) in &other.groups {
            match self.groups.get_mut(name) {
                Some((sw, sb)) => {
                    sw.iter_mut().zip(w).for_each(|(a, &v)| *a += v);
                    match (sb, b) {
                        (Some(sb), Some(b)) => sb.iter_mut().zip(b).for_each(|(a, &v)| *a += v),
                        (sb @ None, Some(b)) => *sb = Some(b.clone()),
                        _ => {}
                    }
                }
                None => {
                    self.groups.insert(name.clone(), (w.clone(), b.clone()));
                }
            }
        }
    }

    pub fn scale(&mut self, c: T) {
        for (w, b) in self.groups.values_mut() {
            w.iter_mut().for_each(|v| *v *= c);
            if let Some(b) = b {
                b.iter_mut().for_each(|v| *v *= c);
            }
        }
    }

    /// Name of the first group holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.groups.iter().find_map(|(name, (w, b))| {
            let bad = w.iter().chain(b.iter().flatten()).any(|v| !v.is_finite());
            bad.then_some(name.as_str())
        })
    }
}

/// Ordered, uniquely named parameter groups.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T: Real> {
    groups: IndexMap<String, ParamGroup<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            groups: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, group: ParamGroup<T>) -> Result<()> {
        let name = name.into();
        if self.groups.contains_key(&name) {
            return Err(Error::invalid(
                "param_set",
                format!("duplicate group name `{name}`"),
            ));
        }
        self.groups.insert(name, group);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&ParamGroup<T>> {
        self.groups
            .get(name)
            .ok_or_else(|| Error::UnknownName(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamGroup<T>> {
        self.groups
            .get_mut(name)
            .ok_or_else(|| Error::UnknownName(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamGroup<T>)> {
        self.groups.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamGroup<T>)> {
        self.groups.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.groups.values().map(ParamGroup::numel).sum()
    }

    /// Marks the named groups trainable or frozen. Fails without changing
    /// anything if a name is unknown.
    pub fn set_trainable<S: AsRef<str>>(&mut self, names: &[S], trainable: bool) -> Result<()> {
        if let Some(missing) = names.iter().find(|n| !self.groups.contains_key(n.as_ref())) {
            return Err(Error::UnknownName(missing.as_ref().to_string()));
        }
        for n in names {
            self.groups[n.as_ref()].trainable = trainable;
        }
        Ok(())
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        self.groups.values_mut().for_each(|g| g.trainable = trainable);
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.groups
            .iter()
            .filter(|(_, g)| g.trainable)
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Records every group as graph leaves. Leaves need gradients only when
    /// `with_grad` is set and the group is trainable.
    pub fn bind(&self, g: &mut Graph<T>, with_grad: bool) -> Bound {
        let groups = self
            .groups
            .iter()
            .map(|(name, p)| {
                let need = with_grad && p.trainable;
                let weight = g.leaf(&p.weight.clone().with_requires_grad(need));
                let bias = p
                    .bias
                    .as_ref()
                    .map(|b| g.leaf(&b.clone().with_requires_grad(need)));
                (name.clone(), GroupVars { weight, bias })
            })
            .collect();
        Bound { groups }
    }

    /// Collects the gradients of every trainable group from one sweep.
    pub fn grads(&self, bound: &Bound, grads: &Gradients<T>) -> GradSet<T> {
        let mut out = GradSet::default();
        for (name, p) in &self.groups {
            if !p.trainable {
                continue;
            }
            let Some(vars) = bound.groups.get(name) else {
                continue;
            };
            let w = grads
                .wrt(vars.weight)
                .map(<[T]>::to_vec)
                .unwrap_or_else(|| vec![T::zero(); p.weight.numel()]);
            let b = p.bias.as_ref().map(|bias| {
                vars.bias
                    .and_then(|v| grads.wrt(v))
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| vec![T::zero(); bias.numel()])
            });
            out.groups.insert(name.clone(), (w, b));
        }
        out
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            groups: self
                .groups
                .iter()
                .map(|(n, p)| {
                    (
                        n.clone(),
                        ParamGroup {
                            weight: p.weight.cast(),
                            bias: p.bias.as_ref().map(Tensor::cast),
                            trainable: p.trainable,
                        },
                    )
                })
                .collect(),
        }
    }

    /// SHA-256 over one group's name, shapes and value bytes.
    pub fn group_digest(&self, name: &str) -> Result<String> {
        let p = self.get(name)?;
        let mut h = Sha256::new();
        h.update(name.as_bytes());
        for t in p.tensors() {
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            h.update(t.to_le_bytes());
        }
        Ok(hex::encode(h.finalize()))
    }

    /// SHA-256 over every group, in order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for name in self.groups.keys() {
            h.update(self.group_digest(name).expect("own group").as_bytes());
        }
        hex::encode(h.finalize())
    }
}
