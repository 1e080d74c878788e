use sha2::{Digest, Sha256};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Backbone,
    ViewHead,
    Fusion,
    Decoder,
}

impl ParamGroup {
    pub fn of(name: &str) -> ParamGroup {
        match name.split('.').next() {
            Some("backbone") => ParamGroup::Backbone,
            Some("view_head") => ParamGroup::ViewHead,
            Some("fusion") => ParamGroup::Fusion,
            Some("decoder") => ParamGroup::Decoder,
            _ => panic!("parameter {name} belongs to no group"),
        }
    }
}

/// Named parameters in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn from_pairs(entries: Vec<(String, Tensor)>) -> Self {
        ParamSet { entries }
    }

    pub(crate) fn push(&mut self, name: String, t: Tensor) -> usize {
        self.entries.push((name, t));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.entries[index].1
    }

    /// Mutable references to the parameters at `indices`, in that order.
    pub fn select_mut(&mut self, indices: &[usize]) -> Vec<&mut Tensor> {
        let mut slots: Vec<Option<&mut Tensor>> = self.entries.iter_mut().map(|(_, t)| Some(t)).collect();
        indices
            .iter()
            .map(|&i| slots[i].take().expect("indices are distinct"))
            .collect()
    }

    pub fn group_indices(&self, group: ParamGroup) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, (n, _))| ParamGroup::of(n) == group)
            .map(|(i, _)| i)
            .collect()
    }

    /// SHA-256 over names, shapes and raw value bits of one group.
    pub fn group_hash(&self, group: ParamGroup) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.entries.iter().filter(|(n, _)| ParamGroup::of(n) == group) {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}
