use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// Ordered, name-addressed collection of parameter tensors.
///
/// Order is the construction order and never changes afterwards; the
/// optimizer keys its moment buffers and the weights file keys its payload
/// by this order, so it is part of the serialization contract.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.index_of(name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter name: {name}")));
        }
        self.entries.push((name.to_string(), value));
        Ok(())
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].1)
    }

    /// Replace a parameter's values, keeping its shape.
    pub fn set_data(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let Some(i) = self.index_of(name) else {
            return Err(Error::invalid(format!("no parameter named {name}")));
        };
        let shape = self.entries[i].1.shape();
        self.entries[i].1 = Tensor::from_vec(shape, data)?;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sum of element counts over all parameters.
    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.shape().numel()).sum()
    }

    /// Put every parameter on the tape as a gradient-carrying leaf, in
    /// order. The optimizer walks the result index-aligned with this set.
    pub fn register_all(&self, tape: &mut Tape) -> RegisteredParams {
        let ids = self
            .entries
            .iter()
            .map(|(n, t)| (n.clone(), tape.param(t.clone())))
            .collect();
        RegisteredParams { ids }
    }
}

/// Tape handles for one registration of a [`ParamSet`].
pub struct RegisteredParams {
    ids: Vec<(String, NodeId)>,
}

impl RegisteredParams {
    /// Handle of a parameter by name. Names come from the network builder,
    /// so a miss is a wiring bug, not an input error.
    pub fn node(&self, name: &str) -> NodeId {
        self.ids
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("parameter {name} was never registered"))
            .1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> + '_ {
        self.ids.iter().map(|(n, id)| (n.as_str(), *id))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Shape;

    #[test]
    fn preserves_insertion_order_and_rejects_duplicates() {
        let mut ps = ParamSet::new();
        ps.insert("b", Tensor::zeros(Shape::new(1, 1, 1, 2))).unwrap();
        ps.insert("a", Tensor::zeros(Shape::new(1, 1, 1, 3))).unwrap();
        let names: Vec<&str> = ps.iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["b", "a"]);
        assert!(ps.insert("a", Tensor::scalar(0.0)).is_err());
        assert_eq!(ps.total_elements(), 5);
    }

    #[test]
    fn set_data_keeps_shape_and_validates_length() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::zeros(Shape::new(1, 1, 2, 2))).unwrap();
        ps.set_data("w", vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(ps.get("w").unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(ps.set_data("w", vec![1.0]).is_err());
        assert!(ps.set_data("missing", vec![1.0]).is_err());
    }

    #[test]
    fn registration_lands_values_on_the_tape_in_order() {
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::scalar(3.0)).unwrap();
        ps.insert("y", Tensor::scalar(4.0)).unwrap();
        let mut tape = Tape::new();
        let reg = ps.register_all(&mut tape);
        assert_eq!(reg.len(), 2);
        assert_eq!(tape.value(reg.node("x")).data(), &[3.0]);
        assert_eq!(tape.value(reg.node("y")).data(), &[4.0]);
        let order: Vec<&str> = reg.iter().map(|(n, _)| n).collect();
        assert_eq!(order, ["x", "y"]);
    }
}
