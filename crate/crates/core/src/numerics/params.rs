//! Named parameter storage and binding to a tape.

use super::{Gradients, Matrix, RngStream, Tape, Var};

/// Index of a matrix inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameter matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform weight matrix.
    pub fn add_glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut RngStream) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let m = Matrix::from_fn(rows, cols, |_, _| (2.0 * rng.uniform() - 1.0) * limit);
        self.add(name, m)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Bind every matrix as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound { vars: self.values.iter().map(|m| tape.param(m.clone())).collect() }
    }

    /// Bind every matrix as a constant (no gradients flow).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound { vars: self.values.iter().map(|m| tape.constant(m.clone())).collect() }
    }

    /// Blend `self ← (1−rate)·self + rate·other` for stores of identical layout.
    pub fn soft_update(&mut self, other: &ParamStore, rate: f64) {
        assert_eq!(self.len(), other.len(), "soft_update layout mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x = (1.0 - rate) * *x + rate * y;
            }
        }
    }
}

/// A [`ParamStore`] bound to a particular tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub(crate) fn from_vars(vars: Vec<Var<'t>>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    /// Gradients for every bound matrix, in store order.
    pub fn gradients(&self, g: &Gradients) -> Vec<Matrix> {
        self.vars.iter().map(|v| g.wrt(*v)).collect()
    }
}
