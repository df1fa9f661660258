use std::fmt;
use std::sync::Arc;

/// A constraint on a token sequence.
///
/// The hard predicate acts on decoded tokens; the relaxed residual acts on
/// `L x V` probability rows (flattened row-major) and must be differentiable
/// in them.
pub trait SequenceConstraint: Send + Sync {
    fn name(&self) -> &str;

    fn holds(&self, tokens: &[usize]) -> bool;

    fn relaxed_residual(&self, rows: &[f64], vocab: usize) -> f64;

    fn relaxed_gradient(&self, rows: &[f64], vocab: usize) -> Vec<f64>;

    /// Constraint-specific exact repair of a decoded sequence. The output
    /// may be shorter than the input.
    fn repair(&self, _tokens: &[usize]) -> Option<Vec<usize>> {
        None
    }

    /// Whether sequences emitted within one batch must also differ from each
    /// other.
    fn requires_unique(&self) -> bool {
        false
    }
}

#[derive(Clone, Default)]
pub struct SequenceConstraintSet {
    members: Vec<Arc<dyn SequenceConstraint>>,
}

impl fmt::Debug for SequenceConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.members.iter().map(|c| c.name())).finish()
    }
}

impl SequenceConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, c: impl SequenceConstraint + 'static) -> Self {
        self.members.push(Arc::new(c));
        self
    }

    pub fn push(&mut self, c: Arc<dyn SequenceConstraint>) {
        self.members.push(c);
    }

    pub fn members(&self) -> &[Arc<dyn SequenceConstraint>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.members.iter().map(|c| c.name().to_string()).collect()
    }

    pub fn holds(&self, tokens: &[usize]) -> bool {
        self.members.iter().all(|c| c.holds(tokens))
    }

    pub fn requires_unique(&self) -> bool {
        self.members.iter().any(|c| c.requires_unique())
    }
}
