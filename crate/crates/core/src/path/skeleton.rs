use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::feature::{Feature, SharedFeature};
use super::problem::StepRange;
use crate::scalar::Real;
use std::sync::Arc;

/// A logic mode imposing path constraints over an inclusive step window.
#[derive(Clone, Debug)]
pub struct Mode<T: Real> {
    pub symbol: String,
    pub window: StepRange,
    pub eq: Vec<SharedFeature<T>>,
    pub ineq: Vec<SharedFeature<T>>,
}

impl<T: Real> Mode<T> {
    pub fn new(symbol: impl Into<String>, window: StepRange) -> Self {
        Self {
            symbol: symbol.into(),
            window,
            eq: Vec::new(),
            ineq: Vec::new(),
        }
    }

    pub fn with_eq(mut self, f: impl Feature<T> + 'static) -> Self {
        self.eq.push(Arc::new(f));
        self
    }

    pub fn with_ineq(mut self, f: impl Feature<T> + 'static) -> Self {
        self.ineq.push(Arc::new(f));
        self
    }
}

/// A switch between consecutive modes, with constraints at a single step.
#[derive(Clone, Debug)]
pub struct Switch<T: Real> {
    pub symbol: String,
    pub at_step: usize,
    pub eq: Vec<SharedFeature<T>>,
    pub ineq: Vec<SharedFeature<T>>,
}

impl<T: Real> Switch<T> {
    pub fn new(symbol: impl Into<String>, at_step: usize) -> Self {
        Self {
            symbol: symbol.into(),
            at_step,
            eq: Vec::new(),
            ineq: Vec::new(),
        }
    }

    pub fn with_eq(mut self, f: impl Feature<T> + 'static) -> Self {
        self.eq.push(Arc::new(f));
        self
    }

    pub fn with_ineq(mut self, f: impl Feature<T> + 'static) -> Self {
        self.ineq.push(Arc::new(f));
        self
    }
}

/// Ordered modes with the switches between them.
#[derive(Clone, Debug)]
pub struct Skeleton<T: Real> {
    pub id: String,
    pub modes: Vec<Mode<T>>,
    pub switches: Vec<Switch<T>>,
}

impl<T: Real> Skeleton<T> {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            modes: Vec::new(),
            switches: Vec::new(),
        }
    }

    /// A single unconstrained mode over `[1, horizon]`.
    pub fn free(id: impl Into<String>, horizon: usize) -> Self {
        Self::new(id).with_mode(Mode::new("free", StepRange::new(1, horizon)))
    }

    pub fn with_mode(mut self, mode: Mode<T>) -> Self {
        self.modes.push(mode);
        self
    }

    pub fn with_switch(mut self, switch: Switch<T>) -> Self {
        self.switches.push(switch);
        self
    }

    /// Equality rows summed over every step where they apply.
    pub fn eq_row_count(&self) -> usize {
        let modes: usize = self
            .modes
            .iter()
            .map(|m| m.window.len() * m.eq.iter().map(|f| f.dim()).sum::<usize>())
            .sum();
        let switches: usize = self
            .switches
            .iter()
            .map(|s| s.eq.iter().map(|f| f.dim()).sum::<usize>())
            .sum();
        modes + switches
    }

    pub fn ineq_row_count(&self) -> usize {
        let modes: usize = self
            .modes
            .iter()
            .map(|m| m.window.len() * m.ineq.iter().map(|f| f.dim()).sum::<usize>())
            .sum();
        let switches: usize = self
            .switches
            .iter()
            .map(|s| s.ineq.iter().map(|f| f.dim()).sum::<usize>())
            .sum();
        modes + switches
    }

    /// Index of the mode whose window contains `step`.
    pub fn mode_at(&self, step: usize) -> Option<usize> {
        self.modes.iter().position(|m| m.window.contains(step))
    }
}

/// Allowed transitions `(mode, switch) -> {next modes}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessorTable {
    entries: BTreeMap<String, BTreeMap<String, BTreeSet<String>>>,
}

impl SuccessorTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn allow(mut self, from: &str, switch: &str, to: &str) -> Self {
        self.insert(from, switch, to);
        self
    }

    pub fn insert(&mut self, from: &str, switch: &str, to: &str) {
        self.entries
            .entry(from.to_owned())
            .or_default()
            .entry(switch.to_owned())
            .or_default()
            .insert(to.to_owned());
    }

    pub fn permits(&self, from: &str, switch: &str, to: &str) -> bool {
        self.entries
            .get(from)
            .and_then(|m| m.get(switch))
            .is_some_and(|s| s.contains(to))
    }
}

/// A structural problem found by [`validate_skeleton`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SkeletonViolation {
    NoModes,
    EmptyWindow { mode: String },
    OutOfRange { mode: String, start: usize, end: usize },
    Gap { after: String, missing_start: usize, missing_end: usize },
    Overlap { first: String, second: String, step: usize },
    SwitchCount { modes: usize, switches: usize },
    SwitchStep { switch: String, step: usize, expected: usize },
    IllegalTransition { from: String, switch: String, to: String },
}

impl fmt::Display for SkeletonViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NoModes => write!(f, "skeleton has no modes"),
            Self::EmptyWindow { mode } => write!(f, "mode `{mode}` has an empty window"),
            Self::OutOfRange { mode, start, end } => {
                write!(f, "mode `{mode}` window [{start}, {end}] leaves the horizon")
            }
            Self::Gap {
                after,
                missing_start,
                missing_end,
            } => write!(f, "steps [{missing_start}, {missing_end}] after `{after}` are not covered"),
            Self::Overlap {
                first,
                second,
                step,
            } => write!(f, "modes `{first}` and `{second}` overlap at step {step}"),
            Self::SwitchCount { modes, switches } => {
                write!(f, "{modes} modes need {} switches, found {switches}", modes.saturating_sub(1))
            }
            Self::SwitchStep {
                switch,
                step,
                expected,
            } => write!(f, "switch `{switch}` at step {step}, next mode starts at {expected}"),
            Self::IllegalTransition { from, switch, to } => {
                write!(f, "transition `{from}` --{switch}--> `{to}` is not allowed")
            }
        }
    }
}

/// Checks that the mode windows partition `[1, horizon]` in order and that
/// every consecutive transition appears in `table`.
///
/// Never fails; all problems are collected.
pub fn validate_skeleton<T: Real>(
    skeleton: &Skeleton<T>,
    horizon: usize,
    table: &SuccessorTable,
) -> Result<(), Vec<SkeletonViolation>> {
    let mut out = structural_violations(skeleton, horizon);
    for (k, pair) in skeleton.modes.windows(2).enumerate() {
        if let Some(sw) = skeleton.switches.get(k) {
            if !table.permits(&pair[0].symbol, &sw.symbol, &pair[1].symbol) {
                out.push(SkeletonViolation::IllegalTransition {
                    from: pair[0].symbol.clone(),
                    switch: sw.symbol.clone(),
                    to: pair[1].symbol.clone(),
                });
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Window checks that do not need a successor table.
pub fn structural_violations<T: Real>(skeleton: &Skeleton<T>, horizon: usize) -> Vec<SkeletonViolation> {
    let mut out = Vec::new();
    if skeleton.modes.is_empty() {
        out.push(SkeletonViolation::NoModes);
        return out;
    }
    let mut next = 1usize;
    let mut prev: Option<&Mode<T>> = None;
    for mode in &skeleton.modes {
        let w = mode.window;
        if w.is_empty() {
            out.push(SkeletonViolation::EmptyWindow {
                mode: mode.symbol.clone(),
            });
            continue;
        }
        if w.start < 1 || w.end > horizon {
            out.push(SkeletonViolation::OutOfRange {
                mode: mode.symbol.clone(),
                start: w.start,
                end: w.end,
            });
        }
        if w.start > next {
            out.push(SkeletonViolation::Gap {
                after: prev.map_or_else(|| "<start>".to_owned(), |m| m.symbol.clone()),
                missing_start: next,
                missing_end: w.start - 1,
            });
        } else if w.start < next {
            out.push(SkeletonViolation::Overlap {
                first: prev.map_or_else(|| "<start>".to_owned(), |m| m.symbol.clone()),
                second: mode.symbol.clone(),
                step: w.start,
            });
        }
        next = next.max(w.end + 1);
        prev = Some(mode);
    }
    if next <= horizon {
        out.push(SkeletonViolation::Gap {
            after: prev.map_or_else(String::new, |m| m.symbol.clone()),
            missing_start: next,
            missing_end: horizon,
        });
    }
    let expected = skeleton.modes.len() - 1;
    if skeleton.switches.len() != expected {
        out.push(SkeletonViolation::SwitchCount {
            modes: skeleton.modes.len(),
            switches: skeleton.switches.len(),
        });
    }
    for (k, sw) in skeleton.switches.iter().enumerate() {
        if let Some(m) = skeleton.modes.get(k + 1) {
            if sw.at_step != m.window.start {
                out.push(SkeletonViolation::SwitchStep {
                    switch: sw.symbol.clone(),
                    step: sw.at_step,
                    expected: m.window.start,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_modes(first: StepRange, second: StepRange) -> Skeleton<f64> {
        Skeleton::new("s")
            .with_mode(Mode::new("free", first))
            .with_mode(Mode::new("contact", second))
            .with_switch(Switch::new("touch", second.start))
    }

    #[test]
    fn single_mode_over_horizon_is_valid() {
        let s = Skeleton::<f64>::free("free", 10);
        assert!(validate_skeleton(&s, 10, &SuccessorTable::new()).is_ok());
    }

    #[test]
    fn overlapping_windows_are_reported() {
        let s = two_modes(StepRange::new(1, 6), StepRange::new(5, 10));
        let table = SuccessorTable::new().allow("free", "touch", "contact");
        let v = validate_skeleton(&s, 10, &table).unwrap_err();
        assert!(v.iter().any(|x| matches!(x, SkeletonViolation::Overlap { step: 5, .. })));
    }

    #[test]
    fn gaps_are_reported() {
        let s = two_modes(StepRange::new(1, 3), StepRange::new(6, 9));
        let v = validate_skeleton(&s, 10, &SuccessorTable::new().allow("free", "touch", "contact"))
            .unwrap_err();
        assert!(v.contains(&SkeletonViolation::Gap {
            after: "free".into(),
            missing_start: 4,
            missing_end: 5
        }));
        assert!(v.contains(&SkeletonViolation::Gap {
            after: "contact".into(),
            missing_start: 10,
            missing_end: 10
        }));
    }

    #[test]
    fn illegal_transition_names_both_modes() {
        let s = two_modes(StepRange::new(1, 5), StepRange::new(6, 10));
        let v = validate_skeleton(&s, 10, &SuccessorTable::new()).unwrap_err();
        assert_eq!(
            v,
            vec![SkeletonViolation::IllegalTransition {
                from: "free".into(),
                switch: "touch".into(),
                to: "contact".into()
            }]
        );
        let msg = v[0].to_string();
        assert!(msg.contains("free") && msg.contains("contact"));
    }

    #[test]
    fn misplaced_switch_is_reported() {
        let s = Skeleton::<f64>::new("s")
            .with_mode(Mode::new("a", StepRange::new(1, 4)))
            .with_mode(Mode::new("b", StepRange::new(5, 8)))
            .with_switch(Switch::new("go", 3));
        let v = validate_skeleton(&s, 8, &SuccessorTable::new().allow("a", "go", "b")).unwrap_err();
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], SkeletonViolation::SwitchStep { expected: 5, .. }));
    }
}
