//! Per-step warning and skipped-step events.
//!
//! Alignment modules push events instead of failing when a batch degenerates
//! (no negatives, no private samples, zero-norm profile, ...). The trainer
//! drains the log after each step and folds the events into the metrics row
//! as flags.

use crate::Domain;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    /// CDF weight denominator underflowed; fell back to 0.5/0.5.
    WeightFallback,
    /// Global negative set was empty; global alignment loss was 0.
    GlobalEmptyNegatives,
    /// Instance positive set was empty for one domain; its weights are 0.
    InstanceEmptyPositives,
    /// Consistency score undefined (fewer than 2 private samples or a
    /// zero-norm profile); private-class constraint skipped.
    PccSkipped,
    /// Memory-bank update skipped (zero-norm mean).
    CentroidUpdateSkipped,
    /// Optimizer step skipped because a gradient was non-finite.
    StepSkippedNonFinite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub kind: EventKind,
    pub domain: Option<Domain>,
    pub detail: String,
}

/// Append-only event collector, one per training step.
#[derive(Debug, Default)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, kind: EventKind, domain: Option<Domain>, detail: impl Into<String>) {
        self.events.push(Event { kind, domain, detail: detail.into() });
    }

    pub fn has(&self, kind: EventKind) -> bool {
        self.events.iter().any(|e| e.kind == kind)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn clear(&mut self) {
        self.events.clear();
    }
}
