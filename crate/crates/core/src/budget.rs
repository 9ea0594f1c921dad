//! Privacy budgets and the audit ledger for basic composition.
//!
//! The ledger is advisory: it records every consumption and release as an
//! exact rational share of its root budget, and the tests assert that the
//! shares of a finished pipeline sum to exactly one. It never blocks a call.

use crate::error::{DpqrError, Result};
use num_rational::Ratio;
use std::fmt;
use std::sync::Mutex;

/// An `(epsilon, delta)` differential privacy budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    /// Requires `epsilon > 0` and `0 <= delta < 1`. Pure-DP mechanisms record
    /// consumption with `delta = 0`; the Gaussian mechanism additionally
    /// rejects `delta = 0` at call time.
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(DpqrError::InvalidParameter(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(DpqrError::InvalidParameter(format!(
                "delta must lie in [0, 1), got {delta}"
            )));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { epsilon: self.epsilon * factor, delta: self.delta * factor }
    }
}

/// Splits a budget into `parts` equal pieces `(eps/parts, delta/parts)`.
pub fn split_budget(parent: PrivacyBudget, parts: u32) -> Result<Vec<PrivacyBudget>> {
    if parts == 0 {
        return Err(DpqrError::RejectedInput("cannot split a budget into 0 parts".into()));
    }
    let piece = PrivacyBudget {
        epsilon: parent.epsilon / parts as f64,
        delta: parent.delta / parts as f64,
    };
    Ok(vec![piece; parts as usize])
}

/// An exact fraction of a root budget.
pub type Share = Ratio<u64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    /// Budget actually consumed by a mechanism invocation.
    Consumed,
    /// Budget allocated by the stated split but never spent (for example the
    /// `(m-1)/m` fraction the estimation loop provisions but does not use).
    Released,
}

#[derive(Debug, Clone)]
pub struct LedgerEntry {
    pub label: String,
    pub kind: EntryKind,
    pub share: Share,
}

/// Audit record of splits and consumptions against one root budget.
///
/// Appends are serialized internally so the ledger can be shared across
/// worker threads; all other pipeline state is immutable or thread-local.
#[derive(Debug)]
pub struct BudgetLedger {
    root: PrivacyBudget,
    entries: Mutex<Vec<LedgerEntry>>,
}

impl BudgetLedger {
    pub fn new(root: PrivacyBudget) -> Self {
        Self { root, entries: Mutex::new(Vec::new()) }
    }

    pub fn root(&self) -> PrivacyBudget {
        self.root
    }

    /// The concrete `(eps, delta)` value of a share of the root.
    pub fn budget_for(&self, share: Share) -> PrivacyBudget {
        let f = ratio_to_f64(share);
        PrivacyBudget { epsilon: self.root.epsilon * f, delta: self.root.delta * f }
    }

    pub fn charge(&self, label: impl Into<String>, share: Share) {
        self.push(label.into(), EntryKind::Consumed, share);
    }

    pub fn release(&self, label: impl Into<String>, share: Share) {
        self.push(label.into(), EntryKind::Released, share);
    }

    fn push(&self, label: String, kind: EntryKind, share: Share) {
        self.entries.lock().unwrap().push(LedgerEntry { label, kind, share });
    }

    pub fn entries(&self) -> Vec<LedgerEntry> {
        self.entries.lock().unwrap().clone()
    }

    pub fn consumed_share(&self) -> Share {
        self.sum(EntryKind::Consumed)
    }

    pub fn released_share(&self) -> Share {
        self.sum(EntryKind::Released)
    }

    /// Consumed plus released. Equals exactly 1 when every split has been
    /// either spent or explicitly returned.
    pub fn accounted_share(&self) -> Share {
        self.consumed_share() + self.released_share()
    }

    pub fn consumed(&self) -> PrivacyBudget {
        self.budget_for(self.consumed_share())
    }

    /// True when consumption alone exceeds the root budget, as happens in the
    /// paper-literal per-call mode. Reported in run manifests.
    pub fn overspent(&self) -> bool {
        self.consumed_share() > Share::from_integer(1)
    }

    pub fn is_exactly_accounted(&self) -> bool {
        self.accounted_share() == Share::from_integer(1)
    }

    fn sum(&self, kind: EntryKind) -> Share {
        self.entries
            .lock()
            .unwrap()
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| e.share)
            .sum()
    }
}

impl fmt::Display for BudgetLedger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "root epsilon={} delta={}", self.root.epsilon, self.root.delta)?;
        for e in self.entries.lock().unwrap().iter() {
            let b = self.budget_for(e.share);
            writeln!(
                f,
                "{} {} share={}/{} epsilon={} delta={}",
                match e.kind {
                    EntryKind::Consumed => "consumed",
                    EntryKind::Released => "released",
                },
                e.label,
                e.share.numer(),
                e.share.denom(),
                b.epsilon,
                b.delta
            )?;
        }
        let c = self.consumed();
        writeln!(
            f,
            "total consumed epsilon={} delta={} accounted={} overspent={}",
            c.epsilon,
            c.delta,
            self.is_exactly_accounted(),
            self.overspent()
        )
    }
}

fn ratio_to_f64(r: Share) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_validation() {
        assert!(PrivacyBudget::new(1.0, 0.05).is_ok());
        assert!(PrivacyBudget::new(0.0, 0.05).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0).is_err());
        assert!(PrivacyBudget::new(1.0, 0.0).is_ok());
    }

    #[test]
    fn split_budget_equal_parts() {
        let parent = PrivacyBudget::new(1.0, 0.01).unwrap();
        let parts = split_budget(parent, 4).unwrap();
        assert_eq!(parts.len(), 4);
        for p in &parts {
            assert_eq!(p.epsilon, 0.25);
            assert_eq!(p.delta, 0.0025);
        }
        // parts = 1 is the identity
        let one = split_budget(parent, 1).unwrap();
        assert_eq!(one[0], parent);
        assert!(split_budget(parent, 0).is_err());
    }

    #[test]
    fn split_budget_inner_loop_fractions() {
        // m = 10, K = 10, T = 10 machines/iterations split into 1000 calls.
        let parent = PrivacyBudget::new(1.0, 1e-4).unwrap();
        let parts = split_budget(parent, 1000).unwrap();
        assert_eq!(parts.len(), 1000);
        assert_eq!(parts[0].epsilon, 1.0 / 1000.0);
        assert_eq!(parts[0].delta, 1e-4 / 1000.0);
    }

    #[test]
    fn ledger_exact_conservation() {
        let root = PrivacyBudget::new(0.7, 1e-5).unwrap();
        let ledger = BudgetLedger::new(root);
        // 100 calls at share 1/4000 each plus the released 39/40 remainder.
        for i in 0..100 {
            ledger.charge(format!("call {i}"), Share::new(1, 4000));
        }
        ledger.release("unspent", Share::new(39, 40));
        assert!(ledger.is_exactly_accounted());
        assert!(!ledger.overspent());
        assert_eq!(ledger.consumed_share(), Share::new(1, 40));
        let consumed = ledger.consumed();
        assert!((consumed.epsilon - 0.7 / 40.0).abs() < 1e-15);
    }

    #[test]
    fn ledger_flags_overspend() {
        let ledger = BudgetLedger::new(PrivacyBudget::new(1.0, 1e-4).unwrap());
        ledger.charge("a", Share::new(1, 1));
        ledger.charge("b", Share::new(1, 1));
        assert!(ledger.overspent());
        assert_eq!(ledger.consumed().epsilon, 2.0);
    }
}
