//! Activation-pattern monitor for finite-difference checks.
//!
//! Piecewise-linear ops (ReLU, max pooling) feed the branch they take into a
//! thread-local hash while monitoring is on. Two forward passes that hash to
//! the same value took identical branches everywhere, so a central
//! difference between them never straddles a non-differentiable point.

use std::cell::RefCell;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

thread_local! {
    static PATTERN: RefCell<Option<DefaultHasher>> = const { RefCell::new(None) };
}

/// Run `f` with monitoring enabled and return its result plus the pattern hash.
pub fn monitored<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let prev = PATTERN.with(|p| p.replace(Some(DefaultHasher::new())));
    let out = f();
    let hash = PATTERN.with(|p| {
        let h = p.replace(prev).expect("monitor state");
        h.finish()
    });
    (out, hash)
}

pub fn is_active() -> bool {
    PATTERN.with(|p| p.borrow().is_some())
}

/// Feed a branch decision into the active pattern, if any.
pub fn record<H: Hash + ?Sized>(value: &H) {
    PATTERN.with(|p| {
        if let Some(h) = p.borrow_mut().as_mut() {
            value.hash(h);
        }
    });
}
