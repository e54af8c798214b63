//! Process-wide switch for outbound network access.
//!
//! Every HTTP client in the tool calls [`guard`] before sending. Tests turn
//! the switch off to prove an offline run never tries to reach the network.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

static DENIED: AtomicBool = AtomicBool::new(false);
static ATTEMPTS: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("network access denied (request to {0})")]
pub struct NetworkDenied(pub String);

pub fn deny_network(deny: bool) {
    DENIED.store(deny, Ordering::SeqCst);
}

pub fn is_denied() -> bool {
    DENIED.load(Ordering::SeqCst)
}

/// Outbound requests attempted so far, denied ones included.
pub fn attempts() -> u64 {
    ATTEMPTS.load(Ordering::SeqCst)
}

pub fn guard(url: &str) -> Result<(), NetworkDenied> {
    ATTEMPTS.fetch_add(1, Ordering::SeqCst);
    if is_denied() {
        log::warn!("blocked request to {url}");
        return Err(NetworkDenied(url.to_string()));
    }
    Ok(())
}
