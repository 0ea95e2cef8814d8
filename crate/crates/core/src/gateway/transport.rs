//! Transport abstraction behind the gateway.

use super::{CompletionRequest, TransportOutcome};

/// A way to obtain a completion for a request. Implementations must be safe
/// to call from many worker threads at once.
pub trait Transport: Send + Sync {
    fn send(&self, request: &CompletionRequest) -> TransportOutcome;
}
