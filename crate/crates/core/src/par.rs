//! Minimal ordered parallel map over a fixed worker count.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Apply `f` to every item from `workers` threads, returning results in input
/// order. The first error (by input index) wins; remaining work is skipped on
/// a best-effort basis.
pub fn parallel_map_ordered<T, U, E, F>(items: &[T], workers: usize, f: F) -> Result<Vec<U>, E>
where
    T: Sync,
    U: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<U, E> + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<U, E>>>> =
        Mutex::new((0..items.len()).map(|_| None).collect());
    let failed = AtomicUsize::new(usize::MAX);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= items.len() || failed.load(Ordering::SeqCst) < index {
                    return;
                }
                let out = f(index, &items[index]);
                if out.is_err() {
                    failed.fetch_min(index, Ordering::SeqCst);
                }
                slots.lock().unwrap()[index] = Some(out);
            });
        }
    });

    let slots = slots.into_inner().unwrap();
    let mut results = Vec::with_capacity(items.len());
    for slot in slots {
        match slot {
            Some(Ok(value)) => results.push(value),
            Some(Err(e)) => return Err(e),
            // a later failure aborted this slot's worker before it ran
            None => break,
        }
    }
    Ok(results)
}
