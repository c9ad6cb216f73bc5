//! Order-preserving fan-out over scoped threads.
//!
//! Work items are pure, so results are collected back in input order and the
//! output is bit-identical for every thread count. Reductions stay with the
//! caller, which must run them in a fixed order.

/// Map `f` over `items` on up to `threads` OS threads (0 = all available),
/// returning results in input order.
pub fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let threads = effective_threads(threads).min(items.len().max(1));
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk_len = items.len().div_ceil(threads);
    let mut chunk_results: Vec<Vec<R>> = Vec::new();
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(threads);
        for chunk in items.chunks(chunk_len) {
            let f = &f;
            handles.push(scope.spawn(move || chunk.iter().map(f).collect::<Vec<R>>()));
        }
        for handle in handles {
            chunk_results.push(handle.join().expect("worker thread panicked"));
        }
    });
    chunk_results.into_iter().flatten().collect()
}

pub(crate) fn effective_threads(requested: usize) -> usize {
    if requested == 0 {
        available_threads()
    } else {
        requested
    }
}

/// Number of hardware threads, falling back to 1.
pub fn available_threads() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}
