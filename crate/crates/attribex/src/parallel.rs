//! Minimal fork-join helper for embarrassingly parallel stages.
//!
//! Results are written by task index, so the output is identical for any
//! thread count. On wasm there are no threads; the fallback is sequential.

/// Run `task` for indices 0..n and collect results in order, using up to
/// `threads` worker threads.
pub fn run_indexed<T, F>(n: usize, threads: usize, task: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    if n == 0 {
        return Vec::new();
    }
    let workers = threads.max(1).min(n);
    if workers == 1 || cfg!(target_arch = "wasm32") {
        return (0..n).map(task).collect();
    }
    run_threaded(n, workers, task)
}

#[cfg(not(target_arch = "wasm32"))]
fn run_threaded<T, F>(n: usize, workers: usize, task: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let task = &task;
    let mut collected: Vec<(usize, T)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w..n)
                        .step_by(workers)
                        .map(|i| (i, task(i)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    collected.sort_by_key(|(i, _)| *i);
    collected.into_iter().map(|(_, t)| t).collect()
}

#[cfg(target_arch = "wasm32")]
fn run_threaded<T, F>(n: usize, _workers: usize, task: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    (0..n).map(task).collect()
}
