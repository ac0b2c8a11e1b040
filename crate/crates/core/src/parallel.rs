//! Replica-parallel map/fold with results independent of the worker count.

use rayon::prelude::*;

/// Replicas per work item. Fixed so that fold boundaries never depend on
/// the number of threads.
pub const CHUNK: usize = 64;

fn with_pool<R: Send>(workers: usize, job: impl FnOnce() -> R + Send) -> R {
    if workers == 1 {
        return job();
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        builder = builder.num_threads(workers);
    }
    match builder.build() {
        Ok(pool) => pool.install(job),
        Err(_) => job(),
    }
}

/// `f(0), …, f(n-1)` in index order. `workers = 0` uses all cores.
pub fn map_indexed<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    with_pool(workers, || (0..n as u64).into_par_iter().map(&f).collect())
}

/// Folds replicas `0..n` chunk by chunk, then merges chunk accumulators in
/// chunk order.
pub fn fold_chunked<A, Init, Fold, Merge>(
    n: usize,
    workers: usize,
    init: Init,
    fold: Fold,
    merge: Merge,
) -> A
where
    A: Send,
    Init: Fn() -> A + Sync + Send,
    Fold: Fn(&mut A, u64) + Sync + Send,
    Merge: Fn(&mut A, A),
{
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<A> = with_pool(workers, || {
        (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = init();
                let lo = c * CHUNK;
                let hi = ((c + 1) * CHUNK).min(n);
                for r in lo..hi {
                    fold(&mut acc, r as u64);
                }
                acc
            })
            .collect()
    });
    let mut total = init();
    for p in partials {
        merge(&mut total, p);
    }
    total
}
