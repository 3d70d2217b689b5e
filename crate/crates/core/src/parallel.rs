//! Worker pool sized by the `FAF_THREADS` environment variable.

use rayon::{ThreadPool, ThreadPoolBuilder};

pub const THREADS_ENV: &str = "FAF_THREADS";

/// Worker count: `FAF_THREADS` when set to a positive integer, else the available cores.
pub fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn pool() -> ThreadPool {
    ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .expect("thread pool")
}

/// Run `f` inside a pool bounded by [`worker_count`].
pub fn install<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    pool().install(f)
}

/// Stable seed for job `index` of stream `tag` under `seed`.
pub fn job_seed(seed: u64, tag: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
