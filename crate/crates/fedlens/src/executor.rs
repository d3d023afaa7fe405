use std::sync::atomic::{AtomicUsize, Ordering};

use fedlens_core::fed::{Executor, Sequential};

use crate::error::{CliError, Result};

pub const THREADS_VAR: &str = "FEDLENS_THREADS";

/// Runs jobs on up to `threads` scoped worker threads. Workers pull job
/// indices from a shared counter; results are returned in input order.
#[derive(Debug, Clone, Copy)]
pub struct ThreadPool {
    threads: usize,
}

impl ThreadPool {
    pub fn new(threads: usize) -> Self {
        Self { threads: threads.max(1) }
    }

    /// Honors `FEDLENS_THREADS`; otherwise uses the available parallelism.
    pub fn from_env() -> Result<Self> {
        match std::env::var(THREADS_VAR) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n >= 1 => Ok(Self::new(n)),
                _ => Err(CliError::config(THREADS_VAR, format!("{v:?} is not a positive integer"))),
            },
            Err(_) => Ok(Self::new(std::thread::available_parallelism().map_or(1, |n| n.get()))),
        }
    }

    pub fn threads(&self) -> usize {
        self.threads
    }
}

impl Executor for ThreadPool {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync,
    {
        let workers = self.threads.min(items.len());
        if workers <= 1 {
            return Sequential.map(items, f);
        }
        let next = AtomicUsize::new(0);
        let work = || {
            let mut out = Vec::new();
            loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    return out;
                }
                out.push((i, f(i, &items[i])));
            }
        };
        let mut done: Vec<(usize, R)> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers).map(|_| s.spawn(work)).collect();
            handles.into_iter().flat_map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p))).collect()
        });
        done.sort_unstable_by_key(|(i, _)| *i);
        done.into_iter().map(|(_, r)| r).collect()
    }
}
