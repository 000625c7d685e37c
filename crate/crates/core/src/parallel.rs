//! Order-preserving parallel map over batch items.
//!
//! Results land in input order and every item is processed independently, so
//! the output is bit-identical for any worker count. Reductions over the
//! returned vector must run sequentially to stay deterministic.

use std::sync::atomic::{AtomicUsize, Ordering};

/// Number of workers to use: explicit cap, or the machine's parallelism.
pub fn effective_threads(cap: Option<usize>) -> usize {
    let hw = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match cap {
        Some(0) | None => hw,
        Some(n) => n.min(hw).max(1),
    }
}

/// Map `f` over `items` with up to `threads` workers, preserving order.
pub fn par_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let n = items.len();
    if n == 0 {
        return Vec::new();
    }
    let workers = threads.max(1).min(n);
    if workers == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }

    let next = AtomicUsize::new(0);
    let mut out: Vec<Option<R>> = Vec::with_capacity(n);
    out.resize_with(n, || None);

    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= n {
                            break;
                        }
                        local.push((i, f(i, &items[i])));
                    }
                    local
                })
            })
            .collect();
        for handle in handles {
            for (i, r) in handle.join().expect("worker panicked") {
                out[i] = Some(r);
            }
        }
    });

    out.into_iter().map(|r| r.expect("worker filled slot")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order_and_values() {
        let items: Vec<u64> = (0..257).collect();
        let serial = par_map(&items, 1, |_, &x| x * x);
        let parallel = par_map(&items, 8, |_, &x| x * x);
        assert_eq!(serial, parallel);
        assert_eq!(serial[5], 25);
    }

    #[test]
    fn empty_input() {
        let items: Vec<u64> = vec![];
        assert!(par_map(&items, 4, |_, &x| x).is_empty());
    }
}

/// Tune glibc's allocator for large short-lived tensor buffers: keep big
/// blocks on the free lists instead of returning them to the kernel, which
/// otherwise costs an mmap/fault cycle per allocation. Idempotent; a no-op
/// off glibc.
pub fn tune_allocator() {
    use std::sync::Once;
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 512 << 20);
            libc::mallopt(libc::M_TRIM_THRESHOLD, 512 << 20);
            libc::mallopt(libc::M_TOP_PAD, 16 << 20);
        }
    });
}
