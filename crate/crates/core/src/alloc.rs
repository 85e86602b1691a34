//! Allocator tuning for the training loop.
//!
//! Every step allocates and frees the same set of multi-megabyte
//! activation buffers. glibc serves those with fresh `mmap`s by default,
//! so each step pays a page fault per 4 KiB touched. Raising the mmap and
//! trim thresholds keeps the memory in the heap between steps.

/// Applies the thresholds once per process. A no-op off glibc.
pub fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        use std::sync::Once;
        static ONCE: Once = Once::new();
        ONCE.call_once(|| {
            // 32 MiB is the largest mmap threshold glibc accepts on 64-bit.
            const MMAP_THRESHOLD: libc::c_int = 32 << 20;
            const TRIM_THRESHOLD: libc::c_int = 1 << 30;
            // SAFETY: mallopt only adjusts allocator parameters.
            unsafe {
                libc::mallopt(libc::M_MMAP_THRESHOLD, MMAP_THRESHOLD);
                libc::mallopt(libc::M_TRIM_THRESHOLD, TRIM_THRESHOLD);
            }
        });
    }
}
