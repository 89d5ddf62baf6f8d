//! Allocator tuning.
//!
//! Every training step allocates and frees activation and gradient buffers
//! of the same sizes. glibc serves large requests with fresh `mmap`s and
//! returns them on free, so each step pays a page fault per 4 KiB touched.
//! Raising the mmap and trim thresholds keeps those buffers in the heap and
//! lets them be reused.

use std::sync::Once;

static TUNE: Once = Once::new();

#[cfg(all(target_os = "linux", target_env = "gnu"))]
pub(crate) fn tune() {
    TUNE.call_once(|| {
        const LIMIT: libc::c_int = 1 << 30;
        // SAFETY: mallopt only adjusts allocator parameters; it is called
        // once, before this crate allocates any tensor storage.
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, LIMIT);
            libc::mallopt(libc::M_TRIM_THRESHOLD, LIMIT);
        }
    });
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
pub(crate) fn tune() {
    TUNE.call_once(|| {});
}
