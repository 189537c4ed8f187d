//! Execution seam for data-parallel inner loops.
//!
//! Heavy per-group and per-pixel work goes through [`map_indexed`], which
//! fans out over a rayon pool when the `parallel` feature is enabled and
//! degrades to a plain loop otherwise. Results come back in index order
//! either way, and every downstream reduction walks them in canonical
//! order, so outputs are bit-identical across thread counts and builds.

#[cfg(feature = "parallel")]
pub(crate) fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indexed<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Single-threaded twin of [`map_indexed`]; the reference path that the
/// parallel one must reproduce bit for bit.
pub(crate) fn map_indexed_seq<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}
