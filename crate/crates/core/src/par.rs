//! Switch between rayon and sequential iteration with one call site.

/// Expands to the first expression with the `parallel` feature and to the
/// second without it. Both branches must yield iterators with the same
/// adapter chain.
macro_rules! if_parallel {
    ($par:expr, $seq:expr) => {{
        #[cfg(feature = "parallel")]
        {
            $par
        }
        #[cfg(not(feature = "parallel"))]
        {
            $seq
        }
    }};
}

pub(crate) use if_parallel;

#[cfg(feature = "parallel")]
pub(crate) use rayon::prelude::*;

/// Below this many items per call the rayon split overhead dominates.
#[allow(dead_code)]
pub(crate) const MIN_PAR_LEN: usize = 64;
