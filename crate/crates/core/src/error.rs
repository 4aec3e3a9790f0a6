use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("series truncated at k = {max_k} cannot reach relative tolerance {rel_tol} (estimated error {achieved:.3e})")]
    SeriesTolerance {
        max_k: u64,
        rel_tol: f64,
        achieved: f64,
    },

    #[error("perimeter {perimeter} exceeds kernel table capacity {capacity}")]
    PerimeterCapacity { perimeter: u64, capacity: u64 },

    #[error("quadrature did not converge on [{a}, {b}] (requested tolerance {tol})")]
    Quadrature { a: f64, b: f64, tol: f64 },

    #[error("invalid kernel cache file: {0}")]
    KernelCache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
