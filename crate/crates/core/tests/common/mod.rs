//! Oracle sweeps and SAC fixtures shared by the integration tests and the
//! acceptance runner. Each check returns a one-line summary on success and
//! the first violation on failure.

#![allow(dead_code)]

pub mod grid;
pub mod prep;
pub mod sac;

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}
pub(crate) use ensure;
