//! Config-driven experiment runner behind the `fraudctl` binary.

pub mod commands;
pub mod config;
pub mod manifest;

use fraud_core::ErrorKind;

/// Process exit status for an error of the given kind.
pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}
