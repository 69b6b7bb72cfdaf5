//! Scalar abstraction over the floating-point types the engine runs on.

use std::fmt::{Debug, Display};

/// Floating-point scalar usable everywhere in the crate.
///
/// `f64` is the reference precision for tests and oracles; `f32` is the
/// training precision. Both satisfy this bound.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssignOps
    + Copy
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + 'static
{
    /// Short dtype tag used in checkpoints ("f32" / "f64").
    const DTYPE: &'static str;

    fn of_f64(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).expect("f64 conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }

    fn of_usize(v: usize) -> Self {
        <Self as num_traits::FromPrimitive>::from_usize(v).expect("usize conversion")
    }

    fn to_le_bytes(self, out: &mut Vec<u8>);
    fn from_le_slice(bytes: &[u8]) -> Self;
    /// Size of one scalar in bytes on disk.
    const BYTES: usize;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn to_le_bytes(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn to_le_bytes(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}
