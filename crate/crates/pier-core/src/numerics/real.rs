//! Floating-point abstraction over `f32` (training) and `f64` (verification).

/// Scalar type every kernel is generic over.
pub trait Real:
    num_traits::Float + core::fmt::Debug + core::fmt::Display + Default + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Little-endian byte serialization at the type's native width.
    fn write_le_bytes(self, out: &mut alloc::vec::Vec<u8>);
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
    fn write_le_bytes(self, out: &mut alloc::vec::Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le_bytes(self, out: &mut alloc::vec::Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}
