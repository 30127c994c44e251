//! Tensor primitives: element trait, raw kernels, and the autodiff tape.
//!
//! All feature maps are channels-last `(H, W, C)`. Training runs in `f32`;
//! gradient checks run the same code in `f64`.

pub mod ops;
pub mod tape;

use ndarray::ArrayD;

pub use tape::{NodeId, Tape};

/// Dynamic-rank tensor over the active element type.
pub type Tensor<E> = ArrayD<E>;

/// Element dtype tag, used by the checkpoint container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    U64,
    U8,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
            DType::U64 => 2,
            DType::U8 => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<DType> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            2 => Some(DType::U64),
            3 => Some(DType::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 | DType::U64 => 8,
            DType::U8 => 1,
        }
    }
}

/// Floating-point element the network can run on.
pub trait Elem:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn to_le_bytes_vec(slice: &[Self]) -> Vec<u8>;
    fn from_le_bytes_vec(bytes: &[u8]) -> Option<Vec<Self>>;
    /// `tanh` tuned per dtype: `f64` defers to the platform call, `f32` uses
    /// a clamped rational approximation within ~1e-6 of it that the compiler
    /// can vectorize inside elementwise kernels.
    fn tanh_fast(self) -> Self;
}

impl Elem for f32 {
    const DTYPE: DType = DType::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn to_le_bytes_vec(slice: &[Self]) -> Vec<u8> {
        slice.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    fn from_le_bytes_vec(bytes: &[u8]) -> Option<Vec<Self>> {
        if bytes.len() % 4 != 0 {
            return None;
        }
        Some(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        )
    }

    #[inline]
    fn tanh_fast(self) -> Self {
        // Rational approximation x P(x^2) / Q(x^2) on the clamped range,
        // branchless so elementwise loops vectorize.
        const CLAMP: f32 = 7.998_811_7;
        const A1: f32 = 4.893_525_3e-3;
        const A3: f32 = 6.372_619_3e-4;
        const A5: f32 = 1.485_722_4e-5;
        const A7: f32 = 5.122_297_1e-8;
        const A9: f32 = -8.604_671_5e-11;
        const A11: f32 = 2.000_187_9e-13;
        const A13: f32 = -2.760_768_5e-16;
        const B0: f32 = 4.893_525_2e-3;
        const B2: f32 = 2.268_434_6e-3;
        const B4: f32 = 1.185_347_1e-4;
        const B6: f32 = 1.198_258_4e-6;
        let x = self.clamp(-CLAMP, CLAMP);
        let x2 = x * x;
        let p = ((((((A13 * x2 + A11) * x2 + A9) * x2 + A7) * x2 + A5) * x2 + A3) * x2 + A1) * x;
        let q = ((B6 * x2 + B4) * x2 + B2) * x2 + B0;
        p / q
    }
}

impl Elem for f64 {
    const DTYPE: DType = DType::F64;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn to_le_bytes_vec(slice: &[Self]) -> Vec<u8> {
        slice.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    fn from_le_bytes_vec(bytes: &[u8]) -> Option<Vec<Self>> {
        if bytes.len() % 8 != 0 {
            return None;
        }
        Some(
            bytes
                .chunks_exact(8)
                .map(|c| {
                    f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])
                })
                .collect(),
        )
    }

    #[inline]
    fn tanh_fast(self) -> Self {
        self.tanh()
    }
}

#[cfg(test)]
mod tests {
    use super::Elem;

    #[test]
    fn f32_tanh_fast_matches_reference() {
        let mut worst = 0.0f64;
        let mut x = -12.0f32;
        while x <= 12.0 {
            let err = (f64::from(x.tanh_fast()) - f64::from(x).tanh()).abs();
            worst = worst.max(err);
            x += 1.3e-3;
        }
        assert!(worst <= 1.0e-6, "max abs error {worst}");
        assert!(f32::NAN.tanh_fast().is_nan());
        assert!(f32::INFINITY.tanh_fast() <= 1.0);
        assert!((f64::tanh_fast(0.3) - 0.3f64.tanh()).abs() < 1e-15);
    }
}
