//! Scalar abstraction over `f32` and `f64`.
//!
//! Training defaults to `f32`; gradient checks run at `f64`. All
//! transcendental functions route through `libm` so results do not depend
//! on the platform's libc.

use core::fmt::{Debug, Display};
use core::iter::Sum;
use core::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Real:
    Copy
    + Clone
    + PartialEq
    + PartialOrd
    + Debug
    + Display
    + Default
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + serde::Serialize
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    /// Tag used by checkpoints to pin the stored precision.
    const PRECISION: &'static str;
    /// Bytes per value in raw little-endian blobs.
    const BYTE_WIDTH: usize;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Write exactly `BYTE_WIDTH` little-endian bytes.
    fn write_le_bytes(self, out: &mut [u8]);
    /// Read exactly `BYTE_WIDTH` little-endian bytes.
    fn from_le_bytes(src: &[u8]) -> Self;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn powi(self, n: i32) -> Self;

    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;
    fn clamp(self, lo: Self, hi: Self) -> Self {
        self.max(lo).min(hi)
    }
    fn is_finite(self) -> bool;

    /// Smallest positive value used to guard logs and divisions.
    fn tiny() -> Self;

    fn sigmoid(self) -> Self {
        // Split on sign to avoid overflow in exp.
        if self >= Self::ZERO {
            Self::ONE / (Self::ONE + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::ONE + e)
        }
    }
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const PRECISION: &'static str = "f32";
    const BYTE_WIDTH: usize = 4;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }

    fn write_le_bytes(self, out: &mut [u8]) {
        out.copy_from_slice(&self.to_le_bytes());
    }
    fn from_le_bytes(src: &[u8]) -> Self {
        f32::from_le_bytes(src.try_into().expect("4 bytes"))
    }

    fn exp(self) -> Self {
        libm::expf(self)
    }
    fn ln(self) -> Self {
        libm::logf(self)
    }
    fn sqrt(self) -> Self {
        libm::sqrtf(self)
    }
    fn tanh(self) -> Self {
        libm::tanhf(self)
    }
    fn abs(self) -> Self {
        libm::fabsf(self)
    }
    fn powi(self, n: i32) -> Self {
        libm::powf(self, n as f32)
    }

    fn max(self, other: Self) -> Self {
        libm::fmaxf(self, other)
    }
    fn min(self, other: Self) -> Self {
        libm::fminf(self, other)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn tiny() -> Self {
        1e-30
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const PRECISION: &'static str = "f64";
    const BYTE_WIDTH: usize = 8;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }

    fn write_le_bytes(self, out: &mut [u8]) {
        out.copy_from_slice(&self.to_le_bytes());
    }
    fn from_le_bytes(src: &[u8]) -> Self {
        f64::from_le_bytes(src.try_into().expect("8 bytes"))
    }

    fn exp(self) -> Self {
        libm::exp(self)
    }
    fn ln(self) -> Self {
        libm::log(self)
    }
    fn sqrt(self) -> Self {
        libm::sqrt(self)
    }
    fn tanh(self) -> Self {
        libm::tanh(self)
    }
    fn abs(self) -> Self {
        libm::fabs(self)
    }
    fn powi(self, n: i32) -> Self {
        libm::pow(self, n as f64)
    }

    fn max(self, other: Self) -> Self {
        libm::fmax(self, other)
    }
    fn min(self, other: Self) -> Self {
        libm::fmin(self, other)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn tiny() -> Self {
        1e-300
    }
}
