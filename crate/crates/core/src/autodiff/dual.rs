//! Scalar types the differentiation engine is generic over.
//!
//! The engine runs on plain `f64` for values and gradients. Running the very
//! same code on [`Dual`] numbers whose tangent is seeded with a direction `v`
//! in weight space yields the directional derivative of the gradient, i.e. a
//! Hessian-vector product (forward-over-reverse).

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use ndarray::{Array2, ArrayView2, LinalgScalar, Zip};
use num_traits::{One, Zero};

/// Element type of the differentiation engine.
pub trait Scalar:
    LinalgScalar
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Debug
    + PartialEq
    + Send
    + Sync
{
    fn from_f64(x: f64) -> Self;

    /// Primal part.
    fn value(self) -> f64;

    fn tanh(self) -> Self;

    fn scale(self, k: f64) -> Self;

    /// Dense matrix product `a · b`.
    fn matmul(a: ArrayView2<'_, Self>, b: ArrayView2<'_, Self>) -> Array2<Self>;
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline]
    fn value(self) -> f64 {
        self
    }

    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }

    #[inline]
    fn scale(self, k: f64) -> Self {
        self * k
    }

    fn matmul(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
        a.dot(&b)
    }
}

/// First-order dual number `value + tangent·ε`, `ε² = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub tangent: f64,
}

impl Dual {
    #[inline]
    pub const fn new(value: f64, tangent: f64) -> Self {
        Self { value, tangent }
    }

    #[inline]
    pub const fn constant(value: f64) -> Self {
        Self {
            value,
            tangent: 0.0,
        }
    }

    /// Independent variable: tangent seeded with 1.
    #[inline]
    pub const fn variable(value: f64) -> Self {
        Self {
            value,
            tangent: 1.0,
        }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.value + rhs.value, self.tangent + rhs.tangent)
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.value - rhs.value, self.tangent - rhs.tangent)
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(
            self.value * rhs.value,
            self.value * rhs.tangent + self.tangent * rhs.value,
        )
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, rhs: Dual) -> Dual {
        let q = self.value / rhs.value;
        Dual::new(q, (self.tangent - q * rhs.tangent) / rhs.value)
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        Dual::new(-self.value, -self.tangent)
    }
}

impl AddAssign for Dual {
    #[inline]
    fn add_assign(&mut self, rhs: Dual) {
        *self = *self + rhs;
    }
}

impl SubAssign for Dual {
    #[inline]
    fn sub_assign(&mut self, rhs: Dual) {
        *self = *self - rhs;
    }
}

impl MulAssign for Dual {
    #[inline]
    fn mul_assign(&mut self, rhs: Dual) {
        *self = *self * rhs;
    }
}

impl Zero for Dual {
    #[inline]
    fn zero() -> Self {
        Dual::constant(0.0)
    }

    #[inline]
    fn is_zero(&self) -> bool {
        self.value == 0.0 && self.tangent == 0.0
    }
}

impl One for Dual {
    #[inline]
    fn one() -> Self {
        Dual::constant(1.0)
    }
}

impl Scalar for Dual {
    #[inline]
    fn from_f64(x: f64) -> Self {
        Dual::constant(x)
    }

    #[inline]
    fn value(self) -> f64 {
        self.value
    }

    #[inline]
    fn tanh(self) -> Self {
        let t = self.value.tanh();
        Dual::new(t, self.tangent * (1.0 - t * t))
    }

    #[inline]
    fn scale(self, k: f64) -> Self {
        Dual::new(self.value * k, self.tangent * k)
    }

    // Split into primal/tangent planes so both halves go through the f64 GEMM.
    fn matmul(a: ArrayView2<'_, Dual>, b: ArrayView2<'_, Dual>) -> Array2<Dual> {
        let av = a.map(|d| d.value);
        let at = a.map(|d| d.tangent);
        let bv = b.map(|d| d.value);
        let bt = b.map(|d| d.tangent);
        let value = av.dot(&bv);
        let mut tangent = av.dot(&bt);
        ndarray::linalg::general_mat_mul(1.0, &at, &bv, 1.0, &mut tangent);
        let mut out = Array2::<Dual>::zeros(value.raw_dim());
        Zip::from(&mut out)
            .and(&value)
            .and(&tangent)
            .for_each(|o, &v, &t| *o = Dual::new(v, t));
        out
    }
}
