use serde::{Deserialize, Serialize};

use crate::Real;

/// Hidden-layer nonlinearity. Each kind supplies its value and its first two
/// derivatives in closed form; the second derivative is what the
/// reverse-over-forward pass needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `z · sigmoid(z)`
    #[default]
    Swish,
    Tanh,
}

#[inline]
fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

impl Activation {
    #[inline]
    pub fn value<T: Real>(self, z: T) -> T {
        match self {
            Activation::Swish => z * sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    #[inline]
    pub fn d1<T: Real>(self, z: T) -> T {
        match self {
            Activation::Swish => {
                let s = sigmoid(z);
                s * (T::one() + z * (T::one() - s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                T::one() - t * t
            }
        }
    }

    #[inline]
    pub fn d2<T: Real>(self, z: T) -> T {
        match self {
            Activation::Swish => {
                let s = sigmoid(z);
                let two = T::lit(2.0);
                s * (T::one() - s) * (two + z * (T::one() - two * s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                -T::lit(2.0) * t * (T::one() - t * t)
            }
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Swish => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Swish),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const KINDS: [Activation; 2] = [Activation::Swish, Activation::Tanh];

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn swish_is_z_times_sigmoid() {
        for &z in &[-7.5, -1.0, 0.0, 0.3, 4.0] {
            let s = 1.0 / (1.0 + f64::exp(-z));
            assert!((Activation::Swish.value(z) - z * s).abs() < 1e-15);
        }
    }

    #[test]
    fn finite_at_extremes() {
        for kind in KINDS {
            for &z in &[-1e300f64, -800.0, -40.0, 40.0, 800.0, 1e300] {
                assert!(kind.value(z).is_finite());
                assert!(kind.d1(z).is_finite());
                assert!(kind.d2(z).is_finite());
            }
        }
    }

    proptest! {
        #[test]
        fn derivatives_match_central_differences(z in -10.0f64..10.0) {
            let h = 1e-5;
            for kind in KINDS {
                let fd1 = (kind.value(z + h) - kind.value(z - h)) / (2.0 * h);
                prop_assert!(rel_err(kind.d1(z), fd1) < 1e-6, "{kind:?} d1 at {z}");
                let fd2 = (kind.d1(z + h) - kind.d1(z - h)) / (2.0 * h);
                prop_assert!(rel_err(kind.d2(z), fd2) < 1e-6, "{kind:?} d2 at {z}");
            }
        }
    }
}
