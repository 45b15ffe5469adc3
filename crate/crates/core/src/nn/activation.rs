use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

/// Slope used for leaky ReLU throughout the encoder.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    /// `max(x, λx)` with `0 < λ < 1`.
    LeakyRelu(f64),
    Relu,
    /// Saturating output stage mapping onto `(0, 1)`.
    Sigmoid,
}

impl Activation {
    pub fn leaky(lambda: f64) -> Result<Self, NnError> {
        let a = Activation::LeakyRelu(lambda);
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if let Activation::LeakyRelu(l) = *self {
            if !(l > 0.0 && l < 1.0) {
                return Err(NnError::Config(format!(
                    "leaky ReLU slope must lie in (0,1), got {l}"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::LeakyRelu(l) => x.max(l * x),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    fn derivative(&self, x: f64, y: f64) -> f64 {
        match *self {
            Activation::LeakyRelu(l) => {
                if x > 0.0 {
                    1.0
                } else {
                    l
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.validate()?;
        Ok(x.map(|v| self.apply(v)))
    }

    pub fn backward(&self, input: &Tensor, output: &Tensor, grad_out: &Tensor) -> Tensor {
        let mut g = grad_out.clone();
        for ((gv, x), y) in g.data_mut().iter_mut().zip(input.data()).zip(output.data()) {
            *gv *= self.derivative(*x, *y);
        }
        g
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn leaky_branches() {
        let a = Activation::leaky(0.2).unwrap();
        assert_eq!(a.apply(3.0), 3.0);
        assert!((a.apply(-5.0) + 1.0).abs() < 1e-15);
        assert_eq!(Activation::Relu.apply(-2.0), 0.0);
    }

    #[test]
    fn slope_out_of_range_is_config_error() {
        assert!(Activation::leaky(0.0).is_err());
        assert!(Activation::leaky(1.0).is_err());
        assert!(Activation::leaky(-0.3).is_err());
        let t = Tensor::scalar(1.0);
        assert!(Activation::LeakyRelu(1.5).forward(&t).is_err());
    }

    #[test]
    fn sigmoid_is_saturating() {
        assert!(Activation::Sigmoid.apply(800.0) <= 1.0);
        assert!(Activation::Sigmoid.apply(-800.0) >= 0.0);
        assert!((Activation::Sigmoid.apply(0.0) - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn relu_idempotent(x in -1e6f64..1e6) {
            let r = Activation::Relu;
            prop_assert_eq!(r.apply(r.apply(x)), r.apply(x));
        }
    }
}
