use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{axpy, dot, Tensor2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Sigmoid,
            _ => return None,
        })
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
struct ForwardCache {
    input: Tensor2,
    output: Tensor2,
}

/// Affine layer `y = act(x Wᵀ + b)` with `W` stored `out × in`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub(crate) weight: Tensor2,
    pub(crate) bias: Vec<f64>,
    pub(crate) grad_weight: Tensor2,
    pub(crate) grad_bias: Vec<f64>,
    activation: Activation,
    cache: Option<ForwardCache>,
}

impl DenseLayer {
    /// Xavier-uniform weights, zero bias.
    pub fn xavier<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        let weight = Tensor2::from_vec(output, input, data).expect("sized above");
        Self::from_parts(weight, vec![0.0; output], activation).expect("sized above")
    }

    pub fn from_parts(weight: Tensor2, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::ShapeMismatch {
                op: "DenseLayer::from_parts",
                left: weight.shape(),
                right: (bias.len(), 1),
            });
        }
        Ok(Self {
            grad_weight: Tensor2::zeros(weight.rows(), weight.cols()),
            grad_bias: vec![0.0; bias.len()],
            weight,
            bias,
            activation,
            cache: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight(&self) -> &Tensor2 {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn grad_weight(&self) -> &Tensor2 {
        &self.grad_weight
    }

    pub fn grad_bias(&self) -> &[f64] {
        &self.grad_bias
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.as_mut_slice().fill(0.0);
        self.grad_bias.fill(0.0);
    }

    /// Forward pass without retaining anything for backward.
    pub fn infer(&self, input: &Tensor2) -> Result<Tensor2> {
        if input.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "DenseLayer::forward",
                left: input.shape(),
                right: self.weight.shape(),
            });
        }
        let mut out = Tensor2::zeros(input.rows(), self.output_dim());
        for (b, x) in input.iter_rows().enumerate() {
            let y = out.row_mut(b);
            for (o, yo) in y.iter_mut().enumerate() {
                *yo = self
                    .activation
                    .apply(dot(x, self.weight.row(o)) + self.bias[o]);
            }
        }
        Ok(out)
    }

    /// Forward pass that retains input and output for [`DenseLayer::backward`].
    pub fn forward(&mut self, input: &Tensor2) -> Result<Tensor2> {
        let output = self.infer(input)?;
        self.cache = Some(ForwardCache {
            input: input.clone(),
            output: output.clone(),
        });
        Ok(output)
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the input of the last forward pass.
    pub fn backward(&mut self, upstream: &Tensor2) -> Result<Tensor2> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(Error::BackwardWithoutForward { layer: 0 })?;
        if upstream.shape() != cache.output.shape() {
            return Err(Error::ShapeMismatch {
                op: "DenseLayer::backward",
                left: upstream.shape(),
                right: cache.output.shape(),
            });
        }
        let act = self.activation;
        let mut input_grad = Tensor2::zeros(cache.input.rows(), self.input_dim());
        let mut g = vec![0.0; self.output_dim()];
        for b in 0..upstream.rows() {
            let up = upstream.row(b);
            let out = cache.output.row(b);
            for ((gi, &u), &y) in g.iter_mut().zip(up).zip(out) {
                *gi = u * act.derivative_from_output(y);
            }
            let x = cache.input.row(b);
            let dx = input_grad.row_mut(b);
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                self.grad_bias[o] += go;
                axpy(go, x, self.grad_weight.row_mut(o));
                axpy(go, self.weight.row(o), dx);
            }
        }
        Ok(input_grad)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer =
            DenseLayer::from_parts(Tensor2::identity(3), vec![0.0; 3], Activation::Identity)
                .unwrap();
        let x = Tensor2::from_rows(&[vec![1.0, -2.0, 3.5], vec![0.0, 4.0, -1.0]]).unwrap();
        assert_eq!(layer.infer(&x).unwrap(), x);
    }

    #[test]
    fn relu_zeroes_negative_preactivations() {
        let layer = DenseLayer::from_parts(
            Tensor2::identity(2),
            vec![-10.0, -10.0],
            Activation::Relu,
        )
        .unwrap();
        let x = Tensor2::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(layer.infer(&x).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn scalar_affine_by_hand() {
        let mut layer = DenseLayer::from_parts(
            Tensor2::from_vec(1, 1, vec![2.0]).unwrap(),
            vec![1.0],
            Activation::Identity,
        )
        .unwrap();
        let x = Tensor2::from_vec(1, 1, vec![3.0]).unwrap();
        assert_eq!(layer.forward(&x).unwrap().as_slice(), &[7.0]);
        let dx = layer
            .backward(&Tensor2::from_vec(1, 1, vec![0.5]).unwrap())
            .unwrap();
        assert_eq!(dx.as_slice(), &[1.0]); // w * upstream
        assert_eq!(layer.grad_weight().as_slice(), &[1.5]); // x * upstream
        assert_eq!(layer.grad_bias(), &[0.5]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = seeded(3);
        let mut layer = DenseLayer::xavier(4, 3, Activation::Tanh, &mut rng);
        let x = Tensor2::filled(2, 4, 0.3);
        layer.forward(&x).unwrap();
        let dx = layer.backward(&Tensor2::zeros(2, 3)).unwrap();
        assert!(dx.as_slice().iter().all(|&v| v == 0.0));
        assert!(layer.grad_weight().as_slice().iter().all(|&v| v == 0.0));
        assert!(layer.grad_bias().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut rng = seeded(3);
        let mut layer = DenseLayer::xavier(4, 3, Activation::Tanh, &mut rng);
        let err = layer.forward(&Tensor2::zeros(2, 5)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 5)") && msg.contains("(3, 4)"), "{msg}");
        assert!(matches!(
            layer.backward(&Tensor2::zeros(2, 3)),
            Err(Error::BackwardWithoutForward { .. })
        ));
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
