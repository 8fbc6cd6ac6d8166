//! Small dense network engine: matrices, affine layers with hand-written
//! backward passes, Adam, a finite-difference gradient checker and a binary
//! parameter format.

mod adam;
mod gradcheck;
pub mod io;
mod layer;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckEntry, GradCheckReport};
pub use layer::{sigmoid, Activation, DenseLayer};
pub use tensor::Tensor2;
pub(crate) use tensor::axpy;

use rand::Rng;

use crate::error::{Error, Result};

/// Mutable view of one parameter tensor and its gradient buffer.
pub struct ParamView<'a> {
    pub name: String,
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
}

/// Models whose parameters can be enumerated in a fixed order.
pub trait Parameterized {
    fn params(&mut self) -> Vec<ParamView<'_>>;

    fn zero_grad(&mut self) {
        for p in self.params() {
            p.grad.fill(0.0);
        }
    }

    fn param_count(&mut self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

/// Stack of dense layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    /// Builds layers for `sizes = [in, h1, ..., out]`; hidden layers use
    /// `hidden`, the last layer uses `output`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(crate::error::invalid(
                "sizes",
                format!("need at least two positive widths, got {sizes:?}"),
            ));
        }
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::xavier(w[0], w[1], act, rng)
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::ShapeMismatch {
                    op: "Mlp::from_layers",
                    left: (i, w[0].output_dim()),
                    right: (i + 1, w[1].input_dim()),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::output_dim)
    }

    pub fn infer(&self, input: &Tensor2) -> Result<Tensor2> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.infer(&x)?;
        }
        Ok(x)
    }

    pub fn forward(&mut self, input: &Tensor2) -> Result<Tensor2> {
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    pub fn backward(&mut self, upstream: &Tensor2) -> Result<Tensor2> {
        let mut g = upstream.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            g = layer.backward(&g).map_err(|e| match e {
                Error::BackwardWithoutForward { .. } => Error::BackwardWithoutForward { layer: i },
                other => other,
            })?;
        }
        Ok(g)
    }

    pub(crate) fn push_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.push(ParamView {
                name: format!("{prefix}.{i}.weight"),
                value: layer.weight.as_mut_slice(),
                grad: layer.grad_weight.as_mut_slice(),
            });
            out.push(ParamView {
                name: format!("{prefix}.{i}.bias"),
                value: &mut layer.bias,
                grad: &mut layer.grad_bias,
            });
        }
    }
}

impl Parameterized for Mlp {
    fn params(&mut self) -> Vec<ParamView<'_>> {
        let mut out = Vec::new();
        self.push_params("mlp", &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn xavier_init_is_seeded() {
        let a = Mlp::new(&[4, 6, 2], Activation::Tanh, Activation::Identity, &mut seeded(9)).unwrap();
        let b = Mlp::new(&[4, 6, 2], Activation::Tanh, Activation::Identity, &mut seeded(9)).unwrap();
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            assert_eq!(la.weight(), lb.weight());
        }
        let limit = (6.0f64 / 10.0).sqrt();
        assert!(a.layers()[0].weight().as_slice().iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn rejects_mismatched_stack() {
        let mut rng = seeded(1);
        let l1 = DenseLayer::xavier(3, 4, Activation::Relu, &mut rng);
        let l2 = DenseLayer::xavier(5, 2, Activation::Relu, &mut rng);
        assert!(Mlp::from_layers(vec![l1, l2]).is_err());
        assert!(Mlp::new(&[3], Activation::Relu, Activation::Relu, &mut rng).is_err());
    }

    #[test]
    fn backward_without_forward_names_layer() {
        let mut m = Mlp::new(&[2, 3, 1], Activation::Tanh, Activation::Identity, &mut seeded(2)).unwrap();
        match m.backward(&Tensor2::zeros(1, 1)) {
            Err(Error::BackwardWithoutForward { layer }) => assert_eq!(layer, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
