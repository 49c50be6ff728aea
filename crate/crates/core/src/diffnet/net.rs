use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::Activation;
use crate::rng::{normal, rng_from_seed};
use crate::{Error, Real, Result};

/// All weights and biases of one [`MlpNet`] in canonical order:
/// layer-major, weights before biases, weights row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T>(pub Array1<T>);

impl<T: Real> ParamVector<T> {
    pub fn zeros(len: usize) -> Self {
        ParamVector(Array1::zeros(len))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        self.0.as_slice().expect("contiguous")
    }

    pub fn view(&self) -> ArrayView1<'_, T> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array1<T> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Dense feed-forward network. Hidden layers apply `activation`; the output
/// layer is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet<T> {
    dims: Vec<usize>,
    pub(crate) weights: Vec<Array2<T>>,
    pub(crate) biases: Vec<Array1<T>>,
    activation: Activation,
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "layer dims need an input and an output size, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidConfig(format!("zero-width layer in {dims:?}")));
    }
    Ok(())
}

impl<T: Real> MlpNet<T> {
    /// Weights `N(0, 1/fan_in)`, biases zero.
    pub fn init(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        Self::init_with(dims, activation, &mut rng)
    }

    pub fn init_with<R: Rng + ?Sized>(
        dims: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        validate_dims(dims)?;
        let weights = dims
            .windows(2)
            .map(|w| {
                let scale = T::one() / T::from_count(w[0]).sqrt();
                Array2::from_shape_simple_fn((w[1], w[0]), || normal::<T, R>(rng) * scale)
            })
            .collect();
        let biases = dims[1..].iter().map(|&d| Array1::zeros(d)).collect();
        Ok(MlpNet {
            dims: dims.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        validate_dims(dims)?;
        Ok(MlpNet {
            dims: dims.to_vec(),
            weights: dims.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect(),
            biases: dims[1..].iter().map(|&d| Array1::zeros(d)).collect(),
            activation,
        })
    }

    /// Builds a net from explicit layers; `weights[k]` is `(dims[k+1], dims[k])`.
    pub fn from_layers(
        weights: Vec<Array2<T>>,
        biases: Vec<Array1<T>>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::InvalidConfig(
                "need one bias per weight matrix and at least one layer".into(),
            ));
        }
        let mut dims = vec![weights[0].ncols()];
        for (k, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != dims[k] || b.len() != w.nrows() {
                return Err(Error::shape(
                    "mlp layer",
                    format!("({}, {}) with bias {}", w.nrows(), dims[k], w.nrows()),
                    format!("({}, {}) with bias {}", w.nrows(), w.ncols(), b.len()),
                ));
            }
            dims.push(w.nrows());
        }
        validate_dims(&dims)?;
        let net = MlpNet {
            dims,
            weights,
            biases,
            activation,
        };
        if !net.to_params().is_finite() {
            return Err(Error::Numeric {
                context: "mlp parameters",
                index: 0,
            });
        }
        Ok(net)
    }

    pub fn from_params(dims: &[usize], activation: Activation, params: &ParamVector<T>) -> Result<Self> {
        let mut net = Self::zeros(dims, activation)?;
        net.set_params(params)?;
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn d_in(&self) -> usize {
        self.dims[0]
    }

    pub fn d_out(&self) -> usize {
        *self.dims.last().expect("validated dims")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Array2<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<T>] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Offsets of each layer's weight block and bias block inside the flat vector.
    pub(crate) fn layer_offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.dims
            .windows(2)
            .map(|w| {
                let wo = off;
                let bo = off + w[0] * w[1];
                off = bo + w[1];
                (wo, bo)
            })
            .collect()
    }

    pub fn to_params(&self) -> ParamVector<T> {
        let mut flat = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            flat.extend(w.iter().copied());
            flat.extend(b.iter().copied());
        }
        ParamVector(Array1::from(flat))
    }

    pub fn set_params(&mut self, params: &ParamVector<T>) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::shape("parameter vector", self.num_params(), params.len()));
        }
        let p = params.view();
        for ((wo, bo), (w, b)) in self
            .layer_offsets()
            .into_iter()
            .zip(self.weights.iter_mut().zip(self.biases.iter_mut()))
        {
            let (r, c) = w.dim();
            w.assign(&p.slice(s![wo..wo + r * c]).into_shape_with_order((r, c)).expect("block"));
            b.assign(&p.slice(s![bo..bo + r]));
        }
        Ok(())
    }

    pub(crate) fn check_batch(&self, x: &ArrayView2<T>, context: &'static str) -> Result<()> {
        if x.ncols() != self.d_in() {
            return Err(Error::shape(context, format!("{} input columns", self.d_in()), x.ncols()));
        }
        Ok(())
    }

    pub fn forward_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_batch(&x, "mlp forward")?;
        let act = self.activation;
        let last = self.num_layers() - 1;
        let mut h = x.to_owned();
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.dot(&w.t());
            z += b;
            if k < last {
                z.mapv_inplace(|v| act.value(v));
            }
            h = z;
        }
        Ok(h)
    }

    pub fn forward(&self, x: ArrayView1<T>) -> Result<Array1<T>> {
        let y = self.forward_batch(x.insert_axis(Axis(0)))?;
        Ok(y.row(0).to_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_is_deterministic() {
        let a = MlpNet::<f64>::init(&[2, 3, 1], Activation::Swish, 0).unwrap();
        let b = MlpNet::<f64>::init(&[2, 3, 1], Activation::Swish, 0).unwrap();
        assert_eq!(a, b);
        let c = MlpNet::<f64>::init(&[2, 3, 1], Activation::Swish, 1).unwrap();
        assert_ne!(a, c);
        assert!(a.biases().iter().all(|b| b.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn degenerate_dims_are_rejected() {
        assert!(matches!(
            MlpNet::<f64>::init(&[1], Activation::Swish, 0),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            MlpNet::<f64>::init(&[], Activation::Swish, 0),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            MlpNet::<f64>::init(&[3, 0, 2], Activation::Swish, 0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn image_sized_critic_shapes() {
        let net = MlpNet::<f64>::init(&[784, 300, 300, 784], Activation::Swish, 7).unwrap();
        assert_eq!(net.num_layers(), 3);
        assert_eq!(net.weights()[0].dim(), (300, 784));
        assert_eq!(net.weights()[1].dim(), (300, 300));
        assert_eq!(net.num_params(), 784 * 300 + 300 + 300 * 300 + 300 + 300 * 784 + 784);
    }

    #[test]
    fn init_scale_follows_fan_in() {
        let net = MlpNet::<f64>::init(&[400, 300, 1], Activation::Tanh, 3).unwrap();
        let w = &net.weights()[0];
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert!((var * 400.0 - 1.0).abs() < 0.02, "var*fan_in = {}", var * 400.0);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = MlpNet::<f64>::zeros(&[3, 5, 2], Activation::Swish).unwrap();
        let y = net.forward(array![1.0, -2.0, 3.0].view()).unwrap();
        assert_eq!(y, array![0.0, 0.0]);
    }

    #[test]
    fn single_layer_is_affine() {
        let w = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]];
        let b = array![0.1, 0.2, 0.3];
        let net = MlpNet::from_layers(vec![w.clone()], vec![b.clone()], Activation::Swish).unwrap();
        let x = array![2.0, -1.0];
        assert_eq!(net.forward(x.view()).unwrap(), w.dot(&x) + &b);
    }

    #[test]
    fn forward_shape_error() {
        let net = MlpNet::<f64>::init(&[3, 4, 2], Activation::Swish, 0).unwrap();
        assert!(matches!(net.forward(array![1.0, 2.0].view()), Err(Error::Shape { .. })));
    }

    #[test]
    fn params_round_trip_and_order() {
        let net = MlpNet::<f64>::init(&[2, 3, 2], Activation::Tanh, 5).unwrap();
        let p = net.to_params();
        assert_eq!(p.len(), net.num_params());
        // layer 0 weights row-major come first, then its bias
        assert_eq!(p.0[1], net.weights()[0][[0, 1]]);
        assert_eq!(p.0[2], net.weights()[0][[1, 0]]);
        assert_eq!(p.0[6], net.biases()[0][0]);
        let back = MlpNet::from_params(net.dims(), net.activation(), &p).unwrap();
        assert_eq!(back, net);
        assert!(matches!(
            MlpNet::from_params(&[2, 3, 2], Activation::Tanh, &ParamVector::<f64>::zeros(3)),
            Err(Error::Shape { .. })
        ));
    }
}
