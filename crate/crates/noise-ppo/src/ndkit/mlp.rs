//! Feed-forward networks with explicit forward and backward passes.
//!
//! The network zoo here is small and fixed (GELU MLPs over low-dimensional
//! vectors), so backprop is written per layer rather than through a general
//! autodiff graph; every pass is covered by the finite-difference checker in
//! [`crate::ndkit::gradcheck`].

use crate::ndkit::{ParamSet, Rng, Tensor};
use crate::{Error, Result};

const SQRT_2_OVER_PI: f64 = 0.7978845608028654;
const GELU_CUBIC: f64 = 0.044715;

/// GELU, tanh form: `0.5 x (1 + tanh(√(2/π)(x + 0.044715 x³)))`.
///
/// The tanh approximation is the normative definition throughout the crate;
/// [`gelu_prime`] is its exact derivative.
pub fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

/// Exact derivative of the tanh-form GELU.
pub fn gelu_prime(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Initialization of a network's final linear layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputInit {
    /// Weights and bias exactly zero: the network outputs zero everywhere.
    Zero,
    /// Weights drawn at `scale · N(0, 1/fan_in)`, bias zero.
    SmallRandom { scale: f64 },
}

/// Shape of a GELU MLP: linear layers `input → hidden… → output`, GELU
/// after every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub output_init: OutputInit,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: &[usize], output_dim: usize) -> Self {
        MlpSpec {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
            output_init: OutputInit::SmallRandom { scale: 1.0 },
        }
    }

    pub fn with_output_init(mut self, init: OutputInit) -> Self {
        self.output_init = init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims_ok = self.input_dim >= 1
            && self.output_dim >= 1
            && self.hidden_dims.iter().all(|&d| d >= 1);
        if !dims_ok {
            return Err(Error::Config("MlpSpec dims must all be >= 1".into()));
        }
        if let OutputInit::SmallRandom { scale } = self.output_init {
            if !(scale > 0.0) {
                return Err(Error::Config("SmallRandom scale must be > 0".into()));
            }
        }
        Ok(())
    }

    /// (fan_in, fan_out) per linear layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    fn weight_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}w{layer}")
    }

    fn bias_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}b{layer}")
    }

    /// Registers this network's parameters under `prefix` (e.g. `"trunk."`).
    ///
    /// Hidden weights draw from `N(0, 1/fan_in)`; the final layer follows
    /// `output_init`. Biases start at zero.
    pub fn init_into(&self, prefix: &str, params: &mut ParamSet, rng: &mut Rng) -> Result<()> {
        self.validate()?;
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let gain = if l == last {
                match self.output_init {
                    OutputInit::Zero => 0.0,
                    OutputInit::SmallRandom { scale } => scale,
                }
            } else {
                1.0
            };
            let std = gain / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| std * rng.normal()).collect();
            params.insert(
                Self::weight_name(prefix, l),
                Tensor::from_vec(&[fan_out, fan_in], w)?,
            )?;
            params.insert(Self::bias_name(prefix, l), Tensor::zeros(&[fan_out]))?;
        }
        Ok(())
    }

    /// Forward pass; the returned cache is what [`Self::backward`] replays.
    pub fn forward(&self, prefix: &str, params: &ParamSet, input: &Tensor) -> Result<(Tensor, MlpCache)> {
        if input.shape() != [self.input_dim] {
            return Err(Error::shape("mlp_forward input", &[self.input_dim], input.shape()));
        }
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        let mut layers = Vec::with_capacity(dims.len());
        let mut x = input.clone();
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = params.value(&Self::weight_name(prefix, l))?;
            let b = params.value(&Self::bias_name(prefix, l))?;
            let pre = linear_forward(w, b, &x, fan_in, fan_out)?;
            let out = if l == last { pre.clone() } else { pre.map(gelu) };
            layers.push(LayerCache { input: x, pre });
            x = out;
        }
        x.check_finite("mlp_forward output")?;
        Ok((
            x,
            MlpCache {
                dims,
                prefix: prefix.to_string(),
                layers,
            },
        ))
    }

    /// Backward pass: accumulates parameter gradients into `params`' buffers
    /// and returns the gradient with respect to the input.
    pub fn backward(
        &self,
        params: &mut ParamSet,
        cache: &MlpCache,
        grad_output: &Tensor,
    ) -> Result<Tensor> {
        if cache.dims != self.layer_dims() || cache.layers.len() != cache.dims.len() {
            return Err(Error::StaleCache(
                "cache layer layout does not match this spec".into(),
            ));
        }
        if grad_output.shape() != [self.output_dim] {
            return Err(Error::shape(
                "mlp_backward grad_output",
                &[self.output_dim],
                grad_output.shape(),
            ));
        }
        let last = cache.dims.len() - 1;
        let mut grad = grad_output.clone();
        for l in (0..cache.dims.len()).rev() {
            let layer = &cache.layers[l];
            // d(pre): apply the activation derivative except on the output layer.
            let dpre = if l == last {
                grad
            } else {
                let mut d = grad;
                for (dv, &z) in d.data_mut().iter_mut().zip(layer.pre.data()) {
                    *dv *= gelu_prime(z);
                }
                d
            };
            let (fan_in, fan_out) = cache.dims[l];
            let wname = MlpSpec::weight_name(&cache.prefix, l);
            let bname = MlpSpec::bias_name(&cache.prefix, l);
            let grad_input = {
                let w = params.value(&wname)?;
                linear_grad_input(w, &dpre, fan_in, fan_out)
            };
            {
                let gw = params.grad_mut(&wname)?;
                accumulate_weight_grad(gw, &dpre, &layer.input, fan_in, fan_out);
            }
            params.grad_mut(&bname)?.axpy(1.0, &dpre)?;
            grad = grad_input;
        }
        Ok(grad)
    }
}

/// Per-layer activation record.
#[derive(Debug, Clone)]
struct LayerCache {
    input: Tensor,
    pre: Tensor,
}

/// Opaque activation record produced by [`MlpSpec::forward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    dims: Vec<(usize, usize)>,
    prefix: String,
    layers: Vec<LayerCache>,
}

/// `y = W x + b` with `W` stored row-major as `[fan_out, fan_in]`.
fn linear_forward(w: &Tensor, b: &Tensor, x: &Tensor, fan_in: usize, fan_out: usize) -> Result<Tensor> {
    if w.shape() != [fan_out, fan_in] {
        return Err(Error::shape("linear weight", &[fan_out, fan_in], w.shape()));
    }
    let wd = w.data();
    let xd = x.data();
    let mut out = b.data().to_vec();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &wd[i * fan_in..(i + 1) * fan_in];
        *o += row.iter().zip(xd).map(|(wv, xv)| wv * xv).sum::<f64>();
    }
    Tensor::from_vec(&[fan_out], out)
}

/// `dx = Wᵀ dpre`.
fn linear_grad_input(w: &Tensor, dpre: &Tensor, fan_in: usize, fan_out: usize) -> Tensor {
    let wd = w.data();
    let dd = dpre.data();
    let mut dx = vec![0.0; fan_in];
    for i in 0..fan_out {
        let row = &wd[i * fan_in..(i + 1) * fan_in];
        let d = dd[i];
        for (dxj, wv) in dx.iter_mut().zip(row) {
            *dxj += wv * d;
        }
    }
    Tensor::vector(dx).expect("finite by construction")
}

/// `dW += dpre ⊗ input`.
fn accumulate_weight_grad(gw: &mut Tensor, dpre: &Tensor, input: &Tensor, fan_in: usize, fan_out: usize) {
    let gd = gw.data_mut();
    let dd = dpre.data();
    let xd = input.data();
    for i in 0..fan_out {
        let d = dd[i];
        let row = &mut gd[i * fan_in..(i + 1) * fan_in];
        for (g, xv) in row.iter_mut().zip(xd) {
            *g += d * xv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndkit::StreamKey;

    #[test]
    fn gelu_fixed_points() {
        assert_eq!(gelu(0.0), 0.0);
        // Large positive inputs pass through.
        assert!((gelu(10.0) - 10.0).abs() < 1e-6);
        // Large negative inputs vanish.
        assert!(gelu(-10.0).abs() < 1e-6);
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        let h = 1e-6;
        for &x in &[0.5, -1.3, 0.0, 2.7] {
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!(
                (gelu_prime(x) - num).abs() < 1e-7,
                "x={x}: analytic {} vs numeric {num}",
                gelu_prime(x)
            );
        }
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        // One linear layer, W = I, b = 0.
        let spec = MlpSpec::new(3, &[], 3);
        let mut params = ParamSet::new();
        let eye = Tensor::from_vec(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        params.insert("w0", eye).unwrap();
        params.insert("b0", Tensor::zeros(&[3])).unwrap();
        let v = Tensor::vector(vec![0.3, -1.2, 2.0]).unwrap();
        let (out, _) = spec.forward("", &params, &v).unwrap();
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn zero_output_init_yields_zero_output() {
        let spec = MlpSpec::new(4, &[8], 2).with_output_init(OutputInit::Zero);
        let mut params = ParamSet::new();
        let mut rng = StreamKey::root(1).child("init").rng();
        spec.init_into("", &mut params, &mut rng).unwrap();
        let x = Tensor::vector(vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let (out, _) = spec.forward("", &params, &x).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let spec = MlpSpec::new(3, &[], 2);
        let mut params = ParamSet::new();
        let mut rng = StreamKey::root(2).rng();
        spec.init_into("", &mut params, &mut rng).unwrap();
        let x = Tensor::vector(vec![1.0, 2.0]).unwrap();
        assert!(spec.forward("", &params, &x).is_err());
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let spec_a = MlpSpec::new(3, &[4], 2);
        let spec_b = MlpSpec::new(3, &[5], 2);
        let mut pa = ParamSet::new();
        let mut pb = ParamSet::new();
        let mut rng = StreamKey::root(3).rng();
        spec_a.init_into("", &mut pa, &mut rng).unwrap();
        spec_b.init_into("", &mut pb, &mut rng).unwrap();
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap();
        let (_, cache) = spec_a.forward("", &pa, &x).unwrap();
        let g = Tensor::vector(vec![1.0, 1.0]).unwrap();
        assert!(spec_b.backward(&mut pb, &cache, &g).is_err());
    }

    #[test]
    fn linear_layer_weight_grad_is_outer_product() {
        // loss = sum(output) on a single linear layer: dW = 1 ⊗ x, db = 1.
        let spec = MlpSpec::new(2, &[], 3);
        let mut params = ParamSet::new();
        let mut rng = StreamKey::root(4).rng();
        spec.init_into("", &mut params, &mut rng).unwrap();
        let x = Tensor::vector(vec![2.0, -5.0]).unwrap();
        let (_, cache) = spec.forward("", &params, &x).unwrap();
        let ones = Tensor::filled(&[3], 1.0);
        params.zero_grads();
        spec.backward(&mut params, &cache, &ones).unwrap();
        assert_eq!(
            params.grad("w0").unwrap().data(),
            &[2.0, -5.0, 2.0, -5.0, 2.0, -5.0]
        );
        assert_eq!(params.grad("b0").unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_grad_output_gives_zero_grads() {
        let spec = MlpSpec::new(3, &[5, 4], 2);
        let mut params = ParamSet::new();
        let mut rng = StreamKey::root(5).rng();
        spec.init_into("", &mut params, &mut rng).unwrap();
        let x = Tensor::vector(vec![0.1, 0.2, 0.3]).unwrap();
        let (_, cache) = spec.forward("", &params, &x).unwrap();
        params.zero_grads();
        let gin = spec
            .backward(&mut params, &cache, &Tensor::zeros(&[2]))
            .unwrap();
        assert_eq!(params.grad_l2_norm(), 0.0);
        assert_eq!(gin.l2_norm(), 0.0);
    }
}
