//! Feed-forward networks with exact reverse-mode gradients and SGD.
//!
//! Weights are stored `(in_dim, out_dim)` so a batch forward is `X * W + b`.
//! The backward pass mirrors parameter shapes and also returns the gradient
//! with respect to the inputs, which is what a split protocol sends back to
//! the clients that produced the embeddings.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
    /// Softmax over the row; only valid on the final layer.
    SoftmaxOutput,
}

/// Training loss. Cross-entropy is the training default; squared error exists
/// for unit testing against hand-computed derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    SquaredError,
}

#[derive(Debug, Clone)]
pub struct Layer {
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::config(format!(
                "bias length {} does not match layer width {}",
                bias.len(),
                weights.cols()
            )));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    #[inline]
    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    #[inline]
    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// A stack of dense layers plus the seed its weights were drawn from.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Layer>,
    seed: u64,
}

/// Per-layer parameter gradients.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Result of a backward pass: parameter gradients plus the gradient at the
/// model input.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub layers: Vec<LayerGrads>,
    pub inputs: Matrix,
}

/// Activations retained by a forward pass. `activations[0]` is the input,
/// `activations[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    activations: Vec<Matrix>,
}

impl ForwardTape {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("tape holds the input")
    }

    pub fn layer_input(&self, layer: usize) -> &Matrix {
        &self.activations[layer]
    }
}

/// What drives a backward pass.
pub enum BackwardSignal<'a> {
    /// Gradient of the loss with respect to the model output (used by bottom
    /// models receiving server gradients). Invalid on softmax heads.
    OutputGradient(&'a Matrix),
    /// Cross-entropy head over a softmax output layer. `row_scales` lets the
    /// caller re-weight (or zero) individual rows; `None` means `1/rows`.
    CrossEntropy {
        labels: &'a [usize],
        row_scales: Option<&'a [f64]>,
    },
    /// Squared-error head: loss is the sum over all entries of
    /// `(output - target)^2`.
    SquaredError { targets: &'a Matrix },
}

impl Mlp {
    /// Builds a network with the given layer dimensions, e.g. `[8, 128, 16]`
    /// for one hidden layer. Relu layers get He-uniform weights, other layers
    /// Xavier-uniform; biases start at zero.
    pub fn new(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("a network needs at least one layer"));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::config(format!(
                "{} activations for {} layers",
                activations.len(),
                dims.len() - 1
            )));
        }
        if dims.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        let mut stream = rng::stream(seed, rng::tags::MODEL_INIT, 0, 0);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, window) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (window[0], window[1]);
            // He keeps relu activations at a stable scale through deep
            // stacks; Xavier suits the linear/softmax layers.
            let limit = match activations[i] {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let weights = Matrix::from_fn(fan_in, fan_out, |_, _| stream.gen_range(-limit..limit));
            layers.push(Layer::new(weights, vec![0.0; fan_out], activations[i])?);
        }
        Self::from_layers(layers, seed)
    }

    /// Builds a network from explicit layers, validating the dimension chain
    /// and the softmax placement rule.
    pub fn from_layers(layers: Vec<Layer>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("a network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::config(format!(
                    "layer output width {} does not chain into input width {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        let last = layers.len() - 1;
        if layers[..last]
            .iter()
            .any(|l| l.activation() == Activation::SoftmaxOutput)
        {
            return Err(Error::config(
                "softmax-output is only valid on the final layer",
            ));
        }
        Ok(Self { layers, seed })
    }

    #[inline]
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    #[inline]
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Batch forward pass retaining every intermediate activation.
    pub fn forward(&self, inputs: &Matrix) -> Result<ForwardTape> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::config(format!(
                "input width {} does not match first-layer width {}",
                inputs.cols(),
                self.input_dim()
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(inputs.clone());
        for layer in &self.layers {
            let mut z = activations.last().unwrap().matmul(&layer.weights);
            for r in 0..z.rows() {
                let row = z.row_mut(r);
                for (v, b) in row.iter_mut().zip(&layer.bias) {
                    *v += b;
                }
                match layer.activation {
                    Activation::Relu => {
                        for v in row.iter_mut() {
                            if *v < 0.0 {
                                *v = 0.0;
                            }
                        }
                    }
                    Activation::Identity => {}
                    Activation::SoftmaxOutput => softmax_row(row),
                }
            }
            activations.push(z);
        }
        Ok(ForwardTape { activations })
    }

    /// Reverse-mode gradients for every parameter plus the input gradient.
    pub fn backward(&self, tape: &ForwardTape, signal: BackwardSignal) -> Result<Backprop> {
        if tape.activations.len() != self.layers.len() + 1 {
            return Err(Error::config("tape does not match this network"));
        }
        let output = tape.output();
        let rows = output.rows();
        let last = self.layers.len() - 1;
        let head_activation = self.layers[last].activation;

        // Gradient with respect to the final layer's pre-activation.
        let mut delta = match signal {
            BackwardSignal::CrossEntropy { labels, row_scales } => {
                if head_activation != Activation::SoftmaxOutput {
                    return Err(Error::config(
                        "cross-entropy head requires a softmax output layer",
                    ));
                }
                if labels.len() != rows {
                    return Err(Error::config("label count does not match batch rows"));
                }
                if let Some(scales) = row_scales {
                    if scales.len() != rows {
                        return Err(Error::config("row_scales length does not match batch"));
                    }
                }
                let mut d = Matrix::zeros(rows, output.cols());
                for r in 0..rows {
                    if labels[r] >= output.cols() {
                        return Err(Error::config(format!(
                            "label {} out of range for {} outputs",
                            labels[r],
                            output.cols()
                        )));
                    }
                    let scale = row_scales.map_or(1.0 / rows as f64, |s| s[r]);
                    if scale == 0.0 {
                        continue;
                    }
                    let probs = output.row(r);
                    let d_row = d.row_mut(r);
                    for (j, &p) in probs.iter().enumerate() {
                        d_row[j] = scale * (p - if j == labels[r] { 1.0 } else { 0.0 });
                    }
                }
                d
            }
            BackwardSignal::SquaredError { targets } => {
                if targets.rows() != rows || targets.cols() != output.cols() {
                    return Err(Error::config("target shape does not match output"));
                }
                if head_activation == Activation::SoftmaxOutput {
                    return Err(Error::config(
                        "squared-error head is not defined over a softmax output",
                    ));
                }
                let mut d = Matrix::zeros(rows, output.cols());
                for r in 0..rows {
                    let (o, t) = (output.row(r), targets.row(r));
                    let d_row = d.row_mut(r);
                    for j in 0..o.len() {
                        d_row[j] = 2.0 * (o[j] - t[j]);
                    }
                }
                apply_activation_grad(&mut d, output, head_activation);
                d
            }
            BackwardSignal::OutputGradient(upstream) => {
                if head_activation == Activation::SoftmaxOutput {
                    return Err(Error::config(
                        "output-gradient signal is not supported on softmax heads",
                    ));
                }
                if upstream.rows() != rows || upstream.cols() != output.cols() {
                    return Err(Error::config("upstream gradient shape mismatch"));
                }
                let mut d = upstream.clone();
                apply_activation_grad(&mut d, output, head_activation);
                d
            }
        };

        let mut layer_grads: Vec<LayerGrads> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let layer_in = tape.layer_input(l);
            let d_weights = layer_in.matmul_tn(&delta);
            let mut d_bias = vec![0.0; self.layers[l].out_dim()];
            for r in 0..delta.rows() {
                for (b, &d) in d_bias.iter_mut().zip(delta.row(r)) {
                    *b += d;
                }
            }
            let d_input = delta.matmul_nt(&self.layers[l].weights);
            layer_grads.push(LayerGrads {
                weights: d_weights,
                bias: d_bias,
            });
            delta = d_input;
            if l > 0 {
                apply_activation_grad(
                    &mut delta,
                    tape.layer_input(l),
                    self.layers[l - 1].activation,
                );
            }
        }
        layer_grads.reverse();
        Ok(Backprop {
            layers: layer_grads,
            inputs: delta,
        })
    }

    /// `w <- w - lr * g` for every parameter. Rejects non-finite gradients so
    /// a diverged run aborts with a diagnostic instead of poisoning the model.
    pub fn sgd_step(&mut self, grads: &[LayerGrads], learning_rate: f64) -> Result<()> {
        if grads.len() != self.layers.len() {
            return Err(Error::config("gradient count does not match layers"));
        }
        if !learning_rate.is_finite() || learning_rate < 0.0 {
            return Err(Error::config("learning rate must be finite and >= 0"));
        }
        for (layer, g) in self.layers.iter().zip(grads) {
            if g.weights.rows() != layer.in_dim()
                || g.weights.cols() != layer.out_dim()
                || g.bias.len() != layer.out_dim()
            {
                return Err(Error::config("gradient shape does not match layer"));
            }
            if !g.weights.is_finite() || !g.bias.iter().all(|v| v.is_finite()) {
                return Err(Error::Training(
                    "non-finite gradient encountered; aborting update".into(),
                ));
            }
        }
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            let w = layer.weights.data_mut();
            for (v, &d) in w.iter_mut().zip(g.weights.data()) {
                *v -= learning_rate * d;
            }
            for (b, &d) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= learning_rate * d;
            }
        }
        Ok(())
    }
}

/// In-place multiply of `delta` by the activation derivative, taking the
/// derivative from the post-activation values. The relu subgradient at
/// exactly zero is zero.
fn apply_activation_grad(delta: &mut Matrix, post: &Matrix, activation: Activation) {
    match activation {
        Activation::Identity => {}
        Activation::Relu => {
            for (d, &y) in delta.data_mut().iter_mut().zip(post.data()) {
                if y <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        Activation::SoftmaxOutput => {
            unreachable!("softmax never feeds a downstream layer")
        }
    }
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Mean cross-entropy over the selected rows (all rows when `mask` is None).
/// Probabilities are clamped away from zero so the loss stays finite.
pub fn cross_entropy_loss(probs: &Matrix, labels: &[usize], mask: Option<&[bool]>) -> Result<f64> {
    if labels.len() != probs.rows() {
        return Err(Error::config("label count does not match rows"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..probs.rows() {
        if mask.is_none_or(|m| m[r]) {
            let p = probs.get(r, labels[r]).max(1e-300);
            total -= p.ln();
            count += 1;
        }
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(total / count as f64)
}

/// Sum over all entries of `(output - target)^2`.
pub fn squared_error_loss(output: &Matrix, targets: &Matrix) -> f64 {
    output
        .data()
        .iter()
        .zip(targets.data())
        .map(|(o, t)| (o - t) * (o - t))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_layer(weight: f64, bias: f64, activation: Activation) -> Mlp {
        let layer = Layer::new(
            Matrix::new(1, 1, vec![weight]).unwrap(),
            vec![bias],
            activation,
        )
        .unwrap();
        Mlp::from_layers(vec![layer], 0).unwrap()
    }

    #[test]
    fn identity_layer_is_a_linear_map() {
        let mlp = single_layer(2.0, 0.0, Activation::Identity);
        let out = mlp.forward(&Matrix::new(1, 1, vec![3.0]).unwrap()).unwrap();
        assert_eq!(out.output().get(0, 0), 6.0);
    }

    #[test]
    fn relu_clamps_negatives() {
        let mlp = single_layer(1.0, 0.0, Activation::Relu);
        let out = mlp
            .forward(&Matrix::new(1, 1, vec![-5.0]).unwrap())
            .unwrap();
        assert_eq!(out.output().get(0, 0), 0.0);
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let mlp = single_layer(1.0, 0.0, Activation::Identity);
        assert!(mlp.forward(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn forward_matches_straight_line_reevaluation() {
        // Oracle: a naive re-implementation of the same weights, no tape.
        let mlp = Mlp::new(
            &[4, 6, 5, 3],
            &[Activation::Relu, Activation::Relu, Activation::Identity],
            7,
        )
        .unwrap();
        let input = Matrix::from_fn(8, 4, |r, c| ((r * 13 + c * 5) % 11) as f64 * 0.1 - 0.5);
        let got = mlp.forward(&input).unwrap();

        for r in 0..input.rows() {
            let mut acts: Vec<f64> = input.row(r).to_vec();
            for layer in mlp.layers() {
                let mut next = vec![0.0; layer.out_dim()];
                for (j, n) in next.iter_mut().enumerate() {
                    let mut sum = layer.bias()[j];
                    for (i, &x) in acts.iter().enumerate() {
                        sum += x * layer.weights().get(i, j);
                    }
                    *n = match layer.activation() {
                        Activation::Relu => sum.max(0.0),
                        Activation::Identity => sum,
                        Activation::SoftmaxOutput => unreachable!(),
                    };
                }
                acts = next;
            }
            for (j, &expected) in acts.iter().enumerate() {
                let actual = got.output().get(r, j);
                assert!(
                    (actual - expected).abs() < 1e-12,
                    "row {} col {}: {} vs {}",
                    r,
                    j,
                    actual,
                    expected
                );
            }
        }
    }

    #[test]
    fn squared_error_gradient_matches_hand_derivative() {
        // w = 2, x = 3, target = 5: prediction 6, dL/dw = 2*(6-5)*3 = 6.
        let mlp = single_layer(2.0, 0.0, Activation::Identity);
        let tape = mlp.forward(&Matrix::new(1, 1, vec![3.0]).unwrap()).unwrap();
        let targets = Matrix::new(1, 1, vec![5.0]).unwrap();
        let grads = mlp
            .backward(&tape, BackwardSignal::SquaredError { targets: &targets })
            .unwrap();
        assert_eq!(grads.layers[0].weights.get(0, 0), 6.0);
        assert_eq!(grads.layers[0].bias[0], 2.0);
        assert_eq!(grads.inputs.get(0, 0), 4.0); // 2*(6-5)*w = 4
    }

    #[test]
    fn zero_input_gives_zero_first_layer_weight_gradient() {
        let mlp = Mlp::new(&[3, 4, 2], &[Activation::Relu, Activation::Identity], 3).unwrap();
        let tape = mlp.forward(&Matrix::zeros(5, 3)).unwrap();
        let targets = Matrix::from_fn(5, 2, |r, c| (r + c) as f64);
        let grads = mlp
            .backward(&tape, BackwardSignal::SquaredError { targets: &targets })
            .unwrap();
        assert!(grads.layers[0].weights.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn sgd_update_rule() {
        let mut mlp = single_layer(1.0, 0.0, Activation::Identity);
        let grads = vec![LayerGrads {
            weights: Matrix::new(1, 1, vec![0.5]).unwrap(),
            bias: vec![0.0],
        }];
        mlp.sgd_step(&grads, 0.01).unwrap();
        assert_eq!(mlp.layers()[0].weights().get(0, 0), 0.995);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut mlp = single_layer(1.25, 0.5, Activation::Identity);
        let before = mlp.layers()[0].weights().clone();
        let grads = vec![LayerGrads {
            weights: Matrix::new(1, 1, vec![123.0]).unwrap(),
            bias: vec![-4.0],
        }];
        mlp.sgd_step(&grads, 0.0).unwrap();
        assert_eq!(mlp.layers()[0].weights().data(), before.data());
        assert_eq!(mlp.layers()[0].bias(), &[0.5]);
    }

    #[test]
    fn two_updates_equal_one_double_rate_update() {
        let grads = vec![LayerGrads {
            weights: Matrix::new(1, 1, vec![0.3]).unwrap(),
            bias: vec![0.7],
        }];
        let mut twice = single_layer(1.0, 0.0, Activation::Identity);
        twice.sgd_step(&grads, 0.01).unwrap();
        twice.sgd_step(&grads, 0.01).unwrap();
        let mut once = single_layer(1.0, 0.0, Activation::Identity);
        once.sgd_step(&grads, 0.02).unwrap();
        let a = twice.layers()[0].weights().get(0, 0);
        let b = once.layers()[0].weights().get(0, 0);
        assert!((a - b).abs() < 1e-15, "{} vs {}", a, b);
    }

    #[test]
    fn sgd_rejects_non_finite_gradients() {
        let mut mlp = single_layer(1.0, 0.0, Activation::Identity);
        let mut bad = Matrix::zeros(1, 1);
        bad.data_mut()[0] = f64::NAN;
        let grads = vec![LayerGrads {
            weights: bad,
            bias: vec![0.0],
        }];
        assert!(matches!(
            mlp.sgd_step(&grads, 0.01),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn softmax_only_allowed_on_final_layer() {
        let l1 = Layer::new(Matrix::zeros(2, 2), vec![0.0; 2], Activation::SoftmaxOutput).unwrap();
        let l2 = Layer::new(Matrix::zeros(2, 2), vec![0.0; 2], Activation::Identity).unwrap();
        assert!(Mlp::from_layers(vec![l1, l2], 0).is_err());
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = Mlp::new(&[3, 5, 2], &[Activation::Relu, Activation::Identity], 9).unwrap();
        let b = Mlp::new(&[3, 5, 2], &[Activation::Relu, Activation::Identity], 9).unwrap();
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            assert_eq!(la.weights().data(), lb.weights().data());
        }
        let c = Mlp::new(&[3, 5, 2], &[Activation::Relu, Activation::Identity], 10).unwrap();
        assert_ne!(
            a.layers()[0].weights().data(),
            c.layers()[0].weights().data()
        );
    }

    #[test]
    fn cross_entropy_backward_matches_finite_differences() {
        // Small softmax classifier; perturb every parameter.
        let mut mlp = Mlp::new(
            &[3, 4, 3],
            &[Activation::Relu, Activation::SoftmaxOutput],
            11,
        )
        .unwrap();
        let input = Matrix::from_fn(4, 3, |r, c| ((r * 7 + c * 3) % 5) as f64 * 0.3 - 0.6);
        let labels = [0usize, 2, 1, 1];

        let tape = mlp.forward(&input).unwrap();
        let grads = mlp
            .backward(
                &tape,
                BackwardSignal::CrossEntropy {
                    labels: &labels,
                    row_scales: None,
                },
            )
            .unwrap();

        let eps = 1e-5;
        for l in 0..mlp.layers().len() {
            for idx in 0..mlp.layers()[l].weights().data().len() {
                let orig = mlp.layers()[l].weights().data()[idx];
                mlp.layers_mut()[l].weights_mut().data_mut()[idx] = orig + eps;
                let up = cross_entropy_loss(mlp.forward(&input).unwrap().output(), &labels, None)
                    .unwrap();
                mlp.layers_mut()[l].weights_mut().data_mut()[idx] = orig - eps;
                let down = cross_entropy_loss(mlp.forward(&input).unwrap().output(), &labels, None)
                    .unwrap();
                mlp.layers_mut()[l].weights_mut().data_mut()[idx] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = grads.layers[l].weights.data()[idx];
                assert!(
                    (numeric - analytic).abs() < 1e-6 + 1e-4 * numeric.abs().max(analytic.abs()),
                    "layer {} idx {}: analytic {} vs numeric {}",
                    l,
                    idx,
                    analytic,
                    numeric
                );
            }
        }
    }
}
