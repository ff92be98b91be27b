use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{InitMode, ModelConfig, ModelError};
use crate::layers::{
    maxpool_backward, maxpool_forward, relu_backward, relu_forward, softmax_cross_entropy,
    ConvGrad, ConvLayer, Dropout, DropoutMask, FcGrad, FcLayer, SwitchRecord,
};
use crate::seed::derive_seed;
use crate::tensor::{Real, Tensor};

/// One convolution stage: conv, optional ReLU, optional 2×2 max pool.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStage {
    pub conv: ConvLayer,
    pub relu: bool,
    pub pool: bool,
}

/// Hidden fully connected layer (ReLU + dropout) followed by the class layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub hidden: FcLayer,
    pub output: FcLayer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: Option<ModelConfig>,
    input_shape: [usize; 3],
    stages: Vec<ConvStage>,
    classifier: Option<Classifier>,
}

/// Activations of one conv stage for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct StageTrace {
    pub input: Tensor,
    pub conv_out: Tensor,
    /// After ReLU (equal to `conv_out` when the stage has no ReLU).
    pub activation: Tensor,
    pub pooled: Option<(Tensor, SwitchRecord)>,
}

impl StageTrace {
    pub fn output(&self) -> &Tensor {
        self.pooled.as_ref().map_or(&self.activation, |(t, _)| t)
    }

    pub fn switches(&self) -> Option<&SwitchRecord> {
        self.pooled.as_ref().map(|(_, s)| s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierTrace {
    pub flat: Tensor,
    pub hidden_pre: Tensor,
    pub hidden_act: Tensor,
    /// Hidden activations after dropout (identical to `hidden_act` in
    /// inference mode).
    pub dropped: Tensor,
    pub logits: Tensor,
}

/// Every intermediate activation and pooling switch of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub image_id: Option<usize>,
    pub stages: Vec<StageTrace>,
    pub classifier: Option<ClassifierTrace>,
}

impl ForwardTrace {
    pub fn input(&self) -> &Tensor {
        &self.stages[0].input
    }

    pub fn logits(&self) -> Option<&Tensor> {
        self.classifier.as_ref().map(|c| &c.logits)
    }
}

/// Parameter gradients for a whole network, in the same order as
/// [`Network::parameters`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub stages: Vec<ConvGrad>,
    pub classifier: Option<(FcGrad, FcGrad)>,
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for g in &self.stages {
            out.push(&g.kernels);
            out.push(&g.bias);
        }
        if let Some((h, o)) = &self.classifier {
            out.extend([&h.weights, &h.bias, &o.weights, &o.bias]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for g in &mut self.stages {
            out.push(&mut g.kernels);
            out.push(&mut g.bias);
        }
        if let Some((h, o)) = &mut self.classifier {
            out.extend([&mut h.weights, &mut h.bias, &mut o.weights, &mut o.bias]);
        }
        out
    }

    /// `self += other`, element by element.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(1.0, b).expect("gradient shapes match");
        }
    }
}

impl Network {
    /// The expression network: `conv → ReLU → pool` per entry of
    /// `conv_channels`, then `fc(fc_hidden) → ReLU → dropout → fc(num_classes)`.
    pub fn build(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0x1417]));
        let std_for = |fan_in: usize| match config.init_mode {
            InitMode::Paper => 1.0,
            InitMode::Scaled => 1.0 / (fan_in as f64).sqrt(),
        };
        let mut stages = Vec::new();
        let mut in_ch = 1;
        for &out_ch in &config.conv_channels {
            let mut conv = ConvLayer::new(in_ch, out_ch, config.kernel_size)?;
            conv.init_gaussian(std_for(conv.fan_in()), &mut rng);
            stages.push(ConvStage {
                conv,
                relu: true,
                pool: true,
            });
            in_ch = out_ch;
        }
        let extent = config.feature_extent();
        let flat = in_ch * extent * extent;
        let mut hidden = FcLayer::new(flat, config.fc_hidden)?;
        hidden.init_gaussian(std_for(flat), &mut rng);
        let mut output = FcLayer::new(config.fc_hidden, config.num_classes)?;
        output.init_gaussian(std_for(config.fc_hidden), &mut rng);
        Ok(Self {
            config: Some(config.clone()),
            input_shape: [1, config.input_size, config.input_size],
            stages,
            classifier: Some(Classifier { hidden, output }),
        })
    }

    /// A network assembled from explicit stages, e.g. toy nets for testing.
    /// The classifier input size must match the flattened last stage output.
    pub fn from_parts(
        input_shape: [usize; 3],
        stages: Vec<ConvStage>,
        classifier: Option<Classifier>,
    ) -> Result<Self, ModelError> {
        let net = Self {
            config: None,
            input_shape,
            stages,
            classifier,
        };
        let mut shape = input_shape;
        for (i, s) in net.stages.iter().enumerate() {
            if s.conv.in_channels() != shape[0] {
                return Err(ModelError::Config(format!(
                    "stage {} expects {} channels, receives {}",
                    i + 1,
                    s.conv.in_channels(),
                    shape[0]
                )));
            }
            shape = net.stage_output_shape(i, shape);
        }
        if let Some(c) = &net.classifier {
            let flat: usize = shape.iter().product();
            if c.hidden.in_features() != flat || c.output.in_features() != c.hidden.out_features() {
                return Err(ModelError::Config("classifier sizes do not chain".into()));
            }
        }
        Ok(net)
    }

    fn stage_output_shape(&self, i: usize, [_, h, w]: [usize; 3]) -> [usize; 3] {
        let s = &self.stages[i];
        let c = s.conv.out_channels();
        if s.pool {
            [c, h.div_ceil(2), w.div_ceil(2)]
        } else {
            [c, h, w]
        }
    }

    pub fn config(&self) -> Option<&ModelConfig> {
        self.config.as_ref()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn stages(&self) -> &[ConvStage] {
        &self.stages
    }

    pub fn classifier(&self) -> Option<&Classifier> {
        self.classifier.as_ref()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.classifier.as_ref().map(|c| c.output.out_features())
    }

    /// Shape of the activation at the end of stage `stage` (1-based), before
    /// (`pooled = false`) or after pooling.
    pub fn activation_shape(&self, stage: usize, pooled: bool) -> Option<[usize; 3]> {
        if stage == 0 || stage > self.stages.len() {
            return None;
        }
        let mut shape = self.input_shape;
        for i in 0..stage - 1 {
            shape = self.stage_output_shape(i, shape);
        }
        let c = self.stages[stage - 1].conv.out_channels();
        shape[0] = c;
        if pooled && self.stages[stage - 1].pool {
            Some(self.stage_output_shape(stage - 1, [c, shape[1], shape[2]]))
        } else {
            Some(shape)
        }
    }

    /// Named parameter tensors in checkpoint order.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            out.push((format!("conv{}.kernels", i + 1), &s.conv.kernels));
            out.push((format!("conv{}.bias", i + 1), &s.conv.bias));
        }
        if let Some(c) = &self.classifier {
            out.push(("fc1.weights".into(), &c.hidden.weights));
            out.push(("fc1.bias".into(), &c.hidden.bias));
            out.push(("fc2.weights".into(), &c.output.weights));
            out.push(("fc2.bias".into(), &c.output.bias));
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            out.push(&mut s.conv.kernels);
            out.push(&mut s.conv.bias);
        }
        if let Some(c) = &mut self.classifier {
            out.extend([
                &mut c.hidden.weights,
                &mut c.hidden.bias,
                &mut c.output.weights,
                &mut c.output.bias,
            ]);
        }
        out
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            stages: self.stages.iter().map(|s| s.conv.zero_grad()).collect(),
            classifier: self
                .classifier
                .as_ref()
                .map(|c| (c.hidden.zero_grad(), c.output.zero_grad())),
        }
    }

    fn check_input(&self, image: &Tensor) -> Result<(), ModelError> {
        if image.shape() != self.input_shape {
            return Err(ModelError::InputShape {
                expected: self.input_shape.to_vec(),
                found: image.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn run_stage(&self, stage: &ConvStage, input: Tensor) -> Result<StageTrace, ModelError> {
        let conv_out = stage.conv.forward(&input)?;
        let activation = if stage.relu {
            relu_forward(&conv_out)
        } else {
            conv_out.clone()
        };
        let pooled = if stage.pool {
            Some(maxpool_forward(&activation)?)
        } else {
            None
        };
        Ok(StageTrace {
            input,
            conv_out,
            activation,
            pooled,
        })
    }

    fn forward_impl(
        &self,
        image: &Tensor,
        dropout: Option<(f64, &mut dyn rand::RngCore)>,
    ) -> Result<(ForwardTrace, Option<DropoutMask>), ModelError> {
        self.check_input(image)?;
        let mut stages: Vec<StageTrace> = Vec::with_capacity(self.stages.len());
        let mut x = image.clone();
        for stage in &self.stages {
            let trace = self.run_stage(stage, x)?;
            x = trace.output().clone();
            stages.push(trace);
        }
        let mut mask = None;
        let classifier = match &self.classifier {
            None => None,
            Some(c) => {
                let flat = x.reshape(&[c.hidden.in_features()])?;
                let hidden_pre = c.hidden.forward(&flat)?;
                let hidden_act = relu_forward(&hidden_pre);
                let dropped = match dropout {
                    Some((p, rng)) if p > 0.0 => {
                        let (y, m) = Dropout { p }.forward_train(&hidden_act, rng);
                        mask = Some(m);
                        y
                    }
                    _ => hidden_act.clone(),
                };
                let logits = c.output.forward(&dropped)?;
                Some(ClassifierTrace {
                    flat,
                    hidden_pre,
                    hidden_act,
                    dropped,
                    logits,
                })
            }
        };
        Ok((
            ForwardTrace {
                image_id: None,
                stages,
                classifier,
            },
            mask,
        ))
    }

    /// Inference-mode forward pass that keeps every activation and switch.
    pub fn forward_trace(&self, image: &Tensor) -> Result<ForwardTrace, ModelError> {
        Ok(self.forward_impl(image, None)?.0)
    }

    /// Inference-mode conv features: the output of stage `stage` (1-based),
    /// after pooling when `pooled`.
    pub fn features(
        &self,
        image: &Tensor,
        stage: usize,
        pooled: bool,
    ) -> Result<Tensor, ModelError> {
        self.check_input(image)?;
        if stage == 0 || stage > self.stages.len() {
            return Err(ModelError::Config(format!(
                "stage {stage} outside 1..={}",
                self.stages.len()
            )));
        }
        let mut x = image.clone();
        for s in &self.stages[..stage - 1] {
            x = self.run_stage(s, x)?.output().clone();
        }
        let last = self.run_stage(&self.stages[stage - 1], x)?;
        Ok(if pooled {
            last.output().clone()
        } else {
            last.activation
        })
    }

    pub fn predict(&self, image: &Tensor) -> Result<usize, ModelError> {
        let trace = self.forward_trace(image)?;
        let logits = trace
            .logits()
            .ok_or_else(|| ModelError::Config("network has no classifier".into()))?;
        Ok(logits.argmax())
    }

    /// Training-mode loss and parameter gradients for one labelled image.
    /// Returns `(loss, predicted_class)`.
    pub fn loss_and_gradients(
        &self,
        image: &Tensor,
        label: usize,
        dropout_p: f64,
        rng: &mut dyn rand::RngCore,
        grads: &mut Gradients,
    ) -> Result<(f64, usize), ModelError> {
        let (trace, mask) = self.forward_impl(image, Some((dropout_p, rng)))?;
        let ct = trace
            .classifier
            .as_ref()
            .ok_or_else(|| ModelError::Config("network has no classifier".into()))?;
        let (loss, grad_logits) = softmax_cross_entropy(&ct.logits, label)?;
        let predicted = ct.logits.argmax();
        self.backward(&trace, mask.as_ref(), dropout_p, &grad_logits, grads)?;
        Ok((loss, predicted))
    }

    /// Backpropagates `grad_logits` through a training trace.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        mask: Option<&DropoutMask>,
        dropout_p: f64,
        grad_logits: &Tensor,
        grads: &mut Gradients,
    ) -> Result<(), ModelError> {
        let c = self
            .classifier
            .as_ref()
            .ok_or_else(|| ModelError::Config("network has no classifier".into()))?;
        let ct = trace.classifier.as_ref().expect("classifier trace");
        let (gh, go) = grads.classifier.as_mut().expect("classifier gradients");
        let mut g = c.output.backward(grad_logits, &ct.dropped, go)?;
        if let Some(m) = mask {
            g = Dropout { p: dropout_p }.backward(&g, m)?;
        }
        g = relu_backward(&g, &ct.hidden_pre)?;
        g = c.hidden.backward(&g, &ct.flat, gh)?;
        for ((stage, st), sg) in self
            .stages
            .iter()
            .zip(&trace.stages)
            .zip(grads.stages.iter_mut())
            .rev()
        {
            g = g.reshape(st.output().shape())?;
            if let Some((_, sw)) = &st.pooled {
                g = maxpool_backward(&g, sw)?;
            }
            if stage.relu {
                g = relu_backward(&g, &st.conv_out)?;
            }
            g = stage.conv.backward(&g, &st.input, sg)?;
        }
        Ok(())
    }

    /// Momentum SGD with L2 weight decay on every parameter:
    /// `v ← μv − lr(g + λw)`, `w ← w + v`.
    pub fn sgd_step(
        &mut self,
        grads: &Gradients,
        velocity: &mut Gradients,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) {
        let (lr, mu, wd) = (lr as Real, momentum as Real, weight_decay as Real);
        for ((w, g), v) in self
            .parameters_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(velocity.tensors_mut())
        {
            for ((w, &g), v) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *v = mu * *v - lr * (g + wd * *w);
                *w += *v;
            }
        }
    }
}

/// Random generator for a dropout stream.
pub(crate) fn dropout_rng(seed: u64, epoch: usize, sample: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xd0, epoch as u64, sample as u64]))
}
