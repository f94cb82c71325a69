//! Builds a runnable network from a [`NetSpec`] and drives the
//! forward/backward passes across its layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::nn::{
    concat_channels, split_channels, Conv2d, Dense, Dropout, Element, GlobalAvgPool, LayerParams,
    Lrn, MaxPool2d, NnError, Phase, Relu, Tensor,
};

use super::spec::{ChainDims, InceptionBlockSpec, LayerSpec, NetSpec, SpecError};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// The four parallel branches of one inception block, joined by a channel
/// concat. Every convolution is followed by a ReLU.
pub struct InceptionBlock<E: Element> {
    branch_channels: [usize; 4],
    conv1: Conv2d<E>,
    relu1: Relu<E>,
    reduce3: Conv2d<E>,
    relu3a: Relu<E>,
    conv3: Conv2d<E>,
    relu3b: Relu<E>,
    reduce5: Conv2d<E>,
    relu5a: Relu<E>,
    conv5: Conv2d<E>,
    relu5b: Relu<E>,
    pool: MaxPool2d<E>,
    proj: Conv2d<E>,
    relu_proj: Relu<E>,
}

impl<E: Element> InceptionBlock<E> {
    fn build(spec: &InceptionBlockSpec, in_channels: usize, init: &mut Init) -> Result<Self, NnError> {
        Ok(Self {
            branch_channels: [spec.conv1, spec.conv3, spec.conv5, spec.pool_proj],
            conv1: init.conv(in_channels, spec.conv1, 1, 1, 0)?,
            relu1: Relu::new(),
            reduce3: init.conv(in_channels, spec.reduce3, 1, 1, 0)?,
            relu3a: Relu::new(),
            conv3: init.conv(spec.reduce3, spec.conv3, 3, 1, 1)?,
            relu3b: Relu::new(),
            reduce5: init.conv(in_channels, spec.reduce5, 1, 1, 0)?,
            relu5a: Relu::new(),
            conv5: init.conv(spec.reduce5, spec.conv5, 5, 1, 2)?,
            relu5b: Relu::new(),
            pool: MaxPool2d::new(3, 1, 1)?,
            proj: init.conv(in_channels, spec.pool_proj, 1, 1, 0)?,
            relu_proj: Relu::new(),
        })
    }

    fn forward(&mut self, input: &Tensor<E>) -> Result<Tensor<E>, NnError> {
        let y1 = self.relu1.forward(&self.conv1.forward(input)?);
        let y3 = {
            let r = self.relu3a.forward(&self.reduce3.forward(input)?);
            self.relu3b.forward(&self.conv3.forward(&r)?)
        };
        let y5 = {
            let r = self.relu5a.forward(&self.reduce5.forward(input)?);
            self.relu5b.forward(&self.conv5.forward(&r)?)
        };
        let yp = {
            let p = self.pool.forward(input)?;
            self.relu_proj.forward(&self.proj.forward(&p)?)
        };
        concat_channels(&[&y1, &y3, &y5, &yp])
    }

    fn backward(&mut self, grad_out: &Tensor<E>) -> Result<Tensor<E>, NnError> {
        let parts = split_channels(grad_out, &self.branch_channels)?;
        let g1 = self.conv1.backward(&self.relu1.backward(&parts[0])?, true)?;
        let g3 = {
            let g = self.conv3.backward(&self.relu3b.backward(&parts[1])?, true)?;
            self.reduce3.backward(&self.relu3a.backward(&g)?, true)?
        };
        let g5 = {
            let g = self.conv5.backward(&self.relu5b.backward(&parts[2])?, true)?;
            self.reduce5.backward(&self.relu5a.backward(&g)?, true)?
        };
        let gp = {
            let g = self.proj.backward(&self.relu_proj.backward(&parts[3])?, true)?;
            self.pool.backward(&g)?
        };
        let mut total = g1;
        for other in [&g3, &g5, &gp] {
            for (a, b) in total.data_mut().iter_mut().zip(other.data()) {
                *a += *b;
            }
        }
        Ok(total)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&LayerParams<E>)) {
        f(&self.conv1.params);
        f(&self.reduce3.params);
        f(&self.conv3.params);
        f(&self.reduce5.params);
        f(&self.conv5.params);
        f(&self.proj.params);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut LayerParams<E>)) {
        f(&mut self.conv1.params);
        f(&mut self.reduce3.params);
        f(&mut self.conv3.params);
        f(&mut self.reduce5.params);
        f(&mut self.conv5.params);
        f(&mut self.proj.params);
    }
}

enum Node<E: Element> {
    Conv(Conv2d<E>),
    Pool(MaxPool2d<E>),
    Relu(Relu<E>),
    Lrn(Lrn<E>),
    Dense(Dense<E>),
    Dropout(Dropout<E>),
    GlobalAvgPool(GlobalAvgPool<E>),
    Inception(Box<InceptionBlock<E>>),
}

/// Weight initializer: zero-mean Gaussian with std `sqrt(2 / fan_in)`
/// (ReLU-oriented), biases zero. When `rng` is absent all parameters start
/// at zero, for nets about to be overwritten by checkpoint blobs.
struct Init {
    rng: Option<ChaCha8Rng>,
}

impl Init {
    fn gaussian<E: Element>(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor<E> {
        match &mut self.rng {
            None => Tensor::zeros(shape),
            Some(rng) => {
                let std = (2.0 / fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("std is finite and positive");
                Tensor::from_fn(shape, |_| E::from_f64(normal.sample(rng)))
            }
        }
    }

    fn conv<E: Element>(
        &mut self,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Conv2d<E>, NnError> {
        let weights = self.gaussian(vec![cout, cin, k, k], cin * k * k);
        let bias = Tensor::zeros(vec![cout]);
        Conv2d::new(LayerParams::new(weights, bias), stride, pad)
    }

    fn dense<E: Element>(&mut self, d: usize, m: usize) -> Result<Dense<E>, NnError> {
        let weights = self.gaussian(vec![m, d], d);
        let bias = Tensor::zeros(vec![m]);
        Dense::new(LayerParams::new(weights, bias))
    }

    fn dropout_seed(&mut self) -> u64 {
        match &mut self.rng {
            None => 0,
            Some(rng) => rng.gen(),
        }
    }
}

pub struct Network<E: Element = f32> {
    spec: NetSpec,
    nodes: Vec<Node<E>>,
    /// Training-set mean pixel (on the 0..1 scale) used by preprocessing.
    mean_pixel: Option<f64>,
}

impl<E: Element> Network<E> {
    /// Validate the spec and build a freshly initialized network.
    pub fn build(spec: &NetSpec, seed: u64) -> Result<Self, NetError> {
        Self::construct(spec, Init { rng: Some(ChaCha8Rng::seed_from_u64(seed)) })
    }

    /// Build with all parameters zeroed (cheap target for checkpoint loads).
    pub fn build_zeroed(spec: &NetSpec) -> Result<Self, NetError> {
        Self::construct(spec, Init { rng: None })
    }

    fn construct(spec: &NetSpec, mut init: Init) -> Result<Self, NetError> {
        let trace = spec.validate()?;
        let mut nodes = Vec::with_capacity(spec.layers.len());
        let mut dims = ChainDims::Chw(spec.input);
        for (layer, out_dims) in spec.layers.iter().zip(&trace) {
            let node = match layer {
                LayerSpec::Conv { out_channels, kernel, stride, pad } => {
                    let [cin, _, _] = chw(dims);
                    Node::Conv(init.conv(cin, *out_channels, *kernel, *stride, *pad)?)
                }
                LayerSpec::MaxPool { window, stride, pad } => {
                    Node::Pool(MaxPool2d::new(*window, *stride, *pad)?)
                }
                LayerSpec::Relu => Node::Relu(Relu::new()),
                LayerSpec::Lrn { depth_radius, k, alpha, beta } => {
                    Node::Lrn(Lrn::new(*depth_radius, *k, *alpha, *beta))
                }
                LayerSpec::Dense { out_features } => {
                    let d = match dims {
                        ChainDims::Chw([c, h, w]) => c * h * w,
                        ChainDims::Flat(d) => d,
                    };
                    Node::Dense(init.dense(d, *out_features)?)
                }
                LayerSpec::Dropout { rate } => {
                    let seed = init.dropout_seed();
                    Node::Dropout(Dropout::new(*rate, seed)?)
                }
                LayerSpec::GlobalAvgPool => Node::GlobalAvgPool(GlobalAvgPool::new()),
                LayerSpec::Inception(block) => {
                    let [cin, _, _] = chw(dims);
                    Node::Inception(Box::new(InceptionBlock::build(block, cin, &mut init)?))
                }
            };
            nodes.push(node);
            dims = *out_dims;
        }
        Ok(Self {
            spec: spec.clone(),
            nodes,
            mean_pixel: None,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.spec.input
    }

    pub fn class_count(&self) -> usize {
        self.spec.classes
    }

    pub fn mean_pixel(&self) -> Option<f64> {
        self.mean_pixel
    }

    pub fn set_mean_pixel(&mut self, mean: f64) {
        self.mean_pixel = Some(mean);
    }

    /// Forward a `[N, C, H, W]` batch to `[N, classes]` logits.
    pub fn forward(&mut self, input: &Tensor<E>, phase: Phase) -> Result<Tensor<E>, NnError> {
        let [_, c, h, w] = input.dims4()?;
        if [c, h, w] != self.spec.input {
            return Err(NnError::Shape(format!(
                "input shape {:?} does not match the network input {:?}",
                input.shape(),
                self.spec.input
            )));
        }
        let mut x = input.clone();
        for node in &mut self.nodes {
            x = match node {
                Node::Conv(l) => l.forward(&x)?,
                Node::Pool(l) => l.forward(&x)?,
                Node::Relu(l) => l.forward(&x),
                Node::Lrn(l) => l.forward(&x)?,
                Node::Dense(l) => l.forward(&x)?,
                Node::Dropout(l) => l.forward(&x, phase),
                Node::GlobalAvgPool(l) => l.forward(&x)?,
                Node::Inception(l) => l.forward(&x)?,
            };
        }
        Ok(x)
    }

    /// Propagate the loss gradient back through every layer, accumulating
    /// parameter gradients. The first layer skips its input gradient.
    pub fn backward(&mut self, loss_grad: &Tensor<E>) -> Result<(), NnError> {
        let mut g = loss_grad.clone();
        for (i, node) in self.nodes.iter_mut().enumerate().rev() {
            g = match node {
                Node::Conv(l) => l.backward(&g, i != 0)?,
                Node::Pool(l) => l.backward(&g)?,
                Node::Relu(l) => l.backward(&g)?,
                Node::Lrn(l) => l.backward(&g)?,
                Node::Dense(l) => l.backward(&g)?,
                Node::Dropout(l) => l.backward(&g)?,
                Node::GlobalAvgPool(l) => l.backward(&g)?,
                Node::Inception(l) => l.backward(&g)?,
            };
        }
        Ok(())
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&LayerParams<E>)) {
        for node in &self.nodes {
            match node {
                Node::Conv(l) => f(&l.params),
                Node::Dense(l) => f(&l.params),
                Node::Inception(l) => l.visit_params(f),
                _ => {}
            }
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut LayerParams<E>)) {
        for node in &mut self.nodes {
            match node {
                Node::Conv(l) => f(&mut l.params),
                Node::Dense(l) => f(&mut l.params),
                Node::Inception(l) => l.visit_params_mut(f),
                _ => {}
            }
        }
    }

    /// Reseed every dropout layer from one stream, called per training fold.
    pub fn reseed_dropout(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for node in &mut self.nodes {
            if let Node::Dropout(l) = node {
                l.reseed(rng.gen());
            }
        }
    }

    pub fn param_tensor_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_| n += 2);
        n
    }

    pub fn scalar_param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.scalar_count());
        n
    }
}

impl Network<f32> {
    /// Parameter tensors in traversal order: weights then bias per layer.
    pub fn weight_blobs(&self) -> Vec<Vec<f32>> {
        let mut blobs = Vec::new();
        self.visit_params(&mut |p| {
            blobs.push(p.weights.data().to_vec());
            blobs.push(p.bias.data().to_vec());
        });
        blobs
    }

    /// Overwrite parameters from blobs in [`Self::weight_blobs`] order.
    pub fn load_blobs(&mut self, blobs: &[Vec<f32>]) -> Result<(), NnError> {
        if blobs.len() != self.param_tensor_count() {
            return Err(NnError::Shape(format!(
                "checkpoint has {} parameter blobs but the architecture wants {}",
                blobs.len(),
                self.param_tensor_count()
            )));
        }
        let mut idx = 0;
        let mut status = Ok(());
        self.visit_params_mut(&mut |p| {
            if status.is_err() {
                return;
            }
            for tensor in [&mut p.weights, &mut p.bias] {
                let blob = &blobs[idx];
                if blob.len() != tensor.len() {
                    status = Err(NnError::Shape(format!(
                        "blob {idx} holds {} scalars but the parameter tensor {:?} wants {}",
                        blob.len(),
                        tensor.shape(),
                        tensor.len()
                    )));
                    return;
                }
                tensor.data_mut().copy_from_slice(blob);
                idx += 1;
            }
        });
        status
    }
}

fn chw(dims: ChainDims) -> [usize; 3] {
    match dims {
        ChainDims::Chw(chw) => chw,
        ChainDims::Flat(_) => unreachable!("validated spec guarantees spatial input here"),
    }
}
