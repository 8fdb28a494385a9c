//! The two networks: a UNet-style lung segmenter and the seven-convolution
//! nodule classifier.
//!
//! A [`Model`] is just a config plus an ordered list of named parameter
//! tensors. Forward passes are free of hidden state: they bind the
//! parameters into a [`Graph`] and return the output node together with the
//! bindings needed to route gradients back.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{init, Exec, Gradients, Graph, Sgd, Tensor, Var};

/// UNet-style encoder/decoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub input_size: usize,
    pub depth: usize,
    pub base_channels: usize,
}

impl SegmenterConfig {
    pub fn new(input_size: usize) -> Self {
        Self {
            input_size,
            depth: 3,
            base_channels: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("segmenter depth must be at least 1"));
        }
        if self.base_channels == 0 {
            return Err(Error::config("segmenter base_channels must be at least 1"));
        }
        let unit = 1usize << self.depth;
        if self.input_size == 0 || !self.input_size.is_multiple_of(unit) {
            return Err(Error::config(format!(
                "segmenter input_size {} is not divisible by 2^{} = {unit}",
                self.input_size, self.depth
            )));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self::new(64)
    }
}

pub const CLASSIFIER_CONV_LAYERS: usize = 7;

/// The seven-convolution classifier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub input_size: usize,
    /// Output channels of each convolution, exactly seven entries.
    pub channel_plan: Vec<usize>,
    /// 1-based indices of the conv layers followed by a 2× max-pool.
    pub pool_after: Vec<usize>,
    /// Shift and scale each input image to zero mean and unit variance before
    /// the first convolution. The input is treated as a constant then.
    #[serde(default = "default_true")]
    pub standardize_input: bool,
    /// Max-pool the last feature map down to 1×1 before the dense head, so
    /// the head sees one value per channel.
    #[serde(default)]
    pub global_max_pool: bool,
}

fn default_true() -> bool {
    true
}

impl ClassifierConfig {
    pub fn new(input_size: usize) -> Self {
        Self {
            input_size,
            channel_plan: vec![8, 8, 16, 16, 32, 32, 64],
            pool_after: vec![2, 4, 6, 7],
            standardize_input: true,
            global_max_pool: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_plan.len() != CLASSIFIER_CONV_LAYERS {
            return Err(Error::config(format!(
                "classifier needs exactly {CLASSIFIER_CONV_LAYERS} conv layers, channel_plan has {}",
                self.channel_plan.len()
            )));
        }
        if self.channel_plan.contains(&0) {
            return Err(Error::config("classifier channel counts must be positive"));
        }
        let mut seen = [false; CLASSIFIER_CONV_LAYERS];
        for &p in &self.pool_after {
            if !(1..=CLASSIFIER_CONV_LAYERS).contains(&p) || seen[p - 1] {
                return Err(Error::config(format!("invalid pool_after entry {p}")));
            }
            seen[p - 1] = true;
        }
        let unit = 1usize << self.pool_after.len();
        if self.input_size == 0 || !self.input_size.is_multiple_of(unit) {
            return Err(Error::config(format!(
                "classifier input_size {} must be a positive multiple of {unit} for {} pools",
                self.input_size,
                self.pool_after.len()
            )));
        }
        Ok(())
    }

    /// Spatial side length after the last pool.
    pub fn final_size(&self) -> usize {
        self.input_size >> self.pool_after.len()
    }

    /// Spatial side length seen by the dense head.
    pub fn head_size(&self) -> usize {
        if self.global_max_pool {
            1
        } else {
            self.final_size()
        }
    }

    fn pools_after(&self, layer: usize) -> bool {
        self.pool_after.contains(&(layer + 1))
    }
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self::new(64)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Segmenter(SegmenterConfig),
    Classifier(ClassifierConfig),
}

impl ModelConfig {
    pub fn input_size(&self) -> usize {
        match self {
            ModelConfig::Segmenter(c) => c.input_size,
            ModelConfig::Classifier(c) => c.input_size,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Segmenter(c) => c.validate(),
            ModelConfig::Classifier(c) => c.validate(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedParam {
    pub name: String,
    pub tensor: Tensor,
}

/// Parameter nodes bound into one graph, in model parameter order.
#[derive(Clone, Debug)]
pub struct Bindings(Vec<Var>);

impl Bindings {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<NamedParam>,
}

struct ParamBuilder {
    rng: ChaCha8Rng,
    params: Vec<NamedParam>,
}

impl ParamBuilder {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
        }
    }

    fn conv_relu(&mut self, name: &str, cin: usize, cout: usize, k: usize) {
        let w = init::he_uniform(&mut self.rng, &[cout, cin, k, k], cin * k * k);
        self.push(name, w, cout);
    }

    fn sigmoid_head(&mut self, name: &str, shape: &[usize], fan_in: usize, fan_out: usize) {
        let w = init::xavier_uniform(&mut self.rng, shape, fan_in, fan_out);
        self.push(name, w, fan_out);
    }

    fn push(&mut self, name: &str, w: Tensor, bias_len: usize) {
        self.params.push(NamedParam {
            name: format!("{name}.weight"),
            tensor: w,
        });
        self.params.push(NamedParam {
            name: format!("{name}.bias"),
            tensor: Tensor::zeros(&[bias_len]).with_grad(),
        });
    }
}

/// Builds a UNet: `depth` encoder levels of two 3×3 conv+ReLU and a 2× pool,
/// a two-conv bottleneck, mirrored decoder levels (upsample, concat skip,
/// two conv+ReLU) and a 1×1 conv + sigmoid head.
pub fn build_segmenter(cfg: &SegmenterConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let mut pb = ParamBuilder::new(seed);
    let mut cin = 1;
    for level in 0..cfg.depth {
        let ch = cfg.channels(level);
        pb.conv_relu(&format!("enc{level}.conv0"), cin, ch, 3);
        pb.conv_relu(&format!("enc{level}.conv1"), ch, ch, 3);
        cin = ch;
    }
    let bottom = cfg.channels(cfg.depth);
    pb.conv_relu("bottleneck.conv0", cin, bottom, 3);
    pb.conv_relu("bottleneck.conv1", bottom, bottom, 3);
    cin = bottom;
    for level in (0..cfg.depth).rev() {
        let ch = cfg.channels(level);
        pb.conv_relu(&format!("dec{level}.conv0"), cin + ch, ch, 3);
        pb.conv_relu(&format!("dec{level}.conv1"), ch, ch, 3);
        cin = ch;
    }
    pb.sigmoid_head("head", &[1, cin, 1, 1], cin, 1);
    Ok(Model {
        config: ModelConfig::Segmenter(cfg.clone()),
        params: pb.params,
    })
}

/// Builds the classifier: seven 3×3 conv+ReLU layers with 2× pools per
/// `pool_after`, then flatten, a single-unit dense layer and a sigmoid.
pub fn build_classifier(cfg: &ClassifierConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let mut pb = ParamBuilder::new(seed);
    let mut cin = 1;
    for (i, &ch) in cfg.channel_plan.iter().enumerate() {
        pb.conv_relu(&format!("conv{}", i + 1), cin, ch, 3);
        cin = ch;
    }
    let flat = cin * cfg.head_size() * cfg.head_size();
    pb.sigmoid_head("dense", &[flat, 1], flat, 1);
    Ok(Model {
        config: ModelConfig::Classifier(cfg.clone()),
        params: pb.params,
    })
}

impl Model {
    /// Reassembles a model, checking parameter names and shapes against a
    /// fresh build of `config`.
    pub fn from_parts(config: ModelConfig, params: Vec<NamedParam>) -> Result<Self> {
        config.validate()?;
        let reference = match &config {
            ModelConfig::Segmenter(c) => build_segmenter(c, 0)?,
            ModelConfig::Classifier(c) => build_classifier(c, 0)?,
        };
        if reference.params.len() != params.len() {
            return Err(Error::config(format!(
                "expected {} parameter tensors, got {}",
                reference.params.len(),
                params.len()
            )));
        }
        let mut params = params;
        for (r, p) in reference.params.iter().zip(params.iter_mut()) {
            if r.name != p.name || r.tensor.shape() != p.tensor.shape() {
                return Err(Error::config(format!(
                    "parameter mismatch: expected {} {:?}, got {} {:?}",
                    r.name,
                    r.tensor.shape(),
                    p.name,
                    p.tensor.shape()
                )));
            }
            p.tensor.set_requires_grad(true);
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_size(&self) -> usize {
        self.config.input_size()
    }

    pub fn params(&self) -> &[NamedParam] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Records the forward pass of `input` (a node holding `[N,1,S,S]`).
    pub fn forward(&self, g: &mut Graph, input: Var) -> Result<(Var, Bindings)> {
        let s = self.input_size();
        match g.value(input).shape() {
            &[_, 1, h, w] if h == s && w == s => {}
            other => {
                return Err(Error::shape(format!(
                    "model expects [N,1,{s},{s}] input, got {other:?}"
                )))
            }
        }
        let vars = self
            .params
            .iter()
            .map(|p| g.param(&p.tensor))
            .collect::<Result<Vec<_>>>()?;
        let out = match &self.config {
            ModelConfig::Segmenter(c) => segmenter_forward(c, g, input, &vars)?,
            ModelConfig::Classifier(c) => classifier_forward(c, g, input, &vars)?,
        };
        Ok((out, Bindings(vars)))
    }

    /// Pure inference on a `[N,1,S,S]` batch.
    pub fn predict(&self, exec: &Exec, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference(exec.clone());
        let x = g.constant(batch.clone())?;
        let (out, _) = self.forward(&mut g, x)?;
        Ok(g.take_value(out))
    }

    /// Adds the gradients of one backward pass into the parameter buffers.
    pub fn accumulate_grads(&mut self, grads: &Gradients, bindings: &Bindings) -> Result<()> {
        if bindings.0.len() != self.params.len() {
            return Err(Error::usage("bindings do not belong to this model"));
        }
        for (p, &v) in self.params.iter_mut().zip(&bindings.0) {
            grads.accumulate_into(v, &mut p.tensor)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.clear_grad());
    }

    pub fn step(&mut self, opt: &mut Sgd) -> Result<()> {
        let mut refs: Vec<&mut Tensor> = self.params.iter_mut().map(|p| &mut p.tensor).collect();
        opt.step(&mut refs)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut NamedParam> {
        self.params.iter_mut()
    }
}

fn conv_relu(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.conv2d(x, w, b, 1, 1)?;
    g.relu(y)
}

fn segmenter_forward(cfg: &SegmenterConfig, g: &mut Graph, input: Var, p: &[Var]) -> Result<Var> {
    let mut it = p.chunks_exact(2);
    let mut next = || {
        let pair = it.next().expect("parameter list matches architecture");
        (pair[0], pair[1])
    };
    let mut skips = Vec::with_capacity(cfg.depth);
    let mut x = input;
    for _ in 0..cfg.depth {
        let (w, b) = next();
        x = conv_relu(g, x, w, b)?;
        let (w, b) = next();
        x = conv_relu(g, x, w, b)?;
        skips.push(x);
        x = g.maxpool2d(x, 2)?;
    }
    for _ in 0..2 {
        let (w, b) = next();
        x = conv_relu(g, x, w, b)?;
    }
    for skip in skips.into_iter().rev() {
        let up = g.upsample2x(x)?;
        x = g.concat_channels(up, skip)?;
        let (w, b) = next();
        x = conv_relu(g, x, w, b)?;
        let (w, b) = next();
        x = conv_relu(g, x, w, b)?;
    }
    let (w, b) = next();
    let logits = g.conv2d(x, w, b, 1, 0)?;
    g.sigmoid(logits)
}

/// Per-sample zero mean, unit variance over a `[N, ...]` tensor. Constant
/// samples are only centred.
pub fn standardize_samples(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    let n = t.shape()[0].max(1);
    let per = t.numel() / n;
    if per == 0 {
        return out;
    }
    for sample in out.data_mut().chunks_mut(per) {
        let mean = sample.iter().map(|&v| v as f64).sum::<f64>() / per as f64;
        let var = sample.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / per as f64;
        let scale = if var.sqrt() > 1e-6 { 1.0 / var.sqrt() } else { 1.0 };
        for v in sample.iter_mut() {
            *v = ((*v as f64 - mean) * scale) as f32;
        }
    }
    out
}

fn classifier_forward(cfg: &ClassifierConfig, g: &mut Graph, input: Var, p: &[Var]) -> Result<Var> {
    let mut x = if cfg.standardize_input {
        let t = standardize_samples(g.value(input));
        g.constant(t)?
    } else {
        input
    };
    for layer in 0..CLASSIFIER_CONV_LAYERS {
        x = conv_relu(g, x, p[2 * layer], p[2 * layer + 1])?;
        if cfg.pools_after(layer) {
            x = g.maxpool2d(x, 2)?;
        }
    }
    if cfg.global_max_pool && cfg.final_size() > 1 {
        x = g.maxpool2d(x, cfg.final_size())?;
    }
    let flat = g.flatten(x)?;
    let logit = g.dense(flat, p[14], p[15])?;
    g.sigmoid(logit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::OpKind;

    #[test]
    fn configs_validate() {
        assert!(SegmenterConfig::new(64).validate().is_ok());
        assert!(matches!(SegmenterConfig::new(60).validate(), Err(Error::Config(_))));
        let mut c = ClassifierConfig::new(64);
        c.channel_plan.pop();
        assert!(matches!(build_classifier(&c, 0), Err(Error::Config(_))));
        let mut c = ClassifierConfig::new(64);
        c.pool_after = vec![1, 1];
        assert!(c.validate().is_err());
        assert!(ClassifierConfig::new(24).validate().is_err());
    }

    #[test]
    fn classifier_records_seven_convs() {
        let m = build_classifier(&ClassifierConfig::new(32), 3).unwrap();
        let mut g = Graph::new(Exec::single());
        let x = g.constant(Tensor::zeros(&[2, 1, 32, 32])).unwrap();
        let (y, _) = m.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 1]);
        assert_eq!(g.count(OpKind::Conv2d), 7);
        assert_eq!(g.count(OpKind::MaxPool2d), 4);
    }

    #[test]
    fn forward_rejects_wrong_size() {
        let m = build_classifier(&ClassifierConfig::new(32), 3).unwrap();
        assert!(matches!(
            m.predict(&Exec::single(), &Tensor::zeros(&[1, 1, 16, 16])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn from_parts_checks_layout() {
        let m = build_segmenter(&SegmenterConfig::new(16), 1).unwrap();
        let mut params = m.params().to_vec();
        assert!(Model::from_parts(m.config().clone(), params.clone()).is_ok());
        params.pop();
        assert!(Model::from_parts(m.config().clone(), params).is_err());
    }
}
