//! Fully connected 2D-to-3D lifter with an explicit reverse pass.
//!
//! Input is a window of `w` 2D poses, root-centred per frame and flattened to
//! `w * J * 2` values. The network is a stack of dense layers with a shared
//! activation and a linear output of `w * J * 3` values, which is multiplied by
//! `output_scale_mm` and made root-relative per frame.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Pose2D, Pose3D, PoseSequence2D, PoseSequence3D};

pub const CHECKPOINT_FORMAT: &str = "mvpose-lifter/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a` (and pre-activation `z`).
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifterConfig {
    pub window_frames: usize,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub joint_count: usize,
    pub init_seed: u64,
    #[serde(default)]
    pub root_index: usize,
    /// Millimetres per raw network output unit.
    #[serde(default = "default_output_scale")]
    pub output_scale_mm: f64,
}

fn default_output_scale() -> f64 {
    1000.0
}

impl LifterConfig {
    pub fn new(
        window_frames: usize,
        hidden_sizes: Vec<usize>,
        joint_count: usize,
        init_seed: u64,
    ) -> Self {
        Self {
            window_frames,
            hidden_sizes,
            activation: Activation::Tanh,
            joint_count,
            init_seed,
            root_index: 0,
            output_scale_mm: default_output_scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_frames == 0 {
            return Err(Error::Invalid("window must hold at least one frame".into()));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Invalid("hidden layer sizes must be positive".into()));
        }
        if self.joint_count < 2 || self.root_index >= self.joint_count {
            return Err(Error::Invalid(
                "joint count must be at least 2 with the root in range".into(),
            ));
        }
        if !(self.output_scale_mm > 0.0) {
            return Err(Error::Invalid("output scale must be positive".into()));
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.window_frames * self.joint_count * 2
    }

    pub fn output_size(&self) -> usize {
        self.window_frames * self.joint_count * 3
    }

    /// (inputs, outputs) per dense layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut sizes = vec![self.input_size()];
        sizes.extend(&self.hidden_sizes);
        sizes.push(self.output_size());
        sizes.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Parameters stored flat: for each layer, the row-major `outputs x inputs` weights then the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifterParams {
    pub config: LifterConfig,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct LayerView {
    inputs: usize,
    outputs: usize,
    weights: usize,
    bias: usize,
}

fn layer_views(config: &LifterConfig) -> Vec<LayerView> {
    let mut offset = 0;
    config
        .layer_shapes()
        .into_iter()
        .map(|(inputs, outputs)| {
            let view = LayerView {
                inputs,
                outputs,
                weights: offset,
                bias: offset + inputs * outputs,
            };
            offset += inputs * outputs + outputs;
            view
        })
        .collect()
}

/// Glorot-uniform weights (variance `2 / (fan_in + fan_out)`), zero biases.
pub fn init_params(config: &LifterConfig) -> Result<LifterParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let mut values = vec![0.0; config.parameter_count()];
    for layer in layer_views(config) {
        let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
        for w in &mut values[layer.weights..layer.bias] {
            *w = rng.gen_range(-limit..limit);
        }
    }
    Ok(LifterParams {
        config: config.clone(),
        values,
    })
}

/// Activations retained by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (the first is the centred network input).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    parameter_count: usize,
}

impl LifterParams {
    pub fn config(&self) -> &LifterConfig {
        &self.config
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = serde_json::json!({
            "format_version": CHECKPOINT_FORMAT,
            "config": self.config,
            "values": self.values,
        });
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Invalid(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Checkpoint {
            config: LifterConfig,
            values: Vec<f64>,
        }
        let text = fs::read_to_string(path)?;
        let ck: Checkpoint = crate::data::parse_versioned(&text, CHECKPOINT_FORMAT)?;
        ck.config.validate()?;
        if ck.values.len() != ck.config.parameter_count() {
            return Err(Error::Shape(format!(
                "checkpoint holds {} values, config needs {}",
                ck.values.len(),
                ck.config.parameter_count()
            )));
        }
        Ok(Self {
            config: ck.config,
            values: ck.values,
        })
    }
}

fn dense(values: &[f64], layer: &LayerView, x: &[f64]) -> Vec<f64> {
    let w = &values[layer.weights..layer.bias];
    let b = &values[layer.bias..layer.bias + layer.outputs];
    w.chunks_exact(layer.inputs)
        .zip(b)
        .map(|(row, bias)| bias + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

/// Lifts a window of 2D poses to root-relative 3D poses in millimetres.
pub fn forward(params: &LifterParams, window: &[Pose2D]) -> Result<(Vec<Pose3D>, ForwardCache)> {
    let cfg = &params.config;
    if params.values.len() != cfg.parameter_count() {
        return Err(Error::Shape(
            "parameter vector does not match config".into(),
        ));
    }
    if window.len() != cfg.window_frames {
        return Err(Error::Shape(format!(
            "window of {} frames, lifter expects {}",
            window.len(),
            cfg.window_frames
        )));
    }
    let joints = cfg.joint_count;
    let root = cfg.root_index;
    let mut x = Vec::with_capacity(cfg.input_size());
    for (i, pose) in window.iter().enumerate() {
        if pose.joint_count() != joints {
            return Err(Error::Shape(format!(
                "frame {i} has {} joints, lifter expects {joints}",
                pose.joint_count()
            )));
        }
        let r = pose.coords[root];
        for c in &pose.coords {
            x.push(c[0] - r[0]);
            x.push(c[1] - r[1]);
        }
    }

    let layers = layer_views(cfg);
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len() - 1);
    let mut h = x;
    for (k, layer) in layers.iter().enumerate() {
        let z = dense(&params.values, layer, &h);
        inputs.push(std::mem::take(&mut h));
        if k + 1 < layers.len() {
            h = z.iter().map(|v| cfg.activation.apply(*v)).collect();
            pre.push(z);
        } else {
            h = z;
        }
    }

    let scale = cfg.output_scale_mm;
    let poses = h
        .chunks_exact(joints * 3)
        .map(|frame| {
            let r = [frame[root * 3], frame[root * 3 + 1], frame[root * 3 + 2]];
            Pose3D::new(
                frame
                    .chunks_exact(3)
                    .map(|c| {
                        [
                            scale * (c[0] - r[0]),
                            scale * (c[1] - r[1]),
                            scale * (c[2] - r[2]),
                        ]
                    })
                    .collect(),
            )
        })
        .collect();
    Ok((
        poses,
        ForwardCache {
            inputs,
            pre,
            parameter_count: params.values.len(),
        },
    ))
}

/// Reverse pass: parameter gradient and gradient with respect to the input window
/// (flattened `w * J * 2`), given `d loss / d output` flattened `w * J * 3`.
pub fn backward(
    params: &LifterParams,
    cache: &ForwardCache,
    upstream: &[f64],
) -> Result<(GradientBundle, Vec<f64>)> {
    let cfg = &params.config;
    if cache.parameter_count != params.values.len()
        || cache.inputs.len() != cfg.layer_shapes().len()
    {
        return Err(Error::Shape(
            "forward cache does not belong to these parameters".into(),
        ));
    }
    if upstream.len() != cfg.output_size() {
        return Err(Error::Shape(format!(
            "upstream gradient has {} values, expected {}",
            upstream.len(),
            cfg.output_size()
        )));
    }
    let joints = cfg.joint_count;
    let root = cfg.root_index;
    let scale = cfg.output_scale_mm;

    // through the root subtraction and output scale
    let mut delta = vec![0.0; upstream.len()];
    for (g, d) in upstream
        .chunks_exact(joints * 3)
        .zip(delta.chunks_exact_mut(joints * 3))
    {
        for j in 0..joints {
            if j == root {
                continue;
            }
            for k in 0..3 {
                d[j * 3 + k] = scale * g[j * 3 + k];
                d[root * 3 + k] -= scale * g[j * 3 + k];
            }
        }
    }

    let layers = layer_views(cfg);
    let mut grad = vec![0.0; params.values.len()];
    for (k, layer) in layers.iter().enumerate().rev() {
        let input = &cache.inputs[k];
        let (gw, rest) = grad[layer.weights..].split_at_mut(layer.inputs * layer.outputs);
        let gb = &mut rest[..layer.outputs];
        for (o, d) in delta.iter().enumerate() {
            gb[o] += d;
            if *d != 0.0 {
                for (g, x) in gw[o * layer.inputs..(o + 1) * layer.inputs]
                    .iter_mut()
                    .zip(input)
                {
                    *g += d * x;
                }
            }
        }
        let w = &params.values[layer.weights..layer.bias];
        let mut back = vec![0.0; layer.inputs];
        for (row, d) in w.chunks_exact(layer.inputs).zip(&delta) {
            if *d != 0.0 {
                for (b, wv) in back.iter_mut().zip(row) {
                    *b += d * wv;
                }
            }
        }
        if k > 0 {
            let z = &cache.pre[k - 1];
            delta = back
                .iter()
                .zip(z.iter().zip(input))
                .map(|(b, (zv, a))| b * cfg.activation.derivative(*zv, *a))
                .collect();
        } else {
            delta = back;
        }
    }

    // through the per-frame root centring of the input
    let mut input_grad = vec![0.0; delta.len()];
    for (d, g) in delta
        .chunks_exact(joints * 2)
        .zip(input_grad.chunks_exact_mut(joints * 2))
    {
        for j in 0..joints {
            if j == root {
                continue;
            }
            for k in 0..2 {
                g[j * 2 + k] += d[j * 2 + k];
                g[root * 2 + k] -= d[j * 2 + k];
            }
        }
    }
    Ok((GradientBundle { values: grad }, input_grad))
}

/// Lifts a whole sequence by tiling it with windows; the last window is shifted
/// back to end at the final frame and only fills frames not already covered.
pub fn predict_sequence(params: &LifterParams, seq: &PoseSequence2D) -> Result<PoseSequence3D> {
    let w = params.config.window_frames;
    if seq.len() < w {
        return Err(Error::Shape(format!(
            "sequence of {} frames is shorter than the {w}-frame window",
            seq.len()
        )));
    }
    let mut frames: Vec<Pose3D> = Vec::with_capacity(seq.len());
    let mut start = 0;
    while frames.len() < seq.len() {
        let s = start.min(seq.len() - w);
        let (out, _) = forward(params, &seq.frames[s..s + w])?;
        let skip = frames.len() - s;
        frames.extend(out.into_iter().skip(skip));
        start += w;
    }
    Ok(PoseSequence3D::new(frames, seq.frame_rate_hz))
}
