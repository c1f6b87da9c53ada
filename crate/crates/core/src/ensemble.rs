//! The multi-branch height network: one shared encoder, one decoder per
//! label-quality class, and a quality-classifier head on the deepest
//! features.
//!
//! At inference the per-branch height maps are blended by the classifier's
//! probabilities ([`blend`]); during training each sample's height losses are
//! routed to the branch matching its own label quality
//! ([`branch_prediction`]). The backbone is a compact 4-stage
//! encoder-decoder with nearest-upsampling and skip concatenations, small
//! enough to train on one CPU core at desk scale.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{concatenate, Array1, Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    avg_pool2, avg_pool2_backward, global_avg_pool, global_avg_pool_backward, leaky_relu,
    leaky_relu1, leaky_relu1_backward, leaky_relu_backward, upsample2, upsample2_backward, Conv2d,
    Dense,
};
use crate::patch::QualityClass;
use crate::seeds;

/// Classifier head shape: conv-pool blocks on the deepest encoder features,
/// then global average pooling and a two-layer perceptron.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    pub conv_blocks: usize,
    pub width: usize,
    pub hidden: usize,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec {
            conv_blocks: 2,
            width: 32,
            hidden: 32,
        }
    }
}

fn default_output_scale() -> f32 {
    10.0
}

/// Architecture hyper-parameters. `encoder_widths[0]` is the full-resolution
/// stem; every later entry adds a stride-2 stage, so the downsampling factor
/// is `2^(encoder_widths.len() - 1)`. `decoder_widths` needs one entry per
/// stride-2 stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Decoder branches: 3 for high/mid/low, 2 for high/mid. 1 is the
    /// degenerate single-branch baseline (no quality separation; the lone
    /// branch consumes every sample and the classifier is vestigial).
    pub n_branches: usize,
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    #[serde(default)]
    pub classifier: ClassifierSpec,
    /// The head's raw output is multiplied by this constant so that
    /// freshly-initialized predictions already span meters, not millimeters.
    #[serde(default = "default_output_scale")]
    pub output_scale: f32,
}

impl ModelConfig {
    /// Compact defaults sized for single-core CPU training on 64x64 patches.
    pub fn compact(input_channels: usize, n_branches: usize) -> Self {
        ModelConfig {
            input_channels,
            n_branches,
            encoder_widths: vec![8, 16, 24, 32, 48],
            decoder_widths: vec![32, 24, 16, 8],
            classifier: ClassifierSpec::default(),
            output_scale: 10.0,
        }
    }

    pub fn downsample_factor(&self) -> usize {
        1 << (self.encoder_widths.len() - 1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::BadConfig(m));
        if self.input_channels == 0 {
            return bad("input_channels must be >= 1".into());
        }
        if !(1..=3).contains(&self.n_branches) {
            return bad(format!("n_branches {} outside 1..=3", self.n_branches));
        }
        if self.encoder_widths.len() < 2 || self.encoder_widths.iter().any(|w| *w == 0) {
            return bad("encoder_widths needs a stem plus >= 1 stage, all nonzero".into());
        }
        if self.decoder_widths.len() != self.encoder_widths.len() - 1
            || self.decoder_widths.iter().any(|w| *w == 0)
        {
            return bad(format!(
                "decoder_widths needs exactly {} nonzero entries",
                self.encoder_widths.len() - 1
            ));
        }
        if self.classifier.conv_blocks == 0
            || self.classifier.width == 0
            || self.classifier.hidden == 0
        {
            return bad("classifier spec fields must be >= 1".into());
        }
        if !self.output_scale.is_finite() || self.output_scale <= 0.0 {
            return bad(format!(
                "output_scale {} must be positive",
                self.output_scale
            ));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("input {h}x{w} is not divisible by the downsampling factor {factor}")]
    IndivisibleInput { h: usize, w: usize, factor: usize },
    #[error("input has {got} channels, the model expects {want}")]
    WrongChannels { got: usize, want: usize },
    #[error("quality index {index} out of range for {branches} branches")]
    BranchOutOfRange { index: usize, branches: usize },
}

#[derive(Clone, Debug, PartialEq)]
struct Encoder {
    stem: Conv2d,
    downs: Vec<Conv2d>,
}

#[derive(Clone, Debug, PartialEq)]
struct Decoder {
    ups: Vec<Conv2d>,
    head: Conv2d,
}

#[derive(Clone, Debug, PartialEq)]
struct Classifier {
    convs: Vec<Conv2d>,
    fc1: Dense,
    fc2: Dense,
}

/// The full model. All parameter tensors are reachable through
/// [`EnsembleModel::visit_params`] in a fixed, documented order: encoder
/// (stem, then stages), each decoder in branch order (stages, then head),
/// classifier (convs, fc1, fc2); weight before bias within a layer.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    config: ModelConfig,
    encoder: Encoder,
    decoders: Vec<Decoder>,
    classifier: Classifier,
}

impl EnsembleModel {
    pub fn new(config: ModelConfig, init_seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(init_seed, &[0x1417]));
        let ew = &config.encoder_widths;
        let stages = ew.len() - 1;

        let stem = Conv2d::new(config.input_channels, ew[0], 3, 1, 1, &mut rng);
        let downs = (0..stages)
            .map(|i| Conv2d::new(ew[i], ew[i + 1], 3, 2, 1, &mut rng))
            .collect();

        let dw = &config.decoder_widths;
        let decoders = (0..config.n_branches)
            .map(|_| {
                let ups = (0..stages)
                    .map(|i| {
                        let carried = if i == 0 { ew[stages] } else { dw[i - 1] };
                        let skip = ew[stages - 1 - i];
                        Conv2d::new(carried + skip, dw[i], 3, 1, 1, &mut rng)
                    })
                    .collect();
                let head = Conv2d::new(dw[stages - 1], 1, 1, 1, 0, &mut rng);
                Decoder { ups, head }
            })
            .collect();

        let cs = &config.classifier;
        let convs = (0..cs.conv_blocks)
            .map(|i| {
                let c_in = if i == 0 { ew[stages] } else { cs.width };
                Conv2d::new(c_in, cs.width, 3, 1, 1, &mut rng)
            })
            .collect();
        let fc1 = Dense::new(cs.width, cs.hidden, &mut rng);
        let fc2 = Dense::new(cs.hidden, config.n_branches, &mut rng);

        Ok(EnsembleModel {
            config,
            encoder: Encoder { stem, downs },
            decoders,
            classifier: Classifier { convs, fc1, fc2 },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_branches(&self) -> usize {
        self.config.n_branches
    }

    fn check_input(&self, image: &Array3<f32>) -> Result<(), ModelError> {
        let (c, h, w) = image.dim();
        if c != self.config.input_channels {
            return Err(ModelError::WrongChannels {
                got: c,
                want: self.config.input_channels,
            });
        }
        let factor = self.config.downsample_factor();
        if h % factor != 0 || w % factor != 0 || h == 0 || w == 0 {
            return Err(ModelError::IndivisibleInput { h, w, factor });
        }
        Ok(())
    }

    /// Forward pass for one sample, keeping every intermediate needed by
    /// [`EnsembleModel::backward_one`].
    pub fn forward_one(&self, image: &Array3<f32>) -> Result<SampleForward, ModelError> {
        self.check_input(image)?;
        let stages = self.encoder.downs.len();

        // Encoder: stem at full resolution, then stride-2 stages.
        let mut enc = Vec::with_capacity(stages + 1);
        enc.push(leaky_relu(&self.encoder.stem.forward(image)));
        for conv in &self.encoder.downs {
            let last = enc.last().expect("stem pushed");
            enc.push(leaky_relu(&conv.forward(last)));
        }

        // Decoders: upsample, concat the matching skip, convolve.
        let mut dec_cats = Vec::with_capacity(self.decoders.len());
        let mut dec_outs = Vec::with_capacity(self.decoders.len());
        let mut branch_heights = Vec::with_capacity(self.decoders.len());
        for dec in &self.decoders {
            let mut cats = Vec::with_capacity(stages);
            let mut outs: Vec<Array3<f32>> = Vec::with_capacity(stages);
            for (i, conv) in dec.ups.iter().enumerate() {
                let carried = if i == 0 { &enc[stages] } else { &outs[i - 1] };
                let up = upsample2(carried);
                let skip = &enc[stages - 1 - i];
                let cat =
                    concatenate(Axis(0), &[up.view(), skip.view()]).expect("matching spatial dims");
                outs.push(leaky_relu(&conv.forward(&cat)));
                cats.push(cat);
            }
            let raw = dec.head.forward(outs.last().expect("stages >= 1"));
            let height = raw
                .index_axis(Axis(0), 0)
                .mapv(|v| v * self.config.output_scale);
            branch_heights.push(height);
            dec_cats.push(cats);
            dec_outs.push(outs);
        }

        // Classifier on the deepest encoder features.
        let cls = &self.classifier;
        let mut cls_ins = Vec::with_capacity(cls.convs.len() + 1);
        let mut cls_relu = Vec::with_capacity(cls.convs.len());
        cls_ins.push(enc[stages].clone());
        for conv in &cls.convs {
            let activated = leaky_relu(&conv.forward(cls_ins.last().expect("seeded")));
            let pooled = avg_pool2(&activated);
            cls_relu.push(activated);
            cls_ins.push(pooled);
        }
        let feat = global_avg_pool(cls_ins.last().expect("at least the seed entry"));
        let fc1_out = leaky_relu1(&cls.fc1.forward(&feat));
        let logits = cls.fc2.forward(&fc1_out);
        let probs = softmax32(&logits);

        Ok(SampleForward {
            input: image.clone(),
            enc,
            dec_cats,
            dec_outs,
            cls_ins,
            cls_relu,
            cls_feat: feat,
            cls_fc1_out: fc1_out,
            branch_heights,
            logits,
            probs,
        })
    }

    /// Batched forward over `(B, C_img, H, W)`; drops the caches.
    pub fn forward(&self, images: &Array4<f32>) -> Result<EnsembleOutput, ModelError> {
        let (b, _, h, w) = images.dim();
        let c = self.config.n_branches;
        let mut branch_heights = Array4::<f32>::zeros((b, c, h, w));
        let mut class_probs = Array2::<f32>::zeros((b, c));
        for bi in 0..b {
            let one = self.forward_one(&images.index_axis(Axis(0), bi).to_owned())?;
            for (ci, map) in one.branch_heights.iter().enumerate() {
                branch_heights
                    .index_axis_mut(Axis(0), bi)
                    .index_axis_mut(Axis(0), ci)
                    .assign(map);
            }
            class_probs.row_mut(bi).assign(&one.probs);
        }
        Ok(EnsembleOutput {
            branch_heights,
            class_probs,
        })
    }

    /// Backpropagates one sample. `d_heights[c]`, when present, is the
    /// gradient of the scalar loss w.r.t. branch `c`'s height map;
    /// `d_logits` likewise for the classifier logits. Gradients accumulate
    /// into `grads`; decoders whose entry is `None` are skipped entirely and
    /// keep structurally zero gradients.
    pub fn backward_one(
        &self,
        fwd: &SampleForward,
        d_heights: &[Option<Array2<f32>>],
        d_logits: Option<&Array1<f32>>,
        grads: &mut Gradients,
    ) {
        assert_eq!(d_heights.len(), self.decoders.len(), "one slot per branch");
        let stages = self.encoder.downs.len();
        let mut d_enc: Vec<Array3<f32>> = fwd.enc.iter().map(|f| Array3::zeros(f.dim())).collect();

        for (c, d_height) in d_heights.iter().enumerate() {
            let Some(d_height) = d_height else { continue };
            let dec = &self.decoders[c];
            let gdec = &mut grads.decoders[c];

            // Head: height = output_scale * conv1x1(last activation).
            let d_raw = d_height
                .mapv(|v| v * self.config.output_scale)
                .insert_axis(Axis(0));
            let last_out = fwd.dec_outs[c].last().expect("stages >= 1");
            let (mut d_carried, d_w, d_b) = dec.head.backward(last_out, &d_raw);
            gdec.head.weight += &d_w;
            gdec.head.bias += &d_b;

            for i in (0..stages).rev() {
                let masked = leaky_relu_backward(&fwd.dec_outs[c][i], &d_carried);
                let (d_cat, d_w, d_b) = dec.ups[i].backward(&fwd.dec_cats[c][i], &masked);
                gdec.ups[i].weight += &d_w;
                gdec.ups[i].bias += &d_b;
                let carried_ch = if i == 0 {
                    self.config.encoder_widths[stages]
                } else {
                    self.config.decoder_widths[i - 1]
                };
                let d_up = d_cat.slice(ndarray::s![..carried_ch, .., ..]).to_owned();
                let d_skip = d_cat.slice(ndarray::s![carried_ch.., .., ..]).to_owned();
                d_enc[stages - 1 - i] += &d_skip;
                let d_down = upsample2_backward(&d_up);
                if i == 0 {
                    d_enc[stages] += &d_down;
                } else {
                    d_carried = d_down;
                }
            }
        }

        if let Some(d_logits) = d_logits {
            let cls = &self.classifier;
            let gcls = &mut grads.classifier;
            let (d_h1, d_w2, d_b2) = cls.fc2.backward(&fwd.cls_fc1_out, d_logits);
            gcls.fc2.weight += &d_w2;
            gcls.fc2.bias += &d_b2;
            let d_h1 = leaky_relu1_backward(&fwd.cls_fc1_out, &d_h1);
            let (d_feat, d_w1, d_b1) = cls.fc1.backward(&fwd.cls_feat, &d_h1);
            gcls.fc1.weight += &d_w1;
            gcls.fc1.bias += &d_b1;

            let gap_in = fwd.cls_ins.last().expect("seeded");
            let (_, gh, gw) = gap_in.dim();
            let mut d_map = global_avg_pool_backward(&d_feat, gh, gw);
            for i in (0..cls.convs.len()).rev() {
                let (_, rh, rw) = fwd.cls_relu[i].dim();
                let d_pool_in = avg_pool2_backward(&d_map, rh, rw);
                let masked = leaky_relu_backward(&fwd.cls_relu[i], &d_pool_in);
                let (d_in, d_w, d_b) = cls.convs[i].backward(&fwd.cls_ins[i], &masked);
                gcls.convs[i].weight += &d_w;
                gcls.convs[i].bias += &d_b;
                d_map = d_in;
            }
            d_enc[stages] += &d_map;
        }

        // Encoder backward through the accumulated feature gradients.
        let mut d_feat = d_enc.pop().expect("stages + 1 entries");
        for i in (0..stages).rev() {
            let masked = leaky_relu_backward(&fwd.enc[i + 1], &d_feat);
            let (d_in, d_w, d_b) = self.encoder.downs[i].backward(&fwd.enc[i], &masked);
            grads.encoder.downs[i].weight += &d_w;
            grads.encoder.downs[i].bias += &d_b;
            d_feat = d_enc.pop().expect("one per stage");
            d_feat += &d_in;
        }
        let masked = leaky_relu_backward(&fwd.enc[0], &d_feat);
        let (_, d_w, d_b) = self.encoder.stem.backward(&fwd.input, &masked);
        grads.encoder.stem.weight += &d_w;
        grads.encoder.stem.bias += &d_b;
    }

    /// Visits every parameter tensor as `(name, shape, data)` in the fixed
    /// registry order.
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        let mut emit_conv = |name: String, conv: &Conv2d| {
            f(
                &format!("{name}.weight"),
                &[conv.weight.nrows(), conv.weight.ncols()],
                conv.weight.as_slice().expect("standard layout"),
            );
            f(
                &format!("{name}.bias"),
                &[conv.bias.len()],
                conv.bias.as_slice().expect("standard layout"),
            );
        };
        emit_conv("encoder.stem".into(), &self.encoder.stem);
        for (i, c) in self.encoder.downs.iter().enumerate() {
            emit_conv(format!("encoder.down{}", i + 1), c);
        }
        for (ci, dec) in self.decoders.iter().enumerate() {
            for (i, c) in dec.ups.iter().enumerate() {
                emit_conv(format!("decoder{ci}.up{}", i + 1), c);
            }
            emit_conv(format!("decoder{ci}.head"), &dec.head);
        }
        for (i, c) in self.classifier.convs.iter().enumerate() {
            emit_conv(format!("classifier.conv{}", i + 1), c);
        }
        for (name, d) in [
            ("classifier.fc1", &self.classifier.fc1),
            ("classifier.fc2", &self.classifier.fc2),
        ] {
            f(
                &format!("{name}.weight"),
                &[d.weight.nrows(), d.weight.ncols()],
                d.weight.as_slice().expect("standard layout"),
            );
            f(
                &format!("{name}.bias"),
                &[d.bias.len()],
                d.bias.as_slice().expect("standard layout"),
            );
        }
    }

    /// Mutable variant of [`EnsembleModel::visit_params`], same order.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [f32])) {
        let mut emit_conv = |name: String, conv: &mut Conv2d| {
            let shape = [conv.weight.nrows(), conv.weight.ncols()];
            f(
                &format!("{name}.weight"),
                &shape,
                conv.weight.as_slice_mut().expect("standard layout"),
            );
            let blen = conv.bias.len();
            f(
                &format!("{name}.bias"),
                &[blen],
                conv.bias.as_slice_mut().expect("standard layout"),
            );
        };
        emit_conv("encoder.stem".into(), &mut self.encoder.stem);
        for (i, c) in self.encoder.downs.iter_mut().enumerate() {
            emit_conv(format!("encoder.down{}", i + 1), c);
        }
        for (ci, dec) in self.decoders.iter_mut().enumerate() {
            for (i, c) in dec.ups.iter_mut().enumerate() {
                emit_conv(format!("decoder{ci}.up{}", i + 1), c);
            }
            emit_conv(format!("decoder{ci}.head"), &mut dec.head);
        }
        for (i, c) in self.classifier.convs.iter_mut().enumerate() {
            emit_conv(format!("classifier.conv{}", i + 1), c);
        }
        for (name, d) in [
            ("classifier.fc1", &mut self.classifier.fc1),
            ("classifier.fc2", &mut self.classifier.fc2),
        ] {
            let shape = [d.weight.nrows(), d.weight.ncols()];
            f(
                &format!("{name}.weight"),
                &shape,
                d.weight.as_slice_mut().expect("standard layout"),
            );
            let blen = d.bias.len();
            f(
                &format!("{name}.bias"),
                &[blen],
                d.bias.as_slice_mut().expect("standard layout"),
            );
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, _, data| n += data.len());
        n
    }

    pub fn flatten_params(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit_params(&mut |_, _, data| out.extend_from_slice(data));
        out
    }

    /// Adds `delta` (in registry order) onto the parameters.
    pub fn apply_delta(&mut self, delta: &[f32]) {
        let mut offset = 0;
        self.visit_params_mut(&mut |_, _, data| {
            let n = data.len();
            for (p, d) in data.iter_mut().zip(&delta[offset..offset + n]) {
                *p += d;
            }
            offset += n;
        });
        assert_eq!(offset, delta.len(), "delta length drifted");
    }
}

fn softmax32(logits: &Array1<f32>) -> Array1<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exp = logits.mapv(|v| ((v - max) as f64).exp());
    let sum: f64 = exp.iter().sum();
    exp.mapv(|v| (v / sum) as f32)
}

/// Everything [`EnsembleModel::forward_one`] computed for one sample,
/// retained so the backward pass can run without re-doing the forward work.
pub struct SampleForward {
    input: Array3<f32>,
    enc: Vec<Array3<f32>>,
    dec_cats: Vec<Vec<Array3<f32>>>,
    dec_outs: Vec<Vec<Array3<f32>>>,
    cls_ins: Vec<Array3<f32>>,
    cls_relu: Vec<Array3<f32>>,
    cls_feat: Array1<f32>,
    cls_fc1_out: Array1<f32>,
    /// One `(H, W)` height map per branch, in meters.
    pub branch_heights: Vec<Array2<f32>>,
    pub logits: Array1<f32>,
    pub probs: Array1<f32>,
}

/// Batched model output.
#[derive(Clone, Debug)]
pub struct EnsembleOutput {
    /// `(B, C, H, W)` height maps in meters, one per branch.
    pub branch_heights: Array4<f32>,
    /// `(B, C)` rows on the probability simplex.
    pub class_probs: Array2<f32>,
}

/// Blends branch maps by the class probabilities, per pixel:
/// `h = sum_c p_c * h_c`.
pub fn blend(output: &EnsembleOutput) -> Array3<f32> {
    let (b, c, h, w) = output.branch_heights.dim();
    let mut out = Array3::<f32>::zeros((b, h, w));
    for bi in 0..b {
        for ci in 0..c {
            let p = output.class_probs[[bi, ci]];
            let map = output
                .branch_heights
                .index_axis(Axis(0), bi)
                .index_axis(Axis(0), ci)
                .to_owned();
            out.index_axis_mut(Axis(0), bi)
                .zip_mut_with(&map, |acc, v| *acc += p * v);
        }
    }
    out
}

/// Single-sample variant of [`blend`], working straight off a forward cache.
pub fn blend_one(fwd: &SampleForward) -> Array2<f32> {
    let (h, w) = fwd.branch_heights[0].dim();
    let mut out = Array2::<f32>::zeros((h, w));
    for (p, map) in fwd.probs.iter().zip(&fwd.branch_heights) {
        out.zip_mut_with(map, |acc, v| *acc += p * v);
    }
    out
}

/// Selects one branch's height maps; the trainer routes each sample's height
/// losses to the branch matching its own label quality.
pub fn branch_prediction(
    output: &EnsembleOutput,
    quality: QualityClass,
) -> Result<Array3<f32>, ModelError> {
    let (_, c, _, _) = output.branch_heights.dim();
    let index = quality.index();
    if index >= c {
        return Err(ModelError::BranchOutOfRange { index, branches: c });
    }
    Ok(output.branch_heights.index_axis(Axis(1), index).to_owned())
}

#[derive(Clone, Debug, PartialEq)]
struct PairGrad {
    weight: Array2<f32>,
    bias: Array1<f32>,
}

impl PairGrad {
    fn zeros(rows: usize, cols: usize, bias: usize) -> Self {
        PairGrad {
            weight: Array2::zeros((rows, cols)),
            bias: Array1::zeros(bias),
        }
    }

    fn of_conv(c: &Conv2d) -> Self {
        Self::zeros(c.weight.nrows(), c.weight.ncols(), c.bias.len())
    }

    fn of_dense(d: &Dense) -> Self {
        Self::zeros(d.weight.nrows(), d.weight.ncols(), d.bias.len())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct EncoderGrad {
    stem: PairGrad,
    downs: Vec<PairGrad>,
}

#[derive(Clone, Debug, PartialEq)]
struct DecoderGrad {
    ups: Vec<PairGrad>,
    head: PairGrad,
}

#[derive(Clone, Debug, PartialEq)]
struct ClassifierGrad {
    convs: Vec<PairGrad>,
    fc1: PairGrad,
    fc2: PairGrad,
}

/// Gradient accumulator mirroring the model's parameter tensors one-to-one.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    encoder: EncoderGrad,
    decoders: Vec<DecoderGrad>,
    classifier: ClassifierGrad,
}

impl Gradients {
    pub fn zeros_of(model: &EnsembleModel) -> Self {
        Gradients {
            encoder: EncoderGrad {
                stem: PairGrad::of_conv(&model.encoder.stem),
                downs: model.encoder.downs.iter().map(PairGrad::of_conv).collect(),
            },
            decoders: model
                .decoders
                .iter()
                .map(|d| DecoderGrad {
                    ups: d.ups.iter().map(PairGrad::of_conv).collect(),
                    head: PairGrad::of_conv(&d.head),
                })
                .collect(),
            classifier: ClassifierGrad {
                convs: model
                    .classifier
                    .convs
                    .iter()
                    .map(PairGrad::of_conv)
                    .collect(),
                fc1: PairGrad::of_dense(&model.classifier.fc1),
                fc2: PairGrad::of_dense(&model.classifier.fc2),
            },
        }
    }

    fn pairs(&self) -> Vec<&PairGrad> {
        let mut out = vec![&self.encoder.stem];
        out.extend(self.encoder.downs.iter());
        for d in &self.decoders {
            out.extend(d.ups.iter());
            out.push(&d.head);
        }
        out.extend(self.classifier.convs.iter());
        out.push(&self.classifier.fc1);
        out.push(&self.classifier.fc2);
        out
    }

    fn pairs_mut(&mut self) -> Vec<&mut PairGrad> {
        let mut out = vec![&mut self.encoder.stem];
        out.extend(self.encoder.downs.iter_mut());
        for d in &mut self.decoders {
            out.extend(d.ups.iter_mut());
            out.push(&mut d.head);
        }
        out.extend(self.classifier.convs.iter_mut());
        out.push(&mut self.classifier.fc1);
        out.push(&mut self.classifier.fc2);
        out
    }

    /// Elementwise sum with another accumulator of the same shape.
    pub fn add(&mut self, other: &Gradients) {
        let others = other.pairs();
        for (mine, theirs) in self.pairs_mut().into_iter().zip(others) {
            mine.weight += &theirs.weight;
            mine.bias += &theirs.bias;
        }
    }

    pub fn scale(&mut self, s: f32) {
        for p in self.pairs_mut() {
            p.weight.mapv_inplace(|v| v * s);
            p.bias.mapv_inplace(|v| v * s);
        }
    }

    /// Flattens in the model's registry order (weight before bias).
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::new();
        for p in self.pairs() {
            out.extend_from_slice(p.weight.as_slice().expect("standard layout"));
            out.extend_from_slice(p.bias.as_slice().expect("standard layout"));
        }
        out
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"WKHC";
const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("malformed config json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("tensor {index}: expected `{want}`, found `{got}`")]
    NameMismatch {
        index: usize,
        want: String,
        got: String,
    },
    #[error("tensor `{name}`: stored shape {got:?} does not match {want:?}")]
    ShapeMismatch {
        name: String,
        want: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("checkpoint ended early or has trailing data")]
    Truncated,
}

/// Writes a self-describing checkpoint: magic, version, config JSON, then
/// every parameter tensor as (name, shape, f32 little-endian data) in
/// registry order.
pub fn save_checkpoint(model: &EnsembleModel, path: &Path) -> Result<(), CheckpointError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(&model.config)?;
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config);
    let mut count = 0u32;
    model.visit_params(&mut |_, _, _| count += 1);
    buf.extend_from_slice(&count.to_le_bytes());
    model.visit_params(&mut |name, shape, data| {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(shape.len() as u8);
        for d in shape {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    });
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

fn take<'a>(bytes: &'a [u8], cur: &mut usize, n: usize) -> Result<&'a [u8], CheckpointError> {
    if *cur + n > bytes.len() {
        return Err(CheckpointError::Truncated);
    }
    let s = &bytes[*cur..*cur + n];
    *cur += n;
    Ok(s)
}

/// Loads a checkpoint saved by [`save_checkpoint`], rebuilding the model
/// from the embedded config and verifying every tensor name and shape.
pub fn load_checkpoint(path: &Path) -> Result<EnsembleModel, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = 0usize;

    if take(&bytes, &mut cur, 4)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u16::from_le_bytes(take(&bytes, &mut cur, 2)?.try_into().expect("2 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let json_len =
        u32::from_le_bytes(take(&bytes, &mut cur, 4)?.try_into().expect("4 bytes")) as usize;
    let config: ModelConfig = serde_json::from_slice(take(&bytes, &mut cur, json_len)?)?;
    let n_tensors = u32::from_le_bytes(take(&bytes, &mut cur, 4)?.try_into().expect("4 bytes"));

    let mut model = EnsembleModel::new(config, 0)?;
    let mut index = 0u32;
    let mut failure: Option<CheckpointError> = None;
    model.visit_params_mut(&mut |name, shape, data| {
        if failure.is_some() {
            return;
        }
        let mut step = || -> Result<(), CheckpointError> {
            if index >= n_tensors {
                return Err(CheckpointError::Truncated);
            }
            let name_len =
                u16::from_le_bytes(take(&bytes, &mut cur, 2)?.try_into().expect("2 bytes"))
                    as usize;
            let got_name = String::from_utf8_lossy(take(&bytes, &mut cur, name_len)?).into_owned();
            if got_name != name {
                return Err(CheckpointError::NameMismatch {
                    index: index as usize,
                    want: name.to_string(),
                    got: got_name,
                });
            }
            let ndim = take(&bytes, &mut cur, 1)?[0] as usize;
            let mut got_shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                got_shape.push(u32::from_le_bytes(
                    take(&bytes, &mut cur, 4)?.try_into().expect("4 bytes"),
                ) as usize);
            }
            if got_shape != shape {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.to_string(),
                    want: shape.to_vec(),
                    got: got_shape,
                });
            }
            let raw = take(&bytes, &mut cur, data.len() * 4)?;
            for (i, v) in data.iter_mut().enumerate() {
                *v = f32::from_le_bytes(raw[i * 4..i * 4 + 4].try_into().expect("4 bytes"));
            }
            index += 1;
            Ok(())
        };
        if let Err(e) = step() {
            failure = Some(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if index != n_tensors || cur != bytes.len() {
        return Err(CheckpointError::Truncated);
    }
    Ok(model)
}
