//! Learned joint source-channel codec: conv encoder/decoder, the real-to-complex
//! symbol mapping with per-image power normalization, the MSE system loss, PSNR,
//! and end-to-end training through the block-fading channel.

use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{complex_noise, noise_sigma_from_snr, Equalizer, SosChannel, SosConfig};
use crate::error::{shape_err, Error, Result};
use crate::nn::{run_stack, Activation, ConvLayer};
use crate::params::{adam_step, AdamState, ParamSet};
use crate::rng::{derive_seed, rng_for};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Image and feature-tensor dimensions. Images are 3-channel, planar, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub img_h: usize,
    pub img_w: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Geometry {
    /// 16x16x3 images, 24 features of 4x4.
    pub const DESK: Geometry = Geometry {
        img_h: 16,
        img_w: 16,
        c: 24,
        h: 4,
        w: 4,
    };
    /// 32x32x3 images, 24 features of 8x8.
    pub const FULL: Geometry = Geometry {
        img_h: 32,
        img_w: 32,
        c: 24,
        h: 8,
        w: 8,
    };

    /// Source size `l`.
    pub fn image_len(&self) -> usize {
        3 * self.img_h * self.img_w
    }

    /// Channel symbols `k`.
    pub fn num_symbols(&self) -> usize {
        self.c * self.h * self.w / 2
    }

    pub fn slot_len(&self) -> usize {
        self.h * self.w / 2
    }

    pub fn bandwidth_ratio(&self) -> f64 {
        self.num_symbols() as f64 / self.image_len() as f64
    }

    pub fn feature_shape(&self) -> [usize; 3] {
        [self.c, self.h, self.w]
    }

    pub fn validate(&self) -> Result<()> {
        if self.img_h != 4 * self.h || self.img_w != 4 * self.w || self.c == 0 || !(self.h * self.w).is_multiple_of(2) {
            return Err(Error::Config(format!(
                "unsupported geometry {self:?}: need a 4x spatial reduction and an even feature map"
            )));
        }
        Ok(())
    }
}

/// Planar RGB image with pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != 3 * height * width {
            return Err(Error::Length {
                what: "image pixels",
                expected: 3 * height * width,
                actual: pixels.len(),
            });
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[3, self.height, self.width], self.pixels.clone()).expect("validated")
    }

    pub fn variance(&self) -> f64 {
        let n = self.pixels.len() as f64;
        let m = self.pixels.iter().sum::<f64>() / n;
        self.pixels.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / n
    }
}

/// Encoder output: `c` feature maps of `h x w`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor(Tensor);

impl FeatureTensor {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.shape().len() != 3 {
            return Err(shape_err(
                "feature tensor",
                format!("expected [c,h,w], got {:?}", tensor.shape()),
            ));
        }
        if !tensor.is_finite() {
            return Err(shape_err("feature tensor", "non-finite values"));
        }
        Ok(Self(tensor))
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self(Tensor::zeros(&[c, h, w]))
    }

    pub fn c(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn h(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn w(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.c(), self.h(), self.w()]
    }

    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }

    pub fn feature(&self, k: usize) -> &[f64] {
        let p = self.plane();
        &self.0.data()[k * p..(k + 1) * p]
    }

    pub fn feature_mut(&mut self, k: usize) -> &mut [f64] {
        let p = self.plane();
        &mut self.0.data_mut()[k * p..(k + 1) * p]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Complex channel input, `slot_len` consecutive symbols per feature slot.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolVector {
    symbols: Vec<Complex64>,
    slot_len: usize,
}

impl SymbolVector {
    pub fn new(symbols: Vec<Complex64>, slot_len: usize) -> Result<Self> {
        if slot_len == 0 || symbols.is_empty() || !symbols.len().is_multiple_of(slot_len) {
            return Err(Error::Length {
                what: "symbol vector (multiple of slot length)",
                expected: slot_len.max(1) * symbols.len().div_ceil(slot_len.max(1)),
                actual: symbols.len(),
            });
        }
        Ok(Self { symbols, slot_len })
    }

    pub fn symbols(&self) -> &[Complex64] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn slot_len(&self) -> usize {
        self.slot_len
    }

    pub fn num_slots(&self) -> usize {
        self.symbols.len() / self.slot_len
    }

    pub fn mean_power(&self) -> f64 {
        self.symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.symbols.len() as f64
    }
}

/// Result of [`to_symbols`]: the normalized symbols plus the scale the receiver
/// needs to undo normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct Mapped {
    pub symbols: SymbolVector,
    pub scale: f64,
    /// The input tensor was all zeros; symbols are zero and `scale` is 0.
    pub degenerate: bool,
}

/// Pairs each feature's row-major values as `(re, im)` into contiguous slot
/// symbols, then scales the whole block to mean power `power`.
pub fn to_symbols(features: &FeatureTensor, power: f64) -> Result<Mapped> {
    let plane = features.plane();
    if !plane.is_multiple_of(2) {
        return Err(shape_err(
            "to_symbols",
            format!("feature map of {plane} values cannot pair into symbols"),
        ));
    }
    let raw: Vec<Complex64> = features
        .tensor()
        .data()
        .chunks(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect();
    let k = raw.len();
    let norm = features.tensor().norm();
    if norm == 0.0 {
        return Ok(Mapped {
            symbols: SymbolVector::new(raw, plane / 2)?,
            scale: 0.0,
            degenerate: true,
        });
    }
    let scale = (k as f64 * power).sqrt() / norm;
    let symbols = raw.into_iter().map(|z| z * scale).collect();
    Ok(Mapped {
        symbols: SymbolVector::new(symbols, plane / 2)?,
        scale,
        degenerate: false,
    })
}

/// Inverse of [`to_symbols`]. A zero `scale` (degenerate input) yields zeros.
pub fn from_symbols(symbols: &SymbolVector, shape: [usize; 3], scale: f64) -> Result<FeatureTensor> {
    let [c, h, w] = shape;
    if symbols.len() * 2 != c * h * w {
        return Err(Error::Length {
            what: "symbols for feature geometry",
            expected: c * h * w / 2,
            actual: symbols.len(),
        });
    }
    let inv = if scale == 0.0 { 0.0 } else { 1.0 / scale };
    let data = symbols
        .symbols()
        .iter()
        .flat_map(|z| [z.re * inv, z.im * inv])
        .collect();
    FeatureTensor::new(Tensor::new(&[c, h, w], data)?)
}

/// `(1/l) * ||s_hat - s||^2`.
pub fn system_loss(s: &[f64], s_hat: &[f64]) -> Result<f64> {
    if s.len() != s_hat.len() {
        return Err(Error::Length {
            what: "reconstruction",
            expected: s.len(),
            actual: s_hat.len(),
        });
    }
    Ok(s.iter().zip(s_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / s.len() as f64)
}

/// `10 log10(max^2 / mse)` in dB; `+inf` when `mse == 0`.
pub fn psnr_from_mse(mse: f64, max: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max * max / mse).log10()
    }
}

pub fn psnr(s: &[f64], s_hat: &[f64], max: f64) -> Result<f64> {
    Ok(psnr_from_mse(system_loss(s, s_hat)?, max))
}

/// Anything that maps a feature tensor to a reconstruction differentiably on a tape.
pub trait FeatureDecoder {
    fn feature_shape(&self) -> [usize; 3];

    /// Records the decoder forward pass for `features` and returns the reconstruction.
    fn decode_var(&self, tape: &mut Tape, features: Var) -> Result<Var>;

    /// Whether [`decode_var`](Self::decode_var) also takes a `[C, N, H, W]` batch and
    /// returns the `N` reconstructions as `[3, N, img_h, img_w]`.
    fn decodes_batches(&self) -> bool {
        false
    }

    fn decode_values(&self, features: &FeatureTensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let a = tape.leaf(features.tensor().clone());
        let y = self.decode_var(&mut tape, a)?;
        Ok(tape.value(y).data().to_vec())
    }
}

fn conv(
    name: &str,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    transpose: bool,
    act: Activation,
) -> ConvLayer {
    ConvLayer {
        name: name.to_string(),
        c_in,
        c_out,
        kernel,
        stride,
        pad: 1,
        transpose,
        activation: act,
    }
}

/// Encoder stack: 16 kernels, three layers of 32, then `c`. The first two layers
/// halve the resolution.
pub fn encoder_layers(geom: &Geometry) -> Vec<ConvLayer> {
    use Activation::*;
    vec![
        conv("enc0", 3, 16, 3, 2, false, Relu),
        conv("enc1", 16, 32, 3, 2, false, Relu),
        conv("enc2", 32, 32, 3, 1, false, Relu),
        conv("enc3", 32, 32, 3, 1, false, Relu),
        conv("enc4", 32, geom.c, 3, 1, false, Identity),
    ]
}

/// Decoder stack: three transposed layers of 32, one of 16, one of 3 with a sigmoid
/// head. The third and fourth double the resolution.
pub fn decoder_layers(geom: &Geometry) -> Vec<ConvLayer> {
    use Activation::*;
    vec![
        conv("dec0", geom.c, 32, 3, 1, true, Relu),
        conv("dec1", 32, 32, 3, 1, true, Relu),
        conv("dec2", 32, 32, 4, 2, true, Relu),
        conv("dec3", 32, 16, 4, 2, true, Relu),
        conv("dec4", 16, 3, 3, 1, true, Sigmoid),
    ]
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub geometry: Geometry,
    pub layers: Vec<ConvLayer>,
    pub params: ParamSet,
}

impl Encoder {
    pub fn forward_var(&self, tape: &mut Tape, image: Var) -> Result<Var> {
        let bound = self.params.bind(tape);
        run_stack(&self.layers, tape, &bound, image)
    }

    pub fn encode(&self, image: &Image) -> Result<FeatureTensor> {
        if image.height != self.geometry.img_h || image.width != self.geometry.img_w {
            return Err(shape_err(
                "encode",
                format!(
                    "image {}x{} vs codec {}x{}",
                    image.height, image.width, self.geometry.img_h, self.geometry.img_w
                ),
            ));
        }
        let mut tape = Tape::new();
        let x = tape.leaf(image.to_tensor());
        let a = self.forward_var(&mut tape, x)?;
        FeatureTensor::new(tape.value(a).clone())
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub geometry: Geometry,
    pub layers: Vec<ConvLayer>,
    pub params: ParamSet,
}

impl FeatureDecoder for Decoder {
    fn feature_shape(&self) -> [usize; 3] {
        self.geometry.feature_shape()
    }

    fn decode_var(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        let bound = self.params.bind(tape);
        run_stack(&self.layers, tape, &bound, features)
    }

    fn decodes_batches(&self) -> bool {
        true
    }
}

impl Decoder {
    pub fn decode(&self, features: &FeatureTensor) -> Result<Image> {
        if features.shape() != self.geometry.feature_shape() {
            return Err(shape_err(
                "decode",
                format!(
                    "features {:?} vs codec {:?}",
                    features.shape(),
                    self.geometry.feature_shape()
                ),
            ));
        }
        let px = self.decode_values(features)?;
        Image::new(self.geometry.img_h, self.geometry.img_w, px)
    }
}

/// Encoder parameters, decoder parameters, and the training SNR they were fit at.
#[derive(Clone, Debug)]
pub struct Codec {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub snr_train_db: Option<f64>,
}

impl Codec {
    pub fn init(geometry: Geometry, seed: u64) -> Result<Self> {
        geometry.validate()?;
        let mut rng = rng_for(seed, &[0xC0DE]);
        let enc_layers = encoder_layers(&geometry);
        let dec_layers = decoder_layers(&geometry);
        let mut enc = ParamSet::new();
        for l in &enc_layers {
            l.init(&mut enc, &mut rng)?;
        }
        let mut dec = ParamSet::new();
        for l in &dec_layers {
            l.init(&mut dec, &mut rng)?;
        }
        Ok(Self {
            encoder: Encoder {
                geometry,
                layers: enc_layers,
                params: enc,
            },
            decoder: Decoder {
                geometry,
                layers: dec_layers,
                params: dec,
            },
            snr_train_db: None,
        })
    }

    pub fn geometry(&self) -> Geometry {
        self.encoder.geometry
    }

    pub fn encode(&self, image: &Image) -> Result<FeatureTensor> {
        self.encoder.encode(image)
    }

    pub fn decode(&self, features: &FeatureTensor) -> Result<Image> {
        self.decoder.decode(features)
    }

    /// Single checkpoint holding both parameter sets plus geometry metadata.
    pub fn to_param_set(&self) -> Result<ParamSet> {
        let g = self.geometry();
        let mut all = ParamSet::new();
        all.insert(
            "meta.geometry",
            Tensor::from_vec(vec![g.img_h as f64, g.img_w as f64, g.c as f64, g.h as f64, g.w as f64]),
        )?;
        all.insert(
            "meta.snr_train",
            Tensor::scalar(self.snr_train_db.unwrap_or(f64::INFINITY)),
        )?;
        for (n, t) in self.encoder.params.iter().chain(self.decoder.params.iter()) {
            all.insert(n, t.clone())?;
        }
        Ok(all)
    }

    pub fn from_param_set(all: &ParamSet) -> Result<Self> {
        let g = all.get("meta.geometry")?.data().to_vec();
        if g.len() != 5 {
            return Err(Error::Config("bad geometry metadata".into()));
        }
        let geometry = Geometry {
            img_h: g[0] as usize,
            img_w: g[1] as usize,
            c: g[2] as usize,
            h: g[3] as usize,
            w: g[4] as usize,
        };
        let snr = all.get("meta.snr_train")?.item();
        let mut codec = Codec::init(geometry, 0)?;
        codec.snr_train_db = snr.is_finite().then_some(snr);
        for set in [&mut codec.encoder.params, &mut codec.decoder.params] {
            let names: Vec<String> = set.names().map(str::to_string).collect();
            for n in names {
                let src = all.get(&n)?;
                let dst = set.get_mut(&n)?;
                if src.shape() != dst.shape() {
                    return Err(shape_err(
                        "codec checkpoint",
                        format!("{n}: {:?} vs {:?}", src.shape(), dst.shape()),
                    ));
                }
                *dst = src.clone();
            }
        }
        Ok(codec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_param_set()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_param_set(&ParamSet::load(path)?)
    }
}

/// Channel model used inside the training loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainChannel {
    /// `None` trains a plain autoencoder: no fading, no noise.
    pub snr_db: Option<f64>,
    pub sos: SosConfig,
    pub equalizer: Equalizer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub channel: TrainChannel,
    pub seed: u64,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            channel: TrainChannel {
                snr_db: Some(13.0),
                sos: SosConfig::default(),
                equalizer: Equalizer::Mmse,
            },
            seed: 0,
        }
    }
}

/// Per-slot real gains and equalized noise for one transmission, in the
/// normalized symbol domain.
pub(crate) struct SlotDistortion {
    pub gains: Vec<f64>,
    pub noise: Vec<Complex64>,
}

/// Equalized output is `e_j (h_j x + n)`. For both equalizers `e_j h_j` is real,
/// so the effect on each feature slot is a real gain plus additive noise.
pub(crate) fn slot_distortion(csi: &[Complex64], noise: &[Complex64], sigma: f64, eq: Equalizer) -> SlotDistortion {
    let slot = noise.len() / csi.len();
    let weights: Vec<Complex64> = csi.iter().map(|&h| eq.weight(h, sigma)).collect();
    SlotDistortion {
        gains: weights.iter().zip(csi).map(|(e, h)| (e * h).re).collect(),
        noise: noise.iter().enumerate().map(|(i, n)| weights[i / slot] * n).collect(),
    }
}

/// Records `A -> A_hat` through normalization, block fading, noise, equalization
/// and de-normalization. Channel draws are constants; gradients flow through the
/// slot gains and through the feature norm that sets the noise level.
pub(crate) fn channel_on_tape(
    tape: &mut Tape,
    a: Var,
    csi: &[Complex64],
    noise: &[Complex64],
    sigma: f64,
    eq: Equalizer,
    power: f64,
) -> Result<Var> {
    let shape = tape.value(a).shape().to_vec();
    let plane = shape[1] * shape[2];
    let d = slot_distortion(csi, noise, sigma, eq);
    let gain_map: Vec<f64> = (0..shape.iter().product::<usize>())
        .map(|i| d.gains[i / plane])
        .collect();
    let noise_map: Vec<f64> = d.noise.iter().flat_map(|z| [z.re, z.im]).collect();
    let k = noise.len() as f64;
    let gain = tape.leaf(Tensor::new(&shape, gain_map)?);
    let noise = tape.leaf(Tensor::new(&shape, noise_map)?);
    let signal = tape.mul(a, gain)?;
    let norm = tape.norm(a)?;
    let inv_scale = tape.scale(norm, 1.0 / (k * power).sqrt())?;
    let n = tape.mul_scalar(noise, inv_scale)?;
    tape.add(signal, n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

/// End-to-end training with the channel in the loop. Every image in every epoch
/// sees a fresh fading realization and noise draw. No feature arrangement is
/// applied during training.
pub fn train_codec(images: &[Image], geometry: Geometry, cfg: &CodecTrainConfig) -> Result<(Codec, Vec<EpochLoss>)> {
    if images.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut codec = Codec::init(geometry, cfg.seed)?;
    codec.snr_train_db = cfg.channel.snr_db;
    let mut enc_adam = AdamState::new(&codec.encoder.params, cfg.lr);
    let mut dec_adam = AdamState::new(&codec.decoder.params, cfg.lr);
    let sigma = cfg.channel.snr_db.map(|s| noise_sigma_from_snr(s, 1.0)).transpose()?;
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut shuffle_rng = rng_for(cfg.seed, &[0x5487]);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g_enc = codec.encoder.params.zeros_like();
            let mut g_dec = codec.decoder.params.zeros_like();
            let mut batch_loss = 0.0;
            for &i in batch {
                let mut tape = Tape::new();
                let eb = codec.encoder.params.bind(&mut tape);
                let db = codec.decoder.params.bind(&mut tape);
                let x = tape.leaf(images[i].to_tensor());
                let a = run_stack(&codec.encoder.layers, &mut tape, &eb, x)?;
                let a_hat = match sigma {
                    None => a,
                    Some(sigma) => {
                        let item_seed = derive_seed(cfg.seed, &[0xC4, epoch as u64, i as u64]);
                        let csi = SosChannel::new(cfg.channel.sos, item_seed)?
                            .generate(0, geometry.c)
                            .samples;
                        let mut rng = rng_for(item_seed, &[0x4015E]);
                        let noise = complex_noise(geometry.num_symbols(), sigma, &mut rng);
                        channel_on_tape(&mut tape, a, &csi, &noise, sigma, cfg.channel.equalizer, 1.0)?
                    }
                };
                let y = run_stack(&codec.decoder.layers, &mut tape, &db, a_hat)?;
                let target = tape.leaf(images[i].to_tensor());
                let loss = tape.mse(y, target)?;
                let lv = tape.value(loss).item();
                if !lv.is_finite() {
                    return Err(Error::Diverged { epoch, step, loss: lv });
                }
                batch_loss += lv;
                let mut targets = eb.vars();
                targets.extend(db.vars());
                let mut grads = tape.backward(loss, &targets)?;
                let dec_grads = grads.split_off(eb.vars().len());
                g_enc.accumulate(&eb.collect_grads(grads), 1.0)?;
                g_dec.accumulate(&db.collect_grads(dec_grads), 1.0)?;
            }
            let inv = 1.0 / batch.len() as f64;
            let mut ge = codec.encoder.params.zeros_like();
            ge.accumulate(&g_enc, inv)?;
            let mut gd = codec.decoder.params.zeros_like();
            gd.accumulate(&g_dec, inv)?;
            adam_step(&mut codec.encoder.params, &ge, &mut enc_adam)?;
            adam_step(&mut codec.decoder.params, &gd, &mut dec_adam)?;
            total += batch_loss;
            step += 1;
        }
        let mean = total / images.len() as f64;
        if !mean.is_finite() || !codec.encoder.params.is_finite() || !codec.decoder.params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step,
                loss: mean,
            });
        }
        history.push(EpochLoss { epoch, loss: mean });
    }
    Ok((codec, history))
}

/// Mean reconstruction loss over `images` with no channel.
pub fn clean_loss(codec: &Codec, images: &[Image]) -> Result<f64> {
    let mut total = 0.0;
    for img in images {
        let rec = codec.decode(&codec.encode(img)?)?;
        total += system_loss(img.pixels(), rec.pixels())?;
    }
    Ok(total / images.len() as f64)
}

/// Draws a random image for tests and examples.
pub fn random_image<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Image {
    Image::new(h, w, (0..3 * h * w).map(|_| rng.random::<f64>()).collect()).expect("in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandwidth_ratio_is_quarter_for_both_profiles() {
        for g in [Geometry::DESK, Geometry::FULL] {
            assert_eq!(g.bandwidth_ratio(), 0.25);
            g.validate().unwrap();
        }
        assert_eq!(Geometry::DESK.num_symbols(), 192);
        assert_eq!(Geometry::DESK.image_len(), 768);
    }

    #[test]
    fn desk_encoder_emits_24x4x4() {
        let codec = Codec::init(Geometry::DESK, 1).unwrap();
        let mut rng = rng_for(2, &[]);
        let img = random_image(16, 16, &mut rng);
        let a = codec.encode(&img).unwrap();
        assert_eq!(a.shape(), [24, 4, 4]);
        assert_eq!(a, codec.encode(&img).unwrap());
        let rec = codec.decode(&a).unwrap();
        assert_eq!((rec.height, rec.width), (16, 16));
        assert!(rec.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn full_geometry_shapes() {
        let codec = Codec::init(Geometry::FULL, 1).unwrap();
        let mut rng = rng_for(3, &[]);
        let a = codec.encode(&random_image(32, 32, &mut rng)).unwrap();
        assert_eq!(a.shape(), [24, 8, 8]);
        assert_eq!(codec.decode(&a).unwrap().len(), 3072);
    }

    #[test]
    fn zero_image_with_zero_biases_encodes_to_zero() {
        let codec = Codec::init(Geometry::DESK, 5).unwrap();
        let img = Image::new(16, 16, vec![0.0; 768]).unwrap();
        let a = codec.encode(&img).unwrap();
        assert!(a.tensor().data().iter().all(|&v| v == 0.0));
        let m = to_symbols(&a, 1.0).unwrap();
        assert!(m.degenerate);
        assert!(m.symbols.symbols().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn geometry_mismatch_rejected() {
        let codec = Codec::init(Geometry::DESK, 1).unwrap();
        let mut rng = rng_for(2, &[]);
        assert!(codec.encode(&random_image(32, 32, &mut rng)).is_err());
        assert!(codec.decode(&FeatureTensor::zeros(24, 8, 8)).is_err());
    }

    #[test]
    fn pairing_rule() {
        let f = FeatureTensor::new(Tensor::new(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        let m = to_symbols(&f, 1.0).unwrap();
        let s = m.symbols.symbols();
        // pre-normalization symbols are 1+0j and 0+1j; norm is sqrt(2), k = 2, so scale is 1
        assert!((m.scale - 1.0).abs() < 1e-15);
        assert_eq!(s, [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)]);
        assert_eq!(m.symbols.slot_len(), 2);
    }

    #[test]
    fn power_constraint_and_round_trip() {
        let mut rng = rng_for(8, &[]);
        for _ in 0..20 {
            let data: Vec<f64> = (0..24 * 16).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let f = FeatureTensor::new(Tensor::new(&[24, 4, 4], data).unwrap()).unwrap();
            let m = to_symbols(&f, 1.0).unwrap();
            assert!((m.symbols.mean_power() - 1.0).abs() < 1e-9);
            assert_eq!(m.symbols.num_slots(), 24);
            let back = from_symbols(&m.symbols, [24, 4, 4], m.scale).unwrap();
            assert!(back.tensor().max_abs_diff(f.tensor()) < 1e-12);
        }
    }

    #[test]
    fn from_symbols_rejects_wrong_length() {
        let s = SymbolVector::new(vec![Complex64::new(1.0, 0.0); 4], 2).unwrap();
        assert!(from_symbols(&s, [2, 2, 4], 1.0).is_err());
    }

    #[test]
    fn loss_and_psnr_values() {
        assert_eq!(system_loss(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert!((system_loss(&[0.0; 7], &[0.5; 7]).unwrap() - 0.25).abs() < 1e-15);
        assert!((psnr_from_mse(0.01, 1.0) - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(1.0, 1.0), 0.0);
        assert_eq!(psnr_from_mse(0.0, 1.0), f64::INFINITY);
        let s = [0.1, 0.9, 0.5];
        let t = [0.2, 0.7, 0.5];
        let mse = system_loss(&s, &t).unwrap();
        assert!((psnr(&s, &t, 1.0).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut codec = Codec::init(Geometry::DESK, 4).unwrap();
        codec.snr_train_db = Some(7.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("codec.bin");
        codec.save(&p).unwrap();
        let back = Codec::load(&p).unwrap();
        assert_eq!(back.encoder.params, codec.encoder.params);
        assert_eq!(back.decoder.params, codec.decoder.params);
        assert_eq!(back.snr_train_db, Some(7.0));
    }

    #[test]
    fn tape_channel_matches_symbol_path() {
        use crate::channel::{apply_channel_with_noise, equalize};
        let mut rng = rng_for(21, &[]);
        let data: Vec<f64> = (0..24 * 16).map(|_| rng.random::<f64>() - 0.5).collect();
        let f = FeatureTensor::new(Tensor::new(&[24, 4, 4], data).unwrap()).unwrap();
        let csi = SosChannel::new(SosConfig::default(), 3)
            .unwrap()
            .generate(0, 24)
            .samples;
        let sigma = 0.4;
        let noise = complex_noise(192, sigma, &mut rng);
        for eq in [Equalizer::Mmse, Equalizer::ZeroForcing] {
            let m = to_symbols(&f, 1.0).unwrap();
            let y = apply_channel_with_noise(&m.symbols, &csi, &noise).unwrap();
            let xh = equalize(&y, &csi, sigma, eq).unwrap();
            let expect = from_symbols(&xh, [24, 4, 4], m.scale).unwrap();
            let mut tape = Tape::new();
            let a = tape.leaf(f.tensor().clone());
            let out = channel_on_tape(&mut tape, a, &csi, &noise, sigma, eq, 1.0).unwrap();
            assert!(tape.value(out).max_abs_diff(expect.tensor()) < 1e-10);
        }
    }

    #[test]
    fn noiseless_training_decreases_loss_and_is_deterministic() {
        let mut rng = rng_for(30, &[]);
        let images: Vec<Image> = (0..24).map(|_| random_image(16, 16, &mut rng)).collect();
        let cfg = CodecTrainConfig {
            epochs: 5,
            batch_size: 8,
            lr: 1e-3,
            channel: TrainChannel {
                snr_db: None,
                sos: SosConfig::default(),
                equalizer: Equalizer::Mmse,
            },
            seed: 3,
        };
        let (codec, hist) = train_codec(&images, Geometry::DESK, &cfg).unwrap();
        for w in hist.windows(2) {
            assert!(w[1].loss < w[0].loss, "{hist:?}");
        }
        let (again, hist2) = train_codec(&images, Geometry::DESK, &cfg).unwrap();
        assert_eq!(hist, hist2);
        assert_eq!(codec.decoder.params, again.decoder.params);
    }

    #[test]
    fn empty_training_set_rejected() {
        assert!(matches!(
            train_codec(&[], Geometry::DESK, &CodecTrainConfig::default()),
            Err(Error::Empty(_))
        ));
    }
}
