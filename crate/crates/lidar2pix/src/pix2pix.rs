//! Conditional adversarial image-to-image model: U-Net generator with skip
//! connections, patch-based discriminator, adversarial + L1 objective, and
//! the alternating two-player training loop.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{concatenate, Array3, Axis, NdFloat};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    bce_with_logits, bce_with_logits_grad, l1_grad, l1_loss, Adam, Conv2d, ConvTranspose2d,
    Dropout, InstanceNorm, LeakyRelu, ParamView, Tanh,
};
use crate::raster::{from_model_range, to_model_range, ChannelMode, RasterImage};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"L2CK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub input_channels: usize,
    pub output_channels: usize,
    pub base_filters: usize,
    /// log2 of the image side; the encoder halves the resolution this many
    /// times, down to 1x1.
    pub depth: usize,
}

impl GeneratorConfig {
    pub fn for_image_side(side: usize, input_channels: usize, base_filters: usize) -> Result<Self> {
        if !side.is_power_of_two() {
            return Err(Error::invalid("image size", format!("{side} is not a power of two")));
        }
        let depth = side.trailing_zeros() as usize;
        let cfg = GeneratorConfig {
            input_channels,
            output_channels: 3,
            base_filters,
            depth,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn image_side(&self) -> usize {
        1 << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 4 {
            return Err(Error::invalid("GeneratorConfig", "depth must be >= 4 (image side >= 16)"));
        }
        if !(self.input_channels == 1 || self.input_channels == 2) {
            return Err(Error::invalid("GeneratorConfig", "input_channels must be 1 or 2"));
        }
        if self.base_filters == 0 {
            return Err(Error::invalid("GeneratorConfig", "base_filters must be > 0"));
        }
        Ok(())
    }

    fn enc_channels(&self, level: usize) -> usize {
        self.base_filters * (1 << level).min(8)
    }
}

/// Layer widths 64,128,256,512; stride 2 on the first three, stride 1 with
/// padding 1 on the last two, yielding a 30x30 patch map at S=256 and 6x6
/// at S=64.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub input_channels: usize,
}

impl DiscriminatorConfig {
    /// Images below side 32 get two stride-2 layers instead of three so the
    /// tail convolutions never underflow.
    fn stride2_layers(image_side: usize) -> usize {
        if image_side >= 32 {
            3
        } else {
            2
        }
    }

    pub fn patch_map_side(&self, image_side: usize) -> usize {
        let n2 = Self::stride2_layers(image_side);
        let mut s = image_side;
        for i in 0..4 {
            let stride = if i < n2 { 2 } else { 1 };
            s = (s + 2 - 4) / stride + 1;
        }
        s - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub lambda_l1: f64,
    pub seed: u64,
    pub mode: ChannelMode,
    /// Fraction of the training pairs held out for per-epoch validation;
    /// 0 validates on the training pairs themselves.
    pub val_fraction: f64,
}

impl TrainConfig {
    fn base(mode: ChannelMode, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: 1,
            learning_rate: 2e-4,
            adam_beta1: 0.5,
            lambda_l1: 100.0,
            seed,
            mode,
            val_fraction: 0.1,
        }
    }

    /// Experiment 1 preset: one reflectance channel, 50 epochs, batch 1.
    pub fn exp1(seed: u64) -> Self {
        Self::base(ChannelMode::ReflectanceOnly, 50, seed)
    }

    /// Experiment 2 preset: reflectance + distance, 40 epochs, batch 1.
    pub fn exp2(seed: u64) -> Self {
        Self::base(ChannelMode::ReflectanceAndDistance, 40, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size != 1 {
            return Err(Error::invalid("TrainConfig", "batch_size must be 1"));
        }
        if self.lambda_l1 < 0.0 {
            return Err(Error::invalid("TrainConfig", "lambda_l1 must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid("TrainConfig", "val_fraction must be in [0,1)"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Generator

struct EncBlock<T> {
    conv: Conv2d<T>,
    norm: Option<InstanceNorm<T>>,
    act: LeakyRelu<T>,
}

impl<T: NdFloat> EncBlock<T> {
    fn forward(&mut self, x: &Array3<T>) -> Array3<T> {
        let mut y = self.conv.forward(x);
        if let Some(n) = &mut self.norm {
            y = n.forward(&y);
        }
        self.act.forward(&y)
    }

    fn backward(&mut self, dy: &Array3<T>) -> Array3<T> {
        let mut g = self.act.backward(dy);
        if let Some(n) = &mut self.norm {
            g = n.backward(&g);
        }
        self.conv.backward(&g)
    }
}

struct DecBlock<T> {
    deconv: ConvTranspose2d<T>,
    norm: Option<InstanceNorm<T>>,
    dropout: Option<Dropout<T>>,
    relu: Option<LeakyRelu<T>>,
    tanh: Option<Tanh<T>>,
}

impl<T: NdFloat> DecBlock<T> {
    fn forward(&mut self, x: &Array3<T>, train: bool) -> Array3<T> {
        let mut y = self.deconv.forward(x);
        if let Some(n) = &mut self.norm {
            y = n.forward(&y);
        }
        if let Some(d) = &mut self.dropout {
            y = d.forward(&y, train);
        }
        if let Some(r) = &mut self.relu {
            y = r.forward(&y);
        }
        if let Some(t) = &mut self.tanh {
            y = t.forward(&y);
        }
        y
    }

    fn backward(&mut self, dy: &Array3<T>) -> Array3<T> {
        let mut g = dy.clone();
        if let Some(t) = &self.tanh {
            g = t.backward(&g);
        }
        if let Some(r) = &self.relu {
            g = r.backward(&g);
        }
        if let Some(d) = &self.dropout {
            g = d.backward(&g);
        }
        if let Some(n) = &mut self.norm {
            g = n.backward(&g);
        }
        self.deconv.backward(&g)
    }
}

pub struct Generator<T> {
    pub cfg: GeneratorConfig,
    enc: Vec<EncBlock<T>>,
    dec: Vec<DecBlock<T>>,
    skips: Vec<Array3<T>>,
}

impl<T: NdFloat> Generator<T> {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.depth;
        let mut enc = Vec::with_capacity(d);
        for i in 0..d {
            let in_ch = if i == 0 { cfg.input_channels } else { cfg.enc_channels(i - 1) };
            let out_ch = cfg.enc_channels(i);
            enc.push(EncBlock {
                conv: Conv2d::new(&format!("enc{i}"), in_ch, out_ch, 4, 2, 1, &mut rng),
                // no norm on the outermost layer or the 1x1 bottleneck
                norm: (i > 0 && i < d - 1).then(InstanceNorm::new),
                act: LeakyRelu::new(0.2),
            });
        }
        let mut dec = Vec::with_capacity(d);
        for i in 0..d {
            let last = i == d - 1;
            let in_ch = if i == 0 {
                cfg.enc_channels(d - 1)
            } else {
                // previous decoder output concatenated with the mirror skip
                let prev_out = cfg.enc_channels(d - 1 - i);
                prev_out + cfg.enc_channels(d - 1 - i)
            };
            let out_ch = if last { cfg.output_channels } else { cfg.enc_channels(d - 2 - i) };
            let drop_seed: u64 = rng.gen();
            dec.push(DecBlock {
                deconv: ConvTranspose2d::new(&format!("dec{i}"), in_ch, out_ch, 4, 2, 1, &mut rng),
                norm: (!last).then(InstanceNorm::new),
                dropout: (!last && i < 3)
                    .then(|| Dropout::new(0.5, ChaCha8Rng::seed_from_u64(drop_seed))),
                relu: (!last).then(|| LeakyRelu::new(0.0)),
                tanh: last.then(Tanh::new),
            });
        }
        Ok(Generator { cfg, enc, dec, skips: Vec::new() })
    }

    pub fn forward(&mut self, x: &Array3<T>, train: bool) -> Result<Array3<T>> {
        let side = self.cfg.image_side();
        let want = (self.cfg.input_channels, side, side);
        if x.dim() != want {
            return Err(Error::ShapeMismatch {
                expected: format!("{want:?}"),
                got: format!("{:?}", x.dim()),
            });
        }
        let d = self.cfg.depth;
        self.skips.clear();
        let mut h = x.clone();
        for e in &mut self.enc {
            h = e.forward(&h);
            self.skips.push(h.clone());
        }
        h = self.skips[d - 1].clone();
        for (i, dec) in self.dec.iter_mut().enumerate() {
            let input = if i == 0 {
                h
            } else {
                concatenate(Axis(0), &[h.view(), self.skips[d - 1 - i].view()]).unwrap()
            };
            h = dec.forward(&input, train);
        }
        Ok(h)
    }

    pub fn backward(&mut self, dy: &Array3<T>) {
        let d = self.cfg.depth;
        let mut dskips: Vec<Option<Array3<T>>> = (0..d).map(|_| None).collect();
        let mut dh = dy.clone();
        for i in (0..d).rev() {
            let din = self.dec[i].backward(&dh);
            if i == 0 {
                accumulate(&mut dskips[d - 1], &din);
            } else {
                let prev_out = self.cfg.enc_channels(d - 1 - i);
                let (a, b) = din.view().split_at(Axis(0), prev_out);
                accumulate(&mut dskips[d - 1 - i], &b.to_owned());
                dh = a.to_owned();
            }
        }
        let mut g = dskips[d - 1].take().unwrap();
        for j in (0..d).rev() {
            let dx = self.enc[j].backward(&g);
            if j > 0 {
                g = match dskips[j - 1].take() {
                    Some(s) => dx + s,
                    None => dx,
                };
            }
        }
    }

    pub fn visit_params<'a>(&'a mut self, out: &mut Vec<ParamView<'a, T>>) {
        for e in &mut self.enc {
            e.conv.visit_params("gen", out);
        }
        for d in &mut self.dec {
            d.deconv.visit_params("gen", out);
        }
    }

    pub fn zero_grads(&mut self) {
        let mut views = Vec::new();
        self.visit_params(&mut views);
        for v in views {
            v.grad.fill(T::zero());
        }
    }
}

fn accumulate<T: NdFloat>(slot: &mut Option<Array3<T>>, g: &Array3<T>) {
    match slot {
        Some(s) => *s = &*s + g,
        None => *slot = Some(g.clone()),
    }
}

// ---------------------------------------------------------------------------
// Discriminator

pub struct Discriminator<T> {
    pub cfg: DiscriminatorConfig,
    convs: Vec<Conv2d<T>>,
    norms: Vec<Option<InstanceNorm<T>>>,
    acts: Vec<LeakyRelu<T>>,
    cond_channels: usize,
}

impl<T: NdFloat> Discriminator<T> {
    pub fn new(cfg: DiscriminatorConfig, cond_channels: usize, image_side: usize, seed: u64) -> Self {
        let n2 = DiscriminatorConfig::stride2_layers(image_side);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [64usize, 128, 256, 512];
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut acts = Vec::new();
        let mut in_ch = cfg.input_channels;
        for (i, &w) in widths.iter().enumerate() {
            let stride = if i < n2 { 2 } else { 1 };
            convs.push(Conv2d::new(&format!("disc{i}"), in_ch, w, 4, stride, 1, &mut rng));
            norms.push((i > 0).then(InstanceNorm::new));
            acts.push(LeakyRelu::new(0.2));
            in_ch = w;
        }
        convs.push(Conv2d::new("disc_out", in_ch, 1, 4, 1, 1, &mut rng));
        Discriminator { cfg, convs, norms, acts, cond_channels }
    }

    /// Patch logit map for a (conditioning, candidate) pair.
    pub fn forward(&mut self, cond: &Array3<T>, img: &Array3<T>) -> Result<Array3<T>> {
        if cond.dim().1 != img.dim().1 || cond.dim().2 != img.dim().2 {
            return Err(Error::ShapeMismatch {
                expected: format!("spatially aligned, cond {:?}", cond.dim()),
                got: format!("img {:?}", img.dim()),
            });
        }
        if cond.dim().0 + img.dim().0 != self.cfg.input_channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{} total channels", self.cfg.input_channels),
                got: format!("{} + {}", cond.dim().0, img.dim().0),
            });
        }
        let mut h = concatenate(Axis(0), &[cond.view(), img.view()]).unwrap();
        for i in 0..self.acts.len() {
            h = self.convs[i].forward(&h);
            if let Some(n) = &mut self.norms[i] {
                h = n.forward(&h);
            }
            h = self.acts[i].forward(&h);
        }
        Ok(self.convs.last_mut().unwrap().forward(&h))
    }

    /// Backpropagate a patch-map gradient; returns the gradient w.r.t. the
    /// candidate image (the conditioning input gets no further use).
    pub fn backward(&mut self, dy: &Array3<T>) -> Array3<T> {
        let mut g = self.convs.last_mut().unwrap().backward(dy);
        for i in (0..self.acts.len()).rev() {
            g = self.acts[i].backward(&g);
            if let Some(n) = &mut self.norms[i] {
                g = n.backward(&g);
            }
            g = self.convs[i].backward(&g);
        }
        let (_, dimg) = g.view().split_at(Axis(0), self.cond_channels);
        dimg.to_owned()
    }

    pub fn visit_params<'a>(&'a mut self, out: &mut Vec<ParamView<'a, T>>) {
        for c in &mut self.convs {
            c.visit_params("disc", out);
        }
    }

    pub fn zero_grads(&mut self) {
        let mut views = Vec::new();
        self.visit_params(&mut views);
        for v in views {
            v.grad.fill(T::zero());
        }
    }
}

// ---------------------------------------------------------------------------
// Losses

/// BCE(d_out_on_fake, 1) + lambda * mean|fake - target|.
pub fn generator_loss<T: NdFloat>(
    d_out_on_fake: &Array3<T>,
    fake: &Array3<T>,
    target: &Array3<T>,
    lambda_l1: f64,
) -> T {
    bce_with_logits(d_out_on_fake, 1.0)
        + T::from(lambda_l1).unwrap() * l1_loss(fake, target)
}

/// 0.5 * (BCE(d_on_real, 1) + BCE(d_on_fake, 0)).
pub fn discriminator_loss<T: NdFloat>(d_on_real: &Array3<T>, d_on_fake: &Array3<T>) -> T {
    let half = T::from(0.5).unwrap();
    half * (bce_with_logits(d_on_real, 1.0) + bce_with_logits(d_on_fake, 0.0))
}

// ---------------------------------------------------------------------------
// Checkpoint

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub gen_cfg: GeneratorConfig,
    pub mode: ChannelMode,
    pub epoch: usize,
    pub val_l1: f64,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    fn capture(gen: &mut Generator<f32>, disc: &mut Discriminator<f32>, epoch: usize, val_l1: f64) -> Self {
        let mut tensors = Vec::new();
        let mut views = Vec::new();
        gen.visit_params(&mut views);
        disc.visit_params(&mut views);
        for v in views {
            tensors.push((v.name.clone(), v.shape.clone(), v.value.to_vec()));
        }
        Checkpoint {
            gen_cfg: gen.cfg,
            mode: if gen.cfg.input_channels == 1 {
                ChannelMode::ReflectanceOnly
            } else {
                ChannelMode::ReflectanceAndDistance
            },
            epoch,
            val_l1,
            tensors,
        }
    }

    fn restore_into(&self, views: &mut [ParamView<f32>]) -> Result<()> {
        for v in views.iter_mut() {
            let (_, shape, data) = self
                .tensors
                .iter()
                .find(|(n, _, _)| n == &v.name)
                .ok_or_else(|| Error::invalid("Checkpoint", format!("missing tensor {}", v.name)))?;
            if shape != &v.shape || data.len() != v.value.len() {
                return Err(Error::invalid(
                    "Checkpoint",
                    format!("tensor {} shape mismatch", v.name),
                ));
            }
            v.value.copy_from_slice(data);
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for v in [
            self.gen_cfg.input_channels,
            self.gen_cfg.output_channels,
            self.gen_cfg.base_filters,
            self.gen_cfg.depth,
        ] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&[self.mode.channels() as u8])?;
        w.write_all(&(self.epoch as u64).to_le_bytes())?;
        w.write_all(&self.val_l1.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, shape, data) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &x in data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
        );
        self.write_binary(&mut f).map_err(|e| Error::io(path, e))
    }

    pub fn read_binary<R: Read>(r: &mut R, path: &Path) -> Result<Self> {
        let bad = |why: &str| Error::parse(path, why.to_string());
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|_| bad("truncated magic"))?;
        if &b4 != CHECKPOINT_MAGIC {
            return Err(bad("bad magic, expected L2CK"));
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2).map_err(|_| bad("truncated version"))?;
        if u16::from_le_bytes(b2) != CHECKPOINT_VERSION {
            return Err(bad("unsupported checkpoint version"));
        }
        let mut u32s = [0usize; 4];
        for slot in &mut u32s {
            r.read_exact(&mut b4).map_err(|_| bad("truncated config"))?;
            *slot = u32::from_le_bytes(b4) as usize;
        }
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1).map_err(|_| bad("truncated mode"))?;
        let mode = match b1[0] {
            1 => ChannelMode::ReflectanceOnly,
            2 => ChannelMode::ReflectanceAndDistance,
            _ => return Err(bad("bad channel mode")),
        };
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|_| bad("truncated epoch"))?;
        let epoch = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8).map_err(|_| bad("truncated val_l1"))?;
        let val_l1 = f64::from_le_bytes(b8);
        r.read_exact(&mut b4).map_err(|_| bad("truncated tensor count"))?;
        let count = u32::from_le_bytes(b4) as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b4).map_err(|_| bad("truncated name length"))?;
            let nlen = u32::from_le_bytes(b4) as usize;
            if nlen > 4096 {
                return Err(bad("implausible tensor name length"));
            }
            let mut nbuf = vec![0u8; nlen];
            r.read_exact(&mut nbuf).map_err(|_| bad("truncated name"))?;
            let name = String::from_utf8(nbuf).map_err(|_| bad("non-utf8 name"))?;
            r.read_exact(&mut b4).map_err(|_| bad("truncated rank"))?;
            let rank = u32::from_le_bytes(b4) as usize;
            if rank > 8 {
                return Err(bad("implausible tensor rank"));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                r.read_exact(&mut b8).map_err(|_| bad("truncated dims"))?;
                shape.push(u64::from_le_bytes(b8) as usize);
            }
            let len: usize = shape.iter().product();
            if len > 1 << 28 {
                return Err(bad("implausible tensor size"));
            }
            let mut data = vec![0f32; len];
            let mut fb = [0u8; 4];
            for slot in data.iter_mut() {
                r.read_exact(&mut fb).map_err(|_| bad("truncated tensor data"))?;
                *slot = f32::from_le_bytes(fb);
            }
            tensors.push((name, shape, data));
        }
        Ok(Checkpoint {
            gen_cfg: GeneratorConfig {
                input_channels: u32s[0],
                output_channels: u32s[1],
                base_filters: u32s[2],
                depth: u32s[3],
            },
            mode,
            epoch,
            val_l1,
            tensors,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(
            std::fs::File::open(path).map_err(|e| Error::io(path, e))?,
        );
        Self::read_binary(&mut f, path)
    }
}

/// Inference wrapper: a generator restored once from a checkpoint.
pub struct Predictor {
    gen: Generator<f32>,
    pub mode: ChannelMode,
}

impl Predictor {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut gen = Generator::<f32>::new(ckpt.gen_cfg, 0)?;
        let mut views = Vec::new();
        gen.visit_params(&mut views);
        ckpt.restore_into(&mut views)?;
        Ok(Predictor { gen, mode: ckpt.mode })
    }

    /// Deterministic inference: [0,1] raster in, 3-channel [0,1] image out.
    pub fn predict(&mut self, raster: &RasterImage) -> Result<RasterImage> {
        if raster.channels() != self.mode.channels() {
            return Err(Error::ModeMismatch {
                dataset: format!("{}-channel input", raster.channels()),
                requested: self.mode.name().to_string(),
            });
        }
        let x = to_model_range(raster);
        let y = self.gen.forward(&x, false)?;
        Ok(from_model_range(&y))
    }
}

pub fn predict(ckpt: &Checkpoint, raster: &RasterImage) -> Result<RasterImage> {
    Predictor::from_checkpoint(ckpt)?.predict(raster)
}

// ---------------------------------------------------------------------------
// Training

/// One [-1,1]-scaled training pair.
pub struct TrainPair {
    pub input: Array3<f32>,
    pub target: Array3<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub g_l1: f64,
    pub val_l1: f64,
}

pub struct TrainOutcome {
    /// Checkpoint with the lowest validation L1 seen.
    pub best: Checkpoint,
    pub history: Vec<EpochStats>,
}

pub fn train(
    pairs: &[TrainPair],
    cfg: &TrainConfig,
    base_filters: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dims = pairs[0].input.dim();
    let side = dims.1;
    if dims.0 != cfg.mode.channels() {
        return Err(Error::ModeMismatch {
            dataset: format!("{}-channel pairs", dims.0),
            requested: cfg.mode.name().to_string(),
        });
    }
    for p in pairs {
        if p.input.dim() != dims || p.target.dim() != (3, side, side) {
            return Err(Error::ShapeMismatch {
                expected: format!("input {dims:?}, target (3, {side}, {side})"),
                got: format!("input {:?}, target {:?}", p.input.dim(), p.target.dim()),
            });
        }
    }
    let gen_cfg = GeneratorConfig::for_image_side(side, cfg.mode.channels(), base_filters)?;
    let mut gen = Generator::<f32>::new(gen_cfg, cfg.seed)?;
    let disc_cfg = DiscriminatorConfig {
        input_channels: cfg.mode.channels() + 3,
    };
    let mut disc = Discriminator::<f32>::new(disc_cfg, cfg.mode.channels(), side, cfg.seed.wrapping_add(1));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut indices: Vec<usize> = (0..pairs.len()).collect();
    indices.shuffle(&mut rng);
    let val_count = ((pairs.len() as f64 * cfg.val_fraction).round() as usize).min(pairs.len() - 1);
    let (val_idx, train_idx) = indices.split_at(val_count);
    let val_idx: Vec<usize> = if val_idx.is_empty() {
        train_idx.to_vec()
    } else {
        val_idx.to_vec()
    };
    let mut train_idx = train_idx.to_vec();

    let mut adam_g = Adam::<f32>::new(cfg.learning_rate, cfg.adam_beta1);
    let mut adam_d = Adam::<f32>::new(cfg.learning_rate, cfg.adam_beta1);
    let lambda = cfg.lambda_l1 as f32;

    let validate = |gen: &mut Generator<f32>| -> Result<f64> {
        let mut total = 0.0f64;
        for &i in &val_idx {
            let fake = gen.forward(&pairs[i].input, false)?;
            total += l1_loss(&fake, &pairs[i].target) as f64;
        }
        Ok(total / val_idx.len() as f64)
    };

    let mut history = Vec::new();
    let init_val = validate(&mut gen)?;
    let mut best = Checkpoint::capture(&mut gen, &mut disc, 0, init_val);
    let mut best_val = init_val;

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let (mut d_sum, mut g_sum, mut l1_sum) = (0.0f64, 0.0f64, 0.0f64);
        for (k, &i) in train_idx.iter().enumerate() {
            let x = &pairs[i].input;
            let y = &pairs[i].target;
            let fake = gen.forward(x, true)?;

            // discriminator update
            disc.zero_grads();
            let d_real = disc.forward(x, y)?;
            let loss_real = bce_with_logits(&d_real, 1.0);
            let _ = disc.backward(&bce_with_logits_grad(&d_real, 1.0).mapv(|v| v * 0.5));
            let d_fake = disc.forward(x, &fake)?;
            let loss_fake = bce_with_logits(&d_fake, 0.0);
            let _ = disc.backward(&bce_with_logits_grad(&d_fake, 0.0).mapv(|v| v * 0.5));
            let d_loss = 0.5 * (loss_real + loss_fake) as f64;
            let mut views = Vec::new();
            disc.visit_params(&mut views);
            adam_d.step(&mut views);

            // generator update against the refreshed discriminator
            gen.zero_grads();
            disc.zero_grads();
            let d_fake2 = disc.forward(x, &fake)?;
            let g_bce = bce_with_logits(&d_fake2, 1.0);
            let g_l1 = l1_loss(&fake, y);
            let g_loss = (g_bce + lambda * g_l1) as f64;
            let dimg = disc.backward(&bce_with_logits_grad(&d_fake2, 1.0));
            let dfake = &dimg + &l1_grad(&fake, y).mapv(|v| v * lambda);
            gen.backward(&dfake);
            let mut views = Vec::new();
            gen.visit_params(&mut views);
            adam_g.step(&mut views);

            if !d_loss.is_finite() || !g_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    sample: k,
                    detail: format!("d_loss={d_loss}, g_loss={g_loss}"),
                });
            }
            d_sum += d_loss;
            g_sum += g_loss;
            l1_sum += g_l1 as f64;
        }
        let n = train_idx.len() as f64;
        let val_l1 = validate(&mut gen)?;
        history.push(EpochStats {
            epoch: epoch + 1,
            d_loss: d_sum / n,
            g_loss: g_sum / n,
            g_l1: l1_sum / n,
            val_l1,
        });
        if val_l1 < best_val {
            best_val = val_l1;
            best = Checkpoint::capture(&mut gen, &mut disc, epoch + 1, val_l1);
        }
    }
    Ok(TrainOutcome { best, history })
}

pub fn write_epoch_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut out = String::from("epoch,d_loss,g_loss,g_l1,val_l1\n");
    for s in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.epoch, s.d_loss, s.g_loss, s.g_l1, s.val_l1
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
