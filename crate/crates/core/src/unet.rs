//! Encoder-decoder U-Net assembled from the `nn` kernels.
//!
//! Encoder: `levels` blocks of two 3x3 conv + ReLU at widths F, 2F, 4F, ...,
//! each followed by 2x2 max pooling. Bottleneck: two 3x3 conv + ReLU at
//! `2^levels * F`. Decoder: per level a 2x2 stride-2 transposed conv that
//! halves the width, concatenation with the matching encoder output (skip
//! first), then two 3x3 conv + ReLU. A 1x1 conv and a sigmoid produce the
//! probability map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, FormatError, Result};
use crate::nn::checkpoint::{Checkpoint, NamedArray};
use crate::nn::{
    concat_channels, conv2d, conv2d_backward, dice_loss_with_grad, maxpool2x2, maxpool2x2_backward,
    split_channels, transposed_conv2d, transposed_conv2d_backward, Activation, Param,
};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub levels: usize,
}

impl UNetConfig {
    pub const LEVELS: usize = 4;

    pub fn new(in_channels: usize, base_width: usize) -> Self {
        Self {
            in_channels,
            out_channels: 1,
            base_width,
            levels: Self::LEVELS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("U-Net needs at least one input channel".into()));
        }
        if self.out_channels != 1 {
            return Err(Error::Config("U-Net head produces exactly one channel".into()));
        }
        if self.base_width == 0 {
            return Err(Error::Config("base width must be >= 1".into()));
        }
        if self.levels == 0 || self.levels > 8 {
            return Err(Error::Config(format!("unsupported level count {}", self.levels)));
        }
        Ok(())
    }

    /// Spatial dims must be multiples of this.
    pub fn size_divisor(&self) -> usize {
        1 << self.levels
    }

    /// Validate an input shape against this configuration.
    pub fn check_input(&self, shape: Shape4) -> Result<()> {
        if shape.c != self.in_channels {
            return Err(shape_err(format!(
                "network expects {} input channels, got {shape}",
                self.in_channels
            )));
        }
        let d = self.size_divisor();
        if shape.h == 0 || shape.w == 0 || shape.h % d != 0 || shape.w % d != 0 {
            return Err(shape_err(format!(
                "input {shape} spatial dims must be positive multiples of {d}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    TransposedConv,
    MaxPool,
    Activation(Activation),
    Concat,
}

/// One entry of the architecture listing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl LayerSpec {
    /// Trainable scalars owned by this layer.
    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv | LayerKind::TransposedConv => {
                self.in_channels * self.out_channels * self.kernel * self.kernel + self.out_channels
            }
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvRef {
    weight: usize,
    bias: usize,
    padding: usize,
}

#[derive(Debug, Clone)]
struct Plan {
    encoder: Vec<[ConvRef; 2]>,
    bottleneck: [ConvRef; 2],
    decoder: Vec<(ConvRef, [ConvRef; 2])>,
    head: ConvRef,
}

/// Intermediate activations recorded by [`UNet::forward_train`].
#[derive(Debug, Clone)]
pub struct Tape<T> {
    encoder: Vec<EncoderTape<T>>,
    bottleneck_in: Tensor4<T>,
    bottleneck_mid: Tensor4<T>,
    decoder: Vec<DecoderTape<T>>,
    head_in: Tensor4<T>,
    output: Tensor4<T>,
}

#[derive(Debug, Clone)]
struct EncoderTape<T> {
    input: Tensor4<T>,
    mid: Tensor4<T>,
    skip: Tensor4<T>,
    argmax: Vec<usize>,
}

#[derive(Debug, Clone)]
struct DecoderTape<T> {
    input: Tensor4<T>,
    cat: Tensor4<T>,
    mid: Tensor4<T>,
}

impl<T: Scalar> Tape<T> {
    pub fn output(&self) -> &Tensor4<T> {
        &self.output
    }

    /// Identifies the linear piece of the network the forward pass landed in:
    /// the on/off state of every ReLU and every max-pool winner. Two inputs
    /// with equal keys lie in the same differentiable region.
    pub fn region_key(&self) -> Vec<u64> {
        let mut bits = BitPacker::default();
        for e in &self.encoder {
            bits.relu(&e.mid);
            bits.relu(&e.skip);
            bits.words.extend(e.argmax.iter().map(|&i| i as u64));
        }
        bits.relu(&self.bottleneck_mid);
        for d in &self.decoder {
            bits.relu(&d.input);
            bits.relu(&d.mid);
        }
        bits.relu(&self.head_in);
        bits.finish()
    }
}

#[derive(Default)]
struct BitPacker {
    words: Vec<u64>,
    current: u64,
    used: u32,
}

impl BitPacker {
    fn relu<T: Scalar>(&mut self, t: &Tensor4<T>) {
        for &v in t.data() {
            self.current |= u64::from(v > T::zero()) << self.used;
            self.used += 1;
            if self.used == 64 {
                self.words.push(self.current);
                self.current = 0;
                self.used = 0;
            }
        }
    }

    fn finish(mut self) -> Vec<u64> {
        self.words.push(self.current);
        self.words
    }
}

/// Gradients of a scalar objective w.r.t. every parameter (aligned with
/// [`UNet::params`]) and w.r.t. the network input.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: Vec<Vec<T>>,
    pub input: Tensor4<T>,
}

#[derive(Debug, Clone)]
pub struct UNet<T> {
    config: UNetConfig,
    specs: Vec<LayerSpec>,
    params: Vec<Param<T>>,
    plan: Plan,
}

struct Builder<'a, T> {
    specs: Vec<LayerSpec>,
    params: Vec<Param<T>>,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<T: Scalar> Builder<'_, T> {
    fn param(&mut self, name: String, dims: Vec<usize>, fan_in: Option<usize>) -> usize {
        let p = match (fan_in, self.rng.as_deref_mut()) {
            (Some(fan_in), Some(rng)) => Param::he_normal(name, dims, fan_in, rng),
            _ => Param::zeros(name, dims),
        };
        self.params.push(p);
        self.params.len() - 1
    }

    fn spec(&mut self, name: &str, kind: LayerKind, cin: usize, cout: usize, k: usize, s: usize, p: usize) {
        self.specs.push(LayerSpec {
            name: name.to_owned(),
            kind,
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            stride: s,
            padding: p,
        });
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> ConvRef {
        let padding = k / 2;
        self.spec(name, LayerKind::Conv, cin, cout, k, 1, padding);
        let weight = self.param(format!("{name}.weight"), vec![cout, cin, k, k], Some(cin * k * k));
        let bias = self.param(format!("{name}.bias"), vec![cout], None);
        ConvRef { weight, bias, padding }
    }

    fn conv_relu(&mut self, name: &str, cin: usize, cout: usize) -> ConvRef {
        let c = self.conv(name, cin, cout, 3);
        self.spec(&format!("{name}.relu"), LayerKind::Activation(Activation::Relu), cout, cout, 0, 0, 0);
        c
    }

    fn up(&mut self, name: &str, cin: usize, cout: usize) -> ConvRef {
        self.spec(name, LayerKind::TransposedConv, cin, cout, 2, 2, 0);
        // each output pixel receives exactly one tap per input channel
        let weight = self.param(format!("{name}.weight"), vec![cin, cout, 2, 2], Some(cin));
        let bias = self.param(format!("{name}.bias"), vec![cout], None);
        ConvRef {
            weight,
            bias,
            padding: 0,
        }
    }
}

impl<T: Scalar> UNet<T> {
    /// Build with seeded He-normal weights and zero biases.
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::assemble(config, Some(&mut rng))
    }

    /// Build with every parameter zero (used when loading checkpoints).
    pub fn zeroed(config: UNetConfig) -> Result<Self> {
        Self::assemble(config, None)
    }

    fn assemble(config: UNetConfig, rng: Option<&mut ChaCha8Rng>) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            specs: Vec::new(),
            params: Vec::new(),
            rng,
        };
        let f = config.base_width;
        let mut encoder = Vec::with_capacity(config.levels);
        let mut cin = config.in_channels;
        for i in 0..config.levels {
            let width = f << i;
            let c1 = b.conv_relu(&format!("enc{i}.conv1"), cin, width);
            let c2 = b.conv_relu(&format!("enc{i}.conv2"), width, width);
            b.spec(&format!("enc{i}.pool"), LayerKind::MaxPool, width, width, 2, 2, 0);
            encoder.push([c1, c2]);
            cin = width;
        }
        let width = f << config.levels;
        let bottleneck = [
            b.conv_relu("mid.conv1", cin, width),
            b.conv_relu("mid.conv2", width, width),
        ];
        let mut decoder = Vec::with_capacity(config.levels);
        let mut cin = width;
        for j in 0..config.levels {
            let width = cin / 2;
            let up = b.up(&format!("dec{j}.up"), cin, width);
            b.spec(&format!("dec{j}.concat"), LayerKind::Concat, 2 * width, 2 * width, 0, 0, 0);
            let c1 = b.conv_relu(&format!("dec{j}.conv1"), 2 * width, width);
            let c2 = b.conv_relu(&format!("dec{j}.conv2"), width, width);
            decoder.push((up, [c1, c2]));
            cin = width;
        }
        let head = b.conv("head", cin, config.out_channels, 1);
        b.spec(
            "head.sigmoid",
            LayerKind::Activation(Activation::Sigmoid),
            config.out_channels,
            config.out_channels,
            0,
            0,
            0,
        );
        Ok(Self {
            config,
            specs: b.specs,
            params: b.params,
            plan: Plan {
                encoder,
                bottleneck,
                decoder,
                head,
            },
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    /// Ordered architecture listing.
    pub fn layers(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    fn conv(&self, c: ConvRef, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        conv2d(x, &self.params[c.weight].as_tensor(), &self.params[c.bias].value, 1, c.padding)
    }

    fn conv_relu(&self, c: ConvRef, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(Activation::Relu.forward(&self.conv(c, x)?))
    }

    /// Probability map for `input` (N x in_channels x H x W).
    pub fn forward(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.forward_train(input)?.output)
    }

    /// Forward pass that records what the gradient pass needs.
    pub fn forward_train(&self, input: &Tensor4<T>) -> Result<Tape<T>> {
        self.config.check_input(input.shape())?;
        let mut encoder = Vec::with_capacity(self.config.levels);
        let mut x = input.clone();
        for convs in &self.plan.encoder {
            let mid = self.conv_relu(convs[0], &x)?;
            let skip = self.conv_relu(convs[1], &mid)?;
            let pooled = maxpool2x2(&skip)?;
            encoder.push(EncoderTape {
                input: std::mem::replace(&mut x, pooled.output),
                mid,
                skip,
                argmax: pooled.argmax,
            });
        }
        let bottleneck_mid = self.conv_relu(self.plan.bottleneck[0], &x)?;
        let mut u = self.conv_relu(self.plan.bottleneck[1], &bottleneck_mid)?;
        let bottleneck_in = x;
        let mut decoder = Vec::with_capacity(self.config.levels);
        for (j, (up, convs)) in self.plan.decoder.iter().enumerate() {
            let skip = &encoder[self.config.levels - 1 - j].skip;
            let upsampled = transposed_conv2d(&u, &self.params[up.weight].as_tensor(), &self.params[up.bias].value)?;
            let cat = concat_channels(skip, &upsampled)?;
            let mid = self.conv_relu(convs[0], &cat)?;
            let out = self.conv_relu(convs[1], &mid)?;
            decoder.push(DecoderTape {
                input: std::mem::replace(&mut u, out),
                cat,
                mid,
            });
        }
        let output = Activation::Sigmoid.forward(&self.conv(self.plan.head, &u)?);
        Ok(Tape {
            encoder,
            bottleneck_in,
            bottleneck_mid,
            decoder,
            head_in: u,
            output,
        })
    }

    fn conv_back(
        &self,
        c: ConvRef,
        input: &Tensor4<T>,
        grad_out: &Tensor4<T>,
        grads: &mut [Vec<T>],
    ) -> Result<Tensor4<T>> {
        let g = conv2d_backward(input, &self.params[c.weight].as_tensor(), 1, c.padding, grad_out)?;
        grads[c.weight] = g.weight.into_vec();
        grads[c.bias] = g.bias;
        Ok(g.input)
    }

    /// conv -> relu, given the relu output `y`.
    fn conv_relu_back(
        &self,
        c: ConvRef,
        input: &Tensor4<T>,
        y: &Tensor4<T>,
        grad_out: &Tensor4<T>,
        grads: &mut [Vec<T>],
    ) -> Result<Tensor4<T>> {
        let dz = Activation::Relu.backward(y, grad_out)?;
        self.conv_back(c, input, &dz, grads)
    }

    /// Gradient pass for an upstream gradient on the probability map.
    pub fn backward(&self, tape: &Tape<T>, grad_output: &Tensor4<T>) -> Result<Gradients<T>> {
        let mut grads: Vec<Vec<T>> = vec![Vec::new(); self.params.len()];
        let levels = self.config.levels;
        let dlogits = Activation::Sigmoid.backward(&tape.output, grad_output)?;
        let mut du = self.conv_back(self.plan.head, &tape.head_in, &dlogits, &mut grads)?;
        let mut dskips: Vec<Option<Tensor4<T>>> = vec![None; levels];
        for (j, (up, convs)) in self.plan.decoder.iter().enumerate().rev() {
            let dt = &tape.decoder[j];
            let out = if j + 1 < levels {
                &tape.decoder[j + 1].input
            } else {
                &tape.head_in
            };
            let dmid = self.conv_relu_back(convs[1], &dt.mid, out, &du, &mut grads)?;
            let dcat = self.conv_relu_back(convs[0], &dt.cat, &dt.mid, &dmid, &mut grads)?;
            let skip_level = levels - 1 - j;
            let (dskip, dup) = split_channels(&dcat, tape.encoder[skip_level].skip.shape().c)?;
            dskips[skip_level] = Some(dskip);
            let g = transposed_conv2d_backward(&dt.input, &self.params[up.weight].as_tensor(), &dup)?;
            grads[up.weight] = g.weight.into_vec();
            grads[up.bias] = g.bias;
            du = g.input;
        }
        let bottleneck_out = &tape.decoder[0].input;
        let dmid = self.conv_relu_back(
            self.plan.bottleneck[1],
            &tape.bottleneck_mid,
            bottleneck_out,
            &du,
            &mut grads,
        )?;
        let mut dx = self.conv_relu_back(
            self.plan.bottleneck[0],
            &tape.bottleneck_in,
            &tape.bottleneck_mid,
            &dmid,
            &mut grads,
        )?;
        for (i, convs) in self.plan.encoder.iter().enumerate().rev() {
            let et = &tape.encoder[i];
            let mut dskip = maxpool2x2_backward(et.skip.shape(), &et.argmax, &dx)?;
            let from_decoder = dskips[i].take().expect("every skip feeds one decoder block");
            for (a, &b) in dskip.data_mut().iter_mut().zip(from_decoder.data()) {
                *a += b;
            }
            let dmid = self.conv_relu_back(convs[1], &et.mid, &et.skip, &dskip, &mut grads)?;
            dx = self.conv_relu_back(convs[0], &et.input, &et.mid, &dmid, &mut grads)?;
        }
        Ok(Gradients {
            params: grads,
            input: dx,
        })
    }

    /// Dice loss of the forward output against `target`, with gradients.
    pub fn dice_loss_and_grad(&self, input: &Tensor4<T>, target: &Tensor4<T>) -> Result<(T, Tensor4<T>, Gradients<T>)> {
        let tape = self.forward_train(input)?;
        let (loss, dout) = dice_loss_with_grad(&tape.output, target)?;
        let grads = self.backward(&tape, &dout)?;
        Ok((loss, tape.output, grads))
    }

    /// Export weights as an f32 checkpoint.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            in_channels: self.config.in_channels as u32,
            base_width: self.config.base_width as u32,
            arrays: self
                .params
                .iter()
                .map(|p| NamedArray {
                    name: p.name.clone(),
                    dims: p.dims.iter().map(|&d| d as u32).collect(),
                    values: p.value.iter().map(|v| v.to_f32_lossy()).collect(),
                })
                .collect(),
        }
    }

    /// Rebuild a network from a checkpoint, checking every array against
    /// the architecture implied by the header.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = UNetConfig::new(ckpt.in_channels as usize, ckpt.base_width as usize);
        let mut net = Self::zeroed(config)?;
        if let Some(extra) = ckpt
            .arrays
            .iter()
            .find(|a| !net.params.iter().any(|p| p.name == a.name))
        {
            return Err(FormatError::UnexpectedArray(extra.name.clone()).into());
        }
        for p in &mut net.params {
            let a = ckpt
                .arrays
                .iter()
                .find(|a| a.name == p.name)
                .ok_or_else(|| FormatError::MissingArray(p.name.clone()))?;
            let dims: Vec<usize> = a.dims.iter().map(|&d| d as usize).collect();
            if dims != p.dims {
                return Err(FormatError::DimMismatch {
                    name: p.name.clone(),
                    detail: format!("expected dims {:?}, found {:?}", p.dims, dims),
                }
                .into());
            }
            if a.values.len() != p.value.len() {
                return Err(FormatError::DimMismatch {
                    name: p.name.clone(),
                    detail: format!("{} values for {} elements", a.values.len(), p.value.len()),
                }
                .into());
            }
            if a.values.iter().any(|v| !v.is_finite()) {
                return Err(FormatError::NonFinite(p.name.clone()).into());
            }
            p.value = a.values.iter().map(|&v| T::lit(v as f64)).collect();
        }
        Ok(net)
    }

    pub fn save(&self) -> Vec<u8> {
        self.to_checkpoint().to_bytes()
    }

    pub fn load(bytes: &[u8]) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::from_bytes(bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shape_and_range() {
        let net = UNet::<f32>::new(UNetConfig::new(3, 8), 7).unwrap();
        let x = Tensor4::from_fn(Shape4::new(1, 3, 64, 64), |_, c, y, x| ((c + y * 3 + x * 5) % 17) as f32 / 8.0 - 1.0);
        let y = net.forward(&x).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 64, 64));
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn indivisible_input_rejected() {
        let net = UNet::<f32>::new(UNetConfig::new(3, 2), 1).unwrap();
        let err = net.forward(&Tensor4::zeros(Shape4::new(1, 3, 60, 60))).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        assert!(net.forward(&Tensor4::zeros(Shape4::new(1, 1, 16, 16))).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(UNet::<f32>::new(UNetConfig::new(0, 8), 0).is_err());
        assert!(UNet::<f32>::new(UNetConfig::new(1, 0), 0).is_err());
    }

    #[test]
    fn layer_listing_matches_params() {
        let net = UNet::<f64>::new(UNetConfig::new(2, 3), 0).unwrap();
        let from_specs: usize = net.layers().iter().map(LayerSpec::param_count).sum();
        assert_eq!(from_specs, net.param_count());
        let convs = net
            .layers()
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Conv | LayerKind::TransposedConv))
            .count();
        assert_eq!(2 * convs, net.params().len());
    }

    #[test]
    fn forward_is_deterministic() {
        let net = UNet::<f32>::new(UNetConfig::new(1, 4), 3).unwrap();
        let x = Tensor4::from_fn(Shape4::new(2, 1, 32, 32), |n, _, y, x| ((n * 31 + y * 7 + x) % 13) as f32 * 0.1);
        let a = net.forward(&x).unwrap();
        let b = UNet::<f32>::new(UNetConfig::new(1, 4), 3).unwrap().forward(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn batch_samples_are_independent() {
        let net = UNet::<f32>::new(UNetConfig::new(1, 2), 5).unwrap();
        let x = Tensor4::from_fn(Shape4::new(2, 1, 16, 16), |n, _, y, x| ((n * 5 + y * 3 + x) % 7) as f32);
        let both = net.forward(&x).unwrap();
        let second = net.forward(&x.sample_tensor(1)).unwrap();
        assert_eq!(both.sample(1), second.data());
    }
}
