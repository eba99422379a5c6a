//! The VGG19 graph, its weight bundle, and the tapped forward pass.
//!
//! Sixteen 3x3 convolutions in five blocks (2, 2, 4, 4, 4), each block closed
//! by 2x2 max pooling, then flatten and three dense layers. ReLU follows every
//! convolution and every hidden dense layer, so taps see post-activation
//! values. Only layers up to the deepest requested tap are executed; `fc2`
//! and `predictions` are part of the bundle schema but never run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bundle::{read_entry, Manifest, TensorBundle};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

const BLOCK_CONVS: [usize; 5] = [2, 2, 4, 4, 4];
const BLOCK_WIDTH_MULT: [usize; 5] = [1, 2, 4, 8, 8];
const INPUT_CHANNELS: usize = 3;

/// Layers whose activations can be exported as features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapPoint {
    Block1Pool,
    Block2Pool,
    Block3Pool,
    Block4Pool,
    Block5Pool,
    Fc1,
}

impl TapPoint {
    pub const ALL: [TapPoint; 6] = [
        TapPoint::Block1Pool,
        TapPoint::Block2Pool,
        TapPoint::Block3Pool,
        TapPoint::Block4Pool,
        TapPoint::Block5Pool,
        TapPoint::Fc1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TapPoint::Block1Pool => "block1_pool",
            TapPoint::Block2Pool => "block2_pool",
            TapPoint::Block3Pool => "block3_pool",
            TapPoint::Block4Pool => "block4_pool",
            TapPoint::Block5Pool => "block5_pool",
            TapPoint::Fc1 => "fc1",
        }
    }

    /// 0 for block1_pool up to 5 for fc1.
    pub fn depth(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TapPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TapPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TapPoint::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown tap point `{s}`; expected one of {}",
                    TapPoint::ALL.map(TapPoint::name).join(", ")
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Input,
    Conv { in_channels: usize, out_channels: usize },
    Pool,
    Flatten,
    Dense { inputs: usize, outputs: usize },
}

/// One row of the layer table: name, channel-first output shape, parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub output_shape: Vec<usize>,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
            } => out_channels * in_channels * 9 + out_channels,
            LayerKind::Dense { inputs, outputs } => outputs * inputs + outputs,
            _ => 0,
        }
    }

    /// Expected (weight, bias) tensor shapes for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
            } => Some((vec![out_channels, in_channels, 3, 3], vec![out_channels])),
            LayerKind::Dense { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            _ => None,
        }
    }
}

/// Network geometry. `vgg19()` is the real network; `micro()` keeps the
/// topology at 1/8 the channel widths on a 64x64 input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VggConfig {
    pub base_width: usize,
    pub input_size: usize,
    pub fc_width: usize,
    pub n_classes: usize,
}

impl VggConfig {
    pub fn vgg19() -> Self {
        Self {
            base_width: 64,
            input_size: 224,
            fc_width: 4096,
            n_classes: 1000,
        }
    }

    pub fn micro() -> Self {
        Self {
            base_width: 8,
            input_size: 64,
            fc_width: 512,
            n_classes: 1000,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.fc_width == 0 || self.n_classes == 0 {
            return Err(Error::InvalidArgument("network widths must be positive".into()));
        }
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::InvalidArgument(format!(
                "input size must be a positive multiple of 32, got {}",
                self.input_size
            )));
        }
        Ok(())
    }

    pub fn block_width(&self, block: usize) -> usize {
        self.base_width * BLOCK_WIDTH_MULT[block]
    }

    pub fn flatten_len(&self) -> usize {
        let s = self.input_size / 32;
        self.block_width(4) * s * s
    }

    /// Flattened feature length at a tap.
    pub fn tap_len(&self, tap: TapPoint) -> usize {
        match tap {
            TapPoint::Fc1 => self.fc_width,
            pool => {
                let b = pool.depth();
                let s = self.input_size >> (b + 1);
                self.block_width(b) * s * s
            }
        }
    }

    /// Every layer in execution order, starting with the input.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut out = vec![LayerSpec {
            name: "input_1".into(),
            kind: LayerKind::Input,
            output_shape: vec![INPUT_CHANNELS, self.input_size, self.input_size],
        }];
        let mut channels = INPUT_CHANNELS;
        let mut size = self.input_size;
        for (b, &convs) in BLOCK_CONVS.iter().enumerate() {
            let width = self.block_width(b);
            for k in 0..convs {
                out.push(LayerSpec {
                    name: format!("block{}_conv{}", b + 1, k + 1),
                    kind: LayerKind::Conv {
                        in_channels: channels,
                        out_channels: width,
                    },
                    output_shape: vec![width, size, size],
                });
                channels = width;
            }
            size /= 2;
            out.push(LayerSpec {
                name: format!("block{}_pool", b + 1),
                kind: LayerKind::Pool,
                output_shape: vec![channels, size, size],
            });
        }
        let flat = channels * size * size;
        out.push(LayerSpec {
            name: "flatten".into(),
            kind: LayerKind::Flatten,
            output_shape: vec![flat],
        });
        for (name, inputs, outputs) in [
            ("fc1", flat, self.fc_width),
            ("fc2", self.fc_width, self.fc_width),
            ("predictions", self.fc_width, self.n_classes),
        ] {
            out.push(LayerSpec {
                name: name.into(),
                kind: LayerKind::Dense { inputs, outputs },
                output_shape: vec![outputs],
            });
        }
        out
    }

    pub fn parameterized_layers(&self) -> Vec<LayerSpec> {
        self.layers()
            .into_iter()
            .filter(|l| l.param_shapes().is_some())
            .collect()
    }

    pub fn total_params(&self) -> usize {
        self.layers().iter().map(LayerSpec::param_count).sum()
    }

    /// Recovers the geometry from tensor shapes in a manifest.
    fn infer(manifest: &Manifest) -> Result<Self> {
        let shape_of = |name: &str| -> Result<Vec<usize>> {
            manifest
                .entry(name)
                .map(|e| e.shape.clone())
                .ok_or_else(|| Error::MissingEntry(name.to_string()))
        };
        let conv1 = shape_of("block1_conv1.weight")?;
        let fc1 = shape_of("fc1.weight")?;
        let pred = shape_of("predictions.weight")?;
        let base_width = *conv1.first().unwrap_or(&0);
        let (fc_width, flat) = match fc1[..] {
            [o, i] => (o, i),
            _ => {
                return Err(Error::LayerShape {
                    layer: "fc1".into(),
                    expected: vec![0, 0],
                    found: fc1,
                })
            }
        };
        let n_classes = *pred.first().unwrap_or(&0);
        let top = base_width * 8;
        let side = if top == 0 {
            0
        } else {
            ((flat / top) as f64).sqrt().round() as usize
        };
        let cfg = Self {
            base_width,
            input_size: side * 32,
            fc_width,
            n_classes,
        };
        if side == 0 || top * side * side != flat {
            return Err(Error::LayerShape {
                layer: "fc1".into(),
                expected: vec![fc_width, top * side.max(1) * side.max(1)],
                found: fc1,
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// VGG19 parameters, validated against the layer table.
#[derive(Clone, Debug)]
pub struct WeightBundle {
    config: VggConfig,
    tensors: TensorBundle,
}

impl WeightBundle {
    /// Loads a bundle directory, inferring the geometry from its shapes.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest = Manifest::read(path)?;
        let config = VggConfig::infer(&manifest)?;
        Self::load_manifest(path, &manifest, config)
    }

    /// Loads a bundle directory that must match `config` exactly.
    pub fn load_as(path: &Path, config: VggConfig) -> Result<Self> {
        let manifest = Manifest::read(path)?;
        Self::load_manifest(path, &manifest, config)
    }

    fn load_manifest(path: &Path, manifest: &Manifest, config: VggConfig) -> Result<Self> {
        config.validate()?;
        // shapes first, so a bad layer is reported by name before any blob IO
        let expected = expected_entries(&config);
        for (name, shape) in &expected {
            let entry = manifest.entry(name).ok_or_else(|| Error::MissingEntry(name.clone()))?;
            if &entry.shape != shape {
                return Err(Error::LayerShape {
                    layer: name.clone(),
                    expected: shape.clone(),
                    found: entry.shape.clone(),
                });
            }
        }
        if let Some(extra) = manifest
            .tensors
            .iter()
            .find(|e| !expected.iter().any(|(n, _)| *n == e.name))
        {
            return Err(Error::UnexpectedEntry(extra.name.clone()));
        }
        let mut tensors = TensorBundle::new(manifest.source.clone());
        for (name, _) in &expected {
            let entry = manifest.entry(name).expect("checked above");
            tensors.insert(name.clone(), read_entry(path, entry)?);
        }
        Ok(Self { config, tensors })
    }

    /// Wraps an in-memory bundle after the same validation `load` performs.
    pub fn from_tensors(config: VggConfig, tensors: TensorBundle) -> Result<Self> {
        config.validate()?;
        let expected = expected_entries(&config);
        for (name, shape) in &expected {
            let t = tensors.require(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::LayerShape {
                    layer: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = tensors.names().find(|n| !expected.iter().any(|(e, _)| e == n)) {
            return Err(Error::UnexpectedEntry(extra.to_string()));
        }
        let mut ordered = TensorBundle::new(tensors.source.clone());
        for (name, _) in &expected {
            ordered.insert(name.clone(), tensors.require(name)?.clone());
        }
        Ok(Self {
            config,
            tensors: ordered,
        })
    }

    /// He-normal weights and small biases drawn from a seeded stream.
    pub fn random(config: VggConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = TensorBundle::new(Some(format!(
            "random he-normal init, seed {seed}, base width {}, input {}",
            config.base_width, config.input_size
        )));
        for layer in config.parameterized_layers() {
            let (wshape, bshape) = layer.param_shapes().expect("parameterized");
            let fan_in: usize = wshape[1..].iter().product();
            let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("finite std");
            let n: usize = wshape.iter().product();
            let w: Vec<f32> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            let bias_dist = Normal::new(0.0f32, 0.01).expect("finite std");
            let b: Vec<f32> = (0..bshape[0]).map(|_| bias_dist.sample(&mut rng)).collect();
            tensors.insert(format!("{}.weight", layer.name), Tensor::new(wshape, w)?);
            tensors.insert(format!("{}.bias", layer.name), Tensor::new(bshape, b)?);
        }
        Self::from_tensors(config, tensors)
    }

    pub fn config(&self) -> &VggConfig {
        &self.config
    }

    pub fn tensors(&self) -> &TensorBundle {
        &self.tensors
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.tensors.write(path)
    }

    pub fn content_hash(&self) -> String {
        self.tensors.content_hash()
    }

    /// Parameter count per parameterized layer, in execution order.
    pub fn param_counts(&self) -> Vec<(String, usize)> {
        self.config
            .parameterized_layers()
            .into_iter()
            .map(|l| {
                let w = self.tensors.get(&format!("{}.weight", l.name)).map_or(0, Tensor::len);
                let b = self.tensors.get(&format!("{}.bias", l.name)).map_or(0, Tensor::len);
                (l.name, w + b)
            })
            .collect()
    }

    pub fn total_params(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    fn layer(&self, name: &str) -> (&Tensor, &[f32]) {
        let w = self.tensors.get(&format!("{name}.weight")).expect("validated bundle");
        let b = self.tensors.get(&format!("{name}.bias")).expect("validated bundle");
        (w, b.data())
    }

    /// Runs the network on a preprocessed `(3, S, S)` image and returns the
    /// flattened `(C, H, W)`-order activation at each requested tap.
    pub fn forward_with_taps(&self, image: &Tensor, taps: &BTreeSet<TapPoint>) -> Result<BTreeMap<TapPoint, Vec<f32>>> {
        self.forward_traced(image, taps, |_, _| {})
    }

    /// As [`forward_with_taps`](Self::forward_with_taps), reporting every
    /// executed layer's name and output shape to `observe`.
    pub fn forward_traced(
        &self,
        image: &Tensor,
        taps: &BTreeSet<TapPoint>,
        mut observe: impl FnMut(&str, &[usize]),
    ) -> Result<BTreeMap<TapPoint, Vec<f32>>> {
        let s = self.config.input_size;
        if image.shape() != [INPUT_CHANNELS, s, s] {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: image.shape().to_vec(),
                right: vec![INPUT_CHANNELS, s, s],
            });
        }
        let deepest = taps
            .iter()
            .copied()
            .max()
            .ok_or_else(|| Error::InvalidArgument("at least one tap point is required".into()))?;

        let mut out = BTreeMap::new();
        observe("input_1", image.shape());
        let mut x = image.clone();
        for (b, &convs) in BLOCK_CONVS.iter().enumerate() {
            for k in 0..convs {
                let name = format!("block{}_conv{}", b + 1, k + 1);
                let (w, bias) = self.layer(&name);
                let y = tensor::conv2d(&x, w, bias)?;
                let shape = y.shape().to_vec();
                let mut data = y.into_data();
                tensor::relu_in_place(&mut data);
                x = Tensor::new(shape, data)?;
                observe(&name, x.shape());
            }
            x = tensor::maxpool2d(&x)?;
            observe(&format!("block{}_pool", b + 1), x.shape());
            let tap = TapPoint::ALL[b];
            if taps.contains(&tap) {
                out.insert(tap, x.data().to_vec());
            }
            if deepest == tap {
                return Ok(out);
            }
        }
        let flat = x.into_data();
        observe("flatten", &[flat.len()]);
        let (w, bias) = self.layer("fc1");
        let mut fc1 = tensor::dense(&flat, w, bias)?;
        tensor::relu_in_place(&mut fc1);
        observe("fc1", &[fc1.len()]);
        out.insert(TapPoint::Fc1, fc1);
        Ok(out)
    }
}

fn expected_entries(config: &VggConfig) -> Vec<(String, Vec<usize>)> {
    config
        .parameterized_layers()
        .into_iter()
        .flat_map(|l| {
            let (w, b) = l.param_shapes().expect("parameterized");
            [(format!("{}.weight", l.name), w), (format!("{}.bias", l.name), b)]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tap_names_round_trip() {
        for t in TapPoint::ALL {
            assert_eq!(t.name().parse::<TapPoint>().unwrap(), t);
        }
        assert!("block6_pool".parse::<TapPoint>().is_err());
    }

    #[test]
    fn tap_lengths_full_size() {
        let cfg = VggConfig::vgg19();
        let lens: Vec<usize> = TapPoint::ALL.iter().map(|t| cfg.tap_len(*t)).collect();
        assert_eq!(lens, vec![802816, 401408, 200704, 100352, 25088, 4096]);
    }

    #[test]
    fn layer_table_has_input_plus_25_layers() {
        let layers = VggConfig::vgg19().layers();
        assert_eq!(layers.len(), 26);
        assert_eq!(VggConfig::vgg19().parameterized_layers().len(), 19);
    }

    #[test]
    fn micro_forward_lengths_and_zero_weights() {
        let cfg = VggConfig::micro();
        let mut bundle = WeightBundle::random(cfg, 1).unwrap();
        let image = Tensor::filled(vec![3, 64, 64], 0.3).unwrap();
        let taps: BTreeSet<_> = TapPoint::ALL.into_iter().collect();
        let feats = bundle.forward_with_taps(&image, &taps).unwrap();
        for t in TapPoint::ALL {
            assert_eq!(feats[&t].len(), cfg.tap_len(t));
        }

        let mut zeros = TensorBundle::new(None);
        for (name, t) in bundle.tensors.iter() {
            zeros.insert(name, Tensor::zeros(t.shape().to_vec()).unwrap());
        }
        bundle = WeightBundle::from_tensors(cfg, zeros).unwrap();
        let only = BTreeSet::from([TapPoint::Block1Pool]);
        let f = bundle.forward_with_taps(&image, &only).unwrap();
        assert!(f[&TapPoint::Block1Pool].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let bundle = WeightBundle::random(VggConfig::micro(), 1).unwrap();
        let image = Tensor::zeros(vec![3, 32, 32]).unwrap();
        let taps = BTreeSet::from([TapPoint::Fc1]);
        assert!(matches!(
            bundle.forward_with_taps(&image, &taps),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(bundle
            .forward_with_taps(&Tensor::zeros(vec![3, 64, 64]).unwrap(), &BTreeSet::new())
            .is_err());
    }

    #[test]
    fn stops_after_deepest_tap() {
        let bundle = WeightBundle::random(VggConfig::micro(), 3).unwrap();
        let image = Tensor::filled(vec![3, 64, 64], 0.1).unwrap();
        let mut seen = Vec::new();
        bundle
            .forward_traced(&image, &BTreeSet::from([TapPoint::Block2Pool]), |n, _| seen.push(n.to_string()))
            .unwrap();
        assert_eq!(seen.last().unwrap(), "block2_pool");
        assert!(!seen.iter().any(|n| n.starts_with("block3")));
    }
}
