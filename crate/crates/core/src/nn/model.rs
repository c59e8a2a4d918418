//! The compact growth-pattern classifier: binary dilation front layer,
//! three-conv stack, global average pooling, linear head.

use crate::map::{BitPlane, CellOMap};
use crate::nn::layers::{
    conv3x3_backward, conv3x3_forward, dense_backward, dense_forward, gap_backward, gap_forward,
    maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, softmax,
};
use crate::types::{PatternClass, PATTERN_COUNT};
use ndarray::{Array1, Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Conv stack widths of the standard classifier.
pub const CONV_WIDTHS: [usize; 3] = [16, 32, 64];

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("tile side {0} is not divisible by {1}")]
    OddTileSide(u32, u32),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("training requires a non-empty dataset")]
    EmptyDataset,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// One convolution layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
}

/// Classifier parameters. The standard network has three conv layers
/// (in->16->32->64) with a 2x2 max pool after every conv except the last;
/// a head-only instance (no convs) exists for tight gradient verification.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub input_side: u32,
    pub in_channels: usize,
    pub convs: Vec<ConvLayer>,
    pub head_weight: Array2<f64>,
    pub head_bias: Array1<f64>,
}

/// Model output for one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub slide_id: String,
    pub x: u32,
    pub y: u32,
    pub probabilities: Vec<f64>,
    pub predicted: PatternClass,
}

/// Argmax with lowest-index tie-break.
pub fn argmax_class(probabilities: &[f64]) -> PatternClass {
    let mut best = 0usize;
    for (i, p) in probabilities.iter().enumerate() {
        if *p > probabilities[best] {
            best = i;
        }
    }
    PatternClass::from_index(best).expect("probability vector has PATTERN_COUNT entries")
}

fn he_uniform(rng: &mut ChaCha8Rng, fan_in: usize) -> f64 {
    let bound = (6.0 / fan_in as f64).sqrt();
    rng.random_range(-bound..bound)
}

impl ClassifierModel {
    /// Stride the network divides the input side by: front pool plus one
    /// pool per conv except the last.
    fn required_divisor(conv_layers: usize) -> u32 {
        2u32 << conv_layers.saturating_sub(1)
    }

    /// Standard three-conv classifier with seeded init and zero head.
    pub fn new_seeded(
        input_side: u32,
        in_channels: usize,
        seed: u64,
    ) -> Result<ClassifierModel, ClassifierError> {
        let divisor = Self::required_divisor(CONV_WIDTHS.len());
        if input_side == 0 || input_side % divisor != 0 {
            return Err(ClassifierError::OddTileSide(input_side, divisor));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::new();
        let mut ic = in_channels;
        for &oc in &CONV_WIDTHS {
            let fan_in = ic * 9;
            let weight = Array4::from_shape_fn((oc, ic, 3, 3), |_| he_uniform(&mut rng, fan_in));
            convs.push(ConvLayer {
                weight,
                bias: Array1::zeros(oc),
            });
            ic = oc;
        }
        Ok(ClassifierModel {
            input_side,
            in_channels,
            convs,
            // zero head makes the fresh model emit exactly uniform probabilities
            head_weight: Array2::zeros((PATTERN_COUNT, ic)),
            head_bias: Array1::zeros(PATTERN_COUNT),
        })
    }

    /// Front layer plus linear head only; used for strict gradient checks.
    pub fn new_linear_head(
        input_side: u32,
        in_channels: usize,
        seed: u64,
    ) -> Result<ClassifierModel, ClassifierError> {
        if input_side == 0 || input_side % 2 != 0 {
            return Err(ClassifierError::OddTileSide(input_side, 2));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head_weight =
            Array2::from_shape_fn((PATTERN_COUNT, in_channels), |_| he_uniform(&mut rng, in_channels));
        Ok(ClassifierModel {
            input_side,
            in_channels,
            convs: Vec::new(),
            head_weight,
            head_bias: Array1::zeros(PATTERN_COUNT),
        })
    }

    /// Builds the front-layer input, merging map channels when the model is
    /// single-channel (the ablation configuration).
    pub fn front_input(&self, map: &CellOMap) -> Result<Array3<f64>, ClassifierError> {
        if map.width != self.input_side || map.height != self.input_side {
            return Err(ClassifierError::ShapeMismatch {
                expected: format!("{0}x{0} tile", self.input_side),
                found: format!("{}x{}", map.width, map.height),
            });
        }
        if map.planes.len() == self.in_channels {
            dilate_front(&map.planes.iter().collect::<Vec<_>>())
        } else if self.in_channels == 1 {
            let merged = map
                .planes
                .iter()
                .skip(1)
                .fold(map.planes[0].clone(), |acc, p| acc.union(p));
            dilate_front(&[&merged])
        } else {
            Err(ClassifierError::ShapeMismatch {
                expected: format!("{} channels", self.in_channels),
                found: format!("{} channels", map.planes.len()),
            })
        }
    }

    /// Full forward pass from a map tile to a prediction.
    pub fn forward(&self, map: &CellOMap, x: u32, y: u32) -> Result<PredictionRecord, ClassifierError> {
        let front = self.front_input(map)?;
        let (probabilities, _) = self.forward_from_front(&front);
        Ok(PredictionRecord {
            slide_id: map.slide_id.clone(),
            x,
            y,
            predicted: argmax_class(probabilities.as_slice().unwrap()),
            probabilities: probabilities.to_vec(),
        })
    }

    /// Forward pass over an already-computed front tensor.
    ///
    /// Returns softmax probabilities and the caches backward needs.
    pub fn forward_from_front(&self, front: &Array3<f64>) -> (Array1<f64>, ForwardCache) {
        let mut cache = ForwardCache {
            conv_inputs: Vec::new(),
            relu_outputs: Vec::new(),
            pool_winners: Vec::new(),
            gap_input_dim: (0, 0, 0),
            features: Array1::zeros(0),
        };
        let mut x = front.clone();
        let last = self.convs.len().saturating_sub(1);
        for (i, layer) in self.convs.iter().enumerate() {
            cache.conv_inputs.push(x.clone());
            let z = conv3x3_forward(&x, &layer.weight, &layer.bias);
            let a = relu_forward(z);
            cache.relu_outputs.push(a.clone());
            if i < last {
                let (pooled, winners) = maxpool2_forward(&a);
                cache.pool_winners.push(winners);
                x = pooled;
            } else {
                x = a;
            }
        }
        cache.gap_input_dim = x.dim();
        let features = gap_forward(&x);
        cache.features = features.clone();
        let logits = dense_forward(&self.head_weight, &self.head_bias, &features);
        (softmax(&logits), cache)
    }

    /// Backpropagates a logit gradient into parameter gradients.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Array1<f64>) -> Gradients {
        let (dfeatures, dhead_w, dhead_b) =
            dense_backward(&self.head_weight, &cache.features, dlogits);
        let mut dx = gap_backward(&dfeatures, cache.gap_input_dim);
        let last = self.convs.len().saturating_sub(1);
        let mut conv_grads = vec![None; self.convs.len()];
        for i in (0..self.convs.len()).rev() {
            if i < last {
                let input_dim = cache.relu_outputs[i].dim();
                dx = maxpool2_backward(&dx, &cache.pool_winners[i], input_dim);
            }
            let dz = relu_backward(&cache.relu_outputs[i], &dx);
            let (dinput, dweight, dbias) =
                conv3x3_backward(&cache.conv_inputs[i], &self.convs[i].weight, &dz);
            conv_grads[i] = Some((dweight, dbias));
            dx = dinput;
        }
        Gradients {
            convs: conv_grads.into_iter().map(Option::unwrap).collect(),
            head_weight: dhead_w,
            head_bias: dhead_b,
        }
    }

    /// Flattens all parameters in a fixed order (convs then head).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.convs {
            out.extend(layer.weight.iter());
            out.extend(layer.bias.iter());
        }
        out.extend(self.head_weight.iter());
        out.extend(self.head_bias.iter());
        out
    }

    /// Writes parameters back from the `params_flat` layout.
    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut cursor = 0usize;
        for layer in &mut self.convs {
            for v in layer.weight.iter_mut() {
                *v = flat[cursor];
                cursor += 1;
            }
            for v in layer.bias.iter_mut() {
                *v = flat[cursor];
                cursor += 1;
            }
        }
        for v in self.head_weight.iter_mut() {
            *v = flat[cursor];
            cursor += 1;
        }
        for v in self.head_bias.iter_mut() {
            *v = flat[cursor];
            cursor += 1;
        }
        assert_eq!(cursor, flat.len(), "parameter count mismatch");
    }

    pub fn param_count(&self) -> usize {
        self.convs
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum::<usize>()
            + self.head_weight.len()
            + self.head_bias.len()
    }
}

/// Intermediate activations retained for backward.
pub struct ForwardCache {
    pub conv_inputs: Vec<Array3<f64>>,
    pub relu_outputs: Vec<Array3<f64>>,
    pub pool_winners: Vec<Vec<u32>>,
    pub gap_input_dim: (usize, usize, usize),
    pub features: Array1<f64>,
}

/// Parameter gradients in the same layout as the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub convs: Vec<(Array4<f64>, Array1<f64>)>,
    pub head_weight: Array2<f64>,
    pub head_bias: Array1<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &ClassifierModel) -> Gradients {
        Gradients {
            convs: model
                .convs
                .iter()
                .map(|l| (Array4::zeros(l.weight.dim()), Array1::zeros(l.bias.len())))
                .collect(),
            head_weight: Array2::zeros(model.head_weight.dim()),
            head_bias: Array1::zeros(model.head_bias.len()),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            a.0 += &b.0;
            a.1 += &b.1;
        }
        self.head_weight += &other.head_weight;
        self.head_bias += &other.head_bias;
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.convs {
            *w *= factor;
            *b *= factor;
        }
        self.head_weight *= factor;
        self.head_bias *= factor;
    }

    /// Flattened gradients matching `ClassifierModel::params_flat` order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.convs {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out.extend(self.head_weight.iter());
        out.extend(self.head_bias.iter());
        out
    }
}

/// Morphological 5x5 all-ones dilation then 2x2 max pool, per channel.
///
/// The composition collapses to one question per output pixel: is any bit
/// set in the 6x6 input window covering the pooled pair of dilation sites?
pub fn dilate_front(planes: &[&BitPlane]) -> Result<Array3<f64>, ClassifierError> {
    assert!(!planes.is_empty());
    let width = planes[0].width();
    let height = planes[0].height();
    if width % 2 != 0 || height % 2 != 0 {
        return Err(ClassifierError::OddTileSide(width.max(height), 2));
    }
    let (ow, oh) = (width / 2, height / 2);
    let mut out = Array3::zeros((planes.len(), oh as usize, ow as usize));
    for (c, plane) in planes.iter().enumerate() {
        for y in 0..oh {
            let y_lo = (2 * y).saturating_sub(2);
            let y_hi = (2 * y + 3).min(height - 1);
            for x in 0..ow {
                let x_lo = (2 * x).saturating_sub(2);
                let x_hi = (2 * x + 3).min(width - 1);
                'window: for wy in y_lo..=y_hi {
                    for wx in x_lo..=x_hi {
                        if plane.get(wx, wy) {
                            out[[c, y as usize, x as usize]] = 1.0;
                            break 'window;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct TensorJson {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointJson {
    format_version: u32,
    model: String,
    input_side: u32,
    in_channels: usize,
    conv_layers: usize,
    tensors: std::collections::BTreeMap<String, TensorJson>,
}

/// Serializes the model as a versioned JSON checkpoint of named tensors.
pub fn save_checkpoint(model: &ClassifierModel) -> String {
    let mut tensors = std::collections::BTreeMap::new();
    for (i, layer) in model.convs.iter().enumerate() {
        let (oc, ic, kh, kw) = layer.weight.dim();
        tensors.insert(
            format!("conv{i}.weight"),
            TensorJson {
                shape: vec![oc, ic, kh, kw],
                data: layer.weight.iter().cloned().collect(),
            },
        );
        tensors.insert(
            format!("conv{i}.bias"),
            TensorJson {
                shape: vec![layer.bias.len()],
                data: layer.bias.to_vec(),
            },
        );
    }
    let (k, c) = model.head_weight.dim();
    tensors.insert(
        "head.weight".into(),
        TensorJson {
            shape: vec![k, c],
            data: model.head_weight.iter().cloned().collect(),
        },
    );
    tensors.insert(
        "head.bias".into(),
        TensorJson {
            shape: vec![model.head_bias.len()],
            data: model.head_bias.to_vec(),
        },
    );
    let doc = CheckpointJson {
        format_version: 1,
        model: "pattern_classifier".into(),
        input_side: model.input_side,
        in_channels: model.in_channels,
        conv_layers: model.convs.len(),
        tensors,
    };
    serde_json::to_string(&doc).expect("checkpoint serializes")
}

fn tensor4(t: &TensorJson, name: &str) -> Result<Array4<f64>, ClassifierError> {
    if t.shape.len() != 4 {
        return Err(ClassifierError::Checkpoint(format!("{name} is not rank 4")));
    }
    Array4::from_shape_vec((t.shape[0], t.shape[1], t.shape[2], t.shape[3]), t.data.clone())
        .map_err(|e| ClassifierError::Checkpoint(format!("{name}: {e}")))
}

fn tensor2(t: &TensorJson, name: &str) -> Result<Array2<f64>, ClassifierError> {
    if t.shape.len() != 2 {
        return Err(ClassifierError::Checkpoint(format!("{name} is not rank 2")));
    }
    Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone())
        .map_err(|e| ClassifierError::Checkpoint(format!("{name}: {e}")))
}

fn tensor1(t: &TensorJson, name: &str) -> Result<Array1<f64>, ClassifierError> {
    if t.shape.len() != 1 || t.shape[0] != t.data.len() {
        return Err(ClassifierError::Checkpoint(format!("{name} is not rank 1")));
    }
    Ok(Array1::from_vec(t.data.clone()))
}

/// Parses a JSON checkpoint, validating names and shapes.
pub fn load_checkpoint(text: &str) -> Result<ClassifierModel, ClassifierError> {
    let doc: CheckpointJson =
        serde_json::from_str(text).map_err(|e| ClassifierError::Checkpoint(e.to_string()))?;
    if doc.format_version != 1 {
        return Err(ClassifierError::Checkpoint(format!(
            "unsupported format_version {}",
            doc.format_version
        )));
    }
    if doc.model != "pattern_classifier" {
        return Err(ClassifierError::Checkpoint(format!(
            "unexpected model kind {:?}",
            doc.model
        )));
    }
    let get = |name: &str| {
        doc.tensors
            .get(name)
            .ok_or_else(|| ClassifierError::Checkpoint(format!("missing tensor {name}")))
    };
    let mut convs = Vec::new();
    for i in 0..doc.conv_layers {
        let weight = tensor4(get(&format!("conv{i}.weight"))?, "conv weight")?;
        let bias = tensor1(get(&format!("conv{i}.bias"))?, "conv bias")?;
        if bias.len() != weight.dim().0 {
            return Err(ClassifierError::Checkpoint(format!(
                "conv{i} bias length {} does not match {} output channels",
                bias.len(),
                weight.dim().0
            )));
        }
        convs.push(ConvLayer { weight, bias });
    }
    let head_weight = tensor2(get("head.weight")?, "head.weight")?;
    let head_bias = tensor1(get("head.bias")?, "head.bias")?;
    if head_bias.len() != head_weight.dim().0 {
        return Err(ClassifierError::Checkpoint(
            "head bias length does not match head rows".into(),
        ));
    }
    Ok(ClassifierModel {
        input_side: doc.input_side,
        in_channels: doc.in_channels,
        convs,
        head_weight,
        head_bias,
    })
}

/// Writes a checkpoint file.
pub fn save_checkpoint_file(model: &ClassifierModel, path: &Path) -> Result<(), ClassifierError> {
    std::fs::write(path, save_checkpoint(model))
        .map_err(|e| ClassifierError::Checkpoint(format!("{}: {e}", path.display())))
}

/// Reads a checkpoint file.
pub fn load_checkpoint_file(path: &Path) -> Result<ClassifierModel, ClassifierError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ClassifierError::Checkpoint(format!("{}: {e}", path.display())))?;
    load_checkpoint(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{CellOMap, ChannelSpec};
    use rand::{Rng, SeedableRng};

    fn random_tile(seed: u64, side: u32, density: f64) -> CellOMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut map = CellOMap::zeroed("s", "p", 2.0, side, side, ChannelSpec::default());
        for plane in &mut map.planes {
            for y in 0..side {
                for x in 0..side {
                    if rng.random_bool(density) {
                        plane.set(x, y, true);
                    }
                }
            }
        }
        map
    }

    /// Literal two-stage oracle: materialize the dilation, then pool.
    fn dilate_then_pool_naive(plane: &BitPlane) -> Vec<Vec<bool>> {
        let (w, h) = (plane.width() as isize, plane.height() as isize);
        let mut dilated = vec![vec![false; w as usize]; h as usize];
        for y in 0..h {
            for x in 0..w {
                'search: for dy in -2..=2isize {
                    for dx in -2..=2isize {
                        let sy = y + dy;
                        let sx = x + dx;
                        if sy >= 0 && sy < h && sx >= 0 && sx < w && plane.get(sx as u32, sy as u32)
                        {
                            dilated[y as usize][x as usize] = true;
                            break 'search;
                        }
                    }
                }
            }
        }
        let (oh, ow) = ((h / 2) as usize, (w / 2) as usize);
        let mut pooled = vec![vec![false; ow]; oh];
        for y in 0..oh {
            for x in 0..ow {
                pooled[y][x] = dilated[2 * y][2 * x]
                    || dilated[2 * y][2 * x + 1]
                    || dilated[2 * y + 1][2 * x]
                    || dilated[2 * y + 1][2 * x + 1];
            }
        }
        pooled
    }

    #[test]
    fn front_matches_two_stage_oracle() {
        for seed in 0..10 {
            let map = random_tile(seed, 64, 0.02);
            let front = dilate_front(&map.planes.iter().collect::<Vec<_>>()).unwrap();
            for (c, plane) in map.planes.iter().enumerate() {
                let oracle = dilate_then_pool_naive(plane);
                for y in 0..32usize {
                    for x in 0..32usize {
                        let expected = if oracle[y][x] { 1.0 } else { 0.0 };
                        assert_eq!(front[[c, y, x]], expected, "seed {seed} c {c} ({x},{y})");
                    }
                }
            }
        }
    }

    #[test]
    fn front_geometry_single_bit() {
        let mut map = CellOMap::zeroed("s", "p", 2.0, 448, 448, ChannelSpec::default());
        map.planes[0].set(10, 10, true);
        let front = dilate_front(&map.planes.iter().collect::<Vec<_>>()).unwrap();
        // 5x5 dilation around (10,10) spans 8..=12, pooling to 4..=6
        let mut set = Vec::new();
        for y in 0..224usize {
            for x in 0..224usize {
                if front[[0, y, x]] > 0.0 {
                    set.push((x, y));
                }
            }
        }
        let expected: Vec<(usize, usize)> = (4..=6)
            .flat_map(|y| (4..=6).map(move |x| (x, y)))
            .collect();
        assert_eq!(set, expected);
        assert_eq!(front.slice(ndarray::s![1, .., ..]).sum(), 0.0);
    }

    #[test]
    fn front_rejects_odd_side() {
        let map = CellOMap::zeroed("s", "p", 2.0, 9, 9, ChannelSpec::default());
        assert!(matches!(
            dilate_front(&map.planes.iter().collect::<Vec<_>>()),
            Err(ClassifierError::OddTileSide(9, 2))
        ));
    }

    #[test]
    fn fresh_model_is_uniform() {
        let model = ClassifierModel::new_seeded(16, 3, 1).unwrap();
        let map = random_tile(3, 16, 0.1);
        let record = model.forward(&map, 0, 0).unwrap();
        for p in &record.probabilities {
            assert!((p - 1.0 / 6.0).abs() < 1e-12);
        }
        assert_eq!(record.predicted, PatternClass::Lepidic); // lowest index tie-break
    }

    #[test]
    fn forward_is_deterministic_and_normalized() {
        let mut model = ClassifierModel::new_seeded(16, 3, 2).unwrap();
        // break head symmetry so probabilities are not uniform
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        model.head_weight = Array2::from_shape_fn((PATTERN_COUNT, 64), |_| {
            rng.random_range(-0.5..0.5)
        });
        for seed in 0..50 {
            let map = random_tile(seed, 16, 0.15);
            let a = model.forward(&map, 0, 0).unwrap();
            let b = model.forward(&map, 0, 0).unwrap();
            assert_eq!(a, b);
            let sum: f64 = a.probabilities.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert_eq!(a.predicted, argmax_class(&a.probabilities));
        }
    }

    #[test]
    fn forward_rejects_wrong_shapes() {
        let model = ClassifierModel::new_seeded(16, 3, 1).unwrap();
        let wrong_side = random_tile(1, 24, 0.1);
        assert!(matches!(
            model.forward(&wrong_side, 0, 0),
            Err(ClassifierError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            ClassifierModel::new_seeded(20, 3, 1),
            Err(ClassifierError::OddTileSide(20, 8))
        ));
    }

    #[test]
    fn merged_channel_model_accepts_three_channel_tiles() {
        let model = ClassifierModel::new_seeded(16, 1, 1).unwrap();
        let map = random_tile(5, 16, 0.1);
        let record = model.forward(&map, 0, 0).unwrap();
        assert_eq!(record.probabilities.len(), PATTERN_COUNT);
        // merged front equals the front of the unioned plane
        let merged = map.planes[0].union(&map.planes[1]).union(&map.planes[2]);
        let direct = dilate_front(&[&merged]).unwrap();
        let via_model = model.front_input(&map).unwrap();
        assert_eq!(direct, via_model);
    }

    #[test]
    fn params_flat_round_trip() {
        let mut model = ClassifierModel::new_seeded(16, 3, 7).unwrap();
        let flat = model.params_flat();
        assert_eq!(flat.len(), model.param_count());
        let mut perturbed = flat.clone();
        perturbed[0] += 1.5;
        perturbed[flat.len() - 1] -= 2.5;
        model.set_params_flat(&perturbed);
        assert_eq!(model.params_flat(), perturbed);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut model = ClassifierModel::new_seeded(16, 3, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        model.head_weight = Array2::from_shape_fn((PATTERN_COUNT, 64), |_| {
            rng.random_range(-0.5..0.5)
        });
        let text = save_checkpoint(&model);
        let loaded = load_checkpoint(&text).unwrap();
        assert_eq!(model, loaded);

        let broken = text.replace("\"conv_layers\":3", "\"conv_layers\":4");
        assert!(load_checkpoint(&broken).is_err());
        assert!(load_checkpoint("{}").is_err());
    }
}
