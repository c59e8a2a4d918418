//! Mutational-burden prediction from pattern features: an MLP over slide
//! fraction vectors and a minimal message-passing network over the tile grid.

use crate::nn::train::Adam;
use crate::types::PATTERN_COUNT;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TmbError {
    #[error("duplicate grid coordinate ({gx}, {gy})")]
    DuplicateCoordinate { gx: u32, gy: u32 },
    #[error("training requires both TMB labels in the dataset")]
    SingleClassDataset,
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("malformed TMB labels: {0}")]
    MalformedLabels(String),
    #[error("malformed MLP checkpoint: {0}")]
    MalformedCheckpoint(String),
}

pub const TMB_THRESHOLD_MUT_PER_MB: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TmbLabel {
    High,
    Low,
}

impl TmbLabel {
    /// High iff at least 10 mutations per megabase.
    pub fn from_mut_per_mb(value: f64) -> TmbLabel {
        if value >= TMB_THRESHOLD_MUT_PER_MB {
            TmbLabel::High
        } else {
            TmbLabel::Low
        }
    }

    /// Output index: High = 0, Low = 1.
    pub fn index(self) -> usize {
        match self {
            TmbLabel::High => 0,
            TmbLabel::Low => 1,
        }
    }
}

/// Parses the labels CSV: `patient_id,<mut_per_mb or High/Low>` per line,
/// with an optional `patient_id,...` header.
pub fn parse_tmb_labels(text: &str) -> Result<Vec<(String, TmbLabel)>, TmbError> {
    let mut out = Vec::new();
    for (number, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (number == 0 && line.starts_with("patient_id,")) {
            continue;
        }
        let (patient, value) = line.split_once(',').ok_or_else(|| {
            TmbError::MalformedLabels(format!("line {}: expected two fields", number + 1))
        })?;
        let label = match value.trim() {
            "High" | "high" => TmbLabel::High,
            "Low" | "low" => TmbLabel::Low,
            other => TmbLabel::from_mut_per_mb(other.parse::<f64>().map_err(|_| {
                TmbError::MalformedLabels(format!(
                    "line {}: {:?} is neither a number nor High/Low",
                    number + 1,
                    other
                ))
            })?),
        };
        out.push((patient.trim().to_string(), label));
    }
    Ok(out)
}

/// One tile on the overlay grid with its probability features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub gx: u32,
    pub gy: u32,
    pub features: [f64; PATTERN_COUNT],
}

/// Undirected 4-connectivity graph over tile grid cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileGraph {
    pub nodes: Vec<GraphNode>,
    /// Index pairs with i < j, sorted.
    pub edges: Vec<(usize, usize)>,
}

/// Connects nodes at Manhattan distance 1 on the grid.
pub fn build_tile_graph(nodes: Vec<GraphNode>) -> Result<TileGraph, TmbError> {
    let mut by_coord = std::collections::BTreeMap::new();
    for (i, node) in nodes.iter().enumerate() {
        if by_coord.insert((node.gx, node.gy), i).is_some() {
            return Err(TmbError::DuplicateCoordinate {
                gx: node.gx,
                gy: node.gy,
            });
        }
    }
    let mut edges = Vec::new();
    for (&(gx, gy), &i) in &by_coord {
        // right and down suffice; the map walk visits each cell once
        for neighbor in [(gx + 1, gy), (gx, gy + 1)] {
            if let Some(&j) = by_coord.get(&neighbor) {
                edges.push((i.min(j), i.max(j)));
            }
        }
    }
    edges.sort_unstable();
    Ok(TileGraph { nodes, edges })
}

impl TileGraph {
    /// Neighbor indices per node, each list sorted by (gy, gx) so that
    /// aggregation order is independent of node order.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for list in &mut adj {
            list.sort_unstable_by_key(|&k| (self.nodes[k].gy, self.nodes[k].gx));
        }
        adj
    }

    /// Node indices sorted by (gy, gx); fixes global reduction order.
    fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_unstable_by_key(|&i| (self.nodes[i].gy, self.nodes[i].gx));
        order
    }
}

fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    [e0 / (e0 + e1), e1 / (e0 + e1)]
}

fn he_uniform(rng: &mut ChaCha8Rng, fan_in: usize) -> f64 {
    let bound = (6.0 / fan_in as f64).sqrt();
    rng.random_range(-bound..bound)
}

/// Single-hidden-layer perceptron: 6 -> hidden (ReLU) -> 2 (softmax).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl MlpModel {
    pub fn new_seeded(hidden: usize, seed: u64) -> MlpModel {
        assert!(hidden > 0, "hidden width must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MlpModel {
            w1: Array2::from_shape_fn((hidden, PATTERN_COUNT), |_| {
                he_uniform(&mut rng, PATTERN_COUNT)
            }),
            b1: Array1::zeros(hidden),
            w2: Array2::from_shape_fn((2, hidden), |_| he_uniform(&mut rng, hidden)),
            b2: Array1::zeros(2),
        }
    }

    pub fn forward(&self, features: &[f64; PATTERN_COUNT]) -> [f64; 2] {
        let x = Array1::from(features.to_vec());
        let hidden = (self.w1.dot(&x) + &self.b1).mapv(|v| v.max(0.0));
        let logits = self.w2.dot(&hidden) + &self.b2;
        softmax2([logits[0], logits[1]])
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .cloned()
            .collect()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter().cloned();
        for slot in self
            .w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
        {
            *slot = it.next().expect("flat vector too short");
        }
        assert!(it.next().is_none(), "flat vector too long");
    }

    /// Mean cross-entropy over the batch and its parameter gradient, in
    /// `params_flat` order.
    pub fn loss_and_grad(
        &self,
        features: &[[f64; PATTERN_COUNT]],
        labels: &[TmbLabel],
    ) -> (f64, Vec<f64>) {
        assert_eq!(features.len(), labels.len());
        assert!(!features.is_empty());
        let hidden = self.b1.len();
        let mut dw1 = Array2::<f64>::zeros((hidden, PATTERN_COUNT));
        let mut db1 = Array1::<f64>::zeros(hidden);
        let mut dw2 = Array2::<f64>::zeros((2, hidden));
        let mut db2 = Array1::<f64>::zeros(2);
        let mut loss = 0.0;
        for (feat, label) in features.iter().zip(labels) {
            let x = Array1::from(feat.to_vec());
            let z1 = self.w1.dot(&x) + &self.b1;
            let a = z1.mapv(|v| v.max(0.0));
            let logits = self.w2.dot(&a) + &self.b2;
            let p = softmax2([logits[0], logits[1]]);
            loss -= p[label.index()].max(1e-12).ln();
            let mut dz2 = Array1::from(vec![p[0], p[1]]);
            dz2[label.index()] -= 1.0;
            for k in 0..2 {
                for h in 0..hidden {
                    dw2[(k, h)] += dz2[k] * a[h];
                }
            }
            db2 += &dz2;
            let da = self.w2.t().dot(&dz2);
            let dz1 = ndarray::Zip::from(&da)
                .and(&z1)
                .map_collect(|&d, &z| if z > 0.0 { d } else { 0.0 });
            for h in 0..hidden {
                for f in 0..PATTERN_COUNT {
                    dw1[(h, f)] += dz1[h] * x[f];
                }
            }
            db1 += &dz1;
        }
        let n = features.len() as f64;
        let grad: Vec<f64> = dw1
            .iter()
            .chain(db1.iter())
            .chain(dw2.iter())
            .chain(db2.iter())
            .map(|g| g / n)
            .collect();
        (loss / n, grad)
    }

    pub fn training_accuracy(
        &self,
        features: &[[f64; PATTERN_COUNT]],
        labels: &[TmbLabel],
    ) -> f64 {
        let correct = features
            .iter()
            .zip(labels)
            .filter(|(feat, label)| {
                let p = self.forward(feat);
                let predicted = if p[0] >= p[1] { 0 } else { 1 };
                predicted == label.index()
            })
            .count();
        correct as f64 / features.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpTrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for MlpTrainConfig {
    fn default() -> MlpTrainConfig {
        MlpTrainConfig {
            hidden: 16,
            learning_rate: 0.05,
            epochs: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlpTrainReport {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
}

/// Full-batch Adam on cross-entropy; deterministic per seed.
pub fn train_mlp(
    features: &[[f64; PATTERN_COUNT]],
    labels: &[TmbLabel],
    config: &MlpTrainConfig,
) -> Result<(MlpModel, MlpTrainReport), TmbError> {
    assert_eq!(features.len(), labels.len(), "aligned inputs");
    assert!(
        config.learning_rate.is_finite() && config.learning_rate >= 0.0,
        "learning rate must be finite and nonnegative"
    );
    let highs = labels.iter().filter(|l| **l == TmbLabel::High).count();
    if highs == 0 || highs == labels.len() {
        return Err(TmbError::SingleClassDataset);
    }
    let mut model = MlpModel::new_seeded(config.hidden, config.seed);
    let mut adam = Adam::new(model.params_flat().len());
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let (loss, grad) = model.loss_and_grad(features, labels);
        epoch_losses.push(loss);
        let mut theta = model.params_flat();
        adam.step(&mut theta, &grad, config.learning_rate);
        model.set_params_flat(&theta);
    }
    let train_accuracy = model.training_accuracy(features, labels);
    Ok((
        model,
        MlpTrainReport {
            epoch_losses,
            train_accuracy,
        },
    ))
}

#[derive(Serialize, Deserialize)]
struct MlpJson {
    format_version: u32,
    hidden: usize,
    params: Vec<f64>,
}

/// Serializes the MLP as versioned JSON; weights survive bit-exact.
pub fn mlp_to_json(model: &MlpModel) -> String {
    serde_json::to_string_pretty(&MlpJson {
        format_version: 1,
        hidden: model.b1.len(),
        params: model.params_flat(),
    })
    .expect("MLP JSON serialization cannot fail")
}

pub fn mlp_from_json(text: &str) -> Result<MlpModel, TmbError> {
    let doc: MlpJson =
        serde_json::from_str(text).map_err(|e| TmbError::MalformedCheckpoint(e.to_string()))?;
    if doc.format_version != 1 {
        return Err(TmbError::MalformedCheckpoint(format!(
            "unsupported format_version {}",
            doc.format_version
        )));
    }
    if doc.hidden == 0 {
        return Err(TmbError::MalformedCheckpoint("hidden width 0".to_string()));
    }
    let expected = doc.hidden * (PATTERN_COUNT + 2) + doc.hidden + 2;
    if doc.params.len() != expected {
        return Err(TmbError::MalformedCheckpoint(format!(
            "expected {expected} parameters for hidden width {}, found {}",
            doc.hidden,
            doc.params.len()
        )));
    }
    let mut model = MlpModel::new_seeded(doc.hidden, 0);
    model.set_params_flat(&doc.params);
    Ok(model)
}

/// One mean-aggregation message pass, global mean pool, 2-class head.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    /// Message weight over [self features, neighbor mean] (hidden x 12).
    pub w_msg: Array2<f64>,
    pub b_msg: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

impl GnnModel {
    pub fn new_seeded(hidden: usize, seed: u64) -> GnnModel {
        assert!(hidden > 0, "hidden width must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let concat = 2 * PATTERN_COUNT;
        GnnModel {
            w_msg: Array2::from_shape_fn((hidden, concat), |_| he_uniform(&mut rng, concat)),
            b_msg: Array1::zeros(hidden),
            w_out: Array2::from_shape_fn((2, hidden), |_| he_uniform(&mut rng, hidden)),
            b_out: Array1::zeros(2),
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.w_msg
            .iter()
            .chain(self.b_msg.iter())
            .chain(self.w_out.iter())
            .chain(self.b_out.iter())
            .cloned()
            .collect()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter().cloned();
        for slot in self
            .w_msg
            .iter_mut()
            .chain(self.b_msg.iter_mut())
            .chain(self.w_out.iter_mut())
            .chain(self.b_out.iter_mut())
        {
            *slot = it.next().expect("flat vector too short");
        }
        assert!(it.next().is_none(), "flat vector too long");
    }
}

/// Per-node concat of own features with the neighbor mean, in canonical
/// (gy, gx) aggregation order. Isolated nodes aggregate themselves, making
/// the constant-feature graph a fixed point of the mean.
fn node_messages(graph: &TileGraph) -> Vec<Array1<f64>> {
    let adjacency = graph.adjacency();
    graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let mut concat = Array1::zeros(2 * PATTERN_COUNT);
            for (slot, &f) in concat.iter_mut().zip(&node.features) {
                *slot = f;
            }
            let neighbors = &adjacency[i];
            if neighbors.is_empty() {
                for f in 0..PATTERN_COUNT {
                    concat[PATTERN_COUNT + f] = node.features[f];
                }
            } else {
                for &j in neighbors {
                    for f in 0..PATTERN_COUNT {
                        concat[PATTERN_COUNT + f] += graph.nodes[j].features[f];
                    }
                }
                for f in 0..PATTERN_COUNT {
                    concat[PATTERN_COUNT + f] /= neighbors.len() as f64;
                }
            }
            concat
        })
        .collect()
}

/// Graph-level 2-class distribution; bit-identical under node permutation.
pub fn gnn_forward(model: &GnnModel, graph: &TileGraph) -> Result<[f64; 2], TmbError> {
    if graph.nodes.is_empty() {
        return Err(TmbError::EmptyGraph);
    }
    let messages = node_messages(graph);
    let hidden = model.b_msg.len();
    let mut pooled = Array1::<f64>::zeros(hidden);
    for i in graph.canonical_order() {
        let h = (model.w_msg.dot(&messages[i]) + &model.b_msg).mapv(|v| v.max(0.0));
        pooled += &h;
    }
    pooled /= graph.nodes.len() as f64;
    let logits = model.w_out.dot(&pooled) + &model.b_out;
    Ok(softmax2([logits[0], logits[1]]))
}

/// Cross-entropy at `label` and its parameter gradient in `params_flat`
/// order.
pub fn gnn_loss_and_grad(
    model: &GnnModel,
    graph: &TileGraph,
    label: TmbLabel,
) -> Result<(f64, Vec<f64>), TmbError> {
    if graph.nodes.is_empty() {
        return Err(TmbError::EmptyGraph);
    }
    let messages = node_messages(graph);
    let hidden = model.b_msg.len();
    let order = graph.canonical_order();
    let mut pre_relu = Vec::with_capacity(order.len());
    let mut pooled = Array1::<f64>::zeros(hidden);
    for &i in &order {
        let z = model.w_msg.dot(&messages[i]) + &model.b_msg;
        pooled += &z.mapv(|v| v.max(0.0));
        pre_relu.push(z);
    }
    pooled /= graph.nodes.len() as f64;
    let logits = model.w_out.dot(&pooled) + &model.b_out;
    let p = softmax2([logits[0], logits[1]]);
    let loss = -p[label.index()].max(1e-12).ln();

    let mut dlogits = Array1::from(vec![p[0], p[1]]);
    dlogits[label.index()] -= 1.0;
    let mut dw_out = Array2::<f64>::zeros((2, hidden));
    for k in 0..2 {
        for h in 0..hidden {
            dw_out[(k, h)] = dlogits[k] * pooled[h];
        }
    }
    let db_out = dlogits.clone();
    let dpool = model.w_out.t().dot(&dlogits) / graph.nodes.len() as f64;
    let mut dw_msg = Array2::<f64>::zeros((hidden, 2 * PATTERN_COUNT));
    let mut db_msg = Array1::<f64>::zeros(hidden);
    for (slot, &i) in order.iter().enumerate() {
        let dz = ndarray::Zip::from(&dpool)
            .and(&pre_relu[slot])
            .map_collect(|&d, &z| if z > 0.0 { d } else { 0.0 });
        for h in 0..hidden {
            for c in 0..2 * PATTERN_COUNT {
                dw_msg[(h, c)] += dz[h] * messages[i][c];
            }
        }
        db_msg += &dz;
    }
    let grad: Vec<f64> = dw_msg
        .iter()
        .chain(db_msg.iter())
        .chain(dw_out.iter())
        .chain(db_out.iter())
        .cloned()
        .collect();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(gx: u32, gy: u32, features: [f64; PATTERN_COUNT]) -> GraphNode {
        GraphNode { gx, gy, features }
    }

    fn uniform_features(seed: u64) -> [f64; PATTERN_COUNT] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = [0.0; PATTERN_COUNT];
        let mut sum = 0.0;
        for slot in f.iter_mut() {
            *slot = rng.random_range(0.01..1.0);
            sum += *slot;
        }
        for slot in f.iter_mut() {
            *slot /= sum;
        }
        f
    }

    #[test]
    fn threshold_is_ten_mutations_per_megabase() {
        assert_eq!(TmbLabel::from_mut_per_mb(10.0), TmbLabel::High);
        assert_eq!(TmbLabel::from_mut_per_mb(25.0), TmbLabel::High);
        assert_eq!(TmbLabel::from_mut_per_mb(9.999), TmbLabel::Low);
    }

    #[test]
    fn labels_csv_accepts_numbers_and_names() {
        let text = "patient_id,mut_per_mb\np1,12.5\np2,3\np3,High\np4,low\n";
        let labels = parse_tmb_labels(text).unwrap();
        assert_eq!(
            labels,
            vec![
                ("p1".to_string(), TmbLabel::High),
                ("p2".to_string(), TmbLabel::Low),
                ("p3".to_string(), TmbLabel::High),
                ("p4".to_string(), TmbLabel::Low),
            ]
        );
        assert!(parse_tmb_labels("p1,notanumber").is_err());
        assert!(parse_tmb_labels("justonefield").is_err());
    }

    #[test]
    fn single_node_has_no_edges() {
        let graph = build_tile_graph(vec![node(3, 4, uniform_features(1))]).unwrap();
        assert!(graph.edges.is_empty());
    }

    #[test]
    fn two_by_two_grid_is_a_cycle() {
        let nodes = vec![
            node(0, 0, uniform_features(1)),
            node(1, 0, uniform_features(2)),
            node(0, 1, uniform_features(3)),
            node(1, 1, uniform_features(4)),
        ];
        let graph = build_tile_graph(nodes).unwrap();
        assert_eq!(graph.edges.len(), 4);
        let mut degree = [0usize; 4];
        for &(i, j) in &graph.edges {
            degree[i] += 1;
            degree[j] += 1;
        }
        assert_eq!(degree, [2, 2, 2, 2]);
    }

    #[test]
    fn duplicate_coordinates_are_rejected() {
        let nodes = vec![node(2, 2, uniform_features(1)), node(2, 2, uniform_features(2))];
        assert!(matches!(
            build_tile_graph(nodes),
            Err(TmbError::DuplicateCoordinate { gx: 2, gy: 2 })
        ));
    }

    #[test]
    fn adjacency_matches_all_pairs_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for case in 0..100 {
            let mut coords = std::collections::BTreeSet::new();
            for _ in 0..rng.random_range(1..40usize) {
                coords.insert((rng.random_range(0..8u32), rng.random_range(0..8u32)));
            }
            let nodes: Vec<GraphNode> = coords
                .iter()
                .map(|&(gx, gy)| node(gx, gy, uniform_features(gx as u64 * 100 + gy as u64)))
                .collect();
            let graph = build_tile_graph(nodes.clone()).unwrap();
            let mut expected = Vec::new();
            for i in 0..nodes.len() {
                for j in (i + 1)..nodes.len() {
                    let dx = nodes[i].gx.abs_diff(nodes[j].gx);
                    let dy = nodes[i].gy.abs_diff(nodes[j].gy);
                    if dx + dy == 1 {
                        expected.push((i, j));
                    }
                }
            }
            expected.sort_unstable();
            assert_eq!(graph.edges, expected, "case {case}");
            let mut degree = vec![0usize; nodes.len()];
            for &(i, j) in &graph.edges {
                degree[i] += 1;
                degree[j] += 1;
            }
            assert!(degree.iter().all(|&d| d <= 4), "case {case}");
        }
    }

    #[test]
    fn graph_round_trips_through_json() {
        let graph = build_tile_graph(vec![
            node(0, 0, uniform_features(1)),
            node(1, 0, uniform_features(2)),
        ])
        .unwrap();
        let text = serde_json::to_string(&graph).unwrap();
        let back: TileGraph = serde_json::from_str(&text).unwrap();
        assert_eq!(back, graph);
    }

    #[test]
    fn constant_graph_equals_single_node() {
        let features = uniform_features(5);
        let model = GnnModel::new_seeded(16, 3);
        let grid: Vec<GraphNode> = (0..9)
            .map(|i| node(i % 3, i / 3, features))
            .collect();
        let grid_out = gnn_forward(&model, &build_tile_graph(grid).unwrap()).unwrap();
        let single_out =
            gnn_forward(&model, &build_tile_graph(vec![node(0, 0, features)]).unwrap()).unwrap();
        assert_eq!(grid_out, single_out);
    }

    #[test]
    fn gnn_output_is_bit_identical_under_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = GnnModel::new_seeded(16, 4);
        let mut nodes: Vec<GraphNode> = (0..12)
            .map(|i| node(i % 4, i / 4, uniform_features(i as u64 + 50)))
            .collect();
        let base = gnn_forward(&model, &build_tile_graph(nodes.clone()).unwrap()).unwrap();
        for _ in 0..20 {
            use rand::seq::SliceRandom;
            nodes.shuffle(&mut rng);
            let permuted = gnn_forward(&model, &build_tile_graph(nodes.clone()).unwrap()).unwrap();
            assert_eq!(permuted, base);
        }
    }

    #[test]
    fn gnn_matches_hand_computed_message_passing() {
        let model = GnnModel::new_seeded(8, 11);
        let nodes: Vec<GraphNode> = (0..9)
            .map(|i| node(i % 3, i / 3, uniform_features(i as u64 + 10)))
            .collect();
        let graph = build_tile_graph(nodes.clone()).unwrap();
        let fast = gnn_forward(&model, &graph).unwrap();

        // independent naive pass: brute-force neighbors, explicit loops
        let hidden = model.b_msg.len();
        let mut pooled = vec![0.0f64; hidden];
        for v in &nodes {
            let neighbors: Vec<&GraphNode> = nodes
                .iter()
                .filter(|u| u.gx.abs_diff(v.gx) + u.gy.abs_diff(v.gy) == 1)
                .collect();
            let mut concat = [0.0f64; 12];
            concat[..6].copy_from_slice(&v.features);
            for u in &neighbors {
                for f in 0..6 {
                    concat[6 + f] += u.features[f] / neighbors.len() as f64;
                }
            }
            for h in 0..hidden {
                let mut z = model.b_msg[h];
                for c in 0..12 {
                    z += model.w_msg[(h, c)] * concat[c];
                }
                pooled[h] += z.max(0.0) / 9.0;
            }
        }
        let mut logits = [0.0f64; 2];
        for k in 0..2 {
            logits[k] = model.b_out[k];
            for h in 0..hidden {
                logits[k] += model.w_out[(k, h)] * pooled[h];
            }
        }
        let expected = softmax2(logits);
        assert!((fast[0] - expected[0]).abs() < 1e-12);
        assert!((fast[1] - expected[1]).abs() < 1e-12);
    }

    #[test]
    fn empty_graph_is_rejected() {
        let model = GnnModel::new_seeded(8, 1);
        let graph = TileGraph {
            nodes: vec![],
            edges: vec![],
        };
        assert!(matches!(
            gnn_forward(&model, &graph),
            Err(TmbError::EmptyGraph)
        ));
    }

    /// Linearly separable toy: high solid+micropapillary fraction means High.
    fn separable_features(n_per_class: usize, seed: u64) -> (Vec<[f64; 6]>, Vec<TmbLabel>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_per_class * 2 {
            let high = i % 2 == 0;
            let tumor = if high {
                rng.random_range(0.6..0.9)
            } else {
                rng.random_range(0.05..0.3)
            };
            let mut f = [0.0f64; 6];
            f[4] = tumor * 0.6; // solid
            f[3] = tumor * 0.4; // micropapillary
            let rest = 1.0 - tumor;
            f[0] = rest * 0.2;
            f[1] = rest * 0.3;
            f[2] = rest * 0.1;
            f[5] = rest * 0.4;
            features.push(f);
            labels.push(if high { TmbLabel::High } else { TmbLabel::Low });
        }
        (features, labels)
    }

    #[test]
    fn mlp_fits_separable_toy_within_200_epochs() {
        let (features, labels) = separable_features(20, 2);
        let (model, report) = train_mlp(&features, &labels, &MlpTrainConfig::default()).unwrap();
        assert_eq!(report.train_accuracy, 1.0);
        assert_eq!(report.epoch_losses.len(), 200);
        assert!(report.epoch_losses[199] < report.epoch_losses[0]);
        let p = model.forward(&features[0]);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mlp_zero_learning_rate_is_identity() {
        let (features, labels) = separable_features(5, 3);
        let config = MlpTrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..MlpTrainConfig::default()
        };
        let (model, _) = train_mlp(&features, &labels, &config).unwrap();
        assert_eq!(
            model.params_flat(),
            MlpModel::new_seeded(config.hidden, config.seed).params_flat()
        );
    }

    #[test]
    fn mlp_training_is_deterministic_per_seed() {
        let (features, labels) = separable_features(10, 4);
        let config = MlpTrainConfig {
            epochs: 20,
            ..MlpTrainConfig::default()
        };
        let (model_a, report_a) = train_mlp(&features, &labels, &config).unwrap();
        let (model_b, report_b) = train_mlp(&features, &labels, &config).unwrap();
        assert_eq!(model_a.params_flat(), model_b.params_flat());
        assert_eq!(report_a.epoch_losses, report_b.epoch_losses);
    }

    #[test]
    fn single_class_dataset_is_rejected() {
        let (features, _) = separable_features(4, 5);
        let labels = vec![TmbLabel::High; features.len()];
        assert!(matches!(
            train_mlp(&features, &labels, &MlpTrainConfig::default()),
            Err(TmbError::SingleClassDataset)
        ));
    }

    #[test]
    fn mlp_checkpoint_round_trips_bit_exact() {
        let (features, labels) = separable_features(10, 4);
        let (model, _) = train_mlp(&features, &labels, &MlpTrainConfig::default()).unwrap();
        let back = mlp_from_json(&mlp_to_json(&model)).unwrap();
        assert_eq!(back, model);
        assert!(mlp_from_json("{}").is_err());
        let wrong_len = r#"{"format_version":1,"hidden":16,"params":[0.0]}"#;
        assert!(mlp_from_json(wrong_len).is_err());
    }

    fn central_fd(mut eval: impl FnMut(&[f64]) -> f64, theta: &[f64], eps: f64) -> Vec<f64> {
        let mut grads = Vec::with_capacity(theta.len());
        let mut probe = theta.to_vec();
        for i in 0..theta.len() {
            probe[i] = theta[i] + eps;
            let up = eval(&probe);
            probe[i] = theta[i] - eps;
            let down = eval(&probe);
            probe[i] = theta[i];
            grads.push((up - down) / (2.0 * eps));
        }
        grads
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let (features, labels) = separable_features(6, 6);
        let model = MlpModel::new_seeded(8, 7);
        let (_, analytic) = model.loss_and_grad(&features, &labels);
        let theta = model.params_flat();
        let numeric = central_fd(
            |t| {
                let mut probe = model.clone();
                probe.set_params_flat(t);
                probe.loss_and_grad(&features, &labels).0
            },
            &theta,
            1e-5,
        );
        let err = crate::nn::gradcheck::max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gnn_gradients_match_finite_differences() {
        let model = GnnModel::new_seeded(8, 9);
        let nodes: Vec<GraphNode> = (0..6)
            .map(|i| node(i % 3, i / 3, uniform_features(i as u64 + 80)))
            .collect();
        let graph = build_tile_graph(nodes).unwrap();
        let (_, analytic) = gnn_loss_and_grad(&model, &graph, TmbLabel::High).unwrap();
        let theta = model.params_flat();
        let numeric = central_fd(
            |t| {
                let mut probe = model.clone();
                probe.set_params_flat(t);
                gnn_loss_and_grad(&probe, &graph, TmbLabel::High).unwrap().0
            },
            &theta,
            1e-5,
        );
        let err = crate::nn::gradcheck::max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "max relative error {err}");
    }
}
