//! Multimodal fusion architectures for multitask property prediction.
//!
//! Three architectures over the concatenated language/graph embedding:
//!
//! - **Early fusion**: one shared MLP maps the (selected) embedding straight
//!   to the three property predictions.
//! - **Gated late fusion**: a dedicated per-modality expert MLP predicts all
//!   three properties from its own embedding; a gate network over the
//!   concatenated input emits a sigmoid weight per task that blends the two
//!   expert predictions.
//! - **Mixture of experts**: shared expert MLPs feed per-task towers through
//!   per-task softmax gates over the experts.
//!
//! All predictions live in standardized label space internally; callers
//! de-standardize through the model's attached [`TaskStats`].

pub mod checkpoint;
pub mod loss;
pub mod metrics;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{
    Dataset, PolymerRecord, TaskStats, FUSED_DIM, GRAPH_DIM, LANG_DIM, NUM_TASKS,
};
use crate::nn::matrix::{dot, Matrix};
use crate::nn::mlp::{Mlp, MlpCache, MlpGrads, Mode};
use crate::nn::NnError;

pub use loss::{masked_mse, masked_mse_with_grad};
pub use metrics::{evaluate_r2, expert_utilization};
pub use train::{train, EpochStats, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Early,
    GatedLate,
    Mmoe,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Early => "early",
            Architecture::GatedLate => "gated_late",
            Architecture::Mmoe => "mmoe",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "early" => Some(Architecture::Early),
            "gated" | "gated_late" | "gated-late" => Some(Architecture::GatedLate),
            "mmoe" => Some(Architecture::Mmoe),
            _ => None,
        }
    }
}

/// Which embedding block(s) a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Lang,
    Graph,
    Both,
}

impl Modality {
    pub fn input_dim(self) -> usize {
        match self {
            Modality::Lang => LANG_DIM,
            Modality::Graph => GRAPH_DIM,
            Modality::Both => FUSED_DIM,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Lang => "lang",
            Modality::Graph => "graph",
            Modality::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lang" | "language" => Some(Modality::Lang),
            "graph" => Some(Modality::Graph),
            "both" => Some(Modality::Both),
            _ => None,
        }
    }
}

/// Hidden-layer widths for every component network.
///
/// Defaults: early-fusion trunk and gated-late experts are 3-layer MLPs with
/// hidden sizes [256, 128]; the gated-late gate is a 2-layer MLP (hidden
/// 128); MMoE uses 4 experts that are 3-layer MLPs 256 wide throughout,
/// 2-layer gates (hidden 256), and 2-layer towers (hidden 128).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    pub trunk_hidden: Vec<usize>,
    pub late_gate_hidden: Vec<usize>,
    pub expert_hidden: Vec<usize>,
    pub expert_out: usize,
    pub moe_gate_hidden: Vec<usize>,
    pub tower_hidden: Vec<usize>,
    pub n_experts: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            trunk_hidden: vec![256, 128],
            late_gate_hidden: vec![128],
            expert_hidden: vec![256, 256],
            expert_out: 256,
            moe_gate_hidden: vec![256],
            tower_hidden: vec![128],
            n_experts: 4,
        }
    }
}

impl ModelDims {
    /// Small-network variant for quick experiments and tests.
    pub fn tiny() -> Self {
        Self {
            trunk_hidden: vec![8, 6],
            late_gate_hidden: vec![6],
            expert_hidden: vec![8, 8],
            expert_out: 8,
            moe_gate_hidden: vec![8],
            tower_hidden: vec![6],
            n_experts: 3,
        }
    }
}

/// The component networks of one architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum Components {
    Early { trunk: Mlp },
    GatedLate { expert_lang: Mlp, expert_graph: Mlp, gate: Mlp },
    Mmoe { experts: Vec<Mlp>, gates: Vec<Mlp>, towers: Vec<Mlp> },
}

/// Gate activations surfaced by a forward pass (one record).
#[derive(Debug, Clone, PartialEq)]
pub enum GateActivation {
    /// Gated late fusion: per-task sigmoid blend weight in (0, 1).
    Blend([f64; NUM_TASKS]),
    /// MMoE: per-task softmax weights over the experts (each sums to 1).
    ExpertWeights([Vec<f64>; NUM_TASKS]),
}

/// A trained (or trainable) fusion model.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    architecture: Architecture,
    modality: Modality,
    components: Components,
    stats: Option<TaskStats>,
}

impl FusionModel {
    /// Early fusion: a single shared MLP `[in -> hidden.. -> 3]`.
    pub fn build_early(modality: Modality, dims: &ModelDims, seed: u64) -> Result<Self, FusionError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer_dims = vec![modality.input_dim()];
        layer_dims.extend_from_slice(&dims.trunk_hidden);
        layer_dims.push(NUM_TASKS);
        let trunk = Mlp::init(&layer_dims, &mut rng)?;
        Ok(Self {
            architecture: Architecture::Early,
            modality,
            components: Components::Early { trunk },
            stats: None,
        })
    }

    /// Gated late fusion: two per-modality expert MLPs blended by a
    /// sigmoid gate over the concatenated input. Requires both modalities.
    pub fn build_gated_late(
        modality: Modality,
        dims: &ModelDims,
        seed: u64,
    ) -> Result<Self, FusionError> {
        if modality != Modality::Both {
            return Err(FusionError::UnsupportedArchitecture(format!(
                "gated late fusion needs both modalities, got {}",
                modality.name()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let expert_dims = |input: usize| {
            let mut d = vec![input];
            d.extend_from_slice(&dims.trunk_hidden);
            d.push(NUM_TASKS);
            d
        };
        let expert_lang = Mlp::init(&expert_dims(LANG_DIM), &mut rng)?;
        let expert_graph = Mlp::init(&expert_dims(GRAPH_DIM), &mut rng)?;
        let mut gate_dims = vec![FUSED_DIM];
        gate_dims.extend_from_slice(&dims.late_gate_hidden);
        gate_dims.push(NUM_TASKS);
        let gate = Mlp::init(&gate_dims, &mut rng)?;
        Ok(Self {
            architecture: Architecture::GatedLate,
            modality,
            components: Components::GatedLate { expert_lang, expert_graph, gate },
            stats: None,
        })
    }

    /// MMoE: `n_experts` shared experts, one softmax gate and one tower per
    /// task.
    pub fn build_mmoe(modality: Modality, dims: &ModelDims, seed: u64) -> Result<Self, FusionError> {
        if dims.n_experts < 1 {
            return Err(FusionError::BadConfig("n_experts must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = modality.input_dim();
        let mut expert_dims = vec![input];
        expert_dims.extend_from_slice(&dims.expert_hidden);
        expert_dims.push(dims.expert_out);
        let experts: Vec<Mlp> = (0..dims.n_experts)
            .map(|_| Mlp::init(&expert_dims, &mut rng))
            .collect::<Result<_, _>>()?;
        let mut gate_dims = vec![input];
        gate_dims.extend_from_slice(&dims.moe_gate_hidden);
        gate_dims.push(dims.n_experts);
        let gates: Vec<Mlp> = (0..NUM_TASKS)
            .map(|_| Mlp::init(&gate_dims, &mut rng))
            .collect::<Result<_, _>>()?;
        let mut tower_dims = vec![dims.expert_out];
        tower_dims.extend_from_slice(&dims.tower_hidden);
        tower_dims.push(1);
        let towers: Vec<Mlp> = (0..NUM_TASKS)
            .map(|_| Mlp::init(&tower_dims, &mut rng))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            architecture: Architecture::Mmoe,
            modality,
            components: Components::Mmoe { experts, gates, towers },
            stats: None,
        })
    }

    pub fn build(
        architecture: Architecture,
        modality: Modality,
        dims: &ModelDims,
        seed: u64,
    ) -> Result<Self, FusionError> {
        match architecture {
            Architecture::Early => Self::build_early(modality, dims, seed),
            Architecture::GatedLate => Self::build_gated_late(modality, dims, seed),
            Architecture::Mmoe => Self::build_mmoe(modality, dims, seed),
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn input_dim(&self) -> usize {
        self.modality.input_dim()
    }

    pub fn n_experts(&self) -> usize {
        match &self.components {
            Components::Mmoe { experts, .. } => experts.len(),
            _ => 0,
        }
    }

    pub fn components(&self) -> &Components {
        &self.components
    }

    pub fn components_mut(&mut self) -> &mut Components {
        &mut self.components
    }

    pub fn stats(&self) -> Option<&TaskStats> {
        self.stats.as_ref()
    }

    pub fn set_stats(&mut self, stats: TaskStats) {
        self.stats = Some(stats);
    }

    /// Component MLPs in the canonical (checkpoint/optimizer) order.
    pub fn mlps(&self) -> Vec<&Mlp> {
        match &self.components {
            Components::Early { trunk } => vec![trunk],
            Components::GatedLate { expert_lang, expert_graph, gate } => {
                vec![expert_lang, expert_graph, gate]
            }
            Components::Mmoe { experts, gates, towers } => {
                experts.iter().chain(gates).chain(towers).collect()
            }
        }
    }

    pub fn mlps_mut(&mut self) -> Vec<&mut Mlp> {
        match &mut self.components {
            Components::Early { trunk } => vec![trunk],
            Components::GatedLate { expert_lang, expert_graph, gate } => {
                vec![expert_lang, expert_graph, gate]
            }
            Components::Mmoe { experts, gates, towers } => {
                experts.iter_mut().chain(gates.iter_mut()).chain(towers.iter_mut()).collect()
            }
        }
    }

    /// Names parallel to [`FusionModel::mlps`], used in checkpoints.
    pub(crate) fn component_names(&self) -> Vec<String> {
        match &self.components {
            Components::Early { .. } => vec!["trunk".into()],
            Components::GatedLate { .. } => {
                vec!["expert_lang".into(), "expert_graph".into(), "gate".into()]
            }
            Components::Mmoe { experts, gates, towers } => {
                let mut names: Vec<String> =
                    (0..experts.len()).map(|i| format!("expert_{i}")).collect();
                names.extend((0..gates.len()).map(|k| format!("gate_{k}")));
                names.extend((0..towers.len()).map(|k| format!("tower_{k}")));
                names
            }
        }
    }

    /// Eval-mode forward for one input vector (already modality-selected).
    ///
    /// Returns standardized predictions plus gate activations for the two
    /// gated architectures.
    pub fn forward_one(
        &self,
        input: &[f64],
    ) -> Result<([f64; NUM_TASKS], Option<GateActivation>), FusionError> {
        if input.len() != self.input_dim() {
            return Err(FusionError::InputDim {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        let x = Matrix::from_vec(1, input.len(), input.to_vec());
        let (preds, gates) = self.forward_eval_batch(&x)?;
        let mut out = [0.0; NUM_TASKS];
        out.copy_from_slice(preds.row(0));
        let gate = gates.map(|g| g.activation_for_row(0));
        Ok((out, gate))
    }

    /// Eval-mode forward over a batch (rows are modality-selected inputs).
    pub fn forward_eval_batch(
        &self,
        input: &Matrix,
    ) -> Result<(Matrix, Option<BatchGates>), FusionError> {
        if input.cols() != self.input_dim() {
            return Err(FusionError::InputDim {
                expected: self.input_dim(),
                actual: input.cols(),
            });
        }
        match &self.components {
            Components::Early { trunk } => Ok((trunk.forward_eval(input)?, None)),
            Components::GatedLate { expert_lang, expert_graph, gate } => {
                let (xl, xg) = split_modalities(input);
                let yl = expert_lang.forward_eval(&xl)?;
                let yg = expert_graph.forward_eval(&xg)?;
                let mut g = gate.forward_eval(input)?;
                sigmoid_in_place(&mut g);
                let preds = blend(&g, &yl, &yg);
                Ok((preds, Some(BatchGates::Blend(g))))
            }
            Components::Mmoe { experts, gates, towers } => {
                let expert_outs: Vec<Matrix> =
                    experts.iter().map(|e| e.forward_eval(input)).collect::<Result<_, _>>()?;
                let mut gate_outs = Vec::with_capacity(NUM_TASKS);
                let mut preds = Matrix::zeros(input.rows(), NUM_TASKS);
                for (k, (gate, tower)) in gates.iter().zip(towers).enumerate() {
                    let mut g = gate.forward_eval(input)?;
                    softmax_rows_in_place(&mut g);
                    let mixture = mix_experts(&g, &expert_outs);
                    let y = tower.forward_eval(&mixture)?;
                    for b in 0..input.rows() {
                        preds.row_mut(b)[k] = y.row(b)[0];
                    }
                    gate_outs.push(g);
                }
                Ok((preds, Some(BatchGates::ExpertWeights(gate_outs))))
            }
        }
    }

    /// Train-mode forward: applies dropout inside every component and
    /// returns the context required by [`FusionModel::backward`].
    pub fn forward_train(
        &self,
        input: &Matrix,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Matrix, TrainContext), FusionError> {
        if input.cols() != self.input_dim() {
            return Err(FusionError::InputDim {
                expected: self.input_dim(),
                actual: input.cols(),
            });
        }
        match &self.components {
            Components::Early { trunk } => {
                let (preds, cache) = trunk.forward(input, dropout, Mode::Train, Some(rng))?;
                Ok((preds, TrainContext::Early { trunk: cache }))
            }
            Components::GatedLate { expert_lang, expert_graph, gate } => {
                let (xl, xg) = split_modalities(input);
                let (yl, cache_l) = expert_lang.forward(&xl, dropout, Mode::Train, Some(rng))?;
                let (yg, cache_g) = expert_graph.forward(&xg, dropout, Mode::Train, Some(rng))?;
                let (mut g, cache_gate) = gate.forward(input, dropout, Mode::Train, Some(rng))?;
                sigmoid_in_place(&mut g);
                let preds = blend(&g, &yl, &yg);
                Ok((
                    preds,
                    TrainContext::GatedLate {
                        cache_lang: cache_l,
                        cache_graph: cache_g,
                        cache_gate,
                        gate_out: g,
                        y_lang: yl,
                        y_graph: yg,
                    },
                ))
            }
            Components::Mmoe { experts, gates, towers } => {
                let mut expert_caches = Vec::with_capacity(experts.len());
                let mut expert_outs = Vec::with_capacity(experts.len());
                for expert in experts {
                    let (out, cache) = expert.forward(input, dropout, Mode::Train, Some(rng))?;
                    expert_outs.push(out);
                    expert_caches.push(cache);
                }
                let mut gate_caches = Vec::with_capacity(NUM_TASKS);
                let mut gate_outs = Vec::with_capacity(NUM_TASKS);
                for gate in gates {
                    let (mut g, cache) = gate.forward(input, dropout, Mode::Train, Some(rng))?;
                    softmax_rows_in_place(&mut g);
                    gate_outs.push(g);
                    gate_caches.push(cache);
                }
                let mut tower_caches = Vec::with_capacity(NUM_TASKS);
                let mut preds = Matrix::zeros(input.rows(), NUM_TASKS);
                for (k, tower) in towers.iter().enumerate() {
                    let mixture = mix_experts(&gate_outs[k], &expert_outs);
                    let (y, cache) = tower.forward(&mixture, dropout, Mode::Train, Some(rng))?;
                    for b in 0..input.rows() {
                        preds.row_mut(b)[k] = y.row(b)[0];
                    }
                    tower_caches.push(cache);
                }
                Ok((
                    preds,
                    TrainContext::Mmoe { expert_caches, expert_outs, gate_caches, gate_outs, tower_caches },
                ))
            }
        }
    }

    /// Backward pass matching [`FusionModel::forward_train`].
    pub fn backward(
        &self,
        ctx: &TrainContext,
        grad_preds: &Matrix,
    ) -> Result<FusionGrads, FusionError> {
        let mut grads = FusionGrads::zeros_like(self);
        self.backward_into(ctx, grad_preds, &mut grads)?;
        Ok(grads)
    }

    /// [`FusionModel::backward`] into a caller-owned buffer (overwritten),
    /// letting training loops reuse the large gradient allocations.
    pub fn backward_into(
        &self,
        ctx: &TrainContext,
        grad_preds: &Matrix,
        out: &mut FusionGrads,
    ) -> Result<(), FusionError> {
        if out.per_mlp.len() != self.mlps().len() {
            return Err(FusionError::Shape("gradient buffer does not match model".into()));
        }
        match (&self.components, ctx) {
            (Components::Early { trunk }, TrainContext::Early { trunk: cache }) => {
                trunk.backward_into(cache, grad_preds, &mut out.per_mlp[0], false)?;
                Ok(())
            }
            (
                Components::GatedLate { expert_lang, expert_graph, gate },
                TrainContext::GatedLate { cache_lang, cache_graph, cache_gate, gate_out, y_lang, y_graph },
            ) => {
                let rows = grad_preds.rows();
                let mut d_yl = Matrix::zeros(rows, NUM_TASKS);
                let mut d_yg = Matrix::zeros(rows, NUM_TASKS);
                let mut d_logit = Matrix::zeros(rows, NUM_TASKS);
                for b in 0..rows {
                    let dp = grad_preds.row(b);
                    let g = gate_out.row(b);
                    let yl = y_lang.row(b);
                    let yg = y_graph.row(b);
                    for k in 0..NUM_TASKS {
                        d_yl.row_mut(b)[k] = dp[k] * g[k];
                        d_yg.row_mut(b)[k] = dp[k] * (1.0 - g[k]);
                        // through the sigmoid head
                        d_logit.row_mut(b)[k] = dp[k] * (yl[k] - yg[k]) * g[k] * (1.0 - g[k]);
                    }
                }
                expert_lang.backward_into(cache_lang, &d_yl, &mut out.per_mlp[0], false)?;
                expert_graph.backward_into(cache_graph, &d_yg, &mut out.per_mlp[1], false)?;
                gate.backward_into(cache_gate, &d_logit, &mut out.per_mlp[2], false)?;
                Ok(())
            }
            (
                Components::Mmoe { experts, gates, towers },
                TrainContext::Mmoe { expert_caches, expert_outs, gate_caches, gate_outs, tower_caches },
            ) => {
                let rows = grad_preds.rows();
                let n_experts = experts.len();
                let expert_dim = expert_outs[0].cols();
                let mut d_experts: Vec<Matrix> =
                    (0..n_experts).map(|_| Matrix::zeros(rows, expert_dim)).collect();
                for k in 0..NUM_TASKS {
                    let mut d_tower_out = Matrix::zeros(rows, 1);
                    for b in 0..rows {
                        d_tower_out.row_mut(b)[0] = grad_preds.row(b)[k];
                    }
                    let d_mixture = towers[k]
                        .backward_into(
                            &tower_caches[k],
                            &d_tower_out,
                            &mut out.per_mlp[n_experts + NUM_TASKS + k],
                            true,
                        )?
                        .expect("tower input grad requested");

                    let g = &gate_outs[k];
                    // d wrt gate weights (pre-softmax handled below)
                    let mut d_gate = Matrix::zeros(rows, n_experts);
                    for b in 0..rows {
                        let dm = d_mixture.row(b);
                        let grow = g.row(b);
                        for i in 0..n_experts {
                            // expert grads accumulate across tasks
                            crate::nn::matrix::axpy(grow[i], dm, d_experts[i].row_mut(b));
                            d_gate.row_mut(b)[i] = dot(dm, expert_outs[i].row(b));
                        }
                    }
                    // softmax backward: dL_j = g_j * (dG_j - sum_i dG_i g_i)
                    let mut d_logit = Matrix::zeros(rows, n_experts);
                    for b in 0..rows {
                        let grow = g.row(b);
                        let dgrow = d_gate.row(b);
                        let inner = dot(dgrow, grow);
                        for j in 0..n_experts {
                            d_logit.row_mut(b)[j] = grow[j] * (dgrow[j] - inner);
                        }
                    }
                    gates[k].backward_into(&gate_caches[k], &d_logit, &mut out.per_mlp[n_experts + k], false)?;
                }
                for (i, expert) in experts.iter().enumerate() {
                    expert.backward_into(&expert_caches[i], &d_experts[i], &mut out.per_mlp[i], false)?;
                }
                Ok(())
            }
            _ => Err(FusionError::BadConfig("train context does not match architecture".into())),
        }
    }
}

/// Gate activations for a whole batch.
#[derive(Debug, Clone)]
pub enum BatchGates {
    Blend(Matrix),
    ExpertWeights(Vec<Matrix>),
}

impl BatchGates {
    pub fn activation_for_row(&self, row: usize) -> GateActivation {
        match self {
            BatchGates::Blend(g) => {
                let mut out = [0.0; NUM_TASKS];
                out.copy_from_slice(g.row(row));
                GateActivation::Blend(out)
            }
            BatchGates::ExpertWeights(gs) => {
                let weights = std::array::from_fn(|k| gs[k].row(row).to_vec());
                GateActivation::ExpertWeights(weights)
            }
        }
    }
}

/// Per-component parameter gradients, parallel to `FusionModel::mlps()`.
#[derive(Debug, Clone)]
pub struct FusionGrads {
    pub per_mlp: Vec<MlpGrads>,
}

impl FusionGrads {
    pub fn zeros_like(model: &FusionModel) -> Self {
        Self { per_mlp: model.mlps().into_iter().map(MlpGrads::zeros_like).collect() }
    }
}

/// Forward-pass bookkeeping for the backward pass.
pub enum TrainContext {
    Early {
        trunk: MlpCache,
    },
    GatedLate {
        cache_lang: MlpCache,
        cache_graph: MlpCache,
        cache_gate: MlpCache,
        gate_out: Matrix,
        y_lang: Matrix,
        y_graph: Matrix,
    },
    Mmoe {
        expert_caches: Vec<MlpCache>,
        expert_outs: Vec<Matrix>,
        gate_caches: Vec<MlpCache>,
        gate_outs: Vec<Matrix>,
        tower_caches: Vec<MlpCache>,
    },
}

/// Extract the modality-selected input vector from a record.
pub fn record_input(rec: &PolymerRecord, modality: Modality) -> Result<Vec<f64>, FusionError> {
    let lang = rec.lang_emb.as_ref();
    let graph = rec.graph_emb.as_ref();
    let need = |opt: Option<&Vec<f64>>| {
        opt.cloned().ok_or_else(|| FusionError::EmbeddingsMissing(rec.id.clone()))
    };
    match modality {
        Modality::Lang => need(lang),
        Modality::Graph => need(graph),
        Modality::Both => {
            let mut v = need(lang)?;
            v.extend_from_slice(&need(graph)?);
            Ok(v)
        }
    }
}

/// Gather modality-selected inputs for `indices` into a batch matrix.
pub fn gather_inputs(
    dataset: &Dataset,
    indices: &[usize],
    modality: Modality,
) -> Result<Matrix, FusionError> {
    let dim = modality.input_dim();
    let mut m = Matrix::zeros(indices.len(), dim);
    for (row, &idx) in indices.iter().enumerate() {
        let v = record_input(dataset.record(idx), modality)?;
        m.row_mut(row).copy_from_slice(&v);
    }
    Ok(m)
}

/// Gather standardized labels and the matching mask for `indices`.
/// Absent labels contribute a zero value and a zero mask entry.
pub fn gather_labels(
    dataset: &Dataset,
    indices: &[usize],
    stats: &TaskStats,
) -> (Matrix, Matrix) {
    let mut labels = Matrix::zeros(indices.len(), NUM_TASKS);
    let mut mask = Matrix::zeros(indices.len(), NUM_TASKS);
    for (row, &idx) in indices.iter().enumerate() {
        let rec = dataset.record(idx);
        for k in 0..NUM_TASKS {
            if let Some(y) = rec.labels[k] {
                labels.row_mut(row)[k] = (y - stats.mean[k]) / stats.std[k];
                mask.row_mut(row)[k] = 1.0;
            }
        }
    }
    (labels, mask)
}

fn split_modalities(input: &Matrix) -> (Matrix, Matrix) {
    let rows = input.rows();
    let mut lang = Matrix::zeros(rows, LANG_DIM);
    let mut graph = Matrix::zeros(rows, GRAPH_DIM);
    for b in 0..rows {
        let src = input.row(b);
        lang.row_mut(b).copy_from_slice(&src[..LANG_DIM]);
        graph.row_mut(b).copy_from_slice(&src[LANG_DIM..]);
    }
    (lang, graph)
}

fn sigmoid_in_place(m: &mut Matrix) {
    for v in m.data_mut() {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
}

fn softmax_rows_in_place(m: &mut Matrix) {
    let cols = m.cols();
    for row in m.data_mut().chunks_exact_mut(cols) {
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// `y_k = g_k * y_lang_k + (1 - g_k) * y_graph_k`, elementwise per task.
fn blend(gate: &Matrix, y_lang: &Matrix, y_graph: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(gate.rows(), gate.cols());
    for b in 0..gate.rows() {
        let g = gate.row(b);
        let yl = y_lang.row(b);
        let yg = y_graph.row(b);
        let o = out.row_mut(b);
        for k in 0..g.len() {
            o[k] = g[k] * yl[k] + (1.0 - g[k]) * yg[k];
        }
    }
    out
}

/// Weighted sum of expert outputs under one task's gate weights.
fn mix_experts(gate: &Matrix, expert_outs: &[Matrix]) -> Matrix {
    let rows = gate.rows();
    let dim = expert_outs[0].cols();
    let mut out = Matrix::zeros(rows, dim);
    for b in 0..rows {
        let g = gate.row(b);
        let orow = out.row_mut(b);
        for (i, expert) in expert_outs.iter().enumerate() {
            crate::nn::matrix::axpy(g[i], expert.row(b), orow);
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("input dimension mismatch: expected {expected}, got {actual}")]
    InputDim { expected: usize, actual: usize },
    #[error("unsupported architecture: {0}")]
    UnsupportedArchitecture(String),
    #[error("batch has no present labels")]
    AllMasked,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("model has no task statistics attached (train or load it first)")]
    NotTrained,
    #[error("record `{0}` has no embeddings attached")]
    EmbeddingsMissing(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
