//! Edge-wise message passing scorer.
//!
//! Each layer computes a message per edge from the edge feature, its relation
//! embedding and the source node state, aggregates messages per destination
//! node with mean / max / min / std, and then updates every edge feature
//! from its source node's new state. The query edge's final feature is
//! projected to a probability.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rule_algebra::InitMode;
use crate::subgraph::{Scope, Subgraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageFn {
    Gru,
    Sum,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateFn {
    Lstm,
    Mlp,
}

impl FromStr for MessageFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(MessageFn::Gru),
            "sum" => Ok(MessageFn::Sum),
            "mul" => Ok(MessageFn::Mul),
            _ => Err(Error::Config(format!("unknown message function {s:?}"))),
        }
    }
}

impl fmt::Display for MessageFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MessageFn::Gru => "gru",
            MessageFn::Sum => "sum",
            MessageFn::Mul => "mul",
        })
    }
}

impl FromStr for UpdateFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(UpdateFn::Lstm),
            "mlp" => Ok(UpdateFn::Mlp),
            _ => Err(Error::Config(format!("unknown update function {s:?}"))),
        }
    }
}

impl fmt::Display for UpdateFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateFn::Lstm => "lstm",
            UpdateFn::Mlp => "mlp",
        })
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub message: MessageFn,
    pub update: UpdateFn,
    pub init: InitMode,
    pub scope: Scope,
    /// Neighborhood radius used when extracting subgraphs for this model.
    pub hops: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 32,
            layers: 3,
            dropout: 0.0,
            message: MessageFn::Gru,
            update: UpdateFn::Lstm,
            init: InitMode::SingleSource,
            scope: Scope::Enclosing,
            hops: 3,
        }
    }
}

/// Searched values for width, depth and dropout.
pub const GRID_DIMS: [usize; 2] = [16, 32];
pub const GRID_LAYERS: [usize; 4] = [3, 4, 5, 6];
pub const GRID_DROPOUT: [f64; 3] = [0.0, 0.1, 0.2];

impl ModelConfig {
    /// Hard constraints; violating them makes the model undefined.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        if self.hops == 0 {
            return Err(Error::Config("hops must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Names of settings outside the searched grid. Empty when on-grid.
    pub fn off_grid(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !GRID_DIMS.contains(&self.dim) {
            out.push(format!("dim={}", self.dim));
        }
        if !GRID_LAYERS.contains(&self.layers) {
            out.push(format!("layers={}", self.layers));
        }
        if !GRID_DROPOUT.iter().any(|&p| (p - self.dropout).abs() < 1e-12) {
            out.push(format!("dropout={}", self.dropout));
        }
        out
    }

    /// `key=value` pairs in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("dim", self.dim.to_string()),
            ("layers", self.layers.to_string()),
            ("dropout", self.dropout.to_string()),
            ("message", self.message.to_string()),
            ("update", self.update.to_string()),
            ("init", self.init.to_string()),
            ("scope", self.scope.to_string()),
            ("hops", self.hops.to_string()),
        ]
    }

    /// Apply one `key=value` setting. Returns `false` for keys this struct does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "dim" => self.dim = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "message" => self.message = value.parse()?,
            "update" => self.update = value.parse()?,
            "init" => self.init = value.parse()?,
            "scope" => self.scope = value.parse()?,
            "hops" => self.hops = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, Copy)]
struct GruSlots {
    update_in: usize,
    update_hidden: usize,
    update_bias: usize,
    reset_in: usize,
    reset_hidden: usize,
    reset_bias: usize,
    cand_in: usize,
    cand_hidden: usize,
}

#[derive(Debug, Clone, Copy)]
struct LstmSlots {
    w_input: usize,
    b_input: usize,
    w_forget: usize,
    b_forget: usize,
    w_cell: usize,
    b_cell: usize,
    w_output: usize,
    b_output: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    rel_emb: usize,
    query_emb: usize,
    gru: Vec<GruSlots>,
    agg: Vec<usize>,
    lstm: Option<LstmSlots>,
    mlp: Option<(usize, usize)>,
    score_w: usize,
    score_b: usize,
}

fn param_specs(cfg: &ModelConfig, relations: usize) -> (Vec<(String, Vec<usize>)>, Layout) {
    let d = cfg.dim;
    let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
    let mut add = |name: String, shape: Vec<usize>| {
        specs.push((name, shape));
        specs.len() - 1
    };
    let rel_emb = add("rel_emb".into(), vec![relations, d]);
    let query_emb = add("query_emb".into(), vec![relations, d]);
    let mut gru = Vec::new();
    let mut agg = Vec::new();
    for l in 0..cfg.layers {
        if cfg.message == MessageFn::Gru {
            let p = |s: &str| format!("layer{l}.msg.{s}");
            gru.push(GruSlots {
                update_in: add(p("update_in"), vec![d, d]),
                update_hidden: add(p("update_hidden"), vec![d, d]),
                update_bias: add(p("update_bias"), vec![d]),
                reset_in: add(p("reset_in"), vec![d, d]),
                reset_hidden: add(p("reset_hidden"), vec![d, d]),
                reset_bias: add(p("reset_bias"), vec![d]),
                cand_in: add(p("cand_in"), vec![d, d]),
                cand_hidden: add(p("cand_hidden"), vec![d, d]),
            });
        }
        agg.push(add(format!("layer{l}.agg"), vec![d, 5 * d]));
    }
    let (lstm, mlp) = match cfg.update {
        UpdateFn::Lstm => (
            Some(LstmSlots {
                w_input: add("lstm.w_input".into(), vec![d, 2 * d]),
                b_input: add("lstm.b_input".into(), vec![d]),
                w_forget: add("lstm.w_forget".into(), vec![d, 2 * d]),
                b_forget: add("lstm.b_forget".into(), vec![d]),
                w_cell: add("lstm.w_cell".into(), vec![d, 2 * d]),
                b_cell: add("lstm.b_cell".into(), vec![d]),
                w_output: add("lstm.w_output".into(), vec![d, 2 * d]),
                b_output: add("lstm.b_output".into(), vec![d]),
            }),
            None,
        ),
        UpdateFn::Mlp => (
            None,
            Some((
                add("mlp.edge".into(), vec![d, 3 * d]),
                add("mlp.cell".into(), vec![d, 3 * d]),
            )),
        ),
    };
    let score_w = add("score.w".into(), vec![1, d]);
    let score_b = add("score.b".into(), vec![1]);
    let layout = Layout {
        rel_emb,
        query_emb,
        gru,
        agg,
        lstm,
        mlp,
        score_w,
        score_b,
    };
    (specs, layout)
}

/// Named parameter tensors in a fixed order determined by the config.
#[derive(Debug, Clone)]
pub struct ModelParams {
    config: ModelConfig,
    relations: usize,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    layout: Layout,
}

impl ModelParams {
    /// Uniform initialization in `[-1/sqrt(dim), 1/sqrt(dim)]`.
    /// `relations` counts base relations and their inverses.
    pub fn init(cfg: &ModelConfig, relations: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if relations == 0 {
            return Err(Error::Config("model needs at least one relation".into()));
        }
        let (specs, layout) = param_specs(cfg, relations);
        let bound = 1.0 / (cfg.dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (name, shape) in specs {
            tensors.push(Tensor::uniform(&shape, bound, &mut rng));
            names.push(name);
        }
        Ok(ModelParams {
            config: *cfg,
            relations,
            names,
            tensors,
            layout,
        })
    }

    /// Rebuild from stored tensors; names and shapes must match the config.
    pub fn from_named(cfg: &ModelConfig, relations: usize, named: Vec<(String, Tensor)>) -> Result<Self> {
        cfg.validate()?;
        let (specs, layout) = param_specs(cfg, relations);
        if specs.len() != named.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(named.len());
        let mut tensors = Vec::with_capacity(named.len());
        for ((want, shape), (name, t)) in specs.into_iter().zip(named) {
            if want != name || shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} {:?} does not match expected {want} {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!("parameter {name} is not finite")));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(ModelParams {
            config: *cfg,
            relations,
            names,
            tensors,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn relations(&self) -> usize {
        self.relations
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Register every tensor on `tape` as a differentiable leaf.
    pub fn bind<'a>(&'a self, tape: &mut Tape) -> BoundParams<'a> {
        let vars = self.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        BoundParams { params: self, vars }
    }

    /// Register every tensor as a constant (no gradient bookkeeping).
    pub fn bind_frozen<'a>(&'a self, tape: &mut Tape) -> BoundParams<'a> {
        let vars = self.tensors.iter().map(|t| tape.constant(t.clone())).collect();
        BoundParams { params: self, vars }
    }

    /// Pair externally created tape variables with this parameter layout.
    pub fn bind_vars(&self, vars: Vec<Var>) -> Result<BoundParams<'_>> {
        if vars.len() != self.tensors.len() {
            return Err(Error::Shape {
                op: "bind_vars",
                detail: format!("{} vars for {} parameters", vars.len(), self.tensors.len()),
            });
        }
        Ok(BoundParams { params: self, vars })
    }
}

/// Parameters as tape variables, aligned with [`ModelParams::names`].
pub struct BoundParams<'a> {
    params: &'a ModelParams,
    vars: Vec<Var>,
}

impl BoundParams<'_> {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn layout(&self) -> &Layout {
        &self.params.layout
    }

    fn v(&self, slot: usize) -> Var {
        self.vars[slot]
    }

    fn config(&self) -> &ModelConfig {
        &self.params.config
    }
}

/// Per-edge features, per-edge cells, per-node states and the last messages.
#[derive(Debug, Clone, Copy)]
pub struct ForwardState {
    pub edges: Var,
    pub cells: Var,
    pub nodes: Var,
    pub messages: Option<Var>,
}

struct EdgeIndex {
    src: Vec<usize>,
    dst: Vec<usize>,
    rel: Vec<usize>,
}

impl EdgeIndex {
    fn new(sg: &Subgraph, relations: usize) -> Result<Self> {
        let mut idx = EdgeIndex {
            src: Vec::with_capacity(sg.num_edges()),
            dst: Vec::with_capacity(sg.num_edges()),
            rel: Vec::with_capacity(sg.num_edges()),
        };
        for e in sg.edges() {
            if e.rel >= relations {
                return Err(Error::Config(format!(
                    "relation id {} outside the model's {relations} relations",
                    e.rel
                )));
            }
            idx.src.push(e.src);
            idx.dst.push(e.dst);
            idx.rel.push(e.rel);
        }
        Ok(idx)
    }
}

/// Layer-0 state. Node states start at zero and every edge's cell starts at
/// the query relation's cell embedding.
pub fn init_state(tape: &mut Tape, sg: &Subgraph, params: &BoundParams) -> Result<ForwardState> {
    let idx = EdgeIndex::new(sg, params.params.relations)?;
    init_with_index(tape, sg, params, &idx)
}

fn init_with_index(tape: &mut Tape, sg: &Subgraph, params: &BoundParams, idx: &EdgeIndex) -> Result<ForwardState> {
    let lay = params.layout();
    let (_, r_t, _) = sg.query();
    let m = sg.num_edges();
    let edges = match params.config().init {
        InitMode::SingleSource => {
            let seed = tape.gather(params.v(lay.rel_emb), &[r_t])?;
            tape.scatter_accumulate(seed, &[sg.query_edge()], m)?
        }
        InitMode::Full => tape.gather(params.v(lay.rel_emb), &idx.rel)?,
    };
    let cells = tape.gather(params.v(lay.query_emb), &vec![r_t; m])?;
    let nodes = tape.constant(Tensor::zeros(&[sg.num_nodes(), params.config().dim]));
    Ok(ForwardState {
        edges,
        cells,
        nodes,
        messages: None,
    })
}

/// Gated message for every edge `(x, y, z)` at layer `layer`:
///
/// ```text
/// i = rel[y] ⊙ e
/// δ = σ(U_in i + U_h h[x] + b_u)
/// γ = σ(R_in i + R_h h[x] + b_r)
/// c = tanh(C_in i + C_h (γ ⊙ h[x]))
/// m = δ ⊙ c + (1 − δ) ⊙ h[x]
/// ```
pub fn message_gru(tape: &mut Tape, sg: &Subgraph, state: &ForwardState, layer: usize, params: &BoundParams) -> Result<Var> {
    let idx = EdgeIndex::new(sg, params.params.relations)?;
    message_gru_idx(tape, state, layer, params, &idx)
}

fn message_gru_idx(tape: &mut Tape, state: &ForwardState, layer: usize, params: &BoundParams, idx: &EdgeIndex) -> Result<Var> {
    let lay = params.layout();
    let g = *lay.gru.get(layer).ok_or_else(|| {
        Error::Config(format!("no gated message weights for layer {layer}"))
    })?;
    let rel = tape.gather(params.v(lay.rel_emb), &idx.rel)?;
    let input = tape.hadamard(rel, state.edges)?;
    let hidden = tape.gather(state.nodes, &idx.src)?;

    let a = tape.affine(input, params.v(g.update_in), None)?;
    let b = tape.affine(hidden, params.v(g.update_hidden), Some(params.v(g.update_bias)))?;
    let pre = tape.add(a, b)?;
    let update = tape.sigmoid(pre)?;

    let a = tape.affine(input, params.v(g.reset_in), None)?;
    let b = tape.affine(hidden, params.v(g.reset_hidden), Some(params.v(g.reset_bias)))?;
    let pre = tape.add(a, b)?;
    let reset = tape.sigmoid(pre)?;

    let gated = tape.hadamard(reset, hidden)?;
    let a = tape.affine(input, params.v(g.cand_in), None)?;
    let b = tape.affine(gated, params.v(g.cand_hidden), None)?;
    let pre = tape.add(a, b)?;
    let cand = tape.tanh(pre)?;

    let mixed = tape.hadamard(update, cand)?;
    let kept = tape.hadamard(update, hidden)?;
    let carry = tape.sub(hidden, kept)?;
    tape.add(mixed, carry)
}

/// Parameter-free messages: `h[x] + e + rel[y]` or `h[x] ⊙ e ⊙ rel[y]`.
pub fn message_ablation(tape: &mut Tape, sg: &Subgraph, state: &ForwardState, params: &BoundParams, which: MessageFn) -> Result<Var> {
    let idx = EdgeIndex::new(sg, params.params.relations)?;
    message_ablation_idx(tape, state, params, which, &idx)
}

fn message_ablation_idx(tape: &mut Tape, state: &ForwardState, params: &BoundParams, which: MessageFn, idx: &EdgeIndex) -> Result<Var> {
    let rel = tape.gather(params.v(params.layout().rel_emb), &idx.rel)?;
    let hidden = tape.gather(state.nodes, &idx.src)?;
    match which {
        MessageFn::Sum => {
            let s = tape.add(hidden, state.edges)?;
            tape.add(s, rel)
        }
        MessageFn::Mul => {
            let p = tape.hadamard(hidden, state.edges)?;
            tape.hadamard(p, rel)
        }
        MessageFn::Gru => Err(Error::Config(
            "gated message is not a parameter-free variant".into(),
        )),
    }
}

/// New node states: project `[mean, max, min, std, previous]` of each node's
/// incoming messages, then apply dropout.
pub fn aggregate_pna(
    tape: &mut Tape,
    sg: &Subgraph,
    messages: Var,
    layer: usize,
    params: &BoundParams,
    prev_nodes: Var,
) -> Result<Var> {
    let dst: Vec<usize> = sg.edges().iter().map(|e| e.dst).collect();
    aggregate_idx(tape, sg.num_nodes(), &dst, messages, layer, params, prev_nodes)
}

fn aggregate_idx(
    tape: &mut Tape,
    nodes: usize,
    dst: &[usize],
    messages: Var,
    layer: usize,
    params: &BoundParams,
    prev_nodes: Var,
) -> Result<Var> {
    let w = *params
        .layout()
        .agg
        .get(layer)
        .ok_or_else(|| Error::Config(format!("no aggregation weights for layer {layer}")))?;
    let mean = tape.segment_mean(messages, dst, nodes)?;
    let max = tape.segment_max(messages, dst, nodes)?;
    let min = tape.segment_min(messages, dst, nodes)?;
    let std = tape.segment_std(messages, dst, nodes)?;
    let cat = tape.concat(&[mean, max, min, std, prev_nodes])?;
    let h = tape.affine(cat, params.v(w), None)?;
    tape.dropout(h, params.config().dropout)
}

/// Shared recurrent update. The edge feature is the input, the source node's
/// new state is the hidden input and the edge cell is the memory:
///
/// ```text
/// z = [e, h[x]]
/// q' = σ(W_f z + b_f) ⊙ q + σ(W_i z + b_i) ⊙ tanh(W_c z + b_c)
/// e' = σ(W_o z + b_o) ⊙ tanh(q')
/// ```
pub fn update_lstm(tape: &mut Tape, sg: &Subgraph, state: &ForwardState, params: &BoundParams) -> Result<(Var, Var)> {
    let src: Vec<usize> = sg.edges().iter().map(|e| e.src).collect();
    update_lstm_idx(tape, &src, state, params)
}

fn update_lstm_idx(tape: &mut Tape, src: &[usize], state: &ForwardState, params: &BoundParams) -> Result<(Var, Var)> {
    let s = params
        .layout()
        .lstm
        .ok_or_else(|| Error::Config("model has no recurrent update weights".into()))?;
    let hidden = tape.gather(state.nodes, src)?;
    let z = tape.concat(&[state.edges, hidden])?;
    let gate = |w: usize, b: usize, tape: &mut Tape, tanh: bool| -> Result<Var> {
        let pre = tape.affine(z, params.v(w), Some(params.v(b)))?;
        if tanh {
            tape.tanh(pre)
        } else {
            tape.sigmoid(pre)
        }
    };
    let input = gate(s.w_input, s.b_input, tape, false)?;
    let forget = gate(s.w_forget, s.b_forget, tape, false)?;
    let cand = gate(s.w_cell, s.b_cell, tape, true)?;
    let output = gate(s.w_output, s.b_output, tape, false)?;
    let kept = tape.hadamard(forget, state.cells)?;
    let written = tape.hadamard(input, cand)?;
    let cells = tape.add(kept, written)?;
    let squashed = tape.tanh(cells)?;
    let edges = tape.hadamard(output, squashed)?;
    Ok((edges, cells))
}

/// Linear update: `e' = W_e [e, q, h[x]]`, `q' = W_q [e, q, h[x]]`.
pub fn update_mlp(tape: &mut Tape, sg: &Subgraph, state: &ForwardState, params: &BoundParams) -> Result<(Var, Var)> {
    let src: Vec<usize> = sg.edges().iter().map(|e| e.src).collect();
    update_mlp_idx(tape, &src, state, params)
}

fn update_mlp_idx(tape: &mut Tape, src: &[usize], state: &ForwardState, params: &BoundParams) -> Result<(Var, Var)> {
    let (we, wq) = params
        .layout()
        .mlp
        .ok_or_else(|| Error::Config("model has no linear update weights".into()))?;
    let hidden = tape.gather(state.nodes, src)?;
    let z = tape.concat(&[state.edges, state.cells, hidden])?;
    let edges = tape.affine(z, params.v(we), None)?;
    let cells = tape.affine(z, params.v(wq), None)?;
    Ok((edges, cells))
}

/// Run all layers and return the state after the last one.
pub fn run_layers(tape: &mut Tape, sg: &Subgraph, params: &BoundParams) -> Result<ForwardState> {
    let cfg = *params.config();
    let idx = EdgeIndex::new(sg, params.params.relations)?;
    let mut state = init_with_index(tape, sg, params, &idx)?;
    for layer in 0..cfg.layers {
        let messages = match cfg.message {
            MessageFn::Gru => message_gru_idx(tape, &state, layer, params, &idx)?,
            other => message_ablation_idx(tape, &state, params, other, &idx)?,
        };
        let nodes = aggregate_idx(tape, sg.num_nodes(), &idx.dst, messages, layer, params, state.nodes)?;
        state.nodes = nodes;
        state.messages = Some(messages);
        let (edges, cells) = match cfg.update {
            UpdateFn::Lstm => update_lstm_idx(tape, &idx.src, &state, params)?,
            UpdateFn::Mlp => update_mlp_idx(tape, &idx.src, &state, params)?,
        };
        state.edges = edges;
        state.cells = cells;
    }
    Ok(state)
}

/// Probability that the query edge holds, as a one-element tape value.
pub fn forward_on_tape(tape: &mut Tape, sg: &Subgraph, params: &BoundParams) -> Result<Var> {
    let state = run_layers(tape, sg, params)?;
    let lay = params.layout();
    let q = tape.gather(state.edges, &[sg.query_edge()])?;
    let logit = tape.affine(q, params.v(lay.score_w), Some(params.v(lay.score_b)))?;
    tape.sigmoid(logit)
}

/// Score a subgraph. With `train_seed` set, dropout is active and seeded.
pub fn forward(sg: &Subgraph, params: &ModelParams, train_seed: Option<u64>) -> Result<f64> {
    let mut tape = match train_seed {
        Some(seed) => Tape::training(seed),
        None => Tape::new(),
    };
    let bound = params.bind_frozen(&mut tape);
    let out = forward_on_tape(&mut tape, sg, &bound)?;
    let score = tape.value(out).item();
    if !score.is_finite() {
        return Err(Error::Numeric(format!("non-finite score {score}")));
    }
    Ok(score)
}

/// Evaluation-mode score.
pub fn score(sg: &Subgraph, params: &ModelParams) -> Result<f64> {
    forward(sg, params, None)
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::rule_algebra::{random_instance, InstanceBounds};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn score_ignores_labels_and_order(seed in any::<u64>(), shuffle in any::<u64>()) {
            let bounds = InstanceBounds { max_nodes: 6, max_edges: 12, max_relations: 3 };
            let sg = random_instance(seed, &bounds).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(shuffle);
            let mut node_perm: Vec<usize> = (0..sg.num_nodes()).collect();
            node_perm.shuffle(&mut rng);
            let mut edge_order: Vec<usize> = (0..sg.num_edges()).collect();
            edge_order.shuffle(&mut rng);
            let moved = sg.permuted(&node_perm, &edge_order);
            let cfg = ModelConfig { dim: 6, ..ModelConfig::default() };
            let params = ModelParams::init(&cfg, 3, seed).unwrap();
            let a = score(&sg, &params).unwrap();
            let b = score(&moved, &params).unwrap();
            prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        }
    }
}
