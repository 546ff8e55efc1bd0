//! Parameters and forward pass of the two-scale network.
//!
//! Atoms are embedded from (element, chirality, constraint features) and
//! refined by GIN layers; attention pooling turns each fragment's atoms into
//! one vector, which is aligned and gated against the fragment's token
//! embedding. The fused sequence, prefixed by a CLS row, runs through
//! pre-norm Transformer layers whose attention logits carry per-head
//! structural biases from the fragment graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{GateKind, ModelConfig, Regime, DISTANCE_CAP};
use crate::chem::{atom_constraint_features, element, MolGraph, N_BOND_DIRECTIONS, N_BOND_ORDERS, N_CHIRALITIES};
use crate::par::Exec;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, TensorError, Var};
use crate::tokenizer::{build_frag_graph, FragGraph, TokenSeq, Tokenizer, MASK_ID, PAD_ID};

/// Number of element slots in the atom embedding table.
pub const N_ELEMENT_SLOTS: usize = element::ELEMENTS.len();

#[derive(Debug, Clone)]
struct GinIds {
    eps: ParamId,
    edge_type: ParamId,
    edge_dir: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct LayerIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct Ids {
    element: ParamId,
    chirality: ParamId,
    constraint_w: ParamId,
    constraint_b: ParamId,
    gin: Vec<GinIds>,
    pool_w: ParamId,
    align: ParamId,
    gate: ParamId,
    token: ParamId,
    cls: ParamId,
    bias_adj: ParamId,
    bias_dist: ParamId,
    bias_type: ParamId,
    bias_dir: ParamId,
    layers: Vec<LayerIds>,
    final_g: ParamId,
    final_b: ParamId,
    mlm_w: ParamId,
    mlm_b: ParamId,
    task: Option<(ParamId, ParamId)>,
}

/// The network: configuration plus named parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    ids: Ids,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, a: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-a..=a)).collect();
    Tensor { rows, cols, data }
}

/// Variance-1/fan_in uniform initialization.
fn lecun(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    uniform(rng, rows, cols, (3.0 / rows as f64).sqrt())
}

impl Model {
    /// Fresh parameters. Structural bias tables and the masked-token head
    /// start at zero, so initial attention is unbiased and initial
    /// predictions are uniform.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, super::config::ConfigError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden_dim;
        let h = config.heads;
        let v = config.vocab_size;
        let mut p = ParamStore::new();
        let emb = 0.1 * 3f64.sqrt();

        let element = p.add("atom.element", uniform(&mut rng, N_ELEMENT_SLOTS, d, emb));
        let chirality = p.add("atom.chirality", uniform(&mut rng, N_CHIRALITIES, d, emb));
        let constraint_w = p.add("atom.constraint.w", uniform(&mut rng, 4, d, 0.1));
        let constraint_b = p.add("atom.constraint.b", Tensor::zeros(1, d));
        let gin = (0..config.gin_layers)
            .map(|l| GinIds {
                eps: p.add(format!("gin{l}.eps"), Tensor::zeros(1, 1)),
                edge_type: p.add(format!("gin{l}.edge_type"), uniform(&mut rng, N_BOND_ORDERS, d, emb)),
                edge_dir: p.add(format!("gin{l}.edge_dir"), uniform(&mut rng, N_BOND_DIRECTIONS, d, emb)),
                w1: p.add(format!("gin{l}.mlp1.w"), lecun(&mut rng, d, d)),
                b1: p.add(format!("gin{l}.mlp1.b"), Tensor::zeros(1, d)),
                w2: p.add(
                    format!("gin{l}.mlp2.w"),
                    uniform(&mut rng, d, d, (3.0 / d as f64).sqrt() * 0.5),
                ),
                b2: p.add(format!("gin{l}.mlp2.b"), Tensor::zeros(1, d)),
            })
            .collect();
        let pool_w = p.add("pool.w", uniform(&mut rng, d, 1, 0.1));
        let align = p.add("fuse.align", lecun(&mut rng, d, d));
        let gate_cols = match config.gate {
            GateKind::Elementwise => d,
            GateKind::Scalar => 1,
        };
        let gate = p.add("fuse.gate", lecun(&mut rng, 2 * d, gate_cols));
        let token = p.add("token.embed", uniform(&mut rng, v, d, 1.0));
        let cls = p.add("cls", uniform(&mut rng, 1, d, 1.0));
        let bias_adj = p.add("bias.adj", Tensor::zeros(2, h));
        let bias_dist = p.add("bias.dist", Tensor::zeros(DISTANCE_CAP + 1, h));
        let bias_type = p.add("bias.type", Tensor::zeros(N_BOND_ORDERS, h));
        let bias_dir = p.add("bias.dir", Tensor::zeros(N_BOND_DIRECTIONS, h));
        let f = config.ffn_dim;
        let layers = (0..config.transformer_layers)
            .map(|l| {
                let name = |s: &str| format!("tf{l}.{s}");
                LayerIds {
                    ln1_g: p.add(name("ln1.g"), Tensor::full(1, d, 1.0)),
                    ln1_b: p.add(name("ln1.b"), Tensor::zeros(1, d)),
                    wq: p.add(name("q.w"), lecun(&mut rng, d, d)),
                    bq: p.add(name("q.b"), Tensor::zeros(1, d)),
                    wk: p.add(name("k.w"), lecun(&mut rng, d, d)),
                    bk: p.add(name("k.b"), Tensor::zeros(1, d)),
                    wv: p.add(name("v.w"), lecun(&mut rng, d, d)),
                    bv: p.add(name("v.b"), Tensor::zeros(1, d)),
                    wo: p.add(name("o.w"), lecun(&mut rng, d, d)),
                    bo: p.add(name("o.b"), Tensor::zeros(1, d)),
                    ln2_g: p.add(name("ln2.g"), Tensor::full(1, d, 1.0)),
                    ln2_b: p.add(name("ln2.b"), Tensor::zeros(1, d)),
                    w1: p.add(name("ffn1.w"), lecun(&mut rng, d, f)),
                    b1: p.add(name("ffn1.b"), Tensor::zeros(1, f)),
                    w2: p.add(name("ffn2.w"), lecun(&mut rng, f, d)),
                    b2: p.add(name("ffn2.b"), Tensor::zeros(1, d)),
                }
            })
            .collect();
        let final_g = p.add("final_ln.g", Tensor::full(1, d, 1.0));
        let final_b = p.add("final_ln.b", Tensor::zeros(1, d));
        let mlm_w = p.add("mlm.w", Tensor::zeros(d, v));
        let mlm_b = p.add("mlm.b", Tensor::zeros(1, v));
        let ids = Ids {
            element,
            chirality,
            constraint_w,
            constraint_b,
            gin,
            pool_w,
            align,
            gate,
            token,
            cls,
            bias_adj,
            bias_dist,
            bias_type,
            bias_dir,
            layers,
            final_g,
            final_b,
            mlm_w,
            mlm_b,
            task: None,
        };
        Ok(Model { config, params: p, ids })
    }

    /// Rebuilds a model from a configuration and stored parameters; every
    /// tensor must be present with the right shape.
    pub fn from_params(config: ModelConfig, params: &ParamStore) -> Result<Self, String> {
        let mut model = Model::new(config, 0).map_err(|e| e.to_string())?;
        if let (Some(w), Some(b)) = (params.id("task.w"), params.id("task.b")) {
            model.add_task_head(params.get(w).cols, 0);
            let _ = b;
        }
        let copied = model.params.load_matching(params);
        if copied.len() != model.params.len() || params.len() != model.params.len() {
            return Err(format!(
                "checkpoint has {} tensors, model expects {}, {} matched",
                params.len(),
                model.params.len(),
                copied.len()
            ));
        }
        Ok(model)
    }

    /// Adds (or replaces) a linear task head on the CLS state.
    pub fn add_task_head(&mut self, n_tasks: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a5c);
        let d = self.config.hidden_dim;
        let w = lecun(&mut rng, d, n_tasks);
        match self.ids.task {
            Some((wi, bi)) => {
                *self.params.get_mut(wi) = w;
                *self.params.get_mut(bi) = Tensor::zeros(1, n_tasks);
            }
            None => {
                let wi = self.params.add("task.w", w);
                let bi = self.params.add("task.b", Tensor::zeros(1, n_tasks));
                self.ids.task = Some((wi, bi));
            }
        }
    }

    pub fn n_tasks(&self) -> Option<usize> {
        self.ids.task.map(|(w, _)| self.params.get(w).cols)
    }

    pub fn task_head_ids(&self) -> Option<(ParamId, ParamId)> {
        self.ids.task
    }

    pub fn mlm_head_ids(&self) -> (ParamId, ParamId) {
        (self.ids.mlm_w, self.ids.mlm_b)
    }

    /// Parameters unfrozen in the second fine-tuning stage: pooling,
    /// alignment, gate, the last `k` Transformer layers and the final norm.
    pub fn stage_two_ids(&self, k: usize) -> Vec<ParamId> {
        let mut out = vec![self.ids.pool_w, self.ids.align, self.ids.gate];
        let n = self.ids.layers.len();
        for l in &self.ids.layers[n.saturating_sub(k)..] {
            out.extend([
                l.ln1_g, l.ln1_b, l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo, l.ln2_g, l.ln2_b, l.w1, l.b1, l.w2,
                l.b2,
            ]);
        }
        out.extend([self.ids.final_g, self.ids.final_b]);
        out
    }
}

/// Per-molecule constants consumed by the forward pass.
#[derive(Debug, Clone)]
pub struct MolInput {
    pub n_atoms: usize,
    element_slot: Vec<usize>,
    chirality: Vec<usize>,
    constraints: Tensor,
    /// Message-passing bonds (regime filtered): atoms, order and direction
    /// indices.
    bonds: Vec<(usize, usize, usize, usize)>,
    adjacency: Tensor,
    type_counts: Tensor,
    dir_counts: Tensor,
    /// Token index of each atom.
    pub owner: Vec<usize>,
    pub token_ids: Vec<u32>,
    pub frag_graph: FragGraph,
    /// Sequence length including CLS and padding.
    pub seq_len: usize,
    pub n_pad: usize,
    adj_idx: Vec<Option<usize>>,
    dist_idx: Vec<Option<usize>>,
    type_idx: Vec<Option<usize>>,
    dir_idx: Vec<Option<usize>>,
}

impl MolInput {
    pub fn new(mol: &MolGraph, seq: &TokenSeq, fg: &FragGraph, regime: Regime) -> Self {
        let n = mol.n_atoms();
        let owner = seq.atom_owner(n);
        let element_slot = mol
            .atoms()
            .iter()
            .map(|a| element::slot(a.atomic_number).expect("parsed atoms are supported"))
            .collect();
        let chirality = mol.atoms().iter().map(|a| a.chirality.index()).collect();
        let mut constraints = Tensor::zeros(n, 4);
        for i in 0..n {
            constraints
                .row_mut(i)
                .copy_from_slice(&atom_constraint_features(mol, i));
        }
        let bonds = mol
            .bonds()
            .iter()
            .filter(|b| regime == Regime::Molecule || owner[b.a] == owner[b.b])
            .map(|b| (b.a, b.b, b.order.index(), b.direction.index()))
            .collect();
        Self::assemble(
            element_slot,
            chirality,
            constraints,
            bonds,
            owner,
            seq.token_ids.clone(),
            fg.clone(),
            0,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        element_slot: Vec<usize>,
        chirality: Vec<usize>,
        constraints: Tensor,
        bonds: Vec<(usize, usize, usize, usize)>,
        owner: Vec<usize>,
        token_ids: Vec<u32>,
        frag_graph: FragGraph,
        n_pad: usize,
    ) -> Self {
        let n = element_slot.len();
        let mut adjacency = Tensor::zeros(n, n);
        let mut type_counts = Tensor::zeros(n, N_BOND_ORDERS);
        let mut dir_counts = Tensor::zeros(n, N_BOND_DIRECTIONS);
        for &(a, b, t, d) in &bonds {
            for (x, y) in [(a, b), (b, a)] {
                adjacency.set(x, y, 1.0);
                type_counts.set(x, t, type_counts.get(x, t) + 1.0);
                dir_counts.set(x, d, dir_counts.get(x, d) + 1.0);
            }
        }
        let m = token_ids.len();
        let seq_len = m + 1 + n_pad;
        let mut adj_idx = vec![None; seq_len * seq_len];
        let mut dist_idx = vec![None; seq_len * seq_len];
        let mut type_idx = vec![None; seq_len * seq_len];
        let mut dir_idx = vec![None; seq_len * seq_len];
        for i in 0..m {
            for j in 0..m {
                let k = (i + 1) * seq_len + (j + 1);
                adj_idx[k] = Some(usize::from(frag_graph.adjacency[i][j]));
                dist_idx[k] = Some(usize::from(frag_graph.dist[i][j]));
                if let Some((t, d)) = frag_graph.bond_attr[i][j] {
                    type_idx[k] = Some(t);
                    dir_idx[k] = Some(d);
                }
            }
        }
        MolInput {
            n_atoms: n,
            element_slot,
            chirality,
            constraints,
            bonds,
            adjacency,
            type_counts,
            dir_counts,
            owner,
            token_ids,
            frag_graph,
            seq_len,
            n_pad,
            adj_idx,
            dist_idx,
            type_idx,
            dir_idx,
        }
    }

    /// The same molecule followed by `n_pad` pad tokens.
    pub fn padded(&self, n_pad: usize) -> Self {
        Self::assemble(
            self.element_slot.clone(),
            self.chirality.clone(),
            self.constraints.clone(),
            self.bonds.clone(),
            self.owner.clone(),
            self.token_ids.clone(),
            self.frag_graph.clone(),
            n_pad,
        )
    }

    /// Input with only the tokens in `keep` (in that order). Atoms of the
    /// other tokens are deleted along with their bonds, and fragment-graph
    /// distances are recomputed on the survivors.
    pub fn retain_tokens(&self, keep: &[usize]) -> Self {
        let mut new_token = vec![usize::MAX; self.n_tokens()];
        for (i, &t) in keep.iter().enumerate() {
            new_token[t] = i;
        }
        let mut new_atom = vec![usize::MAX; self.n_atoms];
        let mut atoms = Vec::new();
        for a in 0..self.n_atoms {
            if new_token[self.owner[a]] != usize::MAX {
                new_atom[a] = atoms.len();
                atoms.push(a);
            }
        }
        let mut constraints = Tensor::zeros(atoms.len(), 4);
        for (i, &a) in atoms.iter().enumerate() {
            constraints.row_mut(i).copy_from_slice(self.constraints.row(a));
        }
        let bonds = self
            .bonds
            .iter()
            .filter(|b| new_atom[b.0] != usize::MAX && new_atom[b.1] != usize::MAX)
            .map(|&(a, b, t, d)| (new_atom[a], new_atom[b], t, d))
            .collect();
        Self::assemble(
            atoms.iter().map(|&a| self.element_slot[a]).collect(),
            atoms.iter().map(|&a| self.chirality[a]).collect(),
            constraints,
            bonds,
            atoms.iter().map(|&a| new_token[self.owner[a]]).collect(),
            keep.iter().map(|&t| self.token_ids[t]).collect(),
            self.frag_graph.subgraph(keep),
            self.n_pad,
        )
    }

    pub fn n_tokens(&self) -> usize {
        self.token_ids.len()
    }

    /// Key mask over the full sequence: CLS and tokens allowed, pads not.
    pub fn key_mask(&self) -> Vec<bool> {
        (0..self.seq_len).map(|j| j <= self.n_tokens()).collect()
    }
}

/// Tokenizes and featurizes one molecule.
pub fn encode(mol: &MolGraph, tokenizer: &Tokenizer, regime: Regime) -> MolInput {
    let seq = tokenizer.tokenize(mol);
    let fg = build_frag_graph(mol, &seq);
    MolInput::new(mol, &seq, &fg, regime)
}

pub fn encode_batch(mols: &[MolGraph], tokenizer: &Tokenizer, regime: Regime, exec: Exec) -> Vec<MolInput> {
    exec.map(mols, |m| encode(m, tokenizer, regime))
}

/// Options for one forward pass.
pub struct ForwardOpts<'a> {
    /// Token positions replaced by `[MASK]`, with the atom path cut.
    pub masked: &'a [bool],
    /// Randomness for dropout; `None` disables dropout.
    pub dropout_rng: Option<&'a mut ChaCha8Rng>,
}

/// Nodes of interest produced by [`Model::forward`].
#[derive(Debug, Clone)]
pub struct ForwardOut {
    /// Atom states after the GIN layers (atoms × d).
    pub atoms: Var,
    /// Pooled fragment features (tokens × d).
    pub pooled: Var,
    /// Aligned atom path `W_a h` (tokens × d).
    pub aligned: Var,
    /// Gate values (tokens × d, or tokens × 1 for a scalar gate).
    pub gate: Var,
    /// Fused Transformer inputs, `[MASK]` rows substituted (tokens × d).
    pub fused: Var,
    /// Final states for the whole sequence, CLS first (seq_len × d).
    pub states: Var,
    /// CLS state (1 × d).
    pub cls: Var,
    /// Attention maps per layer and head (seq_len × seq_len).
    pub attention: Vec<Vec<Tensor>>,
}

fn dropout(g: &mut Graph<'_>, x: Var, p: f64, rng: &mut Option<&mut ChaCha8Rng>) -> Result<Var, TensorError> {
    let Some(rng) = rng.as_deref_mut() else {
        return Ok(x);
    };
    if p <= 0.0 {
        return Ok(x);
    }
    let (r, c) = g.shape(x);
    let keep = 1.0 / (1.0 - p);
    let mask = (0..r * c)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    g.mul_const(
        x,
        Tensor {
            rows: r,
            cols: c,
            data: mask,
        },
    )
}

impl Model {
    fn linear(&self, g: &mut Graph<'_>, x: Var, w: ParamId, b: ParamId) -> Result<Var, TensorError> {
        let (wv, bv) = (g.param(w), g.param(b));
        let y = g.matmul(x, wv)?;
        g.add_row(y, bv)
    }

    /// Atom input embeddings: element and chirality lookups plus a linear
    /// projection of the constraint features.
    pub fn atom_inputs(&self, g: &mut Graph<'_>, input: &MolInput) -> Result<Var, TensorError> {
        let el = g.param(self.ids.element);
        let ch = g.param(self.ids.chirality);
        let e = g.rows(el, &input.element_slot)?;
        let c = g.rows(ch, &input.chirality)?;
        let feats = g.constant(input.constraints.clone());
        let proj = self.linear(g, feats, self.ids.constraint_w, self.ids.constraint_b)?;
        let s = g.add(e, c)?;
        g.add(s, proj)
    }

    /// `(1 + ε)h + Σ_j (h_j + edge(b_ij))` for GIN layer `l`.
    pub fn gin_aggregate(&self, g: &mut Graph<'_>, input: &MolInput, h: Var, l: usize) -> Result<Var, TensorError> {
        let ids = &self.ids.gin[l];
        let eps = g.param(ids.eps);
        let scaled = g.mul_scalar(h, eps)?;
        let self_term = g.add(h, scaled)?;
        let a = g.constant(input.adjacency.clone());
        let neigh = g.matmul(a, h)?;
        let tc = g.constant(input.type_counts.clone());
        let te = g.param(ids.edge_type);
        let type_term = g.matmul(tc, te)?;
        let dc = g.constant(input.dir_counts.clone());
        let de = g.param(ids.edge_dir);
        let dir_term = g.matmul(dc, de)?;
        let s = g.add(self_term, neigh)?;
        let s = g.add(s, type_term)?;
        g.add(s, dir_term)
    }

    pub fn gin_forward(&self, g: &mut Graph<'_>, input: &MolInput) -> Result<Var, TensorError> {
        let mut h = self.atom_inputs(g, input)?;
        for l in 0..self.ids.gin.len() {
            let agg = self.gin_aggregate(g, input, h, l)?;
            let ids = &self.ids.gin[l];
            let x = self.linear(g, agg, ids.w1, ids.b1)?;
            let x = g.gelu(x);
            h = self.linear(g, x, ids.w2, ids.b2)?;
        }
        Ok(h)
    }

    /// Attention pooling of atom states into one row per token.
    pub fn attention_pool(&self, g: &mut Graph<'_>, h: Var, owner: &[usize], m: usize) -> Result<Var, TensorError> {
        let w = g.param(self.ids.pool_w);
        let logits = g.matmul(h, w)?;
        let alpha = g.segment_softmax(logits, owner, m)?;
        let weighted = g.mul_col(h, alpha)?;
        g.segment_sum(weighted, owner, m)
    }

    /// Gated fusion of token embeddings `e` with the aligned atom path.
    /// Returns (aligned, gate, fused).
    pub fn fuse(&self, g: &mut Graph<'_>, e: Var, pooled: Var) -> Result<(Var, Var, Var), TensorError> {
        let wa = g.param(self.ids.align);
        let aligned = g.matmul(pooled, wa)?;
        let cat = g.concat_cols(&[e, aligned])?;
        let wg = g.param(self.ids.gate);
        let pre = g.matmul(cat, wg)?;
        let gate = g.sigmoid(pre);
        let diff = g.sub(aligned, e)?;
        let moved = match self.config.gate {
            GateKind::Elementwise => g.mul(gate, diff)?,
            GateKind::Scalar => g.mul_col(diff, gate)?,
        };
        let fused = g.add(e, moved)?;
        Ok((aligned, gate, fused))
    }

    /// Per-head structural bias matrices over the full sequence.
    pub fn structural_bias(&self, g: &mut Graph<'_>, input: &MolInput) -> Result<Vec<Var>, TensorError> {
        let n = input.seq_len;
        let tables = [
            (self.ids.bias_adj, &input.adj_idx),
            (self.ids.bias_dist, &input.dist_idx),
            (self.ids.bias_type, &input.type_idx),
            (self.ids.bias_dir, &input.dir_idx),
        ];
        let mut out = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let mut acc: Option<Var> = None;
            for (table, idx) in &tables {
                let t = g.param(*table);
                let b = g.bias_gather(t, h, idx, n)?;
                acc = Some(match acc {
                    Some(a) => g.add(a, b)?,
                    None => b,
                });
            }
            out.push(acc.expect("four bias tables"));
        }
        Ok(out)
    }

    /// Pre-norm Transformer stack. Returns the final states and per-layer,
    /// per-head attention maps.
    pub fn transformer(
        &self,
        g: &mut Graph<'_>,
        x: Var,
        bias: &[Var],
        key_mask: &[bool],
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Vec<Vec<Tensor>>), TensorError> {
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let p = self.config.dropout;
        let mut x = x;
        let mut maps = Vec::with_capacity(self.ids.layers.len());
        for l in &self.ids.layers {
            let (g1, b1) = (g.param(l.ln1_g), g.param(l.ln1_b));
            let xn = g.layer_norm(x, g1, b1)?;
            let q = self.linear(g, xn, l.wq, l.bq)?;
            let k = self.linear(g, xn, l.wk, l.bk)?;
            let v = self.linear(g, xn, l.wv, l.bv)?;
            let mut heads = Vec::with_capacity(self.config.heads);
            let mut layer_maps = Vec::with_capacity(self.config.heads);
            for (h, &b) in bias.iter().enumerate() {
                let qh = g.slice_cols(q, h * dh, dh)?;
                let kh = g.slice_cols(k, h * dh, dh)?;
                let vh = g.slice_cols(v, h * dh, dh)?;
                let logits = g.matmul_nt(qh, kh)?;
                let logits = g.scale(logits, scale);
                let logits = g.add(logits, b)?;
                let a = g.softmax_rows(logits, Some(key_mask))?;
                layer_maps.push(g.value(a).clone());
                heads.push(g.matmul(a, vh)?);
            }
            maps.push(layer_maps);
            let o = g.concat_cols(&heads)?;
            let o = self.linear(g, o, l.wo, l.bo)?;
            let o = dropout(g, o, p, rng)?;
            x = g.add(x, o)?;
            let (g2, b2) = (g.param(l.ln2_g), g.param(l.ln2_b));
            let xn = g.layer_norm(x, g2, b2)?;
            let f = self.linear(g, xn, l.w1, l.b1)?;
            let f = g.gelu(f);
            let f = self.linear(g, f, l.w2, l.b2)?;
            let f = dropout(g, f, p, rng)?;
            x = g.add(x, f)?;
        }
        let (fg, fb) = (g.param(self.ids.final_g), g.param(self.ids.final_b));
        Ok((g.layer_norm(x, fg, fb)?, maps))
    }

    /// Full forward pass for one molecule.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        input: &MolInput,
        opts: ForwardOpts<'_>,
    ) -> Result<ForwardOut, TensorError> {
        let m = input.n_tokens();
        let masked = opts.masked;
        let mut rng = opts.dropout_rng;
        assert_eq!(masked.len(), m, "mask length must equal token count");
        let atoms = self.gin_forward(g, input)?;
        let pooled = self.attention_pool(g, atoms, &input.owner, m)?;
        let ids: Vec<usize> = input
            .token_ids
            .iter()
            .zip(masked)
            .map(|(&t, &mk)| if mk { MASK_ID as usize } else { t as usize })
            .collect();
        let table = g.param(self.ids.token);
        let e = g.rows(table, &ids)?;
        let (aligned, gate, fused) = self.fuse(g, e, pooled)?;
        let fused = if masked.iter().any(|&x| x) {
            g.where_rows(masked, e, fused)?
        } else {
            fused
        };
        let cls = g.param(self.ids.cls);
        let mut rows = vec![cls, fused];
        if input.n_pad > 0 {
            let pads = g.rows(table, &vec![PAD_ID as usize; input.n_pad])?;
            rows.push(pads);
        }
        let x = g.concat_rows(&rows)?;
        let bias = self.structural_bias(g, input)?;
        let key_mask = input.key_mask();
        let (states, attention) = self.transformer(g, x, &bias, &key_mask, &mut rng)?;
        let cls = g.rows(states, &[0])?;
        Ok(ForwardOut {
            atoms,
            pooled,
            aligned,
            gate,
            fused,
            states,
            cls,
            attention,
        })
    }

    /// Masked-token logits for the given token positions (0-based, CLS
    /// excluded).
    pub fn mlm_logits(&self, g: &mut Graph<'_>, states: Var, positions: &[usize]) -> Result<Var, TensorError> {
        let rows: Vec<usize> = positions.iter().map(|&p| p + 1).collect();
        let sel = g.rows(states, &rows)?;
        self.linear(g, sel, self.ids.mlm_w, self.ids.mlm_b)
    }

    /// Task-head outputs on the CLS state.
    pub fn task_logits(&self, g: &mut Graph<'_>, cls: Var) -> Result<Var, TensorError> {
        let (w, b) = self.ids.task.expect("task head added");
        self.linear(g, cls, w, b)
    }
}
