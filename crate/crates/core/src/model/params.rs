use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, Scalar};

const INIT_STD: f64 = 0.02;
const INIT_STREAM: u64 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Embedding,
    Position,
    Attention,
    FeedForward,
    Norm,
    Head,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Embedding,
        ParamGroup::Position,
        ParamGroup::Attention,
        ParamGroup::FeedForward,
        ParamGroup::Norm,
        ParamGroup::Head,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub group: ParamGroup,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.numel()
    }
}

/// Offsets of one block's tensors inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w_fc: usize,
    pub b_fc: usize,
    pub w_proj: usize,
    pub b_proj: usize,
}

/// Named tensors packed into one flat vector. Weight matrices are stored
/// `[in, out]` so a layer computes `x · W + b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

impl Layout {
    pub fn for_config(cfg: &ModelConfig) -> Self {
        let (d, f, v, c) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.context_length);
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>, group: ParamGroup| {
            let spec = TensorSpec { name, shape, offset, group };
            offset += spec.numel();
            tensors.push(spec);
        };
        push("tok_emb".into(), vec![v, d], ParamGroup::Embedding);
        push("pos_emb".into(), vec![c, d], ParamGroup::Position);
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("blocks.{l}.{s}");
            push(p("ln1.gain"), vec![d], ParamGroup::Norm);
            push(p("ln1.bias"), vec![d], ParamGroup::Norm);
            for proj in ["query", "key", "value", "output"] {
                push(p(&format!("attn.{proj}.weight")), vec![d, d], ParamGroup::Attention);
                push(p(&format!("attn.{proj}.bias")), vec![d], ParamGroup::Attention);
            }
            push(p("ln2.gain"), vec![d], ParamGroup::Norm);
            push(p("ln2.bias"), vec![d], ParamGroup::Norm);
            push(p("ff.fc.weight"), vec![d, f], ParamGroup::FeedForward);
            push(p("ff.fc.bias"), vec![f], ParamGroup::FeedForward);
            push(p("ff.proj.weight"), vec![f, d], ParamGroup::FeedForward);
            push(p("ff.proj.bias"), vec![d], ParamGroup::FeedForward);
        }
        push("ln_f.gain".into(), vec![d], ParamGroup::Norm);
        push("ln_f.bias".into(), vec![d], ParamGroup::Norm);
        if !cfg.tied_head {
            push("head.weight".into(), vec![d, v], ParamGroup::Head);
        }
        Self { tensors, total: offset }
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn offset(&self, name: &str) -> usize {
        self.get(name).unwrap_or_else(|| panic!("layout has no tensor {name}")).offset
    }

    pub(crate) fn block(&self, l: usize) -> BlockOffsets {
        let o = |s: &str| self.offset(&format!("blocks.{l}.{s}"));
        BlockOffsets {
            ln1_g: o("ln1.gain"),
            ln1_b: o("ln1.bias"),
            wq: o("attn.query.weight"),
            bq: o("attn.query.bias"),
            wk: o("attn.key.weight"),
            bk: o("attn.key.bias"),
            wv: o("attn.value.weight"),
            bv: o("attn.value.bias"),
            wo: o("attn.output.weight"),
            bo: o("attn.output.bias"),
            ln2_g: o("ln2.gain"),
            ln2_b: o("ln2.bias"),
            w_fc: o("ff.fc.weight"),
            b_fc: o("ff.fc.bias"),
            w_proj: o("ff.proj.weight"),
            b_proj: o("ff.proj.bias"),
        }
    }
}

/// Precomputed offsets used by the hot loops.
#[derive(Debug, Clone)]
pub(crate) struct Offsets {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub blocks: Vec<BlockOffsets>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    /// `None` when the head is tied to the token embedding.
    pub head: Option<usize>,
}

impl Offsets {
    fn new(cfg: &ModelConfig, layout: &Layout) -> Self {
        Self {
            tok_emb: layout.offset("tok_emb"),
            pos_emb: layout.offset("pos_emb"),
            blocks: (0..cfg.n_layers).map(|l| layout.block(l)).collect(),
            lnf_g: layout.offset("ln_f.gain"),
            lnf_b: layout.offset("ln_f.bias"),
            head: (!cfg.tied_head).then(|| layout.offset("head.weight")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransformerParams<T = f32> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub data: Vec<T>,
    pub(crate) offsets: Offsets,
}

impl<T: Scalar> PartialEq for TransformerParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.layout == other.layout && self.data == other.data
    }
}

impl<T: Scalar> TransformerParams<T> {
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::for_config(&config);
        let offsets = Offsets::new(&config, &layout);
        Ok(Self { data: vec![T::zero(); layout.total], config, layout, offsets })
    }

    /// Normal(0, 0.02) weights, residual output projections scaled by
    /// `1/sqrt(2 n_layers)`, unit norm gains, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let residual = INIT_STD / (2.0 * p.config.n_layers as f64).sqrt();
        for t in &p.layout.tensors {
            let std = if t.name.ends_with(".gain") {
                p.data[t.range()].iter_mut().for_each(|x| *x = T::one());
                continue;
            } else if t.name.ends_with(".bias") {
                continue;
            } else if t.name.ends_with("attn.output.weight") || t.name.ends_with("ff.proj.weight") {
                residual
            } else {
                INIT_STD
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            for x in &mut p.data[t.range()] {
                *x = T::of(normal.sample(&mut rng));
            }
        }
        Ok(p)
    }

    pub fn from_data(config: ModelConfig, data: Vec<T>) -> Result<Self, ModelError> {
        let mut p = Self::zeros(config)?;
        if data.len() != p.data.len() {
            return Err(ModelError::Config(format!(
                "parameter vector has {} values, layout needs {}",
                data.len(),
                p.data.len()
            )));
        }
        p.data = data;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.get(name).map(|t| &self.data[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.layout.get(name)?.range();
        Some(&mut self.data[range])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> TransformerParams<U> {
        TransformerParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
            offsets: self.offsets.clone(),
        }
    }

    /// Zeroed parameter-shaped buffer for gradients.
    pub fn zeros_like(&self) -> Vec<T> {
        vec![T::zero(); self.data.len()]
    }
}
