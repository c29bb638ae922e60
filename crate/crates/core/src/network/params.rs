//! Learnable arrays and their flat index.
//!
//! Every parameter is a named `[batch, rows, cols]` block inside one flat
//! `Vec<f64>`. The layout is a pure function of [`ModelDims`], so the flat
//! vector plus the dims is enough to rebuild a model.

use ndarray::Array3;
use rand::Rng;

use crate::autodiff::{Shape, Tape, Var};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub d_model: usize,
    pub rank: usize,
    pub heads: usize,
    pub layers: usize,
    pub joints: usize,
    /// Observed tokens per joint.
    pub window: usize,
    /// Predicted frames.
    pub future: usize,
    /// Input channels per joint and frame.
    pub channels: usize,
    pub critic_width: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("rank", self.rank),
            ("heads", self.heads),
            ("joints", self.joints),
            ("window", self.window),
            ("future", self.future),
            ("channels", self.channels),
            ("critic_width", self.critic_width),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidDims(format!("{name} must be positive")));
        }
        if self.rank > self.d_model {
            return Err(Error::InvalidDims(format!(
                "rank {} exceeds d_model {}",
                self.rank, self.d_model
            )));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::InvalidDims(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn ffn_hidden(&self) -> usize {
        2 * self.d_model
    }

    pub fn tokens(&self) -> usize {
        self.window * self.joints
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Generator,
    Critic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Uniform { fan_in: usize },
    Zeros,
    Ones,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Shape,
    pub offset: usize,
    pub group: ParamGroup,
    init: Init,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnIndex {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub phi_q: Vec<usize>,
    pub phi_k: Vec<usize>,
    /// `A_s` (`J × J`) or `A_t` (`T × T`).
    pub gate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerIndex {
    pub ln1: (usize, usize),
    pub spatial: AttnIndex,
    pub ln2: (usize, usize),
    pub temporal: AttnIndex,
    pub ln3: (usize, usize),
    pub ff_w1: usize,
    pub ff_b1: usize,
    pub ff_w2: usize,
    pub ff_b2: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpIndex {
    pub w: [usize; 3],
    pub b: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutIndex {
    pub embed_w: usize,
    pub embed_b: usize,
    pub mask_token: usize,
    pub layers: Vec<LayerIndex>,
    pub lnf: (usize, usize),
    pub pred_w: usize,
    pub pred_b: usize,
    pub mask_w: usize,
    pub mask_b: usize,
    pub denoise_w: usize,
    pub denoise_b: usize,
    pub fidelity: MlpIndex,
    pub continuity: MlpIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
    pub index: LayoutIndex,
}

struct Builder {
    entries: Vec<ParamEntry>,
    total: usize,
    group: ParamGroup,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        let shape = [1, rows, cols];
        self.entries.push(ParamEntry {
            name,
            shape,
            offset: self.total,
            group: self.group,
            init,
        });
        self.total += rows * cols;
        self.entries.len() - 1
    }

    fn weight(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.add(name, rows, cols, Init::Uniform { fan_in: rows })
    }

    fn norm(&mut self, name: &str, d: usize) -> (usize, usize) {
        (
            self.add(format!("{name}.gain"), 1, d, Init::Ones),
            self.add(format!("{name}.bias"), 1, d, Init::Zeros),
        )
    }

    fn attention(&mut self, prefix: &str, dims: &ModelDims, gate_size: usize) -> AttnIndex {
        let d = dims.d_model;
        let dh = dims.head_dim();
        AttnIndex {
            wq: self.weight(format!("{prefix}.wq"), d, d),
            wk: self.weight(format!("{prefix}.wk"), d, d),
            wv: self.weight(format!("{prefix}.wv"), d, d),
            wo: self.weight(format!("{prefix}.wo"), d, d),
            phi_q: (0..dims.heads)
                .map(|h| self.weight(format!("{prefix}.phi_q.{h}"), dh, dims.rank))
                .collect(),
            phi_k: (0..dims.heads)
                .map(|h| self.weight(format!("{prefix}.phi_k.{h}"), dh, dims.rank))
                .collect(),
            gate: self.add(
                format!("{prefix}.gate"),
                gate_size,
                gate_size,
                Init::Identity,
            ),
        }
    }

    fn mlp(&mut self, prefix: &str, input: usize, width: usize) -> MlpIndex {
        let w1 = self.weight(format!("{prefix}.w1"), input, width);
        let b1 = self.add(format!("{prefix}.b1"), 1, width, Init::Zeros);
        let w2 = self.weight(format!("{prefix}.w2"), width, width);
        let b2 = self.add(format!("{prefix}.b2"), 1, width, Init::Zeros);
        let w3 = self.weight(format!("{prefix}.w3"), width, 1);
        let b3 = self.add(format!("{prefix}.b3"), 1, 1, Init::Zeros);
        MlpIndex {
            w: [w1, w2, w3],
            b: [b1, b2, b3],
        }
    }
}

impl ParamLayout {
    pub fn new(dims: &ModelDims) -> Result<Self> {
        dims.validate()?;
        let d = dims.d_model;
        let mut b = Builder {
            entries: Vec::new(),
            total: 0,
            group: ParamGroup::Generator,
        };
        let embed_w = b.weight("embed.weight".into(), dims.channels, d);
        let embed_b = b.add("embed.bias".into(), dims.channels, d, Init::Zeros);
        let mask_token = b.add("embed.mask_token".into(), 1, d, Init::Zeros);
        let layers = (0..dims.layers)
            .map(|l| LayerIndex {
                ln1: b.norm(&format!("layer{l}.ln1"), d),
                spatial: b.attention(&format!("layer{l}.spatial"), dims, dims.joints),
                ln2: b.norm(&format!("layer{l}.ln2"), d),
                temporal: b.attention(&format!("layer{l}.temporal"), dims, dims.window),
                ln3: b.norm(&format!("layer{l}.ln3"), d),
                ff_w1: b.weight(format!("layer{l}.ffn.w1"), d, dims.ffn_hidden()),
                ff_b1: b.add(
                    format!("layer{l}.ffn.b1"),
                    1,
                    dims.ffn_hidden(),
                    Init::Zeros,
                ),
                ff_w2: b.weight(format!("layer{l}.ffn.w2"), dims.ffn_hidden(), d),
                ff_b2: b.add(format!("layer{l}.ffn.b2"), 1, d, Init::Zeros),
            })
            .collect();
        let lnf = b.norm("final_ln", d);
        let pred_w = b.weight("head.pred.weight".into(), d, dims.future * 3);
        let pred_b = b.add("head.pred.bias".into(), 1, dims.future * 3, Init::Zeros);
        let mask_w = b.weight("head.mask.weight".into(), d, 3);
        let mask_b = b.add("head.mask.bias".into(), 1, 3, Init::Zeros);
        let denoise_w = b.weight("head.denoise.weight".into(), d, 3);
        let denoise_b = b.add("head.denoise.bias".into(), 1, 3, Init::Zeros);

        b.group = ParamGroup::Critic;
        let fidelity = b.mlp("disc_fidelity", dims.joints * 3, dims.critic_width);
        let continuity = b.mlp("disc_continuity", dims.joints * 6, dims.critic_width);

        Ok(Self {
            entries: b.entries,
            total: b.total,
            index: LayoutIndex {
                embed_w,
                embed_b,
                mask_token,
                layers,
                lnf,
                pred_w,
                pred_b,
                mask_w,
                mask_b,
                denoise_w,
                denoise_b,
                fidelity,
                continuity,
            },
        })
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    /// Contiguous flat range covered by a parameter group.
    pub fn group_range(&self, group: ParamGroup) -> std::ops::Range<usize> {
        let mut it = self.entries.iter().filter(|e| e.group == group);
        let first = it.next().map(|e| e.offset).unwrap_or(0);
        let end = self
            .entries
            .iter()
            .filter(|e| e.group == group)
            .map(|e| e.offset + e.len())
            .max()
            .unwrap_or(first);
        first..end
    }

    /// Owner of a flat index.
    pub fn entry_at(&self, flat: usize) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.range().contains(&flat))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl ModelParams {
    /// Uniform `±sqrt(1/fan_in)` weights, zero biases and mask token,
    /// unit layer-norm gains and identity gates.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        let layout = ParamLayout::new(&dims)?;
        let mut rng = rng::stream(seed, "init", &[]);
        let mut values = vec![0.0; layout.total];
        for e in &layout.entries {
            let block = &mut values[e.range()];
            match e.init {
                Init::Zeros => {}
                Init::Ones => block.fill(1.0),
                Init::Identity => {
                    let n = e.shape[1];
                    for i in 0..n {
                        block[i * n + i] = 1.0;
                    }
                }
                Init::Uniform { fan_in } => {
                    let bound = (1.0 / fan_in as f64).sqrt();
                    for v in block.iter_mut() {
                        *v = rng.random_range(-bound..bound);
                    }
                }
            }
        }
        Ok(Self {
            dims,
            layout,
            values,
        })
    }

    pub fn from_values(dims: ModelDims, values: Vec<f64>) -> Result<Self> {
        let layout = ParamLayout::new(&dims)?;
        if values.len() != layout.total {
            return Err(Error::DimsMismatch(format!(
                "{} parameter values for a layout of {}",
                values.len(),
                layout.total
            )));
        }
        Ok(Self {
            dims,
            layout,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn array(&self, entry: usize) -> Array3<f64> {
        let e = &self.layout.entries[entry];
        Array3::from_shape_vec(
            (e.shape[0], e.shape[1], e.shape[2]),
            self.values[e.range()].to_vec(),
        )
        .expect("layout shape")
    }

    pub fn set_array(&mut self, entry: usize, value: &Array3<f64>) {
        let e = &self.layout.entries[entry];
        assert_eq!(value.len(), e.len(), "{}", e.name);
        let range = e.range();
        for (dst, src) in self.values[range].iter_mut().zip(value.iter()) {
            *dst = *src;
        }
    }

    pub fn fill(&mut self, entry: usize, value: f64) {
        let range = self.layout.entries[entry].range();
        self.values[range].fill(value);
    }

    /// Records every parameter as a tape leaf.
    pub fn leaves(&self, tape: &Tape) -> ParamVars {
        ParamVars {
            vars: (0..self.layout.entries.len())
                .map(|i| tape.leaf(self.array(i)))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Tape handles for every parameter entry, indexed like the layout.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub vars: Vec<Var>,
}

impl std::ops::Index<usize> for ParamVars {
    type Output = Var;

    fn index(&self, i: usize) -> &Var {
        &self.vars[i]
    }
}

impl ParamVars {
    /// Gradients of `loss` flattened into layout order.
    pub fn flat_grad(&self, tape: &Tape, loss: Var, layout: &ParamLayout) -> Result<Vec<f64>> {
        let grads = tape.grad(loss, &self.vars)?;
        let mut flat = vec![0.0; layout.total];
        for (e, g) in layout.entries.iter().zip(grads) {
            for (dst, src) in flat[e.range()].iter_mut().zip(tape.value(g).iter()) {
                *dst = *src;
            }
        }
        Ok(flat)
    }
}
