use std::collections::HashMap;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Prng, Real, Tensor, Var};

const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    TruncNormal,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

struct Specs(Vec<ParamSpec>);

impl Specs {
    fn push(&mut self, name: String, shape: &[usize], init: Init) {
        self.0.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        });
    }

    fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize, zero: bool) {
        let init = if zero { Init::Zeros } else { Init::TruncNormal };
        self.push(format!("{prefix}.w"), &[d_in, d_out], init);
        self.push(format!("{prefix}.b"), &[d_out], Init::Zeros);
    }

    fn layer_norm(&mut self, prefix: &str, d: usize) {
        self.push(format!("{prefix}.g"), &[d], Init::Ones);
        self.push(format!("{prefix}.b"), &[d], Init::Zeros);
    }

    fn licm(&mut self, prefix: &str, d: usize, cfg: &ModelConfig) {
        let (c, p) = (cfg.licm_channels, cfg.patch_size);
        self.linear(&format!("{prefix}.in"), d, c * p * p, false);
        self.push(format!("{prefix}.conv.k"), &[c, c, 3, 3], Init::TruncNormal);
        self.push(format!("{prefix}.conv.b"), &[c], Init::Zeros);
        self.linear(&format!("{prefix}.out"), c * p * p, d, true);
    }

    fn block(&mut self, prefix: &str, d: usize, cfg: &ModelConfig) {
        self.linear(&format!("{prefix}.attn.qkv"), d, 3 * d, false);
        self.linear(&format!("{prefix}.attn.proj"), d, d, false);
        self.layer_norm(&format!("{prefix}.ln_attn"), d);
        self.linear(&format!("{prefix}.mlp.fc1"), d, 4 * d, false);
        self.linear(&format!("{prefix}.mlp.fc2"), 4 * d, d, false);
        self.layer_norm(&format!("{prefix}.ln_mlp"), d);
        if cfg.licm_enabled {
            self.licm(&format!("{prefix}.licm_a"), d, cfg);
            self.layer_norm(&format!("{prefix}.ln_licm_a"), d);
            self.licm(&format!("{prefix}.licm_b"), d, cfg);
            self.layer_norm(&format!("{prefix}.ln_licm_b"), d);
        }
    }
}

/// Parameter layout for an encoder under `enc` and one decoder per entry of
/// `decoders`.
pub fn param_specs(cfg: &ModelConfig, decoders: &[String]) -> Vec<ParamSpec> {
    let mut s = Specs(Vec::new());
    let p = cfg.patch_size;
    s.linear("enc.patch_embed", 3 * p * p, cfg.enc_dim, false);
    for i in 0..cfg.enc_depth {
        s.block(&format!("enc.blocks.{i}"), cfg.enc_dim, cfg);
    }
    for dec in decoders {
        let d = cfg.dec_dim;
        s.linear(&format!("{dec}.embed"), cfg.enc_dim, d, false);
        s.push(format!("{dec}.mask_token"), &[d], Init::TruncNormal);
        for i in 0..cfg.dec_depth {
            s.block(&format!("{dec}.blocks.{i}"), d, cfg);
        }
        s.linear(&format!("{dec}.recon_head"), d, 3 * p * p, false);
        s.linear(&format!("{dec}.seg_trunk"), d, cfg.head_channels * p * p, false);
        s.linear(&format!("{dec}.seg_conv"), cfg.head_channels, 1, false);
    }
    s.0
}

/// Named tensors in a fixed order; names are unique.
#[derive(Clone, Debug)]
pub struct ParamStore<T: Real> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Initializes every spec from its own stream `Prng::derive(seed, name)`,
    /// so a tensor's initial value does not depend on which other tensors
    /// exist.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Result<Self> {
        let mut store = Self::new();
        for spec in specs {
            let t = match spec.init {
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::ones(&spec.shape),
                Init::TruncNormal => {
                    let mut rng = Prng::derive(seed, &spec.name);
                    Tensor::from_fn(&spec.shape, |_| T::of(rng.trunc_normal(INIT_STD)))
                }
            };
            store.insert(&spec.name, t)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: &str, t: Tensor<T>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::contract(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.position(name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        match self.position(name) {
            Some(i) => Ok(&mut self.tensors[i]),
            None => Err(Error::contract(format!("unknown parameter {name}"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Adds every tensor to `g`, as trainable parameters or as constants.
    pub fn bind<'a>(&'a self, g: &mut Graph<T>, trainable: bool) -> Bound<'a, T> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Bound { store: self, vars }
    }
}

/// Graph handles for the tensors of a [`ParamStore`].
pub struct Bound<'a, T: Real> {
    store: &'a ParamStore<T>,
    vars: Vec<Var>,
}

impl<T: Real> Bound<'_, T> {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.store
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Replaces the handle of `name`, e.g. with a node under test.
    pub fn set(&mut self, name: &str, v: Var) -> Result<()> {
        let i = self
            .store
            .position(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))?;
        self.vars[i] = v;
        Ok(())
    }
}
