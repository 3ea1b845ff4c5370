//! The learnable weight table.
//!
//! Parameters are an ordered name -> tensor map; the insertion order is the
//! canonical order used by the optimizer state and the checkpoint format, so
//! identical configs always produce identically ordered tables.

use std::collections::HashMap;

use super::ModelConfig;
use crate::diffcore::{Record, Rng, Scalar, Tensor, Var};
use crate::tokens::Projectors;

#[derive(Debug, Clone)]
pub struct Parameters<E> {
    names: Vec<String>,
    tensors: Vec<Tensor<E>>,
    index: HashMap<String, usize>,
}

impl<E: Scalar> Default for Parameters<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Parameters<E> {
    pub fn new() -> Self {
        Parameters {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<E>) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn position(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get(&self, name: &str) -> &Tensor<E> {
        &self.tensors[self.position(name)]
    }

    pub fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn tensors(&self) -> &[Tensor<E>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<E>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn cast<T: Scalar>(&self) -> Parameters<T> {
        let mut out = Parameters::new();
        for (name, t) in self.iter() {
            out.insert(name, t.cast::<T>());
        }
        out
    }

    /// Enters every tensor into a record as a trainable leaf, preserving
    /// table order.
    pub fn bind(&self, rec: &mut Record<E>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| rec.param(t)).collect(),
        }
    }

    /// Enters every tensor as a constant (inference: no gradient tracking).
    pub fn bind_frozen(&self, rec: &mut Record<E>) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|t| rec.constant(t.clone()))
                .collect(),
        }
    }
}

/// Handles of one parameter table inside one record.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps an externally built var list (one per parameter, table order).
    pub fn from_vars(vars: Vec<Var>) -> Bound {
        Bound { vars }
    }

    pub fn var<E: Scalar>(&self, params: &Parameters<E>, name: &str) -> Var {
        self.vars[params.position(name)]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn projectors<E: Scalar>(&self, params: &Parameters<E>) -> Projectors {
        Projectors {
            patch_w: self.var(params, "proj.patch.w"),
            patch_b: self.var(params, "proj.patch.b"),
            state_w: self.var(params, "proj.state.w"),
            state_b: self.var(params, "proj.state.b"),
            action_w: self.var(params, "proj.action.w"),
            action_b: self.var(params, "proj.action.b"),
            frame_embed: params
                .has("frame.embed")
                .then(|| self.var(params, "frame.embed")),
        }
    }
}

/// Normal init truncated at ±2σ.
fn trunc_normal<E: Scalar>(rng: &mut Rng, shape: Vec<usize>, sigma: f64) -> Tensor<E> {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let (a, b) = rng.normal_pair();
        for v in [a, b] {
            if data.len() < n && v.abs() <= 2.0 {
                data.push(E::from_f64(v * sigma).unwrap());
            }
        }
    }
    Tensor::new(shape, data)
}

const INIT_SIGMA: f64 = 0.02;

/// Builds the full weight table for a configuration, deterministically from
/// the seed: truncated-normal weights (σ = 0.02), zero biases, unit
/// layer-norm gains, and zero output heads so the initial velocity field is
/// exactly zero everywhere.
pub fn init_model<E: Scalar>(cfg: &ModelConfig, seed: u64) -> Parameters<E> {
    cfg.validate().expect("invalid model configuration");
    build(cfg, seed, false)
}

/// Like [`init_model`] but randomizes every tensor, including the output
/// heads, layer-norm affines, and biases. Used by diagnostics, leakage
/// checks, and latency benchmarks that need a generic (non-zero) velocity
/// field rather than a trainable starting point.
pub fn random_model<E: Scalar>(cfg: &ModelConfig, seed: u64) -> Parameters<E> {
    cfg.validate().expect("invalid model configuration");
    build(cfg, seed, true)
}

fn build<E: Scalar>(cfg: &ModelConfig, seed: u64, randomize_all: bool) -> Parameters<E> {
    let mut rng = Rng::seed_from(seed);
    let d = cfg.model_dim;
    let mut p = Parameters::new();

    let weight = |rng: &mut Rng, shape: Vec<usize>| trunc_normal::<E>(rng, shape, INIT_SIGMA);
    let vec_init = |rng: &mut Rng, len: usize, ones: bool| -> Tensor<E> {
        if randomize_all {
            let mut t = trunc_normal::<E>(rng, vec![len], INIT_SIGMA);
            if ones {
                for v in t.data_mut() {
                    *v = *v + E::one();
                }
            }
            t
        } else if ones {
            Tensor::new(vec![len], vec![E::one(); len])
        } else {
            Tensor::zeros(vec![len])
        }
    };

    p.insert("proj.patch.w", weight(&mut rng, vec![cfg.patch_dim(), d]));
    p.insert("proj.patch.b", vec_init(&mut rng, d, false));
    p.insert(
        "proj.state.w",
        weight(&mut rng, vec![cfg.state_dim, cfg.state_tokens * d]),
    );
    p.insert("proj.state.b", vec_init(&mut rng, cfg.state_tokens * d, false));
    p.insert("proj.action.w", weight(&mut rng, vec![cfg.action_dim, d]));
    p.insert("proj.action.b", vec_init(&mut rng, d, false));
    p.insert("instr.embed", weight(&mut rng, vec![cfg.vocab_size, d]));

    for layer in 0..cfg.layers {
        let pre = format!("layer{layer}");
        p.insert(format!("{pre}.attn.qkv.w"), weight(&mut rng, vec![d, 3 * d]));
        p.insert(format!("{pre}.attn.qkv.b"), vec_init(&mut rng, 3 * d, false));
        p.insert(format!("{pre}.attn.out.w"), weight(&mut rng, vec![d, d]));
        p.insert(format!("{pre}.attn.out.b"), vec_init(&mut rng, d, false));
        p.insert(format!("{pre}.cross.q.w"), weight(&mut rng, vec![d, d]));
        p.insert(format!("{pre}.cross.q.b"), vec_init(&mut rng, d, false));
        p.insert(format!("{pre}.cross.k.w"), weight(&mut rng, vec![d, d]));
        p.insert(format!("{pre}.cross.k.b"), vec_init(&mut rng, d, false));
        p.insert(format!("{pre}.cross.v.w"), weight(&mut rng, vec![d, d]));
        p.insert(format!("{pre}.cross.v.b"), vec_init(&mut rng, d, false));
        p.insert(format!("{pre}.cross.out.w"), weight(&mut rng, vec![d, d]));
        p.insert(format!("{pre}.cross.out.b"), vec_init(&mut rng, d, false));
        p.insert(format!("{pre}.ln1.g"), vec_init(&mut rng, d, true));
        p.insert(format!("{pre}.ln1.b"), vec_init(&mut rng, d, false));
        p.insert(format!("{pre}.ln2.g"), vec_init(&mut rng, d, true));
        p.insert(format!("{pre}.ln2.b"), vec_init(&mut rng, d, false));
        p.insert(format!("{pre}.ln3.g"), vec_init(&mut rng, d, true));
        p.insert(format!("{pre}.ln3.b"), vec_init(&mut rng, d, false));
        let hidden = cfg.mlp_expansion * d;
        p.insert(format!("{pre}.mlp.fc1.w"), weight(&mut rng, vec![d, hidden]));
        p.insert(format!("{pre}.mlp.fc1.b"), vec_init(&mut rng, hidden, false));
        p.insert(format!("{pre}.mlp.fc2.w"), weight(&mut rng, vec![hidden, d]));
        p.insert(format!("{pre}.mlp.fc2.b"), vec_init(&mut rng, d, false));
    }

    for prefix in ["ftime.action", "ftime.video"] {
        if prefix == "ftime.video" && cfg.k() == 0 {
            continue;
        }
        p.insert(format!("{prefix}.fc1.w"), weight(&mut rng, vec![d, d]));
        p.insert(format!("{prefix}.fc1.b"), vec_init(&mut rng, d, false));
        p.insert(format!("{prefix}.fc2.w"), weight(&mut rng, vec![d, d]));
        p.insert(format!("{prefix}.fc2.b"), vec_init(&mut rng, d, false));
    }

    let head = |rng: &mut Rng, shape: Vec<usize>| -> Tensor<E> {
        if randomize_all {
            trunc_normal::<E>(rng, shape, INIT_SIGMA)
        } else {
            Tensor::zeros(shape)
        }
    };
    p.insert("head.action.w", head(&mut rng, vec![d, cfg.action_dim]));
    p.insert("head.action.b", head(&mut rng, vec![cfg.action_dim]));
    if cfg.k() > 0 {
        p.insert("head.video.w", head(&mut rng, vec![d, cfg.patch_dim()]));
        p.insert("head.video.b", head(&mut rng, vec![cfg.patch_dim()]));
        p.insert("frame.embed", weight(&mut rng, vec![cfg.k(), d]));
    }
    p
}
