use std::collections::HashMap;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::config::ModelConfig;
use crate::error::{GenexError, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Named parameter tensors in a fixed creation order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    tensors: IndexMap<String, Tensor<T>>,
}

enum Init {
    Normal(f64),
    Xavier,
    Zeros,
    Ones,
}

fn attention_names(prefix: &str, out: &mut Vec<(String, Vec<usize>, Init)>, d: usize) {
    for p in ["q", "k", "v", "o"] {
        out.push((format!("{prefix}.w{p}"), vec![d, d], Init::Xavier));
        out.push((format!("{prefix}.b{p}"), vec![d], Init::Zeros));
    }
}

fn norm_names(prefix: &str, out: &mut Vec<(String, Vec<usize>, Init)>, d: usize) {
    out.push((format!("{prefix}.g"), vec![d], Init::Ones));
    out.push((format!("{prefix}.b"), vec![d], Init::Zeros));
}

fn ffn_names(prefix: &str, out: &mut Vec<(String, Vec<usize>, Init)>, d: usize, f: usize) {
    out.push((format!("{prefix}.w1"), vec![d, f], Init::Xavier));
    out.push((format!("{prefix}.b1"), vec![f], Init::Zeros));
    out.push((format!("{prefix}.w2"), vec![f, d], Init::Xavier));
    out.push((format!("{prefix}.b2"), vec![d], Init::Zeros));
}

fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, f, v) = (cfg.d_model, cfg.ffn_dim, cfg.vocab_size);
    let scale = (d as f64).powf(-0.5);
    let mut out = vec![
        ("tok_emb".to_string(), vec![v, d], Init::Normal(scale)),
        ("seg_emb".to_string(), vec![2, d], Init::Normal(scale)),
    ];
    for (stack, n) in [("enc", cfg.n_layers_enc1), ("qattn", cfg.qattn_layers())] {
        for i in 0..n {
            attention_names(&format!("{stack}.{i}.attn"), &mut out, d);
            norm_names(&format!("{stack}.{i}.ln1"), &mut out, d);
            ffn_names(&format!("{stack}.{i}.ffn"), &mut out, d, f);
            norm_names(&format!("{stack}.{i}.ln2"), &mut out, d);
        }
    }
    for i in 0..cfg.n_layers_dec {
        attention_names(&format!("dec.{i}.self"), &mut out, d);
        norm_names(&format!("dec.{i}.ln1"), &mut out, d);
        attention_names(&format!("dec.{i}.cross"), &mut out, d);
        norm_names(&format!("dec.{i}.ln2"), &mut out, d);
        ffn_names(&format!("dec.{i}.ffn"), &mut out, d, f);
        norm_names(&format!("dec.{i}.ln3"), &mut out, d);
    }
    // small output weights keep initial logits near uniform
    out.push(("out.w".to_string(), vec![d, v], Init::Normal(0.5 * scale)));
    out.push(("out.b".to_string(), vec![v], Init::Zeros));
    out
}

impl<T: Scalar> ModelParams<T> {
    /// Random initialisation; identical draws for every scalar type.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = IndexMap::new();
        for (name, shape, init) in layout(cfg) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match init {
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                }
                Init::Xavier => {
                    let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    let dist = Uniform::new(-a, a).expect("nonempty range");
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                }
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
            };
            tensors.insert(name, Tensor::from_f64(&shape, &data)?.with_grad());
        }
        Ok(ModelParams { tensors })
    }

    /// Shapes every parameter must have under `cfg`, in canonical order.
    pub fn expected_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        layout(cfg).into_iter().map(|(n, s, _)| (n, s)).collect()
    }

    /// Builds parameters from named tensors, checking names and shapes against `cfg`.
    pub fn from_tensors(cfg: &ModelConfig, mut named: HashMap<String, Tensor<T>>) -> Result<Self> {
        let mut tensors = IndexMap::new();
        for (name, shape) in Self::expected_shapes(cfg) {
            let t = named
                .remove(&name)
                .ok_or_else(|| GenexError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(GenexError::Checkpoint(format!(
                    "tensor {name} has shape {:?}, config expects {shape:?}",
                    t.shape()
                )));
            }
            tensors.insert(name, t.with_grad());
        }
        if let Some(extra) = named.keys().min() {
            return Err(GenexError::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(ModelParams { tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn tensors(&self) -> Vec<Tensor<T>> {
        self.tensors.values().cloned().collect()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Places every parameter on the tape.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        let vars = self.tensors.values().map(|t| g.leaf(t)).collect();
        Bound::new(self.names(), vars)
    }

    /// Adds the gradients computed on `g` into the parameter buffers.
    pub fn accumulate(&mut self, g: &Graph<T>, bound: &Bound) {
        for (t, &v) in self.tensors.values_mut().zip(&bound.vars) {
            g.accumulate_grad(v, t);
        }
    }
}

/// Tape handles for the parameters of one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    index: HashMap<String, usize>,
    vars: Vec<Var>,
}

impl Bound {
    pub fn new<'a>(names: impl Iterator<Item = &'a str>, vars: Vec<Var>) -> Self {
        let index = names.enumerate().map(|(i, n)| (n.to_string(), i)).collect();
        Bound { index, vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| GenexError::Config(format!("model has no parameter {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn names_are_unique_and_shapes_match() {
        for v in Variant::ALL {
            let cfg = ModelConfig::tiny(v, 16);
            let p = ModelParams::<f64>::init(&cfg, 1).unwrap();
            let shapes = ModelParams::<f64>::expected_shapes(&cfg);
            assert_eq!(p.len(), shapes.len());
            for ((n, t), (en, es)) in p.iter().zip(&shapes) {
                assert_eq!(n, en);
                assert_eq!(t.shape(), es.as_slice());
            }
            assert_eq!(v.is_split(), p.get("qattn.0.attn.wq").is_some());
        }
    }

    #[test]
    fn f32_and_f64_inits_agree() {
        let cfg = ModelConfig::tiny(Variant::Genex, 16);
        let a = ModelParams::<f64>::init(&cfg, 3).unwrap();
        let b = ModelParams::<f32>::init(&cfg, 3).unwrap();
        assert_eq!(a.cast::<f32>(), b);
    }

    #[test]
    fn from_tensors_reports_mismatch() {
        let cfg = ModelConfig::tiny(Variant::Orig, 16);
        let p = ModelParams::<f32>::init(&cfg, 0).unwrap();
        let mut named: HashMap<String, Tensor<f32>> =
            p.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        named.insert("out.b".into(), Tensor::zeros(&[17]));
        let err = ModelParams::from_tensors(&cfg, named).unwrap_err().to_string();
        assert!(err.contains("out.b"), "{err}");
    }
}
