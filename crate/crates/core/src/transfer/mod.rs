//! Checkpoint persistence and transfer surgery: Uniform / First-N mapping
//! of processors (g1) and GUnet stages (g2), transplanting a pre-trained
//! GUnet into a new configuration, and the Frobenius anchor penalty.

mod checkpoint;
mod mapping;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use mapping::{
    map_gunet, map_processor, plan_blocks, BlockOrigin, BlockSource, StageBlocks, Strategy,
};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, structure_err, Result};
use crate::sgunet::{gnb_suffixes, Layout, Model, ModelConfig, Normalizers, Processor};
use crate::tensor::{Gradients, ParamStore, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedSource {
    pub name: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Copied { from: String },
    Averaged { from: Vec<WeightedSource> },
    Fresh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub tensor: String,
    #[serde(flatten)]
    pub provenance: Provenance,
}

/// Provenance of every tensor of a transplanted checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub strategy: Strategy,
    pub seed: u64,
    pub source_config: ModelConfig,
    pub target_config: ModelConfig,
    pub entries: Vec<ReportEntry>,
}

impl TransferReport {
    /// `(copied, averaged, fresh)` tensor counts.
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for e in &self.entries {
            match e.provenance {
                Provenance::Copied { .. } => c.0 += 1,
                Provenance::Averaged { .. } => c.1 += 1,
                Provenance::Fresh => c.2 += 1,
            }
        }
        c
    }

    /// Names of transferred (non-fresh) tensors.
    pub fn anchored(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.provenance != Provenance::Fresh)
            .map(|e| e.tensor.as_str())
            .collect()
    }

    /// True when the entries name exactly the tensors of `layout`, in order.
    pub fn covers(&self, layout: &Layout) -> bool {
        self.entries.len() == layout.specs.len()
            && self
                .entries
                .iter()
                .zip(&layout.specs)
                .all(|(e, s)| e.tensor == s.name)
    }
}

fn prefixes(p: &Processor) -> Vec<String> {
    p.blocks.iter().map(|b| b.prefix.clone()).collect()
}

/// Target GNB prefix -> origin, for every block the mapping covers.
fn block_origins(
    src: &Layout,
    tgt: &Layout,
    tgt_cfg: &ModelConfig,
    strategy: Strategy,
) -> HashMap<String, BlockOrigin> {
    let mut out = HashMap::new();
    let mut record = |p: &Processor, origins: Vec<BlockOrigin>| {
        for (b, o) in p.blocks.iter().zip(origins) {
            out.insert(b.prefix.clone(), o);
        }
    };
    if tgt_cfg.is_baseline() {
        record(
            &tgt.flat,
            map_processor(&prefixes(&src.flat), tgt_cfg.m_proc, strategy),
        );
        return out;
    }
    let src_stages: Vec<StageBlocks<String>> = src
        .stages
        .iter()
        .map(|s| StageBlocks {
            down: prefixes(&s.down),
            up: prefixes(&s.up),
        })
        .collect();
    let mapped = map_gunet(&src_stages, tgt.stages.len(), tgt_cfg.m_gu, strategy);
    for (stage, m) in tgt.stages.iter().zip(mapped) {
        record(&stage.down, m.down);
        record(&stage.up, m.up);
    }
    record(
        &tgt.bottom,
        map_processor(&prefixes(&src.bottom), tgt_cfg.m_gu, strategy),
    );
    out
}

/// Builds a checkpoint for `tgt_config` whose GUnet (or flat processor) is
/// mapped from `src`; every other tensor is freshly initialized from `seed`.
/// Normalizer statistics and optimizer state start empty.
pub fn transplant(
    src: &Checkpoint,
    tgt_config: &ModelConfig,
    strategy: Strategy,
    seed: u64,
) -> Result<(Checkpoint, TransferReport)> {
    src.validate()?;
    let src_model = src.model()?;
    let tgt_model = Model::new(tgt_config.clone())?;
    if !src.config.gnb_compatible(tgt_config) {
        return config_err(format!(
            "cannot map blocks between latent/hidden/depth ({}, {}, {}) and ({}, {}, {})",
            src.config.latent,
            src.config.hidden,
            src.config.hidden_layers,
            tgt_config.latent,
            tgt_config.hidden,
            tgt_config.hidden_layers
        ));
    }
    if src.config.is_baseline() != tgt_config.is_baseline() {
        return config_err("cannot map between a flat processor and a GUnet");
    }
    let origins = block_origins(src_model.layout(), tgt_model.layout(), tgt_config, strategy);
    let suffixes = gnb_suffixes(tgt_config)?;
    let mut params = tgt_model.init_params(seed);
    let mut entries = Vec::with_capacity(params.len());
    let mut mapped: HashMap<String, Provenance> = HashMap::new();

    for (prefix, origin) in &origins {
        for suffix in &suffixes {
            let name = format!("{prefix}.{suffix}");
            let id = params
                .id(&name)
                .expect("target layout declares every block tensor");
            let source = |p: &str| {
                src.params
                    .get(&format!("{p}.{suffix}"))
                    .expect("source layout declares every block tensor")
            };
            let prov = match origin {
                BlockOrigin::Fresh => Provenance::Fresh,
                BlockOrigin::Mix(items) if items.len() == 1 && items[0].1 == 1.0 => {
                    params.set(id, source(&items[0].0).clone())?;
                    Provenance::Copied {
                        from: format!("{}.{suffix}", items[0].0),
                    }
                }
                BlockOrigin::Mix(items) => {
                    let shape = params.tensor(id).shape().to_vec();
                    let mut acc = vec![0.0f64; params.tensor(id).len()];
                    for (p, w) in items {
                        let t = source(p);
                        if t.shape() != shape.as_slice() {
                            return structure_err(format!("{p}.{suffix}: shape mismatch"));
                        }
                        acc.iter_mut()
                            .zip(t.data())
                            .for_each(|(a, &x)| *a += w * x as f64);
                    }
                    params.set(
                        id,
                        Tensor::new(shape, acc.iter().map(|&x| x as f32).collect())?,
                    )?;
                    Provenance::Averaged {
                        from: items
                            .iter()
                            .map(|(p, w)| WeightedSource {
                                name: format!("{p}.{suffix}"),
                                weight: *w,
                            })
                            .collect(),
                    }
                }
            };
            mapped.insert(name, prov);
        }
    }
    for spec in tgt_model.param_specs() {
        let provenance = mapped.remove(&spec.name).unwrap_or(Provenance::Fresh);
        entries.push(ReportEntry {
            tensor: spec.name.clone(),
            provenance,
        });
    }
    let ckpt = Checkpoint {
        config: tgt_config.clone(),
        params,
        normalizers: Normalizers::new(tgt_config.dim),
        optimizer: None,
    };
    ckpt.validate()?;
    let report = TransferReport {
        strategy,
        seed,
        source_config: src.config.clone(),
        target_config: tgt_config.clone(),
        entries,
    };
    Ok((ckpt, report))
}

/// Reference values for a subset of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Anchor<T: Scalar = f32> {
    ids: Vec<usize>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> Anchor<T> {
    /// Anchors the named tensors at their current values in `store`.
    pub fn capture<'a>(
        store: &ParamStore<T>,
        names: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for name in names {
            let Some(id) = store.id(name) else {
                return structure_err(format!("anchored tensor {name} is not a parameter"));
            };
            ids.push(id);
            values.push(store.tensor(id).clone());
        }
        Ok(Self { ids, values })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Sum over anchored tensors of `||W - W_anchor||_F^2` and its gradient
/// `2 (W - W_anchor)`.
pub fn frobenius_penalty<T: Scalar>(
    anchor: &Anchor<T>,
    store: &ParamStore<T>,
) -> Result<(f64, Gradients<T>)> {
    let mut grads = Gradients::new(store.len());
    let mut total = 0.0;
    for (&id, w0) in anchor.ids.iter().zip(&anchor.values) {
        let w = store.tensor(id);
        if w.shape() != w0.shape() {
            return structure_err(format!("{}: anchor shape mismatch", store.name(id)));
        }
        total += w.squared_distance(w0);
        let diff: Vec<T> = w
            .data()
            .iter()
            .zip(w0.data())
            .map(|(&a, &b)| a - b)
            .collect();
        grads.add_scaled(id, &Tensor::new(w.shape().to_vec(), diff)?, 2.0);
    }
    Ok((total, grads))
}

#[cfg(test)]
mod tests;
