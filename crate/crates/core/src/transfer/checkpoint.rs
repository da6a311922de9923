use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sgunet::{Model, ModelConfig, Normalizers};
use crate::tensor::{AdamState, ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"SGCK";
pub const FORMAT_VERSION: u32 = 1;

/// Model configuration, named parameters, normalizer state and optional
/// optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    pub normalizers: Normalizers,
    pub optimizer: Option<AdamState>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    normalizers: Normalizers,
    /// Adam step count; when present, first and second moments for every
    /// tensor follow the parameters in the same order.
    optimizer_step: Option<u64>,
}

impl Checkpoint {
    /// Fresh checkpoint for `config` with parameters drawn from `seed`.
    pub fn initial(config: ModelConfig, seed: u64) -> Result<Self> {
        let model = Model::new(config.clone())?;
        let params = model.init_params(seed);
        let normalizers = Normalizers::new(config.dim);
        Ok(Self {
            config,
            params,
            normalizers,
            optimizer: None,
        })
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(self.config.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model()?;
        model.check_params(&self.params)?;
        if let Some(opt) = &self.optimizer {
            let ok = opt.m.len() == self.params.len()
                && opt.v.len() == self.params.len()
                && (0..self.params.len()).all(|i| {
                    opt.m[i].shape() == self.params.tensor(i).shape()
                        && opt.v[i].shape() == self.params.tensor(i).shape()
                });
            if !ok {
                return Err(Error::Structure(
                    "optimizer moments do not match parameters".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        self.validate()?;
        let manifest = Manifest {
            config: self.config.clone(),
            tensors: self
                .params
                .specs()
                .iter()
                .map(|s| TensorEntry {
                    name: s.name.clone(),
                    shape: s.shape.clone(),
                })
                .collect(),
            normalizers: self.normalizers.clone(),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
        };
        let bytes = serde_json::to_vec(&manifest)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(bytes.len() as u64).to_le_bytes())?;
        w.write_all(&bytes)?;
        let mut write_tensor = |t: &Tensor<f32>| -> Result<()> {
            for &x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
            Ok(())
        };
        for (_, t) in self.params.iter() {
            write_tensor(t)?;
        }
        if let Some(opt) = &self.optimizer {
            opt.m.iter().chain(&opt.v).try_for_each(&mut write_tensor)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut bytes = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut bytes)?;
        let manifest: Manifest = serde_json::from_slice(&bytes)?;

        let model = Model::new(manifest.config.clone())?;
        let specs = model.param_specs();
        if specs.len() != manifest.tensors.len()
            || specs
                .iter()
                .zip(&manifest.tensors)
                .any(|(s, e)| s.name != e.name || s.shape != e.shape)
        {
            return Err(Error::Format(
                "tensor manifest does not match the stored config".into(),
            ));
        }
        let mut read_tensor = |shape: &[usize]| -> Result<Tensor<f32>> {
            let n: usize = shape.iter().product();
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf)?;
            let data = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Tensor::new(shape.to_vec(), data)
        };
        let mut params = ParamStore::new();
        for spec in specs {
            let t = read_tensor(&spec.shape)?;
            params.insert(spec.clone(), t)?;
        }
        let optimizer = match manifest.optimizer_step {
            None => None,
            Some(step) => {
                let m = specs
                    .iter()
                    .map(|s| read_tensor(&s.shape))
                    .collect::<Result<_>>()?;
                let v = specs
                    .iter()
                    .map(|s| read_tensor(&s.shape))
                    .collect::<Result<_>>()?;
                Some(AdamState { step, m, v })
            }
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint data".into()));
        }
        Ok(Self {
            config: manifest.config,
            params,
            normalizers: manifest.normalizers,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
