use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Uniform,
    FirstN,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "first-n" => Ok(Self::FirstN),
            other => config_err(format!(
                "unknown strategy {other:?} (expected uniform or first-n)"
            )),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::FirstN => "first-n",
        })
    }
}

/// Where one target block comes from, in terms of source block indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BlockSource {
    Copy(usize),
    /// Element-wise mean of these source blocks.
    Mean(Vec<usize>),
    Fresh,
}

/// Block-level alignment of a depth-`m_pt` sequence onto depth `m_ft`.
///
/// Uniform replicates block `i / upN` when growing and averages the
/// contiguous run `st(i) .. st(i) + d(i)` when shrinking. First-N copies
/// the common prefix and leaves the rest fresh. An empty source yields
/// only fresh blocks.
pub fn plan_blocks(m_pt: usize, m_ft: usize, strategy: Strategy) -> Vec<BlockSource> {
    if m_pt == 0 {
        return vec![BlockSource::Fresh; m_ft];
    }
    match strategy {
        Strategy::FirstN => (0..m_ft)
            .map(|i| {
                if i < m_pt {
                    BlockSource::Copy(i)
                } else {
                    BlockSource::Fresh
                }
            })
            .collect(),
        Strategy::Uniform if m_pt == m_ft => (0..m_ft).map(BlockSource::Copy).collect(),
        Strategy::Uniform if m_pt < m_ft => {
            let up_n = m_ft.div_ceil(m_pt);
            (0..m_ft).map(|i| BlockSource::Copy(i / up_n)).collect()
        }
        Strategy::Uniform => {
            let dw_n = m_pt / m_ft;
            let r = m_pt % m_ft;
            (0..m_ft)
                .map(|i| {
                    let (st, d) = if i < r {
                        ((dw_n + 1) * i, dw_n + 1)
                    } else {
                        (dw_n * i + r, dw_n)
                    };
                    if d == 1 {
                        BlockSource::Copy(st)
                    } else {
                        BlockSource::Mean((st..st + d).collect())
                    }
                })
                .collect()
        }
    }
}

/// A target block expressed as a weighted sum of named source blocks.
#[derive(Clone, Debug, PartialEq)]
pub enum BlockOrigin {
    Fresh,
    /// `(source prefix, weight)`, weights summing to one.
    Mix(Vec<(String, f64)>),
}

impl BlockOrigin {
    fn mean(parts: &[BlockOrigin]) -> BlockOrigin {
        let mut acc: BTreeMap<String, f64> = BTreeMap::new();
        let mut order = Vec::new();
        let w = 1.0 / parts.len() as f64;
        for p in parts {
            match p {
                BlockOrigin::Fresh => return BlockOrigin::Fresh,
                BlockOrigin::Mix(items) => {
                    for (name, x) in items {
                        if !acc.contains_key(name) {
                            order.push(name.clone());
                        }
                        *acc.entry(name.clone()).or_insert(0.0) += w * x;
                    }
                }
            }
        }
        BlockOrigin::Mix(
            order
                .into_iter()
                .map(|n| {
                    let x = acc[&n];
                    (n, x)
                })
                .collect(),
        )
    }

    fn resolve<T: Clone>(
        plan: &[BlockSource],
        src: &[T],
        mean: impl Fn(&[T]) -> T,
        fresh: T,
    ) -> Vec<T> {
        plan.iter()
            .map(|s| match s {
                BlockSource::Copy(j) => src[*j].clone(),
                BlockSource::Mean(js) => {
                    mean(&js.iter().map(|&j| src[j].clone()).collect::<Vec<_>>())
                }
                BlockSource::Fresh => fresh.clone(),
            })
            .collect()
    }
}

/// g1: maps a processor given by its block prefixes onto `m_ft` blocks.
pub fn map_processor(src: &[String], m_ft: usize, strategy: Strategy) -> Vec<BlockOrigin> {
    let origins: Vec<BlockOrigin> = src
        .iter()
        .map(|p| BlockOrigin::Mix(vec![(p.clone(), 1.0)]))
        .collect();
    map_origins(&origins, m_ft, strategy)
}

fn map_origins(src: &[BlockOrigin], m_ft: usize, strategy: Strategy) -> Vec<BlockOrigin> {
    let plan = plan_blocks(src.len(), m_ft, strategy);
    BlockOrigin::resolve(&plan, src, BlockOrigin::mean, BlockOrigin::Fresh)
}

/// Down and up processors of one GUnet stage, as block prefixes or origins.
#[derive(Clone, Debug, PartialEq)]
pub struct StageBlocks<T> {
    pub down: Vec<T>,
    pub up: Vec<T>,
}

/// g2: maps stages first (Uniform replication / averaging or First-N), with
/// every source stage's processors first aligned to `m_gu_ft` blocks by g1.
pub fn map_gunet(
    src: &[StageBlocks<String>],
    l_ft: usize,
    m_gu_ft: usize,
    strategy: Strategy,
) -> Vec<StageBlocks<BlockOrigin>> {
    let aligned: Vec<StageBlocks<BlockOrigin>> = src
        .iter()
        .map(|s| StageBlocks {
            down: map_processor(&s.down, m_gu_ft, strategy),
            up: map_processor(&s.up, m_gu_ft, strategy),
        })
        .collect();
    let fresh = StageBlocks {
        down: vec![BlockOrigin::Fresh; m_gu_ft],
        up: vec![BlockOrigin::Fresh; m_gu_ft],
    };
    let mean = |stages: &[StageBlocks<BlockOrigin>]| {
        let blockwise = |pick: fn(&StageBlocks<BlockOrigin>) -> &Vec<BlockOrigin>| {
            (0..m_gu_ft)
                .map(|k| {
                    BlockOrigin::mean(
                        &stages
                            .iter()
                            .map(|s| pick(s)[k].clone())
                            .collect::<Vec<_>>(),
                    )
                })
                .collect()
        };
        StageBlocks {
            down: blockwise(|s| &s.down),
            up: blockwise(|s| &s.up),
        }
    };
    let plan = plan_blocks(src.len(), l_ft, strategy);
    BlockOrigin::resolve(&plan, &aligned, mean, fresh)
}
