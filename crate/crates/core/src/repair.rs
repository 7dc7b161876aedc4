//! Local repair against unsupported corners.
//!
//! The modification dataset pairs every training sample's layer-`l` feature
//! with its label and adds `rho` uniform samples per corner, each labelled
//! with the uniform distribution. Only layers `l+1..=L` are retrained, so the
//! feature map seen by the monitor is unchanged.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoding::BitString;
use crate::error::{Error, Result};
use crate::monitor::CornerRegion;
use crate::neuralnet::{LabeledDataset, Network, TrainConfig, TrainReport};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Provenance {
    Original {
        index: usize,
    },
    Corner {
        box_index: usize,
        bits: BitString,
        sample: usize,
    },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Original { index } => write!(f, "original:{index}"),
            Provenance::Corner {
                box_index,
                bits,
                sample,
            } => write!(f, "corner:{box_index}:{bits}:{sample}"),
        }
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| t.parse::<usize>().map_err(|e| format!("bad provenance {s:?}: {e}"));
        match parts.as_slice() {
            ["original", i] => Ok(Provenance::Original { index: num(i)? }),
            ["corner", b, bits, i] => Ok(Provenance::Corner {
                box_index: num(b)?,
                bits: bits.parse().map_err(|e| format!("bad provenance {s:?}: {e}"))?,
                sample: num(i)?,
            }),
            _ => Err(format!("unrecognised provenance {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModifyEntry {
    pub feature: Vec<f64>,
    pub label: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModifyDataset {
    pub entries: Vec<ModifyEntry>,
}

impl ModifyDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn corner_entries(&self) -> impl Iterator<Item = &ModifyEntry> {
        self.entries
            .iter()
            .filter(|e| matches!(e.provenance, Provenance::Corner { .. }))
    }

    pub fn to_labeled(&self) -> Result<LabeledDataset> {
        LabeledDataset::new(
            self.entries.iter().map(|e| e.feature.clone()).collect(),
            self.entries.iter().map(|e| e.label.clone()).collect(),
        )
    }

    /// CSV with columns `f1..fd, y1..yc, provenance`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if let Some(first) = self.entries.first() {
            let mut header: Vec<String> = (1..=first.feature.len()).map(|i| format!("f{i}")).collect();
            header.extend((1..=first.label.len()).map(|i| format!("y{i}")));
            header.push("provenance".into());
            w.write_record(&header).map_err(csv_err)?;
        }
        for e in &self.entries {
            let mut rec: Vec<String> = e.feature.iter().map(f64::to_string).collect();
            rec.extend(e.label.iter().map(f64::to_string));
            rec.push(e.provenance.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, feature_dim: usize) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let mut entries = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::parse("modify dataset", row, e))?;
            if rec.len() < feature_dim + 2 {
                return Err(Error::parse("modify dataset", row, "too few columns"));
            }
            let nums = rec
                .iter()
                .take(rec.len() - 1)
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse("modify dataset", row, e))?;
            let provenance = rec[rec.len() - 1]
                .parse()
                .map_err(|e: String| Error::parse("modify dataset", row, e))?;
            entries.push(ModifyEntry {
                feature: nums[..feature_dim].to_vec(),
                label: nums[feature_dim..].to_vec(),
                provenance,
            });
        }
        Ok(Self { entries })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// `n` points drawn uniformly from the closed corner hyperrectangle.
pub fn sample_corner(region: &CornerRegion, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            region
                .lower
                .iter()
                .zip(&region.upper)
                .map(|(a, b)| {
                    let u: f64 = rng.gen();
                    (a + (b - a) * u).clamp(*a, *b)
                })
                .collect()
        })
        .collect()
}

pub fn uniform_label(classes: usize) -> Vec<f64> {
    vec![1.0 / classes as f64; classes]
}

pub fn build_modify_dataset(
    data: &LabeledDataset,
    net: &Network,
    l: usize,
    corners: &[CornerRegion],
    rho: usize,
    seed: u64,
) -> Result<ModifyDataset> {
    if rho == 0 {
        return Err(Error::Config("rho (samples per corner) must be positive".into()));
    }
    if l == 0 || l >= net.depth() {
        return Err(Error::LayerIndex {
            layer: l,
            max: net.depth() - 1,
        });
    }
    let width = net.width(l)?;
    let mut entries = Vec::with_capacity(data.len() + rho * corners.len());
    for (index, (x, y)) in data.inputs.iter().zip(&data.labels).enumerate() {
        entries.push(ModifyEntry {
            feature: net.feature_at(l, x)?,
            label: y.clone(),
            provenance: Provenance::Original { index },
        });
    }
    if corners.is_empty() {
        log::warn!("no corners supplied; modification dataset holds the original samples only");
    }
    let target = uniform_label(net.output_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for corner in corners {
        if corner.lower.len() != width {
            return Err(Error::Shape {
                what: "corner region",
                expected: width,
                got: corner.lower.len(),
            });
        }
        for (sample, p) in sample_corner(corner, rho, &mut rng).into_iter().enumerate() {
            entries.push(ModifyEntry {
                feature: p,
                label: target.clone(),
                provenance: Provenance::Corner {
                    box_index: corner.box_index,
                    bits: corner.bits.clone(),
                    sample,
                },
            });
        }
    }
    Ok(ModifyDataset { entries })
}

/// Retrains layers `l+1..=L` on the modification dataset; layers `1..=l` of
/// the result are copies of `net`'s. `cfg.frozen_prefix` is ignored.
pub fn repair(net: &Network, modify: &ModifyDataset, l: usize, cfg: &TrainConfig) -> Result<(Network, TrainReport)> {
    if modify.is_empty() {
        return Err(Error::EmptyData("modification dataset is empty"));
    }
    let data = modify.to_labeled()?;
    net.retrain_suffix(l, &data, cfg)
}
