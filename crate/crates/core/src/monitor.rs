//! k-boxed abstraction monitors over one layer's feature vectors.
//!
//! A monitor accepts a feature vector when some box contains it (closed
//! intervals). Each box carries its own buffer vector `delta`, which defines
//! the box's corner strips: per dimension either `[a_j, a_j + delta_j]` or
//! `[b_j - delta_j, b_j]`, giving `2^d` corners per box.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{self, BitString};
use crate::error::{Error, Result};
use crate::kmeans;

/// Exhaustive corner enumeration is refused above this many dimensions.
pub const MAX_ENUMERATION_DIMS: usize = 20;

pub const KMEANS_MAX_ITER: usize = 100;

/// Closed hyperrectangle `[lower_1, upper_1] x ... x [lower_d, upper_d]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl FeatureBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let bx = Self { lower, upper };
        bx.check()?;
        Ok(bx)
    }

    fn check(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::Shape {
                what: "box upper bounds",
                expected: self.lower.len(),
                got: self.upper.len(),
            });
        }
        for (j, (a, b)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(a <= b) {
                return Err(Error::Config(format!("box dimension {j}: lower {a} > upper {b}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.dim()
            && v.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (a, b))| *a <= *x && *x <= *b)
    }

    /// Per-dimension min/max of a non-empty point set.
    pub fn bounding(points: &[&[f64]]) -> Self {
        let dim = points[0].len();
        let mut lower = vec![f64::INFINITY; dim];
        let mut upper = vec![f64::NEG_INFINITY; dim];
        for p in points {
            for j in 0..dim {
                lower[j] = lower[j].min(p[j]);
                upper[j] = upper[j].max(p[j]);
            }
        }
        Self { lower, upper }
    }
}

/// One monitor box together with its buffer vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorBox {
    #[serde(flatten)]
    pub bounds: FeatureBox,
    pub delta: Vec<f64>,
}

impl MonitorBox {
    pub fn new(bounds: FeatureBox, delta: Vec<f64>) -> Result<Self> {
        let mb = Self { bounds, delta };
        mb.check()?;
        Ok(mb)
    }

    /// Buffer `delta_j = fraction * (b_j - a_j)`.
    pub fn with_fraction(bounds: FeatureBox, fraction: f64) -> Result<Self> {
        let delta = bounds
            .lower
            .iter()
            .zip(&bounds.upper)
            .map(|(a, b)| fraction * (b - a))
            .collect();
        Self::new(bounds, delta)
    }

    fn check(&self) -> Result<()> {
        self.bounds.check()?;
        if self.delta.len() != self.bounds.dim() {
            return Err(Error::Shape {
                what: "buffer vector",
                expected: self.bounds.dim(),
                got: self.delta.len(),
            });
        }
        for j in 0..self.dim() {
            let (a, b, d) = (self.bounds.lower[j], self.bounds.upper[j], self.delta[j]);
            let ok = if a == b { d == 0.0 } else { d >= 0.0 && 2.0 * d < b - a };
            if !ok {
                return Err(Error::Config(format!(
                    "buffer {d} invalid for dimension {j} with extent [{a}, {b}]"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn lower(&self) -> &[f64] {
        &self.bounds.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.bounds.upper
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        self.bounds.contains(v)
    }

    /// Dimensions with zero extent.
    pub fn degenerate_dims(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&j| self.bounds.lower[j] == self.bounds.upper[j])
            .collect()
    }

    pub fn encode(&self, phi: usize, feat: &[f64]) -> Result<BitString> {
        encoding::encode(&self.bounds, &self.delta, phi, feat)
    }

    pub fn corner_region(&self, phi: usize, bits: &BitString, box_index: usize) -> Result<CornerRegion> {
        encoding::corner_region(&self.bounds, &self.delta, phi, bits, box_index)
    }

    pub fn vertex_of(&self, phi: usize, bits: &BitString) -> Result<Vec<f64>> {
        encoding::vertex_of(&self.bounds, phi, bits)
    }
}

/// A corner sub-box of a monitor box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerRegion {
    pub box_index: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub bits: BitString,
}

impl CornerRegion {
    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.lower.len()
            && v.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (a, b))| *a <= *x && *x <= *b)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| a + 0.5 * (b - a))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// Accepted by the lowest-indexed box containing the vector.
    Accept {
        box_index: usize,
    },
    Reject,
}

impl Verdict {
    pub fn accepted(&self) -> bool {
        matches!(self, Verdict::Accept { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Support {
    /// Some feature vector (first by index) lies in the corner.
    Supported {
        witness: usize,
    },
    Unsupported,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxedMonitor {
    /// Monitored layer `l` (1-based).
    pub layer: usize,
    pub phi: usize,
    pub delta_fraction: f64,
    pub boxes: Vec<MonitorBox>,
}

impl BoxedMonitor {
    pub fn new(layer: usize, phi: usize, delta_fraction: f64, boxes: Vec<MonitorBox>) -> Result<Self> {
        let mon = Self {
            layer,
            phi,
            delta_fraction,
            boxes,
        };
        mon.check()?;
        Ok(mon)
    }

    /// Structural checks applied on construction and after deserialization.
    pub fn check(&self) -> Result<()> {
        if self.boxes.is_empty() {
            return Err(Error::Construction("monitor has no boxes".into()));
        }
        if self.phi < 2 {
            return Err(Error::Config(format!("phi must be >= 2, got {}", self.phi)));
        }
        if self.layer == 0 {
            return Err(Error::Config("monitored layer index is 1-based".into()));
        }
        let dim = self.boxes[0].dim();
        if dim == 0 {
            return Err(Error::Construction("boxes must have at least one dimension".into()));
        }
        for b in &self.boxes {
            if b.dim() != dim {
                return Err(Error::Shape {
                    what: "box dimension",
                    expected: dim,
                    got: b.dim(),
                });
            }
            b.check()?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.boxes[0].dim()
    }

    pub fn k(&self) -> usize {
        self.boxes.len()
    }

    pub fn get(&self, box_index: usize) -> Result<&MonitorBox> {
        self.boxes.get(box_index).ok_or(Error::BoxIndex {
            index: box_index,
            count: self.boxes.len(),
        })
    }

    pub fn contains(&self, feat: &[f64]) -> Result<Verdict> {
        if feat.len() != self.dim() {
            return Err(Error::Shape {
                what: "feature vector",
                expected: self.dim(),
                got: feat.len(),
            });
        }
        Ok(self
            .boxes
            .iter()
            .position(|b| b.contains(feat))
            .map_or(Verdict::Reject, |box_index| Verdict::Accept { box_index }))
    }

    /// All `2^d` corners of one box, in lexicographic order of their strings.
    pub fn corners(&self, box_index: usize) -> Result<Vec<CornerRegion>> {
        let bx = self.get(box_index)?;
        let d = self.dim();
        if d > MAX_ENUMERATION_DIMS {
            return Err(Error::EnumerationCap {
                dims: d,
                cap: MAX_ENUMERATION_DIMS,
            });
        }
        (0..1u64 << d)
            .map(|code| {
                let sides: Vec<bool> = (0..d).map(|j| (code >> (d - 1 - j)) & 1 == 1).collect();
                bx.corner_region(self.phi, &BitString::corner(&sides, self.phi), box_index)
            })
            .collect()
    }

    pub fn corner_region(&self, box_index: usize, bits: &BitString) -> Result<CornerRegion> {
        self.get(box_index)?.corner_region(self.phi, bits, box_index)
    }

    pub fn classify_corner(&self, corner: &CornerRegion, features: &[Vec<f64>]) -> Result<Support> {
        self.get(corner.box_index)?;
        Ok(features
            .iter()
            .position(|f| corner.contains(f))
            .map_or(Support::Unsupported, |witness| Support::Supported { witness }))
    }

    pub fn validate(&self, features: &[Vec<f64>]) -> ValidationReport {
        validate_monitor(self, features)
    }
}

/// Builds a monitor: seeded k-means into `k` clusters, one min/max bounding
/// box per cluster, `delta_j = delta_fraction * (b_j - a_j)` per box. Boxes
/// are ordered lexicographically by their lower bounds.
pub fn build_monitor(
    features: &[Vec<f64>],
    k: usize,
    layer: usize,
    delta_fraction: f64,
    phi: usize,
    seed: u64,
) -> Result<BoxedMonitor> {
    if features.is_empty() {
        return Err(Error::EmptyData("no feature vectors to build a monitor from"));
    }
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    if !(0.0..0.5).contains(&delta_fraction) {
        return Err(Error::Config(format!(
            "delta_fraction must lie in [0, 0.5), got {delta_fraction}"
        )));
    }
    let dim = features[0].len();
    if dim == 0 {
        return Err(Error::Construction("feature vectors are empty".into()));
    }
    for f in features {
        if f.len() != dim {
            return Err(Error::Shape {
                what: "feature vector",
                expected: dim,
                got: f.len(),
            });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Construction("feature vectors must be finite".into()));
        }
    }
    let distinct: HashSet<Vec<u64>> = features
        .iter()
        .map(|f| f.iter().map(|v| (v + 0.0).to_bits()).collect())
        .collect();
    if k > distinct.len() {
        return Err(Error::Construction(format!(
            "k = {k} exceeds the {} distinct feature vectors",
            distinct.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assign = if k == 1 {
        vec![0; features.len()]
    } else {
        kmeans::cluster(features, k, KMEANS_MAX_ITER, &mut rng)
    };
    let mut boxes = (0..k)
        .map(|c| {
            let members: Vec<&[f64]> = features
                .iter()
                .zip(&assign)
                .filter(|(_, a)| **a == c)
                .map(|(f, _)| f.as_slice())
                .collect();
            MonitorBox::with_fraction(FeatureBox::bounding(&members), delta_fraction)
        })
        .collect::<Result<Vec<_>>>()?;
    boxes.sort_by(|x, y| {
        x.bounds
            .lower
            .partial_cmp(&y.bounds.lower)
            .unwrap()
            .then(x.bounds.upper.partial_cmp(&y.bounds.upper).unwrap())
    });
    BoxedMonitor::new(layer, phi, delta_fraction, boxes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Lower,
    Upper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Counterexample {
    /// A malformed box, optionally pinned to one dimension.
    Box { box_index: usize, dim: Option<usize> },
    /// A feature vector contained in no box.
    Feature { index: usize },
    /// No feature lies within `delta_j` of this bound.
    Loose { box_index: usize, dim: usize, bound: Bound },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub passed: bool,
    pub counterexample: Option<Counterexample>,
}

impl ConditionResult {
    fn from(counterexample: Option<Counterexample>) -> Self {
        Self {
            passed: counterexample.is_none(),
            counterexample,
        }
    }
}

/// Outcome of the three structural monitor conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// (1) every box is a well-formed `d`-dimensional box.
    pub well_formed: ConditionResult,
    /// (2) every feature vector lies in some box.
    pub coverage: ConditionResult,
    /// (3) every bound of every box has a feature within `delta_j` of it.
    pub tightness: ConditionResult,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.well_formed.passed && self.coverage.passed && self.tightness.passed
    }
}

pub fn validate_monitor(mon: &BoxedMonitor, features: &[Vec<f64>]) -> ValidationReport {
    let dim = mon.boxes.first().map_or(0, MonitorBox::dim);
    let well_formed = mon.boxes.iter().enumerate().find_map(|(i, b)| {
        if b.dim() != dim || b.bounds.upper.len() != dim || b.delta.len() != dim {
            return Some(Counterexample::Box {
                box_index: i,
                dim: None,
            });
        }
        (0..dim)
            .find(|&j| !(b.bounds.lower[j] <= b.bounds.upper[j]) || !(b.delta[j] >= 0.0))
            .map(|j| Counterexample::Box {
                box_index: i,
                dim: Some(j),
            })
    });
    let well_formed = if mon.boxes.is_empty() {
        Some(Counterexample::Box {
            box_index: 0,
            dim: None,
        })
    } else {
        well_formed
    };
    let coverage = features
        .iter()
        .position(|f| !mon.boxes.iter().any(|b| b.contains(f)))
        .map(|index| Counterexample::Feature { index });
    let tightness = if well_formed.is_some() {
        None
    } else {
        loose_bound(mon, features)
    };
    ValidationReport {
        well_formed: ConditionResult::from(well_formed),
        coverage: ConditionResult::from(coverage),
        tightness: ConditionResult::from(tightness),
    }
}

fn loose_bound(mon: &BoxedMonitor, features: &[Vec<f64>]) -> Option<Counterexample> {
    for (i, b) in mon.boxes.iter().enumerate() {
        for j in 0..b.dim() {
            let (lo, hi, d) = (b.bounds.lower[j], b.bounds.upper[j], b.delta[j]);
            let near = |target_lo: f64, target_hi: f64| {
                features
                    .iter()
                    .any(|f| f.len() > j && target_lo <= f[j] && f[j] <= target_hi)
            };
            if !near(lo, lo + d) {
                return Some(Counterexample::Loose {
                    box_index: i,
                    dim: j,
                    bound: Bound::Lower,
                });
            }
            if !near(hi - d, hi) {
                return Some(Counterexample::Loose {
                    box_index: i,
                    dim: j,
                    bound: Bound::Upper,
                });
            }
        }
    }
    None
}
