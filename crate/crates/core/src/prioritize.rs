//! Symbolic search for unsupported corners that are far (in Hamming distance)
//! from every training encoding, one BDD manager per box, plus the lazy
//! cross-box rejection of corner proposals.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bdd::{BddManager, BddRef};
use crate::encoding::BitString;
use crate::error::{Error, Result};
use crate::monitor::{BoxedMonitor, CornerRegion, MonitorBox};

/// Exact per-corner Hamming distances are only computed below this many
/// distinct training encodings.
pub const MIN_HAMMING_SCAN_LIMIT: usize = 100_000;

/// Default number of corners extracted per box.
pub const DEFAULT_CAP: usize = 1000;

/// `S_train`: the union of the singleton sets of every feature's encoding.
pub fn encode_training_set(features: &[Vec<f64>], bx: &MonitorBox, phi: usize, mgr: &mut BddManager) -> Result<BddRef> {
    let strings = encode_all(features, bx, phi)?;
    union_of(&strings, mgr)
}

fn encode_all(features: &[Vec<f64>], bx: &MonitorBox, phi: usize) -> Result<BTreeSet<BitString>> {
    features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            bx.encode(phi, f).map_err(|e| match e {
                Error::OutOfBox { .. } => Error::OutOfBox { index: Some(i) },
                other => other,
            })
        })
        .collect()
}

fn union_of(strings: &BTreeSet<BitString>, mgr: &mut BddManager) -> Result<BddRef> {
    let mut acc = mgr.mk_false();
    for s in strings {
        let single = mgr.cube(s)?;
        acc = mgr.or(acc, single)?;
    }
    Ok(acc)
}

/// `{0^phi, 1^phi}^d`, built block by block.
pub fn all_corners_set(phi: usize, dims: usize, mgr: &mut BddManager) -> Result<BddRef> {
    if phi * dims != mgr.variable_count() {
        return Err(Error::Config(format!(
            "manager has {} variables, corners need {phi} x {dims}",
            mgr.variable_count()
        )));
    }
    let mut all = mgr.mk_true();
    for j in 0..dims {
        let mut zeros = mgr.mk_true();
        let mut ones = mgr.mk_true();
        for m in 1..=phi {
            let v = mgr.mk_var(phi * j + m)?;
            let nv = mgr.not(v)?;
            zeros = mgr.and(zeros, nv)?;
            ones = mgr.and(ones, v)?;
        }
        let block = mgr.or(zeros, ones)?;
        all = mgr.and(all, block)?;
    }
    Ok(all)
}

/// `S^{<=delta_h}`: every string within Hamming distance `delta_h` of a
/// member of `s`. Each round snapshots the current set and unions in its
/// quantification over every single variable.
pub fn hamming_expand(s: BddRef, delta_h: usize, mgr: &mut BddManager) -> Result<BddRef> {
    let mut dilated = s;
    for _ in 0..delta_h {
        let local = dilated;
        for m in 1..=mgr.variable_count() {
            let q = mgr.exists(local, m)?;
            dilated = mgr.or(dilated, q)?;
        }
    }
    Ok(dilated)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrioritizationStats {
    pub training_points: usize,
    pub distinct_encodings: usize,
    /// Decimal strings; counts can exceed 64 bits.
    pub unsupported_count: String,
    pub result_count: String,
    pub result_nodes: usize,
    pub dilated_nodes: usize,
    pub manager_nodes: usize,
    #[serde(skip)]
    pub elapsed: Duration,
}

/// A prioritized corner proposal.
#[derive(Clone, Debug, PartialEq)]
pub struct CornerReport {
    pub box_index: usize,
    pub bits: BitString,
    pub region: CornerRegion,
    pub vertex: Vec<f64>,
    /// Exact distance to the nearest training encoding; `None` when the scan
    /// was skipped (the distance is then only known to exceed `delta_h`) or
    /// the box has no training encodings.
    pub min_hamming: Option<usize>,
    /// Index of another box whose shrunken interior contains the vertex.
    pub discarded_by: Option<usize>,
}

/// One JSON line of a corner report file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerLine {
    #[serde(rename = "box")]
    pub box_index: usize,
    pub bits: BitString,
    pub vertex: Vec<f64>,
    pub region_lower: Vec<f64>,
    pub region_upper: Vec<f64>,
    pub min_hamming: Option<usize>,
    pub discarded_by: Option<usize>,
}

impl From<&CornerReport> for CornerLine {
    fn from(r: &CornerReport) -> Self {
        Self {
            box_index: r.box_index,
            bits: r.bits.clone(),
            vertex: r.vertex.clone(),
            region_lower: r.region.lower.clone(),
            region_upper: r.region.upper.clone(),
            min_hamming: r.min_hamming,
            discarded_by: r.discarded_by,
        }
    }
}

impl From<CornerLine> for CornerReport {
    fn from(l: CornerLine) -> Self {
        Self {
            box_index: l.box_index,
            region: CornerRegion {
                box_index: l.box_index,
                lower: l.region_lower,
                upper: l.region_upper,
                bits: l.bits.clone(),
            },
            bits: l.bits,
            vertex: l.vertex,
            min_hamming: l.min_hamming,
            discarded_by: l.discarded_by,
        }
    }
}

#[derive(Debug)]
pub struct PrioritizationResult {
    pub box_index: usize,
    /// Owns every handle below.
    pub manager: BddManager,
    pub train_set: BddRef,
    pub all_corners: BddRef,
    pub unsupported: BddRef,
    pub dilated: BddRef,
    /// `unsupported \ dilated`.
    pub result_set: BddRef,
    pub extracted: Vec<CornerReport>,
    pub delta_used: usize,
    pub stats: PrioritizationStats,
}

/// Runs the full symbolic pipeline on one box. Every feature must lie in the
/// box. Degenerate dimensions (zero extent) only admit their lower-corner
/// block, since both corner forms describe the same point there.
pub fn prioritize_box(
    features: &[Vec<f64>],
    bx: &MonitorBox,
    box_index: usize,
    phi: usize,
    delta_h: usize,
    cap_m: usize,
) -> Result<PrioritizationResult> {
    let start = Instant::now();
    let dims = bx.dim();
    let mut mgr = BddManager::new(phi * dims);
    let strings = encode_all(features, bx, phi)?;
    let train_set = union_of(&strings, &mut mgr)?;

    let mut all_corners = all_corners_set(phi, dims, &mut mgr)?;
    for j in bx.degenerate_dims() {
        for m in 1..=phi {
            let v = mgr.mk_var(phi * j + m)?;
            let nv = mgr.not(v)?;
            all_corners = mgr.and(all_corners, nv)?;
        }
    }
    let unsupported = mgr.setminus(all_corners, train_set)?;
    let dilated = hamming_expand(train_set, delta_h, &mut mgr)?;
    let result_set = mgr.setminus(unsupported, dilated)?;

    let scan: Option<Vec<&BitString>> = (strings.len() <= MIN_HAMMING_SCAN_LIMIT).then(|| strings.iter().collect());
    let extracted = mgr
        .enumerate_sat(result_set, cap_m)?
        .into_iter()
        .map(|bits| {
            let region = bx.corner_region(phi, &bits, box_index)?;
            let vertex = bx.vertex_of(phi, &bits)?;
            let min_hamming = scan
                .as_ref()
                .and_then(|list| list.iter().map(|t| t.hamming(&bits)).min());
            Ok(CornerReport {
                box_index,
                bits,
                region,
                vertex,
                min_hamming,
                discarded_by: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let stats = PrioritizationStats {
        training_points: features.len(),
        distinct_encodings: strings.len(),
        unsupported_count: mgr.sat_count(unsupported)?.to_string(),
        result_count: mgr.sat_count(result_set)?.to_string(),
        result_nodes: mgr.size(result_set)?,
        dilated_nodes: mgr.size(dilated)?,
        manager_nodes: mgr.node_count(),
        elapsed: start.elapsed(),
    };
    Ok(PrioritizationResult {
        box_index,
        manager: mgr,
        train_set,
        all_corners,
        unsupported,
        dilated,
        result_set,
        extracted,
        delta_used: delta_h,
        stats,
    })
}

impl PrioritizationResult {
    pub fn result_count(&self) -> BigUint {
        self.manager
            .sat_count(self.result_set)
            .expect("result handles belong to the owned manager")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossBox {
    Keep,
    Discard { covering: usize },
}

/// Discards a corner proposal of box `box_index` when its vertex lies strictly
/// inside the buffer-shrunken interior `(a'_j + delta'_j, b'_j - delta'_j)` of
/// some other box in every dimension. The other box's own buffer is used.
pub fn cross_box_filter(mon: &BoxedMonitor, box_index: usize, bits: &BitString) -> Result<CrossBox> {
    let vertex = mon.get(box_index)?.vertex_of(mon.phi, bits)?;
    for (i, other) in mon.boxes.iter().enumerate() {
        if i == box_index {
            continue;
        }
        let inside = vertex
            .iter()
            .enumerate()
            .all(|(j, v)| other.lower()[j] + other.delta[j] < *v && *v < other.upper()[j] - other.delta[j]);
        if inside {
            return Ok(CrossBox::Discard { covering: i });
        }
    }
    Ok(CrossBox::Keep)
}

/// Prioritizes every box of a monitor in parallel (one manager per box) and
/// marks proposals rejected by the cross-box filter. Each box sees the
/// features it contains. Results are in box order.
pub fn prioritize_monitor(
    mon: &BoxedMonitor,
    features: &[Vec<f64>],
    delta_h: usize,
    cap_m: usize,
) -> Result<Vec<PrioritizationResult>> {
    for f in features {
        if f.len() != mon.dim() {
            return Err(Error::Shape {
                what: "feature vector",
                expected: mon.dim(),
                got: f.len(),
            });
        }
    }
    let mut results = mon
        .boxes
        .par_iter()
        .enumerate()
        .map(|(i, bx)| {
            let inside: Vec<Vec<f64>> = features.iter().filter(|f| bx.contains(f)).cloned().collect();
            prioritize_box(&inside, bx, i, mon.phi, delta_h, cap_m)
        })
        .collect::<Result<Vec<_>>>()?;
    for res in &mut results {
        for report in &mut res.extracted {
            if let CrossBox::Discard { covering } = cross_box_filter(mon, report.box_index, &report.bits)? {
                report.discarded_by = Some(covering);
            }
        }
    }
    Ok(results)
}
