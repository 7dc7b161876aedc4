//! Staircase bit encoding of in-box feature vectors.
//!
//! Each of the `d` dimensions of a box owns a block of `phi` bits. A value in
//! the lower corner strip `[a, a + delta]` encodes as `0^phi`, a value in the
//! upper strip `[b - delta, b]` as `1^phi`, and the middle span
//! `[a + delta, b - delta)` is cut into `phi - 1` equal half-open intervals;
//! the `tau`-th one encodes as `0^(phi - tau) 1^tau`. The corner rules are
//! tried first, so they own the shared endpoints.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::monitor::{CornerRegion, FeatureBox};

/// Fixed-length binary word. Position 0 is the leftmost character of the
/// textual form and corresponds to BDD variable 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitString(Vec<bool>);

impl BitString {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![false; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn hamming(&self, other: &BitString) -> usize {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    /// Splits into consecutive blocks of `phi` bits.
    pub fn blocks(&self, phi: usize) -> std::slice::Chunks<'_, bool> {
        self.0.chunks(phi)
    }

    /// Side of each block: `false` for `0^phi`, `true` for `1^phi`. Any proper
    /// staircase block is an error.
    pub fn corner_sides(&self, phi: usize) -> Result<Vec<bool>> {
        self.blocks(phi)
            .enumerate()
            .map(|(dim, block)| {
                if block.iter().all(|b| !b) {
                    Ok(false)
                } else if block.iter().all(|b| *b) {
                    Ok(true)
                } else {
                    Err(Error::NotACorner { dim })
                }
            })
            .collect()
    }

    /// Corner string with the given side per dimension.
    pub fn corner(sides: &[bool], phi: usize) -> Self {
        Self(sides.iter().flat_map(|s| std::iter::repeat_n(*s, phi)).collect())
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            f.write_str(if *b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .enumerate()
            .map(|(i, c)| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::parse(
                    "bit string",
                    1,
                    format!("invalid character {other:?} at position {}", i + 1),
                )),
            })
            .collect::<Result<Vec<_>>>()
            .map(BitString)
    }
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Staircase level of one dimension: 0 is the lower corner, `phi` the upper
/// corner, `1..phi` the middle intervals.
pub fn level(lower: f64, upper: f64, delta: f64, phi: usize, value: f64) -> Result<usize> {
    if !(value >= lower && value <= upper) {
        return Err(Error::OutOfBox { index: None });
    }
    if lower == upper {
        return Ok(0);
    }
    let span = upper - lower - 2.0 * delta;
    if !(span > 0.0) {
        return Err(Error::Config(format!(
            "buffer {delta} leaves no middle span in [{lower}, {upper}]"
        )));
    }
    if value <= lower + delta {
        return Ok(0);
    }
    if value >= upper - delta {
        return Ok(phi);
    }
    let parts = (phi - 1) as f64;
    for tau in 1..phi - 1 {
        let hi = lower + delta + tau as f64 * span / parts;
        if value < hi {
            return Ok(tau);
        }
    }
    // the last middle interval ends at upper - delta, owned by the upper corner
    Ok(phi - 1)
}

fn check_phi(phi: usize) -> Result<()> {
    if phi < 2 {
        return Err(Error::Config(format!("phi must be >= 2, got {phi}")));
    }
    Ok(())
}

fn check_box(bx: &FeatureBox, delta: &[f64]) -> Result<()> {
    if delta.len() != bx.dim() {
        return Err(Error::Shape {
            what: "buffer vector",
            expected: bx.dim(),
            got: delta.len(),
        });
    }
    Ok(())
}

/// `enc^phi`: maps an in-box feature vector to its `phi * d` bit string.
pub fn encode(bx: &FeatureBox, delta: &[f64], phi: usize, feat: &[f64]) -> Result<BitString> {
    check_phi(phi)?;
    check_box(bx, delta)?;
    if feat.len() != bx.dim() {
        return Err(Error::Shape {
            what: "feature vector",
            expected: bx.dim(),
            got: feat.len(),
        });
    }
    let mut bits = Vec::with_capacity(phi * feat.len());
    for j in 0..feat.len() {
        let tau = level(bx.lower[j], bx.upper[j], delta[j], phi, feat[j])?;
        bits.extend(std::iter::repeat_n(false, phi - tau));
        bits.extend(std::iter::repeat_n(true, tau));
    }
    Ok(BitString(bits))
}

fn check_corner_bits(bx: &FeatureBox, phi: usize, bits: &BitString) -> Result<Vec<bool>> {
    check_phi(phi)?;
    if bits.len() != phi * bx.dim() {
        return Err(Error::BitLength {
            expected: phi * bx.dim(),
            got: bits.len(),
        });
    }
    bits.corner_sides(phi)
}

/// The corner hyperrectangle named by a corner string.
pub fn corner_region(
    bx: &FeatureBox,
    delta: &[f64],
    phi: usize,
    bits: &BitString,
    box_index: usize,
) -> Result<CornerRegion> {
    check_box(bx, delta)?;
    let sides = check_corner_bits(bx, phi, bits)?;
    let mut lower = Vec::with_capacity(sides.len());
    let mut upper = Vec::with_capacity(sides.len());
    for (j, high) in sides.iter().enumerate() {
        if *high {
            lower.push(bx.upper[j] - delta[j]);
            upper.push(bx.upper[j]);
        } else {
            lower.push(bx.lower[j]);
            upper.push(bx.lower[j] + delta[j]);
        }
    }
    Ok(CornerRegion {
        box_index,
        lower,
        upper,
        bits: bits.clone(),
    })
}

/// Box vertex lying in the corner: `a_j` for zero blocks, `b_j` otherwise.
pub fn vertex_of(bx: &FeatureBox, phi: usize, bits: &BitString) -> Result<Vec<f64>> {
    let sides = check_corner_bits(bx, phi, bits)?;
    Ok(sides
        .iter()
        .enumerate()
        .map(|(j, high)| if *high { bx.upper[j] } else { bx.lower[j] })
        .collect())
}
