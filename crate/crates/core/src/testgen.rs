//! Gradient-based test generation towards an unsupported corner.
//!
//! Minimises `-lambda * H(y, f^L(x)) + ||f^l(x) - p_c||_2` over the input
//! `x` with Adam, where `p_c` is the center of the corner region. The result
//! is the misclassified iterate closest to `p_c` in feature space, or the
//! final iterate when no iterate is misclassified.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::BitString;
use crate::error::{Error, Result};
use crate::monitor::{BoxedMonitor, CornerRegion};
use crate::neuralnet::{argmax, LabeledDataset, LossSpec, Network};
use crate::optim::{Adam, AdamParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestGenConfig {
    pub lambda: f64,
    pub steps: usize,
    pub learning_rate: f64,
    /// Per-dimension `[lo, hi]` box the input is projected onto after each step.
    pub input_clamp: Option<Vec<(f64, f64)>>,
    pub seed: u64,
    /// Half-width of the uniform noise added to the starting input.
    pub init_noise: f64,
    pub adam: AdamParams,
}

impl Default for TestGenConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            steps: 500,
            learning_rate: 0.05,
            input_clamp: None,
            seed: 0,
            init_noise: 0.0,
            adam: AdamParams::default(),
        }
    }
}

impl TestGenConfig {
    fn check(&self, input_dim: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.init_noise.is_finite() && self.init_noise >= 0.0) {
            return Err(Error::Config(format!(
                "init noise must be non-negative, got {}",
                self.init_noise
            )));
        }
        if let Some(clamp) = &self.input_clamp {
            if clamp.len() != input_dim {
                return Err(Error::Shape {
                    what: "input clamp",
                    expected: input_dim,
                    got: clamp.len(),
                });
            }
            if let Some((lo, hi)) = clamp.iter().find(|(lo, hi)| !(lo <= hi)) {
                return Err(Error::Config(format!("empty clamp interval [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    fn project(&self, x: &mut [f64]) {
        if let Some(clamp) = &self.input_clamp {
            for (v, (lo, hi)) in x.iter_mut().zip(clamp) {
                *v = v.clamp(*lo, *hi);
            }
        }
    }
}

/// The objective at `x` for a one-hot (or soft) label `y`.
pub fn corner_loss(net: &Network, l: usize, x: &[f64], y: &[f64], p_c: &[f64], lambda: f64) -> Result<f64> {
    net.loss(
        &LossSpec::Corner {
            label: y.to_vec(),
            point: p_c.to_vec(),
            layer: l,
            lambda,
        },
        x,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub feature_corner_distance: f64,
    pub predicted: usize,
    pub in_corner: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestGenReport {
    pub box_index: usize,
    pub corner: BitString,
    pub x_original: Vec<f64>,
    pub x_perturbed: Vec<f64>,
    /// Iterate index of `x_perturbed`; 0 is the (noised) start.
    pub chosen_step: usize,
    pub loss_trace: Vec<f64>,
    pub trace: Vec<StepRecord>,
    /// `||f^l(x_original) - p_c||_2`.
    pub start_distance: f64,
    pub feature_corner_distance: f64,
    pub input_distance: f64,
    pub class_true: usize,
    pub class_before: usize,
    pub class_after: usize,
    pub misclassified: bool,
    pub in_corner: bool,
    pub monitor_accepts: bool,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Runs the optimisation from `x0` with true class `class_true` towards
/// `corner`, which must be a corner of a box of `mon`.
pub fn generate_test_case(
    net: &Network,
    mon: &BoxedMonitor,
    corner: &CornerRegion,
    x0: &[f64],
    class_true: usize,
    cfg: &TestGenConfig,
) -> Result<TestGenReport> {
    let l = mon.layer;
    if l == 0 || l >= net.depth() {
        return Err(Error::LayerIndex {
            layer: l,
            max: net.depth() - 1,
        });
    }
    if x0.len() != net.input_dim() {
        return Err(Error::Shape {
            what: "test input",
            expected: net.input_dim(),
            got: x0.len(),
        });
    }
    if class_true >= net.output_dim() {
        return Err(Error::Config(format!(
            "class {class_true} out of range for {} outputs",
            net.output_dim()
        )));
    }
    cfg.check(net.input_dim())?;
    let expected = mon.corner_region(corner.box_index, &corner.bits)?;
    if expected.lower != corner.lower || expected.upper != corner.upper {
        return Err(Error::Config(format!(
            "corner {} does not match box {} of the monitor",
            corner.bits, corner.box_index
        )));
    }

    let p_c = corner.center();
    let mut label = vec![0.0; net.output_dim()];
    label[class_true] = 1.0;
    let spec = LossSpec::Corner {
        label,
        point: p_c.clone(),
        layer: l,
        lambda: cfg.lambda,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x: Vec<f64> = x0
        .iter()
        .map(|v| {
            if cfg.init_noise > 0.0 {
                v + rng.gen_range(-cfg.init_noise..=cfg.init_noise)
            } else {
                *v
            }
        })
        .collect();
    cfg.project(&mut x);

    let record = |step: usize, x: &[f64], loss: f64| -> Result<StepRecord> {
        let feat = net.feature_at(l, x)?;
        Ok(StepRecord {
            step,
            loss,
            feature_corner_distance: distance(&feat, &p_c),
            predicted: argmax(&net.forward(x)?),
            in_corner: corner.contains(&feat),
        })
    };

    let mut adam = Adam::new(x.len(), cfg.adam);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut iterates = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let (loss, grad) = net.loss_with_gradient(&spec, &x)?;
        trace.push(record(step, &x, loss)?);
        iterates.push(x.clone());
        if step == cfg.steps {
            break;
        }
        adam.step(&mut x, &grad, cfg.learning_rate);
        cfg.project(&mut x);
    }

    let chosen = trace
        .iter()
        .filter(|r| r.predicted != class_true)
        .min_by(|a, b| a.feature_corner_distance.total_cmp(&b.feature_corner_distance))
        .map_or(cfg.steps, |r| r.step);
    let best = &trace[chosen];
    let x_perturbed = iterates.swap_remove(chosen);
    let feat = net.feature_at(l, &x_perturbed)?;

    Ok(TestGenReport {
        box_index: corner.box_index,
        corner: corner.bits.clone(),
        x_original: x0.to_vec(),
        input_distance: distance(&x_perturbed, x0),
        start_distance: distance(&net.feature_at(l, x0)?, &p_c),
        feature_corner_distance: best.feature_corner_distance,
        class_true,
        class_before: net.predict(x0)?,
        class_after: best.predicted,
        misclassified: best.predicted != class_true,
        in_corner: corner.contains(&feat),
        monitor_accepts: mon.contains(&feat)?.accepted(),
        chosen_step: chosen,
        loss_trace: trace.iter().map(|r| r.loss).collect(),
        x_perturbed,
        trace,
    })
}

/// `runs` independent attempts; attempt `r` uses seed `cfg.seed + r` both to
/// pick its starting sample uniformly from `data` and to noise it.
pub fn run_attempts(
    net: &Network,
    mon: &BoxedMonitor,
    corner: &CornerRegion,
    data: &LabeledDataset,
    runs: usize,
    cfg: &TestGenConfig,
) -> Result<Vec<TestGenReport>> {
    if data.is_empty() {
        return Err(Error::EmptyData("no starting inputs for test generation"));
    }
    (0..runs as u64)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.seed.wrapping_add(r);
            let i = ChaCha8Rng::seed_from_u64(seed).gen_range(0..data.len());
            let attempt = TestGenConfig { seed, ..cfg.clone() };
            generate_test_case(net, mon, corner, &data.inputs[i], argmax(&data.labels[i]), &attempt)
        })
        .collect()
}
