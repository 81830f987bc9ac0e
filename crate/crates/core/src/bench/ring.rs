//! Two-dimensional ring fixture for the paired-network width: the buffer
//! lies on a noisy circle, queries cover a box around it.

use std::f64::consts::TAU;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::function_class::mlp::Mlp;
use crate::neural_width::{param_hash, train_width, Point, WidthTrainConfig, WidthTrainRow};
use crate::rng::{seeded, Rng};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RingConfig {
    pub radius: f64,
    pub noise: f64,
    pub buffer_points: usize,
    /// Half-width of the query box.
    pub query_extent: f64,
    /// Radius of the far measurement circle.
    pub far_radius: f64,
    pub measure_points: usize,
    pub hidden: Vec<usize>,
    pub train: WidthTrainConfig,
}

impl Default for RingConfig {
    fn default() -> Self {
        Self {
            radius: 1.0,
            noise: 0.05,
            buffer_points: 2000,
            query_extent: 3.0,
            far_radius: 2.5,
            measure_points: 100,
            hidden: vec![64, 64],
            train: WidthTrainConfig { outer_iters: 200, ..WidthTrainConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingResult {
    pub seed: u64,
    /// Mean width at points on the far circle.
    pub far_width: f64,
    /// Mean width near the ring's center.
    pub center_width: f64,
    /// Mean width at fresh ring points.
    pub buffer_width: f64,
    pub f_prime_hash_before: String,
    pub f_prime_hash_after: String,
}

impl RingResult {
    pub fn far_ratio(&self) -> f64 {
        self.far_width / self.buffer_width
    }

    pub fn center_ratio(&self) -> f64 {
        self.center_width / self.buffer_width
    }
}

fn ring_point(cfg: &RingConfig, rng: &mut Rng) -> Vec<f64> {
    let t: f64 = rng.gen_range(0.0..TAU);
    let r = cfg.radius + rng.gen_range(-cfg.noise..=cfg.noise);
    vec![r * t.cos(), r * t.sin()]
}

fn circle_point(radius: f64, rng: &mut Rng) -> Vec<f64> {
    let t: f64 = rng.gen_range(0.0..TAU);
    vec![radius * t.cos(), radius * t.sin()]
}

/// Train one pair on the fixture and measure widths.
pub fn run_ring(cfg: &RingConfig, seed: u64, on_iter: &mut dyn FnMut(&WidthTrainRow)) -> Result<RingResult> {
    let mut rng = seeded(seed);
    let buffer: Vec<Point> = (0..cfg.buffer_points).map(|_| (ring_point(cfg, &mut rng), 0)).collect();
    let e = cfg.query_extent;
    let queries: Vec<Point> = (0..cfg.train.query_set_size)
        .map(|_| (vec![rng.gen_range(-e..e), rng.gen_range(-e..e)], 0))
        .collect();
    let net = Mlp::with_hidden(2, &cfg.hidden, 1);
    // f' is a copy of the initial f, so hashing the initial draw of f gives
    // the reference hash
    let mut probe = rng.clone();
    let before = param_hash(&net.init(&mut probe));
    let pair = train_width(&net, &buffer, &queries, &cfg.train, &mut rng, on_iter)?;
    let after = pair.f_prime_hash();

    let n = cfg.measure_points;
    let mean = |pts: &[Vec<f64>]| pts.iter().map(|x| pair.width(x, 0)).sum::<f64>() / pts.len() as f64;
    let far: Vec<Vec<f64>> = (0..n).map(|_| circle_point(cfg.far_radius, &mut rng)).collect();
    let c = 0.2 * cfg.radius;
    let center: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-c..c), rng.gen_range(-c..c)]).collect();
    let near: Vec<Vec<f64>> = (0..n).map(|_| ring_point(cfg, &mut rng)).collect();
    Ok(RingResult {
        seed,
        far_width: mean(&far),
        center_width: mean(&center),
        buffer_width: mean(&near),
        f_prime_hash_before: before,
        f_prime_hash_after: after,
    })
}
