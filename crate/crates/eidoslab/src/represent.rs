//! Representation analysis: layer-wise linear-discriminant-ratio probing
//! and latent steering via median-difference directions with
//! energy-proportional injection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{znorm, NORM_EPS};
use crate::eval::{forecast, forecast_with_hook, EvalError, ForecastResult};
use crate::model::{Injection, Model, ModelError};
use crate::threads;

/// Stability term of the discriminant ratio.
pub const LDR_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RepresentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("degenerate direction: class medians coincide")]
    DegenerateDirection,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Paired probe classes for linear separability analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// Downward versus upward linear slopes.
    Trend,
    /// White noise versus sine waves.
    Periodicity,
}

impl ProbeKind {
    pub fn parse(s: &str) -> Result<Self, RepresentError> {
        match s {
            "trend" => Ok(Self::Trend),
            "periodicity" => Ok(Self::Periodicity),
            other => Err(RepresentError::Config(format!(
                "unknown probe kind '{other}'"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Trend => "trend",
            Self::Periodicity => "periodicity",
        }
    }
}

/// Steering class pairs: trend uses zero slopes versus ramps, periodicity
/// uses white noise versus sine waves.
pub type SteerKind = ProbeKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Pairs per class.
    pub count: usize,
    pub length: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            count: 1000,
            length: 512,
            noise_sigma: 0.1,
            seed: 7,
        }
    }
}

/// Balanced paired classes of generated series.
#[derive(Debug, Clone)]
pub struct ProbeDataset {
    pub class0: Vec<Vec<f64>>,
    pub class1: Vec<Vec<f64>>,
}

fn noisy_series(
    base: impl Fn(usize) -> f64,
    length: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let dist = Normal::new(0.0, sigma.max(1e-300)).expect("valid sigma");
    (0..length)
        .map(|t| base(t) + if sigma > 0.0 { dist.sample(rng) } else { 0.0 })
        .collect()
}

fn slope_series(slope: f64, length: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    noisy_series(
        |t| slope * t as f64 / (length - 1) as f64,
        length,
        sigma,
        rng,
    )
}

fn sine_series(freq: f64, length: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    noisy_series(
        |t| (std::f64::consts::TAU * freq * t as f64 / length as f64).sin(),
        length,
        sigma,
        rng,
    )
}

fn white_series(length: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dist = Normal::new(0.0, 1.0).expect("unit normal");
    (0..length).map(|_| dist.sample(rng)).collect()
}

/// Probe pairs: downward vs upward slopes with coefficients in (0.5, 2.0),
/// or sine waves (frequencies 1..5) vs white noise.
pub fn build_probe_dataset(kind: ProbeKind, cfg: &ProbeConfig) -> ProbeDataset {
    build_classes(kind, cfg, false)
}

/// Steering pairs: zero slopes vs upward ramps, or white noise vs sines.
pub fn build_steer_dataset(kind: SteerKind, cfg: &ProbeConfig) -> ProbeDataset {
    build_classes(kind, cfg, true)
}

fn build_classes(kind: ProbeKind, cfg: &ProbeConfig, steering: bool) -> ProbeDataset {
    let mut class0 = Vec::with_capacity(cfg.count);
    let mut class1 = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(0x9000 + i as u64);
        match kind {
            ProbeKind::Trend => {
                let coeff0 = 0.5 + rng.random::<f64>() * 1.5;
                let coeff1 = 0.5 + rng.random::<f64>() * 1.5;
                let down = if steering { 0.0 } else { -coeff0 };
                class0.push(slope_series(down, cfg.length, cfg.noise_sigma, &mut rng));
                class1.push(slope_series(coeff1, cfg.length, cfg.noise_sigma, &mut rng));
            }
            ProbeKind::Periodicity => {
                class0.push(white_series(cfg.length, &mut rng));
                let freq = 1.0 + rng.random::<f64>() * 4.0;
                class1.push(sine_series(freq, cfg.length, cfg.noise_sigma, &mut rng));
            }
        }
    }
    ProbeDataset { class0, class1 }
}

/// Last-position hidden states at one probe layer (0 = tokenizer output,
/// n_layers = the final states the head consumes). Inputs are z-scored
/// before the forward pass.
pub fn extract_states(
    model: &Model,
    series: &[Vec<f64>],
    layer: usize,
) -> Result<Vec<Vec<f64>>, RepresentError> {
    validate_layer(model, layer)?;
    let all = extract_states_all_layers(model, series)?;
    Ok(all
        .into_iter()
        .map(|mut layers| layers.swap_remove(layer))
        .collect())
}

/// Per-example last-position states at every probe layer, one forward pass
/// per series.
pub fn extract_states_all_layers(
    model: &Model,
    series: &[Vec<f64>],
) -> Result<Vec<Vec<Vec<f64>>>, RepresentError> {
    threads::init_thread_pool();
    series
        .par_iter()
        .map(|s| {
            let (norm, _) = znorm(s, NORM_EPS);
            let enc = model.encode_context(&norm, None)?;
            Ok(enc.layer_last_rows)
        })
        .collect()
}

fn validate_layer(model: &Model, layer: usize) -> Result<(), RepresentError> {
    if layer > model.cfg.backbone.n_layers {
        return Err(RepresentError::Config(format!(
            "layer {layer} out of range 0..={}",
            model.cfg.backbone.n_layers
        )));
    }
    Ok(())
}

/// Linear discriminant ratio: squared distance between class means over the
/// summed per-class total variances (plus the stability term).
pub fn ldr(class0: &[Vec<f64>], class1: &[Vec<f64>], eps: f64) -> f64 {
    let d = class0[0].len();
    let mean = |class: &[Vec<f64>]| -> Vec<f64> {
        let mut m = vec![0.0; d];
        for row in class {
            for (a, v) in m.iter_mut().zip(row) {
                *a += v;
            }
        }
        for a in m.iter_mut() {
            *a /= class.len() as f64;
        }
        m
    };
    let total_var = |class: &[Vec<f64>], m: &[f64]| -> f64 {
        let mut acc = 0.0;
        for row in class {
            for (v, mu) in row.iter().zip(m) {
                acc += (v - mu) * (v - mu);
            }
        }
        acc / class.len() as f64
    };
    let m0 = mean(class0);
    let m1 = mean(class1);
    let dist2: f64 = m0.iter().zip(&m1).map(|(a, b)| (a - b) * (a - b)).sum();
    let v0 = total_var(class0, &m0);
    let v1 = total_var(class1, &m1);
    dist2 / (v0 + v1 + eps)
}

/// LDR at every probe layer: n_layers + 1 values.
pub fn probe_sweep(model: &Model, dataset: &ProbeDataset) -> Result<Vec<f64>, RepresentError> {
    let states0 = extract_states_all_layers(model, &dataset.class0)?;
    let states1 = extract_states_all_layers(model, &dataset.class1)?;
    let n_layers = model.cfg.backbone.n_layers + 1;
    let mut curve = Vec::with_capacity(n_layers);
    for layer in 0..n_layers {
        let c0: Vec<Vec<f64>> = states0.iter().map(|s| s[layer].clone()).collect();
        let c1: Vec<Vec<f64>> = states1.iter().map(|s| s[layer].clone()).collect();
        curve.push(ldr(&c0, &c1, LDR_EPS));
    }
    Ok(curve)
}

/// A unit steering direction at one layer, with the model's hidden-state
/// energy (mean L2 norm over the probe set) captured at extraction time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConceptDirection {
    pub layer: usize,
    pub v_unit: Vec<f64>,
    pub e_model: f64,
}

fn per_dim_median(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let n = rows.len();
    let mut out = Vec::with_capacity(d);
    let mut col = vec![0.0; n];
    for dim in 0..d {
        for (i, row) in rows.iter().enumerate() {
            col[i] = row[dim];
        }
        col.sort_by(|a, b| a.partial_cmp(b).expect("finite states"));
        out.push(if n % 2 == 1 {
            col[n / 2]
        } else {
            0.5 * (col[n / 2 - 1] + col[n / 2])
        });
    }
    out
}

/// Difference between class medians at the target layer, normalized to a
/// unit vector, plus the layer's mean hidden-state L2 norm.
pub fn extract_direction(
    model: &Model,
    kind: SteerKind,
    layer: usize,
    cfg: &ProbeConfig,
) -> Result<ConceptDirection, RepresentError> {
    validate_layer(model, layer)?;
    let ds = build_steer_dataset(kind, cfg);
    direction_from_classes(model, &ds, layer)
}

/// Direction extraction over explicit classes (class1 median minus class0
/// median).
pub fn direction_from_classes(
    model: &Model,
    ds: &ProbeDataset,
    layer: usize,
) -> Result<ConceptDirection, RepresentError> {
    validate_layer(model, layer)?;
    let s0 = extract_states(model, &ds.class0, layer)?;
    let s1 = extract_states(model, &ds.class1, layer)?;
    let med0 = per_dim_median(&s0);
    let med1 = per_dim_median(&s1);
    let diff: Vec<f64> = med1.iter().zip(&med0).map(|(a, b)| a - b).collect();
    let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return Err(RepresentError::DegenerateDirection);
    }
    let v_unit: Vec<f64> = diff.iter().map(|v| v / norm).collect();
    let e_model = s0
        .iter()
        .chain(s1.iter())
        .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
        / (s0.len() + s1.len()) as f64;
    Ok(ConceptDirection {
        layer,
        v_unit,
        e_model,
    })
}

/// Which positions of the first generation block receive the injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteerPositions {
    #[default]
    All,
    LastOnly,
}

/// Baseline and steered forecasts: h' = h + (alpha * E_model) * v_unit is
/// added to the target layer's hidden states during the first generation
/// block only. alpha = 0 returns a bitwise-identical pair.
pub fn steer_forecast(
    model: &Model,
    context: &[f64],
    horizon: usize,
    dir: &ConceptDirection,
    alpha: f64,
    block_l: usize,
    positions: SteerPositions,
) -> Result<(ForecastResult, ForecastResult), RepresentError> {
    validate_layer(model, dir.layer)?;
    if dir.v_unit.len() != model.cfg.backbone.d_model {
        return Err(RepresentError::Config(format!(
            "direction dimension {} != d_model {}",
            dir.v_unit.len(),
            model.cfg.backbone.d_model
        )));
    }
    let baseline = forecast(model, context, horizon, block_l)?;
    let steered = if alpha == 0.0 {
        forecast(model, context, horizon, block_l)?
    } else {
        let scale = alpha * dir.e_model;
        let injection = Injection {
            layer: dir.layer,
            delta: dir.v_unit.iter().map(|v| v * scale).collect(),
            all_positions: positions == SteerPositions::All,
        };
        forecast_with_hook(model, context, horizon, block_l, Some(&injection))?
    };
    Ok((baseline, steered))
}

/// Least-squares slope of a sequence against its index.
pub fn fitted_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    if y.len() < 2 {
        return 0.0;
    }
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, v) in y.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (v - mean_y);
        den += dx * dx;
    }
    num / den
}

/// Spearman rank correlation (average ranks on ties).
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let ranks = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite values"));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    };
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}
