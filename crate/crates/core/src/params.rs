//! Learnable and structural network parameters.
//!
//! Weights are drawn from a ChaCha8 stream (`rand_chacha::ChaCha8Rng`) seeded
//! with `seed_from_u64`, sampled as `f64` and rounded to the working precision,
//! so a seed produces the same network in 32- and 64-bit mode up to rounding.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};
use crate::real::{Precision, Real};

pub const BETA_MIN: f64 = 0.01;
pub const BETA_MAX: f64 = 0.99;
pub const P_MIN: f64 = 0.0;
pub const P_MAX: f64 = 0.999;

/// Membrane time constant used at initialisation, in ms.
pub const TAU_MEM_MS: f64 = 20.0;
/// Adaptation time constant used at initialisation, in ms.
pub const TAU_ADAPT_MS: f64 = 150.0;
/// Adaptation scalar of freshly initialised hidden neurons.
pub const D_INIT: f64 = 1.8;

/// Per-layer learnable quantities. Readout layers keep `p` and `d` empty and
/// have no recurrent weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub beta: Vec<F>,
    pub p: Vec<F>,
    pub d: Vec<F>,
    pub b: Vec<F>,
    /// Shape `(n_out, n_in)`.
    pub w_ff: Array2<F>,
    /// Shape `(n_out, n_out)`.
    pub w_rec: Option<Array2<F>>,
}

impl<F: Real> LayerParams<F> {
    pub fn n_in(&self) -> usize {
        self.w_ff.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.w_ff.nrows()
    }

    pub fn is_readout(&self) -> bool {
        self.p.is_empty() && self.n_out() > 0
    }

    pub fn zeros(n_in: usize, n_out: usize, is_readout: bool, recurrent: bool) -> Self {
        let adapt = if is_readout { 0 } else { n_out };
        Self {
            beta: vec![F::zero(); n_out],
            p: vec![F::zero(); adapt],
            d: vec![F::zero(); adapt],
            b: vec![F::zero(); n_out],
            w_ff: Array2::zeros((n_out, n_in)),
            w_rec: (recurrent && !is_readout).then(|| Array2::zeros((n_out, n_out))),
        }
    }

    /// Checks vector lengths against the weight shapes.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_out();
        if self.beta.len() != n || self.b.len() != n {
            return invalid_arg(format!(
                "beta/b lengths ({}, {}) do not match {n} neurons",
                self.beta.len(),
                self.b.len()
            ));
        }
        if !(self.p.is_empty() && self.d.is_empty()) && (self.p.len() != n || self.d.len() != n) {
            return invalid_arg(format!(
                "p/d lengths ({}, {}) do not match {n} neurons",
                self.p.len(),
                self.d.len()
            ));
        }
        if let Some(w) = &self.w_rec {
            if w.dim() != (n, n) {
                return invalid_arg(format!("w_rec shape {:?} is not ({n}, {n})", w.dim()));
            }
            if self.is_readout() {
                return invalid_arg("readout layers carry no recurrent weights");
            }
        }
        Ok(())
    }

    /// Membrane decays must lie in the configured clamp range.
    pub(crate) fn check_beta_range(&self, ranges: &ClampRanges) -> Result<()> {
        // compared in the parameter precision, where the clamp bounds live
        let (lo, hi) = ranges.beta;
        let range = F::of(lo)..=F::of(hi);
        for (i, &beta) in self.beta.iter().enumerate() {
            if !range.contains(&beta) {
                let x = beta.as_f64();
                return invalid_arg(format!("beta[{i}] = {x} outside [{lo}, {hi}]; clamp parameters first"));
            }
        }
        Ok(())
    }

    /// Every decay factor must be a finite value in `[0, 1)`.
    pub(crate) fn check_decays(&self) -> Result<()> {
        for (name, v) in [("beta", &self.beta), ("p", &self.p)] {
            if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !(x.as_f64() >= 0.0 && x.as_f64() < 1.0)) {
                return invalid_arg(format!("{name}[{i}] = {} is not a decay in [0, 1)", x.as_f64()));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.beta.len()
            + self.p.len()
            + self.d.len()
            + self.b.len()
            + self.w_ff.len()
            + self.w_rec.as_ref().map_or(0, |w| w.len())
    }

    pub fn cast<G: Real>(&self) -> LayerParams<G> {
        let c = |v: &[F]| v.iter().map(|x| G::of(x.as_f64())).collect::<Vec<G>>();
        LayerParams {
            beta: c(&self.beta),
            p: c(&self.p),
            d: c(&self.d),
            b: c(&self.b),
            w_ff: self.w_ff.mapv(|x| G::of(x.as_f64())),
            w_rec: self.w_rec.as_ref().map(|w| w.mapv(|x| G::of(x.as_f64()))),
        }
    }
}

/// Initialises one layer: uniform weights in `±sqrt(1/n_in)`, zero bias,
/// 20 ms membrane and 150 ms adaptation time constants, `d = 1.8`.
/// Readout layers only get `beta` and feedforward weights.
pub fn init_layer<F: Real>(
    n_in: usize,
    n_out: usize,
    dt_ms: f64,
    is_readout: bool,
    seed: u64,
) -> Result<LayerParams<F>> {
    init_layer_with(n_in, n_out, dt_ms, is_readout, !is_readout, seed)
}

pub(crate) fn init_layer_with<F: Real>(
    n_in: usize,
    n_out: usize,
    dt_ms: f64,
    is_readout: bool,
    recurrent: bool,
    seed: u64,
) -> Result<LayerParams<F>> {
    if n_in == 0 || n_out == 0 {
        return invalid_arg(format!("layer sizes must be positive, got n_in={n_in}, n_out={n_out}"));
    }
    if !(dt_ms > 0.0) || !dt_ms.is_finite() {
        return invalid_arg(format!("dt_ms must be positive, got {dt_ms}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = (1.0 / n_in as f64).sqrt();
    let mut draw = |_| F::of(rng.random_range(-bound..=bound));
    let w_ff = Array2::from_shape_fn((n_out, n_in), &mut draw);
    let w_rec = (recurrent && !is_readout).then(|| {
        let bound = (1.0 / n_out as f64).sqrt();
        Array2::from_shape_fn((n_out, n_out), |_| F::of(rng.random_range(-bound..=bound)))
    });
    let beta = F::of((-dt_ms / TAU_MEM_MS).exp());
    let (p, d) = if is_readout {
        (Vec::new(), Vec::new())
    } else {
        (
            vec![F::of((-dt_ms / TAU_ADAPT_MS).exp()); n_out],
            vec![F::of(D_INIT); n_out],
        )
    };
    Ok(clamp(LayerParams {
        beta: vec![beta; n_out],
        p,
        d,
        b: vec![F::zero(); n_out],
        w_ff,
        w_rec,
    }))
}

/// Clips `beta` into `[0.01, 0.99]` and `p` into `[0, 0.999]`.
pub fn clamp<F: Real>(mut params: LayerParams<F>) -> LayerParams<F> {
    clamp_in_place(&mut params);
    params
}

pub fn clamp_in_place<F: Real>(params: &mut LayerParams<F>) {
    clamp_with(params, &ClampRanges::default());
}

/// Clips `beta` and `p` into `ranges`.
pub fn clamp_with<F: Real>(params: &mut LayerParams<F>, ranges: &ClampRanges) {
    let (bl, bh) = (F::of(ranges.beta.0), F::of(ranges.beta.1));
    let (pl, ph) = (F::of(ranges.p.0), F::of(ranges.p.1));
    for x in &mut params.beta {
        *x = x.max(bl).min(bh);
    }
    for x in &mut params.p {
        *x = x.max(pl).min(ph);
    }
}

/// Closed intervals that `beta` and `p` are clipped into after every update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampRanges {
    pub beta: (f64, f64),
    pub p: (f64, f64),
}

impl Default for ClampRanges {
    fn default() -> Self {
        Self {
            beta: (BETA_MIN, BETA_MAX),
            p: (P_MIN, P_MAX),
        }
    }
}

impl ClampRanges {
    /// Widens the upper bounds so both decays admit `exp(-dt/tau)` for time
    /// constants up to `tau_max_ms`.
    pub fn for_time_constant(dt_ms: f64, tau_max_ms: f64) -> Self {
        let mut r = Self::default();
        let top = (-dt_ms / tau_max_ms).exp();
        r.beta.1 = r.beta.1.max(top);
        r.p.1 = r.p.1.max(top);
        r
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| (0.0..1.0).contains(&lo) && (lo..1.0).contains(&hi);
        if !ok(self.beta) || !ok(self.p) {
            return invalid_arg(format!("clamp ranges {self:?} must satisfy 0 <= lo <= hi < 1"));
        }
        Ok(())
    }
}

/// Architecture and simulation controls shared by both engines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub n_in: usize,
    pub layer_widths: Vec<usize>,
    /// Readout width; 0 means no readout layer.
    pub n_classes: usize,
    pub dt_ms: f64,
    /// Absolute refractory period, which is also the recurrent delay, in steps.
    pub arp_steps: usize,
    #[serde(default)]
    pub precision: Precision,
    /// Whether hidden layers have recurrent weights.
    #[serde(default = "default_true")]
    pub recurrent: bool,
    #[serde(default)]
    pub clamp: ClampRanges,
}

fn default_true() -> bool {
    true
}

impl NetConfig {
    pub fn new(n_in: usize, layer_widths: Vec<usize>, n_classes: usize, dt_ms: f64, arp_steps: usize) -> Self {
        Self {
            n_in,
            layer_widths,
            n_classes,
            dt_ms,
            arp_steps,
            precision: Precision::F32,
            recurrent: true,
            clamp: ClampRanges::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.arp_steps == 0 {
            return invalid_arg("arp_steps must be at least 1");
        }
        if !(self.dt_ms > 0.0) || !self.dt_ms.is_finite() {
            return invalid_arg(format!("dt_ms must be positive, got {}", self.dt_ms));
        }
        if self.n_in == 0 {
            return invalid_arg("n_in must be positive");
        }
        if self.layer_widths.iter().any(|&w| w == 0) {
            return invalid_arg("layer widths must be positive");
        }
        if self.layer_widths.is_empty() && self.n_classes == 0 {
            return invalid_arg("network needs at least one hidden or readout layer");
        }
        self.clamp.validate()
    }
}

/// A network: hidden ALIF layers followed by an optional readout integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<F> {
    pub config: NetConfig,
    pub layers: Vec<LayerParams<F>>,
    pub readout: Option<LayerParams<F>>,
}

impl<F: Real> Network<F> {
    /// Initialises every layer; layer `l` uses seed `seed + l`.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.layer_widths.len());
        let mut n_prev = config.n_in;
        for (l, &w) in config.layer_widths.iter().enumerate() {
            layers.push(init_layer_with(
                n_prev,
                w,
                config.dt_ms,
                false,
                config.recurrent,
                seed.wrapping_add(l as u64),
            )?);
            n_prev = w;
        }
        let readout = if config.n_classes > 0 {
            Some(init_layer(
                n_prev,
                config.n_classes,
                config.dt_ms,
                true,
                seed.wrapping_add(config.layer_widths.len() as u64),
            )?)
        } else {
            None
        };
        Ok(Self {
            config,
            layers,
            readout,
        })
    }

    /// Checks layer shapes against the config and that decays are in range.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.layers.len() != self.config.layer_widths.len() {
            return invalid_arg(format!(
                "{} hidden layers but config lists {} widths",
                self.layers.len(),
                self.config.layer_widths.len()
            ));
        }
        let mut n_prev = self.config.n_in;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if layer.is_readout() {
                return invalid_arg(format!("hidden layer {l} has no adaptation parameters"));
            }
            if layer.n_in() != n_prev || layer.n_out() != self.config.layer_widths[l] {
                return invalid_arg(format!(
                    "layer {l} weight shape ({}, {}) inconsistent with widths ({}, {n_prev})",
                    layer.n_out(),
                    layer.n_in(),
                    self.config.layer_widths[l]
                ));
            }
            if layer.w_rec.is_some() != self.config.recurrent {
                return invalid_arg(format!("layer {l} recurrence does not match config"));
            }
            layer.check_beta_range(&self.config.clamp)?;
            n_prev = layer.n_out();
        }
        match (&self.readout, self.config.n_classes) {
            (None, 0) => {}
            (Some(r), c) if c > 0 => {
                r.validate()?;
                if r.n_in() != n_prev || r.n_out() != c || !r.is_readout() {
                    return invalid_arg("readout layer shape inconsistent with config");
                }
                r.check_beta_range(&self.config.clamp)?;
            }
            _ => return invalid_arg("readout presence does not match n_classes"),
        }
        Ok(())
    }

    pub fn clamp(&mut self) {
        let ranges = self.config.clamp;
        for l in self.layers.iter_mut().chain(self.readout.iter_mut()) {
            clamp_with(l, &ranges);
        }
    }

    pub fn all_layers(&self) -> impl Iterator<Item = &LayerParams<F>> {
        self.layers.iter().chain(self.readout.iter())
    }

    pub fn all_layers_mut(&mut self) -> impl Iterator<Item = &mut LayerParams<F>> {
        self.layers.iter_mut().chain(self.readout.iter_mut())
    }

    pub fn output_width(&self) -> usize {
        *self.config.layer_widths.last().unwrap_or(&self.config.n_in)
    }

    pub fn cast<G: Real>(&self) -> Network<G> {
        let mut config = self.config.clone();
        config.precision = G::PRECISION;
        Network {
            config,
            layers: self.layers.iter().map(|l| l.cast()).collect(),
            readout: self.readout.as_ref().map(|l| l.cast()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ParamsDocument::from_network(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ParamsDocument = serde_json::from_str(text)?;
        doc.into_network()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk parameter document, version 1. Every number is written as an
/// `f64` in shortest round-trip form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsDocument {
    pub version: u32,
    pub layers: Vec<LayerDocument>,
    pub config: NetConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerDocument {
    pub beta: Vec<f64>,
    pub p: Vec<f64>,
    pub d: Vec<f64>,
    pub b: Vec<f64>,
    pub w_ff: Vec<Vec<f64>>,
    pub w_rec: Option<Vec<Vec<f64>>>,
}

impl ParamsDocument {
    pub fn from_network<F: Real>(net: &Network<F>) -> Self {
        let v = |x: &[F]| x.iter().map(|v| v.as_f64()).collect::<Vec<_>>();
        let m = |w: &Array2<F>| {
            w.rows()
                .into_iter()
                .map(|r| r.iter().map(|x| x.as_f64()).collect())
                .collect::<Vec<Vec<f64>>>()
        };
        Self {
            version: 1,
            layers: net
                .all_layers()
                .map(|l| LayerDocument {
                    beta: v(&l.beta),
                    p: v(&l.p),
                    d: v(&l.d),
                    b: v(&l.b),
                    w_ff: m(&l.w_ff),
                    w_rec: l.w_rec.as_ref().map(m),
                })
                .collect(),
            config: net.config.clone(),
        }
    }

    pub fn into_network<F: Real>(self) -> Result<Network<F>> {
        if self.version != 1 {
            return Err(Error::InvalidData(format!(
                "unsupported parameter document version {}",
                self.version
            )));
        }
        let matrix = |rows: Vec<Vec<f64>>, what: &str| -> Result<Array2<F>> {
            let nr = rows.len();
            let nc = rows.first().map_or(0, |r| r.len());
            if rows.iter().any(|r| r.len() != nc) {
                return Err(Error::InvalidData(format!("ragged {what} matrix")));
            }
            let flat: Vec<F> = rows.into_iter().flatten().map(F::of).collect();
            Array2::from_shape_vec((nr, nc), flat).map_err(|e| Error::InvalidData(e.to_string()))
        };
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in self.layers {
            let v = |x: Vec<f64>| x.into_iter().map(F::of).collect::<Vec<F>>();
            layers.push(LayerParams {
                beta: v(l.beta),
                p: v(l.p),
                d: v(l.d),
                b: v(l.b),
                w_ff: matrix(l.w_ff, "w_ff")?,
                w_rec: l.w_rec.map(|w| matrix(w, "w_rec")).transpose()?,
            });
        }
        let readout = if self.config.n_classes > 0 { layers.pop() } else { None };
        let net = Network {
            config: self.config,
            layers,
            readout,
        };
        net.validate().map_err(|e| Error::InvalidData(e.to_string()))?;
        Ok(net)
    }
}
