//! Wall-clock comparison of the two engines over a grid of shapes.
//!
//! Each case gets one warmup run per engine, then `repeats` back-to-back
//! pairs. Times are medians and the speedup is the median paired ratio.
//! The training benchmark times forward, backward and one Adam step for a
//! loss equal to the number of spikes in the last layer.

use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::time::Instant;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::data_io::{gen_poisson, PoissonSpec};
use crate::error::Result;
use crate::params::{NetConfig, Network};
use crate::sim::{simulate, simulate_with_tape, Engine, Rollout, SimConfig};
use crate::spikes::{Input, SpikeTensor};
use crate::train::{adam_step, backward, AdamConfig, AdamState, GradConfig, OutputGrad};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    Forward,
    Train,
}

impl std::str::FromStr for BenchMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "forward" => Ok(BenchMode::Forward),
            "train" => Ok(BenchMode::Train),
            other => Err(format!("unknown bench mode `{other}` (expected forward or train)")),
        }
    }
}

impl std::fmt::Display for BenchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BenchMode::Forward => "forward",
            BenchMode::Train => "train",
        })
    }
}

/// Shapes to benchmark; every combination is one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub steps: Vec<usize>,
    pub arps: Vec<usize>,
    pub batches: Vec<usize>,
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            steps: vec![512, 1024, 2048],
            arps: vec![1, 8, 16, 32, 64],
            batches: vec![16, 64],
            widths: vec![128, 256],
            depths: vec![1, 2, 3],
        }
    }
}

/// One benchmark shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Case {
    pub steps: usize,
    pub arp: usize,
    pub batch: usize,
    pub width: usize,
    pub depth: usize,
}

impl GridSpec {
    pub fn single(case: Case) -> Self {
        Self {
            steps: vec![case.steps],
            arps: vec![case.arp],
            batches: vec![case.batch],
            widths: vec![case.width],
            depths: vec![case.depth],
        }
    }

    pub fn cases(&self) -> Vec<Case> {
        let mut out = Vec::new();
        for &steps in &self.steps {
            for &batch in &self.batches {
                for &width in &self.widths {
                    for &depth in &self.depths {
                        for &arp in &self.arps {
                            out.push(Case {
                                steps,
                                arp,
                                batch,
                                width,
                                depth,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub mode: BenchMode,
    pub steps: usize,
    pub arp: usize,
    pub batch: usize,
    pub width: usize,
    pub depth: usize,
    pub standard_ms: f64,
    pub block_ms: f64,
    pub speedup: f64,
    /// Sequential stages per layer, as counted inside each engine.
    pub stages_standard: usize,
    pub stages_block: usize,
    /// Mean hidden spike probability per neuron and step.
    pub spike_rate: f64,
    /// Whether timed runs reproduced the outputs of a plain rollout.
    pub outputs_match: bool,
}

pub const CSV_HEADER: &str =
    "mode,steps,arp,batch,width,depth,standard_ms,block_ms,speedup,stages_standard,stages_block,spike_rate,outputs_match";

/// Bias of every hidden neuron in benchmark networks. With the default
/// initialisation and no bias the layers stay silent; this drive keeps them
/// firing at a few hertz so spike-driven work is exercised.
pub const BENCH_BIAS: f32 = 1.5;

/// Network and Poisson input of one case, input width equal to layer width.
pub fn case_setup(case: &Case, seed: u64) -> Result<(Network<f32>, SpikeTensor)> {
    let config = NetConfig::new(case.width, vec![case.width; case.depth], 0, 1.0, case.arp);
    let mut net = Network::init(config, seed)?;
    for l in &mut net.layers {
        l.b.iter_mut().for_each(|b| *b = BENCH_BIAS);
    }
    let input = gen_poisson(&PoissonSpec::new(case.batch, case.width, case.steps, seed))?;
    Ok((net, input))
}

fn checksum(r: &Rollout<f32>) -> u64 {
    let mut h = DefaultHasher::new();
    r.spikes.hash(&mut h);
    h.finish()
}

/// Per-layer stage counts of one rollout; every layer must agree.
pub fn stage_counts(net: &Network<f32>, input: &SpikeTensor, engine: Engine) -> Result<Vec<usize>> {
    Ok(simulate(net, Input::Spikes(input), &SimConfig::new(engine))?.stages)
}

fn run_once(net: &Network<f32>, input: &SpikeTensor, engine: Engine, mode: BenchMode) -> Result<Rollout<f32>> {
    let cfg = SimConfig::new(engine);
    match mode {
        BenchMode::Forward => simulate(net, Input::Spikes(input), &cfg),
        BenchMode::Train => {
            let mut net = net.clone();
            let (r, tape) = simulate_with_tape(&net, Input::Spikes(input), &cfg)?;
            let (b, n, t) = (input.batch(), net.output_width(), input.steps());
            let out = OutputGrad {
                readout: None,
                spikes: Some(Array3::from_elem((b, n, t), 1.0)),
            };
            let grads = backward(&net, &tape, &out, &GradConfig::default())?;
            let adam = AdamConfig::default();
            adam_step(&mut net, &grads, &mut AdamState::default(), &adam, adam.lr)?;
            Ok(r)
        }
    }
}

fn timed(net: &Network<f32>, input: &SpikeTensor, engine: Engine, mode: BenchMode) -> Result<(f64, u64)> {
    let start = Instant::now();
    let r = run_once(net, input, engine, mode)?;
    Ok((start.elapsed().as_secs_f64() * 1e3, checksum(&r)))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let m = xs.len() / 2;
    if xs.len() % 2 == 0 {
        (xs[m - 1] + xs[m]) / 2.0
    } else {
        xs[m]
    }
}

pub fn bench_case(case: &Case, mode: BenchMode, repeats: usize, seed: u64) -> Result<BenchRow> {
    let (net, input) = case_setup(case, seed)?;
    let plain = simulate(&net, Input::Spikes(&input), &SimConfig::new(Engine::Standard))?;
    let reference = checksum(&plain);
    let cells: usize = plain.spikes.iter().map(|s| s.as_slice().len()).sum();
    let fired: usize = plain.spikes.iter().map(|s| s.count()).sum();
    // one warmup each, then back-to-back pairs so both engines see the same
    // machine state; the speedup is the median of the paired ratios
    timed(&net, &input, Engine::Standard, mode)?;
    timed(&net, &input, Engine::Block, mode)?;
    let (mut st, mut bl, mut ratio) = (Vec::new(), Vec::new(), Vec::new());
    let mut outputs_match = true;
    for _ in 0..repeats.max(1) {
        let (a, s1) = timed(&net, &input, Engine::Standard, mode)?;
        let (b, s2) = timed(&net, &input, Engine::Block, mode)?;
        outputs_match &= s1 == reference && s2 == reference;
        st.push(a);
        bl.push(b);
        ratio.push(a / b);
    }
    let stages_standard = stage_counts(&net, &input, Engine::Standard)?;
    let stages_block = stage_counts(&net, &input, Engine::Block)?;
    Ok(BenchRow {
        mode,
        steps: case.steps,
        arp: case.arp,
        batch: case.batch,
        width: case.width,
        depth: case.depth,
        standard_ms: median(st),
        block_ms: median(bl),
        speedup: median(ratio),
        stages_standard: stages_standard[0],
        stages_block: stages_block[0],
        spike_rate: fired as f64 / cells.max(1) as f64,
        outputs_match,
    })
}

/// Runs every case of `grid` one at a time, calling `progress` after each.
pub fn run_grid(grid: &GridSpec, mode: BenchMode, repeats: usize, seed: u64, mut progress: impl FnMut(&BenchRow)) -> Result<Vec<BenchRow>> {
    grid.cases()
        .iter()
        .map(|c| {
            let row = bench_case(c, mode, repeats, seed)?;
            progress(&row);
            Ok(row)
        })
        .collect()
}

pub fn write_csv(rows: &[BenchRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.4},{:.4},{:.4},{},{},{:.5},{}",
            r.mode,
            r.steps,
            r.arp,
            r.batch,
            r.width,
            r.depth,
            r.standard_ms,
            r.block_ms,
            r.speedup,
            r.stages_standard,
            r.stages_block,
            r.spike_rate,
            r.outputs_match
        )?;
    }
    Ok(())
}

/// Line plot of speedup against refractory period, one line per shape.
pub fn speedup_svg(rows: &[BenchRow]) -> String {
    let (w, h, pad) = (640.0, 420.0, 50.0);
    let max_arp = rows.iter().map(|r| r.arp).max().unwrap_or(1).max(1) as f64;
    let max_s = rows.iter().map(|r| r.speedup).fold(1.0, f64::max) * 1.1;
    let x = |arp: usize| pad + (w - 2.0 * pad) * arp as f64 / max_arp;
    let y = |s: f64| h - pad - (h - 2.0 * pad) * s / max_s;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{pad}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{b}" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">refractory period (steps)</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(svg, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">speedup</text>"#, h / 2.0, h / 2.0);
    let _ = writeln!(svg, r#"<line x1="{pad}" y1="{y1}" x2="{r}" y2="{y1}" stroke="gray" stroke-dasharray="4"/>"#, y1 = y(1.0), r = w - pad);
    let mut series: Vec<(Case, Vec<(usize, f64)>)> = Vec::new();
    for r in rows {
        let key = Case {
            steps: r.steps,
            arp: 0,
            batch: r.batch,
            width: r.width,
            depth: r.depth,
        };
        match series.iter_mut().find(|(k, _)| *k == key) {
            Some((_, pts)) => pts.push((r.arp, r.speedup)),
            None => series.push((key, vec![(r.arp, r.speedup)])),
        }
    }
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    for (i, (key, pts)) in series.iter_mut().enumerate() {
        pts.sort_by_key(|p| p.0);
        let color = palette[i % palette.len()];
        let path: Vec<String> = pts.iter().map(|&(a, s)| format!("{:.1},{:.1}", x(a), y(s))).collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" points="{}"/>"#, path.join(" "));
        if let Some(&(a, s)) = pts.last() {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" fill="{color}">T={} B={} N={} L={}</text>"#,
                x(a) - 120.0,
                y(s) - 4.0,
                key.steps,
                key.batch,
                key.width,
                key.depth
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_size() {
        assert_eq!(GridSpec::default().cases().len(), 180);
    }

    #[test]
    fn small_case_counts_stages_and_keeps_outputs() {
        let case = Case {
            steps: 50,
            arp: 8,
            batch: 2,
            width: 8,
            depth: 2,
        };
        for mode in [BenchMode::Forward, BenchMode::Train] {
            let row = bench_case(&case, mode, 1, 3).unwrap();
            assert_eq!(row.stages_standard, 50);
            assert_eq!(row.stages_block, 7);
            assert!(row.outputs_match);
        }
        let mut csv = Vec::new();
        write_csv(&[bench_case(&case, BenchMode::Forward, 1, 3).unwrap()], &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn svg_has_one_line_per_shape() {
        let rows: Vec<BenchRow> = [1, 8, 16]
            .iter()
            .map(|&arp| BenchRow {
                mode: BenchMode::Forward,
                steps: 512,
                arp,
                batch: 16,
                width: 128,
                depth: 1,
                standard_ms: 10.0,
                block_ms: 10.0 / arp as f64,
                speedup: arp as f64,
                stages_standard: 512,
                stages_block: 512 / arp,
                spike_rate: 0.01,
                outputs_match: true,
            })
            .collect();
        let svg = speedup_svg(&rows);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.ends_with("</svg>\n"));
    }
}
