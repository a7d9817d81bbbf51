use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::RandomStream;

use super::{connectivity_matrix, Dataset, Label, Sample, TimeSeries};

/// ROIs `start..=end` share a per-sample latent signal whose mixing weight
/// depends on the class.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingBlock {
    pub start: usize,
    pub end: usize,
    pub coupling_sz: f64,
    pub coupling_hc: f64,
}

impl CouplingBlock {
    pub fn coupling(&self, label: Label) -> f64 {
        match label {
            Label::Sz => self.coupling_sz,
            Label::Hc => self.coupling_hc,
        }
    }

    pub fn contains(&self, roi: usize) -> bool {
        (self.start..=self.end).contains(&roi)
    }
}

/// Recipe for a labeled synthetic cohort.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_rois: usize,
    pub n_timepoints: usize,
    pub n_per_class: usize,
    pub blocks: Vec<CouplingBlock>,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_rois: 16,
            n_timepoints: 200,
            n_per_class: 100,
            blocks: vec![CouplingBlock {
                start: 0,
                end: 3,
                coupling_sz: 0.8,
                coupling_hc: 0.0,
            }],
            noise: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 {
            return Err(Error::Config("synthetic spec has n_per_class = 0".into()));
        }
        if self.n_rois < 2 {
            return Err(Error::Config("synthetic spec needs at least 2 ROIs".into()));
        }
        if self.n_timepoints < 3 {
            return Err(Error::Config(
                "synthetic spec needs at least 3 timepoints".into(),
            ));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!(
                "noise scale must be positive, got {}",
                self.noise
            )));
        }
        for b in &self.blocks {
            if b.start > b.end || b.end >= self.n_rois {
                return Err(Error::Config(format!(
                    "block {}-{} outside [0, {})",
                    b.start, b.end, self.n_rois
                )));
            }
            for c in [b.coupling_sz, b.coupling_hc] {
                if !(0.0..1.0).contains(&c) {
                    return Err(Error::Config(format!("coupling {c} outside [0, 1)")));
                }
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines. Blocks are `block = START-END:SZ:HC`
    /// (inclusive ROI range), one per line.
    pub fn parse(text: &str, seed: u64) -> Result<Self> {
        let mut spec = SynthSpec {
            blocks: Vec::new(),
            seed,
            ..Default::default()
        };
        let mut saw_block = false;
        for (key, value) in crate::cli::config::key_values(text)? {
            let num = |v: &str| -> Result<usize> {
                v.parse()
                    .map_err(|_| Error::Config(format!("{key}: expected an integer, got {v:?}")))
            };
            match key.as_str() {
                "n_rois" => spec.n_rois = num(&value)?,
                "n_timepoints" => spec.n_timepoints = num(&value)?,
                "n_per_class" => spec.n_per_class = num(&value)?,
                "noise" => {
                    spec.noise = value.parse().map_err(|_| {
                        Error::Config(format!("noise: expected a number, got {value:?}"))
                    })?
                }
                "block" => {
                    saw_block = true;
                    spec.blocks.push(parse_block(&value)?);
                }
                other => return Err(Error::Config(format!("unknown synth key {other:?}"))),
            }
        }
        if !saw_block {
            spec.blocks = SynthSpec::default().blocks;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_rois = {}", self.n_rois);
        let _ = writeln!(s, "n_timepoints = {}", self.n_timepoints);
        let _ = writeln!(s, "n_per_class = {}", self.n_per_class);
        let _ = writeln!(s, "noise = {}", self.noise);
        for b in &self.blocks {
            let _ = writeln!(
                s,
                "block = {}-{}:{}:{}",
                b.start, b.end, b.coupling_sz, b.coupling_hc
            );
        }
        s
    }
}

fn parse_block(v: &str) -> Result<CouplingBlock> {
    let bad = || Error::Config(format!("block {v:?}: expected START-END:SZ:HC"));
    let mut parts = v.split(':');
    let range = parts.next().ok_or_else(bad)?;
    let (a, b) = range.split_once('-').ok_or_else(bad)?;
    let sz = parts.next().ok_or_else(bad)?;
    let hc = parts.next().ok_or_else(bad)?;
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok(CouplingBlock {
        start: a.trim().parse().map_err(|_| bad())?,
        end: b.trim().parse().map_err(|_| bad())?,
        coupling_sz: sz.trim().parse().map_err(|_| bad())?,
        coupling_hc: hc.trim().parse().map_err(|_| bad())?,
    })
}

/// Generates `2 · n_per_class` labeled connectivity matrices.
///
/// Sample `k` is SZ for even `k` and HC for odd `k` and draws from its own
/// random stream. A block ROI's series is
/// `c·latent + noise·√(1−c²)·white` with `c` the class coupling, so at
/// unit noise two ROIs of one block correlate at `c²` in expectation.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let total = 2 * spec.n_per_class;
    let digits = total.to_string().len().max(4);
    let (n, t) = (spec.n_rois, spec.n_timepoints);
    let mut samples = Vec::with_capacity(total);
    for k in 0..total {
        let label = if k % 2 == 0 { Label::Sz } else { Label::Hc };
        let mut rng = RandomStream::new(spec.seed, k as u64);
        let latents: Vec<Vec<f64>> = spec
            .blocks
            .iter()
            .map(|_| (0..t).map(|_| rng.normal()).collect())
            .collect();
        let mut values = Vec::with_capacity(n * t);
        for roi in 0..n {
            let block = spec.blocks.iter().position(|b| b.contains(roi));
            let c = block.map_or(0.0, |b| spec.blocks[b].coupling(label));
            let keep = (1.0 - c * c).sqrt();
            for step in 0..t {
                let shared = block.map_or(0.0, |b| latents[b][step]);
                values.push(c * shared + spec.noise * keep * rng.normal());
            }
        }
        let ts = TimeSeries::new(n, t, values)?;
        let mut matrix = connectivity_matrix(&ts)?;
        matrix.label = Some(label);
        samples.push(Sample {
            id: format!("sample_{k:0digits$}.csv"),
            matrix,
            label,
        });
    }
    Ok(Dataset { samples })
}
