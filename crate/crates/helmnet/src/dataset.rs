//! Training sets on disk.
//!
//! A dataset directory holds `header.toml`, the attenuation as `gamma.slw`,
//! one SLW1 file per slowness model under `models/`, the records in
//! `records.bin` and their byte offsets in `index.csv`. A record is the
//! model file name (little-endian `u32` length, then UTF-8 bytes) followed
//! by four SLW1 blocks: real and imaginary parts of `r_hat`, then of the
//! error.

use std::fs;
use std::io::Write;
use std::path::Path;

use helmnet_core::{
    slw, Attenuation, ComplexField, HelmholtzProblem, ProblemGrid, RealField, Shift, SlownessSquared,
    StencilOperator,
};
use serde::{Deserialize, Serialize};

use crate::datagen::TrainingSample;
use crate::error::{Error, Result};

/// Largest accepted `||A e - r|| / ||r||` for a stored pair.
pub const SAMPLE_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub nx: usize,
    pub ny: usize,
    pub omega: f64,
    pub kappa2_range: (f64, f64),
    pub models: usize,
    pub records: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub problems: Vec<HelmholtzProblem>,
    pub samples: Vec<TrainingSample>,
}

fn model_file(m: usize) -> String {
    format!("models/model_{m:05}.slw")
}

/// `||A e - r|| / ||r||` of a stored pair against its problem.
pub fn pair_error(problem: &HelmholtzProblem, s: &TrainingSample) -> Result<f64> {
    let op = StencilOperator::new(problem, Shift::NONE);
    let h = problem.grid().h();
    let mut ae = op.apply(&s.e_true)?;
    ae.scale(helmnet_core::Complex64::new(h * h, 0.0));
    let d = ae.sub(&s.r_hat)?.norm();
    let n = s.r_hat.norm();
    Ok(if n == 0.0 { d } else { d / n })
}

impl Dataset {
    pub fn new(problems: Vec<HelmholtzProblem>, samples: Vec<TrainingSample>, seed: u64) -> Result<Self> {
        let first = problems
            .first()
            .ok_or_else(|| Error::InvalidArgument("a dataset needs at least one model".into()))?;
        let (nx, ny) = first.grid().shape();
        let omega = first.omega();
        let range = first.kappa2().range();
        for p in &problems {
            if p.grid().shape() != (nx, ny) || p.omega() != omega || p.kappa2().range() != range {
                return Err(Error::InvalidArgument("dataset models must share grid, omega and range".into()));
            }
            if p.gamma() != first.gamma() {
                return Err(Error::InvalidArgument("dataset models must share the attenuation".into()));
            }
        }
        if let Some(s) = samples.iter().find(|s| s.model >= problems.len()) {
            return Err(Error::InvalidArgument(format!("sample refers to missing model {}", s.model)));
        }
        Ok(Self {
            header: DatasetHeader {
                nx,
                ny,
                omega,
                kappa2_range: range,
                models: problems.len(),
                records: samples.len(),
                seed,
            },
            problems,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Worst pair error over all samples.
    pub fn max_pair_error(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for s in &self.samples {
            worst = worst.max(pair_error(&self.problems[s.model], s)?);
        }
        Ok(worst)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("models"))?;
        let header = toml::to_string(&self.header).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(dir.join("header.toml"), header)?;
        slw::save(dir.join("gamma.slw"), self.problems[0].gamma().values())?;
        for (m, p) in self.problems.iter().enumerate() {
            slw::save(dir.join(model_file(m)), p.kappa2().values())?;
        }
        let mut records = Vec::new();
        let mut index = String::from("record,offset,model\n");
        for (k, s) in self.samples.iter().enumerate() {
            index.push_str(&format!("{k},{},{}\n", records.len(), s.model));
            let name = model_file(s.model);
            records.extend_from_slice(&(name.len() as u32).to_le_bytes());
            records.extend_from_slice(name.as_bytes());
            for f in [s.r_hat.re(), s.r_hat.im(), s.e_true.re(), s.e_true.im()] {
                slw::write(&mut records, &f)?;
            }
        }
        fs::File::create(dir.join("records.bin"))?.write_all(&records)?;
        fs::write(dir.join("index.csv"), index)?;
        Ok(())
    }

    /// Reads a dataset and checks `A e = r` for every pair.
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("header.toml"))?;
        let header: DatasetHeader = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        let grid = ProblemGrid::new(header.nx, header.ny)?;
        let gamma = Attenuation::new(slw::load(dir.join("gamma.slw"))?)?;
        let problems = (0..header.models)
            .map(|m| {
                let k2 = SlownessSquared::new(slw::load(dir.join(model_file(m)))?, header.kappa2_range)?;
                Ok(HelmholtzProblem::new(grid.clone(), header.omega, k2, gamma.clone())?)
            })
            .collect::<Result<Vec<_>>>()?;
        let bytes = fs::read(dir.join("records.bin"))?;
        let mut cur = &bytes[..];
        let mut samples = Vec::with_capacity(header.records);
        for k in 0..header.records {
            let take = |cur: &mut &[u8], n: usize| -> Result<Vec<u8>> {
                if cur.len() < n {
                    return Err(Error::Format(format!("record {k} is truncated")));
                }
                let (a, b) = cur.split_at(n);
                *cur = b;
                Ok(a.to_vec())
            };
            let len = u32::from_le_bytes(take(&mut cur, 4)?.try_into().expect("4 bytes")) as usize;
            let name = String::from_utf8(take(&mut cur, len)?)
                .map_err(|_| Error::Format(format!("record {k} has a non-UTF-8 model name")))?;
            let model = (0..header.models)
                .find(|&m| model_file(m) == name)
                .ok_or_else(|| Error::Format(format!("record {k} refers to unknown model `{name}`")))?;
            let mut parts: Vec<RealField> = Vec::with_capacity(4);
            for _ in 0..4 {
                let f = slw::read(&mut cur)?;
                if f.shape() != (header.nx, header.ny) {
                    return Err(Error::Format(format!("record {k} has a wrong grid")));
                }
                parts.push(f);
            }
            let s = TrainingSample {
                r_hat: ComplexField::from_parts(&parts[0], &parts[1])?,
                e_true: ComplexField::from_parts(&parts[2], &parts[3])?,
                model,
            };
            let err = pair_error(&problems[model], &s)?;
            if !(err < SAMPLE_TOLERANCE) {
                return Err(Error::Format(format!("record {k} violates A e = r ({err:.2e})")));
            }
            samples.push(s);
        }
        if !cur.is_empty() {
            return Err(Error::Format("trailing bytes after the last record".into()));
        }
        Ok(Self {
            header,
            problems,
            samples,
        })
    }
}
