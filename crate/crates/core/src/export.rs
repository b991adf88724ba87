//! Plain-text and binary exports of ensembles, solutions and verdicts.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::bsde::BsdeSolution;
use crate::error::{check_dim, FkError, Result};
use crate::forward::{Increments, PathEnsemble, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Error,
}

/// Summary line of one executed check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictBlock {
    pub probe: String,
    pub verdict: Verdict,
    pub statistic: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl VerdictBlock {
    pub fn new(probe: &str, holds: bool, statistic: f64, tolerance: f64, seed: u64) -> Self {
        Self {
            probe: probe.to_string(),
            verdict: if holds { Verdict::Pass } else { Verdict::Fail },
            statistic,
            tolerance,
            seed,
        }
    }
}

/// CSV with columns `path_id,step,t,x_1..x_d`.
pub fn write_ensemble_csv<W: Write>(ensemble: &PathEnsemble, mut w: W) -> Result<()> {
    let header: Vec<String> = (1..=ensemble.dim()).map(|k| format!("x_{k}")).collect();
    writeln!(w, "path_id,step,t,{}", header.join(","))?;
    for m in 0..ensemble.paths() {
        for i in 0..=ensemble.steps() {
            write!(w, "{m},{i},{}", ensemble.grid().time(i))?;
            for v in ensemble.state(m, i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// CSV with columns `path_id,step,t,y,z_1..z_dxi`; `z` is empty at the terminal node.
pub fn write_solution_csv<W: Write>(
    ensemble: &PathEnsemble,
    solution: &BsdeSolution,
    mut w: W,
) -> Result<()> {
    check_dim("solution paths", ensemble.paths(), solution.paths())?;
    let header: Vec<String> = (1..=solution.noise_dim())
        .map(|k| format!("z_{k}"))
        .collect();
    writeln!(w, "path_id,step,t,y,{}", header.join(","))?;
    for m in 0..solution.paths() {
        for i in 0..=solution.steps() {
            write!(
                w,
                "{m},{i},{},{}",
                ensemble.grid().time(i),
                solution.y_at(m, i)
            )?;
            if i < solution.steps() {
                for v in solution.z_at(m, i) {
                    write!(w, ",{v}")?;
                }
            } else {
                for _ in 0..solution.noise_dim() {
                    write!(w, ",")?;
                }
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

const MAGIC: &[u8; 4] = b"FKEN";
const FORMAT_VERSION: u32 = 1;

/// Little-endian binary dump: header, then states, then increments.
pub fn write_ensemble_binary<W: Write>(ensemble: &PathEnsemble, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for n in [
        ensemble.paths(),
        ensemble.steps(),
        ensemble.dim(),
        ensemble.noise_dim(),
    ] {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    w.write_all(&ensemble.seed().to_le_bytes())?;
    w.write_all(&ensemble.grid().start().to_le_bytes())?;
    w.write_all(&ensemble.grid().end().to_le_bytes())?;
    for v in ensemble.states().iter().chain(ensemble.increments().data()) {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_ensemble_binary<R: Read>(mut r: R) -> Result<PathEnsemble> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FkError::Io("not an ensemble file".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(FkError::Io(format!(
            "unsupported ensemble format version {version}"
        )));
    }
    let mut b8 = [0u8; 8];
    let mut next_u64 = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut b8)?;
        Ok(u64::from_le_bytes(b8))
    };
    let paths = next_u64(&mut r)? as usize;
    let steps = next_u64(&mut r)? as usize;
    let dim = next_u64(&mut r)? as usize;
    let d_xi = next_u64(&mut r)? as usize;
    let seed = next_u64(&mut r)?;
    let start = f64::from_bits(next_u64(&mut r)?);
    let end = f64::from_bits(next_u64(&mut r)?);
    let mut read_f64s = |r: &mut R, n: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(f64::from_bits(next_u64(r)?));
        }
        Ok(out)
    };
    let states = read_f64s(&mut r, paths * (steps + 1) * dim)?;
    let inc = read_f64s(&mut r, paths * steps * d_xi)?;
    let grid = TimeGrid::new(start, end, steps)?;
    let increments = Increments::from_raw(paths, steps, d_xi, seed, inc)?;
    PathEnsemble::from_raw(grid, dim, states, increments)
}
