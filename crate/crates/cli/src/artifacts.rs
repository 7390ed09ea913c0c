//! CSV artifacts. Reals are written with 17 significant digits.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use mmpde::fd::FdSolution;
use mmpde::problems::PdeProblem;
use mmpde::trainer::TrainRecord;
use mmpde::{MlpNet, Scalar};
use ndarray::Array2;

pub const EMA_DECAY: f64 = 0.95;

pub const LOG_COLUMNS: [&str; 11] = [
    "iter",
    "loss_total",
    "loss_boundary",
    "loss_interior",
    "duality_gap",
    "rel_l2_error",
    "lr",
    "elapsed_s",
    "loss_total_ema",
    "duality_gap_ema",
    "rel_l2_error_ema",
];

pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(real).unwrap_or_default()
}

/// Exponential moving average seeded with the first sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Ema {
    value: Option<f64>,
}

impl Ema {
    pub fn update(&mut self, x: f64) -> f64 {
        let next = match self.value {
            None => x,
            Some(m) => EMA_DECAY * m + (1.0 - EMA_DECAY) * x,
        };
        self.value = Some(next);
        next
    }

    pub fn value(&self) -> Option<f64> {
        self.value
    }
}

pub struct TrainLog {
    out: csv::Writer<File>,
    wall_clock: bool,
    loss: Ema,
    gap: Ema,
    error: Ema,
}

impl TrainLog {
    pub fn create(path: &Path, wall_clock: bool) -> anyhow::Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = csv::Writer::from_writer(file);
        out.write_record(LOG_COLUMNS)?;
        out.flush()?;
        Ok(Self { out, wall_clock, loss: Ema::default(), gap: Ema::default(), error: Ema::default() })
    }

    pub fn append(&mut self, r: &TrainRecord) -> anyhow::Result<()> {
        let loss_ema = self.loss.update(r.loss.total);
        let gap_ema = self.gap.update(r.duality_gap);
        let err_ema = r.rel_l2_error.map(|e| self.error.update(e));
        let elapsed = if self.wall_clock { r.elapsed_s } else { 0.0 };
        self.out.write_record([
            r.iter.to_string(),
            real(r.loss.total),
            real(r.loss.boundary),
            real(r.loss.interior),
            real(r.duality_gap),
            opt(r.rel_l2_error),
            real(r.lr),
            real(elapsed),
            real(loss_ema),
            real(gap_ema),
            opt(err_ema),
        ])?;
        Ok(())
    }

    pub fn flush(&mut self) -> anyhow::Result<()> {
        Ok(self.out.flush()?)
    }
}

/// `x1..xd, u, v, exact` on the slice grid; `exact` is empty without a reference.
pub fn write_solution_dump<T: Scalar>(
    path: &Path,
    problem: &PdeProblem,
    grid: &Array2<f64>,
    u: &MlpNet<T>,
    v: &MlpNet<T>,
) -> anyhow::Result<()> {
    let pts = grid.mapv(T::of);
    let uu = u.eval_many(pts.view())?;
    let vv = v.eval_many(pts.view())?;
    let mut out = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header: Vec<String> = (1..=grid.ncols()).map(|i| format!("x{i}")).collect();
    header.extend(["u", "v", "exact"].map(String::from));
    out.write_record(&header)?;
    for (i, x) in grid.rows().into_iter().enumerate() {
        let mut row: Vec<String> = x.iter().map(|&c| real(c)).collect();
        row.push(real(uu[i].as_f64()));
        row.push(real(vv[i].as_f64()));
        row.push(opt(problem.exact.as_ref().map(|e| e(x.as_slice().unwrap()))));
        out.write_record(&row)?;
    }
    Ok(out.flush()?)
}

/// `x, y, u` for every non-excluded node of a finite-difference solution.
pub fn write_reference(out: impl Write, sol: &FdSolution) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "u"])?;
    for (x, y, u) in sol.nodes() {
        w.write_record([real(x), real(y), real(u)])?;
    }
    Ok(w.flush()?)
}
