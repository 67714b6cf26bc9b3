//! On-disk layout of an experiment run:
//!
//! ```text
//! manifest.txt                       resolved config + per-batch status
//! table.csv                          ResultTable
//! weights/s<s>/bs<b>/batch<i>.csv    t_lo,t_hi,sigma
//! weights/s<s>/bs<b>/nu.csv          batch_id,nu
//! traces/s<s>/bs<b>/batch<i>_{sigma,nu}.csv
//! reconstructions/s<s>/bs<b>.csv     x,u_true,u_sigma,u_nu (validation sample 0, batch 0)
//! datasets/{train,val}.csv           with --dump-data
//! ```
//!
//! Everything is written after the computation finishes, from one thread, in
//! a fixed order.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{ExperimentOutput, RunResult};
use crate::datagen::write_dataset_csv;
use crate::fem::{ForwardSystem, Mesh1D};
use crate::lower::LowerOperator;
use crate::nonlocal::{NonlocalTensor, WeightGrid, WeightVector};
use crate::{Error, Result};

/// Step-function CSV `t_lo,t_hi,sigma`. The weight is re-validated against
/// its admissible set before writing.
pub fn write_weight_csv<W: Write>(sigma: &WeightVector, mut out: W) -> Result<()> {
    let checked = WeightVector::new(sigma.grid().clone(), sigma.values().to_vec(), sigma.admissible())?;
    writeln!(out, "t_lo,t_hi,sigma")?;
    for (k, v) in checked.values().iter().enumerate() {
        let (lo, hi) = checked.grid().piece(k);
        writeln!(out, "{lo:.17e},{hi:.17e},{v:.17e}")?;
    }
    Ok(())
}

/// Inverse of [`write_weight_csv`]: the grid and the piece values.
pub fn read_weight_csv<R: BufRead>(input: R) -> Result<(WeightGrid, Vec<f64>)> {
    let mut breakpoints = vec![0.0];
    let mut values = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if i == 0 {
            if line != "t_lo,t_hi,sigma" {
                return Err(Error::Parse {
                    line: 1,
                    msg: "expected header t_lo,t_hi,sigma".into(),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let f: Vec<f64> = line
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        if f.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                msg: "expected 3 fields".into(),
            });
        }
        if f[0] != *breakpoints.last().unwrap() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "pieces must be contiguous from 0".into(),
            });
        }
        breakpoints.push(f[1]);
        values.push(f[2]);
    }
    Ok((WeightGrid::from_breakpoints(breakpoints)?, values))
}

fn cell_dir(root: &Path, kind: &str, run: &RunResult) -> PathBuf {
    root.join(kind)
        .join(format!("s{}", run.s))
        .join(format!("bs{}", run.batch_size))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn manifest(output: &ExperimentOutput) -> String {
    let mut m = String::new();
    let _ = writeln!(m, "# nlreg {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(m, "# parallel = {}", crate::par::is_parallel());
    let _ = writeln!(
        m,
        "# train_seed = {}, val_seed = {}",
        output.config.seed,
        output.config.val_seed()
    );
    m.push_str(&output.config.to_text());
    for run in &output.runs {
        for (i, b) in run.batches.iter().enumerate() {
            let status = match b {
                Ok(b) => format!(
                    "ok sigma={} nu={} inner_sigma={} inner_nu={}",
                    b.sigma.state.flag.map_or("converged".to_string(), |f| f.to_string()),
                    b.nu.state.flag.map_or("converged".to_string(), |f| f.to_string()),
                    b.sigma.state.inner_iters,
                    b.nu.state.inner_iters,
                ),
                Err(e) => format!("failed: {e}"),
            };
            let _ = writeln!(m, "# run s={} batch_size={} batch={i}: {status}", run.s, run.batch_size);
        }
        for (name, v) in [("sigma", run.val_sigma), ("nu", run.val_nu)] {
            if let Some(v) = v {
                let _ = writeln!(
                    m,
                    "# validation s={} batch_size={} {name}: pairs={} failed={}",
                    run.s, run.batch_size, v.n_pairs, v.n_failed
                );
            }
        }
    }
    m
}

/// Write every artifact of `output` under `dir` and return the written paths
/// in order.
pub fn write_outputs(output: &ExperimentOutput, dir: &Path, dump_data: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |path: PathBuf, text: &[u8]| -> Result<()> {
        let mut f = create(&path)?;
        f.write_all(text)?;
        f.flush()?;
        written.push(path);
        Ok(())
    };

    put(dir.join("manifest.txt"), manifest(output).as_bytes())?;
    put(dir.join("table.csv"), output.table.to_csv().as_bytes())?;

    let cfg = &output.config;
    let mesh = Mesh1D::new(cfg.n_nodes)?;
    let forward = ForwardSystem::assemble(&mesh, cfg.rho)?;
    let mut current: Option<(f64, LowerOperator)> = None;
    for run in &output.runs {
        let wdir = cell_dir(dir, "weights", run);
        let tdir = cell_dir(dir, "traces", run);
        let mut nu_csv = String::from("batch_id,nu\n");
        for b in run.succeeded() {
            let mut buf = Vec::new();
            write_weight_csv(&b.sigma.sigma, &mut buf)?;
            put(wdir.join(format!("batch{:04}.csv", b.batch_id)), &buf)?;
            let _ = writeln!(nu_csv, "{},{:.17e}", b.batch_id, b.nu.nu);
            let mut buf = Vec::new();
            b.sigma.state.write_trace(&mut buf)?;
            put(tdir.join(format!("batch{:04}_sigma.csv", b.batch_id)), &buf)?;
            let mut buf = Vec::new();
            b.nu.state.write_trace(&mut buf)?;
            put(tdir.join(format!("batch{:04}_nu.csv", b.batch_id)), &buf)?;
        }
        put(wdir.join("nu.csv"), nu_csv.as_bytes())?;

        if let (Some(b), Some(sample)) = (
            run.succeeded().next(),
            output.val.as_ref().and_then(|v| v.samples.first()),
        ) {
            if current.as_ref().map(|c| c.0) != Some(run.s) {
                let tensor = NonlocalTensor::assemble(&mesh, b.sigma.sigma.grid(), run.s)?;
                current = Some((run.s, LowerOperator::new(forward.clone(), tensor)?));
            }
            let op = &current.as_ref().unwrap().1;
            let sys = op.system(&sample.y_delta)?;
            let u_sigma = sys.solve_raw(b.sigma.sigma.values())?;
            let u_nu = sys.solve_raw(&vec![b.nu.nu; b.sigma.sigma.values().len()])?;
            let mut csv = String::from("x,u_true,u_sigma,u_nu\n");
            for (j, x) in mesh.nodes().iter().enumerate() {
                let _ = writeln!(
                    csv,
                    "{x:.17e},{:.17e},{:.17e},{:.17e}",
                    sample.u_true[j], u_sigma[j], u_nu[j]
                );
            }
            let path = dir
                .join("reconstructions")
                .join(format!("s{}", run.s))
                .join(format!("bs{}.csv", run.batch_size));
            put(path, csv.as_bytes())?;
        }
    }

    if dump_data {
        let sets = [("train", Some(&output.train)), ("val", output.val.as_ref())];
        for (name, ds) in sets.into_iter().filter_map(|(n, d)| d.map(|d| (n, d))) {
            let mut buf = Vec::new();
            write_dataset_csv(ds, &mesh, &mut buf)?;
            put(dir.join("datasets").join(format!("{name}.csv")), &buf)?;
        }
    }
    Ok(written)
}
