//! Batch training, validation and the full table pipeline.
//!
//! For every order `s` and batch size the training set is cut into
//! contiguous batches. Each batch gets its own learned weight `σ*` and its
//! own scalar parameter `ν*`; both are then scored on the shared validation
//! set. Batches are processed through [`crate::par`], and every reduction
//! runs in batch order, so results do not depend on scheduling.

mod artifacts;
mod config;

pub use artifacts::{read_weight_csv, write_outputs, write_weight_csv};
pub use config::{Delta, ExperimentConfig};

use std::fmt;

use crate::datagen::{make_dataset, split_batches, DataSample, Dataset};
use crate::fem::{ForwardSystem, Mesh1D};
use crate::lower::LowerOperator;
use crate::nonlocal::{Admissible, NonlocalTensor, WeightGrid, WeightVector};
use crate::optimizer::{learn_scalar_nu, pdas_solve, BoxBounds, OptimizerState, StoppingCriteria};
use crate::reduced::{ReducedProblem, RegularizerParams};
use crate::{par, Error, Result};

/// Everything that depends on `s` but not on the data.
#[derive(Debug, Clone)]
pub struct Setup {
    pub s: f64,
    pub op: LowerOperator,
    pub admissible: Admissible,
    pub bounds: BoxBounds,
    pub reg: RegularizerParams,
    pub criteria: StoppingCriteria,
    pub nu_init: f64,
    pub warm_start: bool,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig, s: f64) -> Result<Self> {
        cfg.validate()?;
        let mesh = Mesh1D::new(cfg.n_nodes)?;
        let forward = ForwardSystem::assemble(&mesh, cfg.rho)?;
        Self::from_forward(cfg, forward, s)
    }

    /// Reuse an assembled forward system (e.g. the one that generated the
    /// data).
    pub fn from_forward(cfg: &ExperimentConfig, forward: ForwardSystem, s: f64) -> Result<Self> {
        let grid = cfg.grid()?;
        let admissible = cfg.admissible()?;
        let tensor = NonlocalTensor::assemble(forward.mesh(), &grid, s)?;
        let op = LowerOperator::new(forward, tensor)?;
        Ok(Self {
            s,
            bounds: admissible.bounds(&grid),
            reg: RegularizerParams::new(cfg.alpha, cfg.beta, grid.widths())?,
            op,
            admissible,
            criteria: cfg.criteria,
            nu_init: cfg.nu_init,
            warm_start: cfg.warm_start,
        })
    }

    pub fn grid(&self) -> &WeightGrid {
        self.op.tensor().grid()
    }

    /// Batch-mean reduced cost of `batch`.
    pub fn problem(&self, batch: &[DataSample]) -> Result<ReducedProblem<'_>> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        ReducedProblem::new(
            &self.op,
            &Dataset::y_delta_matrix(batch),
            &Dataset::u_true_matrix(batch),
            self.reg.clone(),
        )
    }

    /// `ν·1` as a weight on this grid.
    pub fn constant_weight(&self, nu: f64) -> Result<WeightVector> {
        WeightVector::constant(self.grid().clone(), nu, self.admissible)
    }
}

#[derive(Debug, Clone)]
pub struct SigmaFit {
    pub sigma: WeightVector,
    pub state: OptimizerState,
}

#[derive(Debug, Clone)]
pub struct NuFit {
    pub nu: f64,
    pub state: OptimizerState,
}

/// Learn the scalar parameter `ν*` for one batch, with `ν ∈ [γ₁, γ₂]`.
pub fn train_scalar(setup: &Setup, batch: &[DataSample]) -> Result<NuFit> {
    let problem = setup.problem(batch)?;
    let range = (setup.admissible.gamma1, setup.admissible.gamma2);
    let (nu, state) = learn_scalar_nu(&problem, range, setup.nu_init, &setup.criteria)?;
    Ok(NuFit { nu, state })
}

/// Learn the weight `σ*` for one batch, starting from `init` (default: the
/// constant `nu_init`).
pub fn run_training(setup: &Setup, batch: &[DataSample], init: Option<&[f64]>) -> Result<SigmaFit> {
    let problem = setup.problem(batch)?;
    let start = match init {
        Some(x) => x.to_vec(),
        None => setup.constant_weight(setup.nu_init)?.values().to_vec(),
    };
    let state = pdas_solve(&problem, &setup.bounds, &start, &setup.criteria)?;
    let sigma = WeightVector::new(setup.grid().clone(), state.sigma.clone(), setup.admissible)?;
    Ok(SigmaFit { sigma, state })
}

/// Average validation error over all (weight, sample) pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationSummary {
    pub mean_error: f64,
    pub n_pairs: usize,
    /// Pairs whose lower-level solve failed; excluded from the mean.
    pub n_failed: usize,
}

/// Solve the lower-level problem for every weight and validation sample and
/// average `‖u_σ − u†‖²_{L²}`.
pub fn run_validation(setup: &Setup, weights: &[WeightVector], val: &[DataSample]) -> Result<ValidationSummary> {
    if weights.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("validation needs weights and samples".into()));
    }
    let problem = setup.problem(val)?;
    if weights.iter().any(|w| w.grid() != setup.grid()) {
        return Err(Error::GridMismatch);
    }
    let per_weight = par::map(weights, |w| {
        problem.solve_raw(w.values()).map(|u| problem.sample_errors(&u))
    });
    let mut sum = 0.0;
    let mut n_pairs = 0;
    let mut n_failed = 0;
    for errs in per_weight {
        match errs {
            Ok(errs) => {
                for e in errs {
                    if e.is_finite() {
                        sum += e;
                        n_pairs += 1;
                    } else {
                        n_failed += 1;
                    }
                }
            }
            Err(_) => n_failed += val.len(),
        }
    }
    Ok(ValidationSummary {
        mean_error: if n_pairs > 0 { sum / n_pairs as f64 } else { f64::NAN },
        n_pairs,
        n_failed,
    })
}

/// Both learned parameters for one training batch.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub batch_id: usize,
    pub sigma: SigmaFit,
    pub nu: NuFit,
    /// Batch-mean `‖u − u†‖²` of the batch's own samples.
    pub train_err_sigma: f64,
    pub train_err_nu: f64,
    /// Reduced cost `F` at `σ*` and at `ν*·1`.
    pub objective_sigma: f64,
    pub objective_nu: f64,
}

impl BatchResult {
    pub fn flagged(&self) -> bool {
        !(self.sigma.state.converged() && self.nu.state.converged())
    }
}

/// Train `σ*` and `ν*` on one batch.
pub fn train_batch(setup: &Setup, batch_id: usize, batch: &[DataSample]) -> Result<BatchResult> {
    let nu = train_scalar(setup, batch)?;
    let init = setup.warm_start.then(|| vec![nu.nu; setup.grid().n_pieces()]);
    let sigma = run_training(setup, batch, init.as_deref())?;
    let problem = setup.problem(batch)?;
    let nu_values = vec![nu.nu; setup.grid().n_pieces()];
    Ok(BatchResult {
        batch_id,
        train_err_sigma: problem.mean_error_raw(sigma.sigma.values())?,
        train_err_nu: problem.mean_error_raw(&nu_values)?,
        objective_sigma: sigma.state.value,
        objective_nu: nu.state.value,
        sigma,
        nu,
    })
}

/// All batches of one (s, batch size) cell.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub s: f64,
    pub batch_size: usize,
    /// One entry per batch; failed batches carry the error message.
    pub batches: Vec<std::result::Result<BatchResult, String>>,
    pub val_sigma: Option<ValidationSummary>,
    pub val_nu: Option<ValidationSummary>,
}

impl RunResult {
    pub fn succeeded(&self) -> impl Iterator<Item = &BatchResult> {
        self.batches.iter().filter_map(|b| b.as_ref().ok())
    }

    pub fn n_failed(&self) -> usize {
        self.batches.iter().filter(|b| b.is_err()).count()
    }

    pub fn row(&self, case: crate::datagen::Case) -> TableRow {
        let ok: Vec<&BatchResult> = self.succeeded().collect();
        let mean = |f: &dyn Fn(&BatchResult) -> f64| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|b| f(b)).sum::<f64>() / ok.len() as f64
            }
        };
        TableRow {
            case,
            s: self.s,
            batch_size: self.batch_size,
            n_batches: self.batches.len(),
            train_err_nu: mean(&|b| b.train_err_nu),
            val_err_nu: self.val_nu.map_or(f64::NAN, |v| v.mean_error),
            train_err_sigma: mean(&|b| b.train_err_sigma),
            val_err_sigma: self.val_sigma.map_or(f64::NAN, |v| v.mean_error),
            n_flagged: ok.iter().filter(|b| b.flagged()).count(),
            n_failed: self.n_failed()
                + self.val_sigma.map_or(0, |v| v.n_failed)
                + self.val_nu.map_or(0, |v| v.n_failed),
        }
    }
}

/// Train every batch of one batch size and, if `val` is given, validate the
/// learned parameters.
pub fn run_cell(
    setup: &Setup,
    train: &[DataSample],
    val: Option<&[DataSample]>,
    batch_size: usize,
) -> Result<RunResult> {
    if batch_size == 0 || !train.len().is_multiple_of(batch_size) {
        return Err(Error::InvalidArgument(format!(
            "batch size {batch_size} does not divide {} samples",
            train.len()
        )));
    }
    let batches = split_batches(train, train.len() / batch_size)?;
    let ids: Vec<usize> = (0..batches.len()).collect();
    let results: Vec<_> = par::map(&ids, |&i| train_batch(setup, i, batches[i]).map_err(|e| e.to_string()));
    let ok: Vec<&BatchResult> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let (val_sigma, val_nu) = match val {
        Some(val) if !ok.is_empty() => {
            let sigmas: Vec<WeightVector> = ok.iter().map(|b| b.sigma.sigma.clone()).collect();
            let nus = ok
                .iter()
                .map(|b| setup.constant_weight(b.nu.nu))
                .collect::<Result<Vec<_>>>()?;
            (
                Some(run_validation(setup, &sigmas, val)?),
                Some(run_validation(setup, &nus, val)?),
            )
        }
        _ => (None, None),
    };
    Ok(RunResult {
        s: setup.s,
        batch_size,
        batches: results,
        val_sigma,
        val_nu,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub case: crate::datagen::Case,
    pub s: f64,
    pub batch_size: usize,
    pub n_batches: usize,
    pub train_err_nu: f64,
    pub val_err_nu: f64,
    pub train_err_sigma: f64,
    pub val_err_sigma: f64,
    /// Batches whose optimizer stopped on a flag.
    pub n_flagged: usize,
    /// Failed batches plus failed validation pairs.
    pub n_failed: usize,
}

/// Average squared `L²` errors per (s, batch size).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<TableRow>,
}

impl ResultTable {
    pub const HEADER: &'static str =
        "case,s,batch_size,n_batches,train_err_nu,val_err_nu,train_err_sigma,val_err_sigma,n_flagged,n_failed";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{},{}\n",
                r.case,
                r.s,
                r.batch_size,
                r.n_batches,
                r.train_err_nu,
                r.val_err_nu,
                r.train_err_sigma,
                r.val_err_sigma,
                r.n_flagged,
                r.n_failed
            ));
        }
        out
    }

    pub fn rows_for(&self, s: f64) -> impl Iterator<Item = &TableRow> {
        self.rows.iter().filter(move |r| r.s == s)
    }
}

impl fmt::Display for ResultTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>4} {:>5} {:>6} {:>13} {:>13} {:>13} {:>13} {:>5}",
            "case", "s", "batch", "train nu", "val nu", "train sigma", "val sigma", "flag"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>4} {:>5} {:>6} {:>13.6e} {:>13.6e} {:>13.6e} {:>13.6e} {:>5}",
                r.case,
                r.s,
                r.batch_size,
                r.train_err_nu,
                r.val_err_nu,
                r.train_err_sigma,
                r.val_err_sigma,
                r.n_flagged
            )?;
        }
        Ok(())
    }
}

/// Output of [`run_experiment`] and [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub train: Dataset,
    pub val: Option<Dataset>,
    pub runs: Vec<RunResult>,
    pub table: ResultTable,
}

/// Generate the datasets, then train and validate for every `s` and batch
/// size in `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let forward = ForwardSystem::assemble(&Mesh1D::new(cfg.n_nodes)?, cfg.rho)?;
    let train = make_dataset(cfg.case, cfg.n_train, &cfg.noise, &forward, cfg.seed)?;
    let val = make_dataset(cfg.case, cfg.n_val, &cfg.noise, &forward, cfg.val_seed())?;
    run_pipeline(cfg, train, Some(val))
}

/// Train on `train` for every `s` and batch size in `cfg`; validate on `val`
/// when given. `cfg.n_train` and `cfg.n_val` are taken from the datasets.
pub fn run_pipeline(cfg: &ExperimentConfig, train: Dataset, val: Option<Dataset>) -> Result<ExperimentOutput> {
    let mut cfg = cfg.clone();
    cfg.n_train = train.samples.len();
    if let Some(v) = &val {
        cfg.n_val = v.samples.len();
    }
    cfg.validate()?;
    for ds in std::iter::once(&train).chain(val.as_ref()) {
        if ds.n_nodes != cfg.n_nodes || ds.rho != cfg.rho {
            return Err(Error::InvalidArgument(format!(
                "dataset was generated with n_nodes={}, rho={} but the config has n_nodes={}, rho={}",
                ds.n_nodes, ds.rho, cfg.n_nodes, cfg.rho
            )));
        }
    }
    let forward = ForwardSystem::assemble(&Mesh1D::new(cfg.n_nodes)?, cfg.rho)?;
    let mut runs = Vec::new();
    for &s in &cfg.s_values {
        let setup = Setup::from_forward(&cfg, forward.clone(), s)?;
        for &bs in &cfg.batch_sizes {
            let v = val.as_ref().map(|v| v.samples.as_slice());
            runs.push(run_cell(&setup, &train.samples, v, bs)?);
        }
    }
    let table = ResultTable {
        rows: runs.iter().map(|r| r.row(train.case)).collect(),
    };
    Ok(ExperimentOutput {
        config: cfg,
        train,
        val,
        runs,
        table,
    })
}

/// Interior local maxima of a step function as `(position, value)`, largest
/// value first. A plateau counts once, at its center.
pub fn local_maxima(positions: &[f64], values: &[f64]) -> Vec<(f64, f64)> {
    let n = values.len().min(positions.len());
    let mut out = Vec::new();
    let mut k = 1;
    while k + 1 < n {
        let mut end = k;
        while end + 1 < n && values[end + 1] == values[k] {
            end += 1;
        }
        if end + 1 < n && values[k] > values[k - 1] && values[k] > values[end + 1] {
            out.push((0.5 * (positions[k] + positions[end]), values[k]));
        }
        k = end + 1;
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    out
}
