//! Seeded synthetic training and validation data.
//!
//! Draws come from `ChaCha20Rng::seed_from_u64(seed)`. For every sample the
//! stream yields three uniforms `ω ∈ [0,1)³` followed by one standard normal
//! per node; the noise amplitude is fixed after all samples are drawn, so the
//! stream layout does not depend on the scaling rule.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::fem::{ForwardSystem, Mesh1D};
use crate::{Error, NodalVector, Result};

/// Family of ground-truth controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Case {
    /// `sin(20 ω₁ x) + ω₃ cos(40 ω₂ x)`
    A,
    /// `3 ω₃ cos(6π x + 10 ω₁) + 2 ω₂`, periodic with period 1/3.
    B,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::A => "A",
            Case::B => "B",
        })
    }
}

impl FromStr for Case {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Case::A),
            "B" | "b" => Ok(Case::B),
            other => Err(Error::InvalidArgument(format!("unknown case '{other}'"))),
        }
    }
}

fn check_omega(omega: [f64; 3]) -> Result<()> {
    if omega.iter().all(|w| (0.0..=1.0).contains(w)) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("omega {omega:?} outside [0,1]^3")))
    }
}

pub fn sample_case_a(omega: [f64; 3], mesh: &Mesh1D) -> Result<NodalVector> {
    check_omega(omega)?;
    let [w1, w2, w3] = omega;
    Ok(mesh.interpolate(|x| (20.0 * w1 * x).sin() + w3 * (40.0 * w2 * x).cos()))
}

pub fn sample_case_b(omega: [f64; 3], mesh: &Mesh1D) -> Result<NodalVector> {
    check_omega(omega)?;
    let [w1, w2, w3] = omega;
    Ok(mesh.interpolate(|x| 3.0 * w3 * (6.0 * std::f64::consts::PI * x + 10.0 * w1).cos() + 2.0 * w2))
}

pub fn sample_case(case: Case, omega: [f64; 3], mesh: &Mesh1D) -> Result<NodalVector> {
    match case {
        Case::A => sample_case_a(omega, mesh),
        Case::B => sample_case_b(omega, mesh),
    }
}

/// How the relative noise level maps to an absolute amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseScaling {
    /// `ε_abs = ε · max_i ‖y†_i‖_∞` over the whole dataset.
    DatasetMax,
    /// `ε_abs,i = ε · ‖y†_i‖_∞` per sample.
    PerSample,
    /// `ε` is used as the absolute amplitude.
    Absolute,
}

impl fmt::Display for NoiseScaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseScaling::DatasetMax => "dataset_max",
            NoiseScaling::PerSample => "per_sample",
            NoiseScaling::Absolute => "absolute",
        })
    }
}

impl FromStr for NoiseScaling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dataset_max" => Ok(NoiseScaling::DatasetMax),
            "per_sample" => Ok(NoiseScaling::PerSample),
            "absolute" => Ok(NoiseScaling::Absolute),
            other => Err(Error::InvalidArgument(format!("unknown noise scaling '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub epsilon: f64,
    pub scaling: NoiseScaling,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            scaling: NoiseScaling::DatasetMax,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSample {
    pub sample_id: usize,
    pub omega: [f64; 3],
    pub u_true: NodalVector,
    pub y_true: NodalVector,
    pub y_delta: NodalVector,
}

/// Generated samples plus the metadata needed to reproduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub case: Case,
    pub seed: u64,
    pub noise: NoiseModel,
    pub n_nodes: usize,
    pub rho: f64,
    pub samples: Vec<DataSample>,
}

impl Dataset {
    /// Columns `u†_i` as a matrix.
    pub fn u_true_matrix(samples: &[DataSample]) -> DMatrix<f64> {
        DMatrix::from_columns(&samples.iter().map(|s| s.u_true.clone()).collect::<Vec<_>>())
    }

    /// Columns `y_δ,i` as a matrix.
    pub fn y_delta_matrix(samples: &[DataSample]) -> DMatrix<f64> {
        DMatrix::from_columns(&samples.iter().map(|s| s.y_delta.clone()).collect::<Vec<_>>())
    }
}

/// Generate `n_samples` samples; identical arguments give bit-identical
/// output.
pub fn make_dataset(
    case: Case,
    n_samples: usize,
    noise: &NoiseModel,
    sys: &ForwardSystem,
    seed: u64,
) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    if !(noise.epsilon >= 0.0 && noise.epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid noise level {}", noise.epsilon)));
    }
    let mesh = sys.mesh();
    let n = mesh.n_nodes();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut drawn = Vec::with_capacity(n_samples);
    for id in 0..n_samples {
        let omega: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let xi: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let u_true = sample_case(case, omega, mesh)?;
        let y_true = sys.apply_forward(&u_true)?;
        drawn.push((id, omega, u_true, y_true, xi));
    }
    let global_max = drawn.iter().map(|d| d.3.amax()).fold(0.0, f64::max);
    let samples = drawn
        .into_iter()
        .map(|(sample_id, omega, u_true, y_true, xi)| {
            let amplitude = match noise.scaling {
                NoiseScaling::DatasetMax => noise.epsilon * global_max,
                NoiseScaling::PerSample => noise.epsilon * y_true.amax(),
                NoiseScaling::Absolute => noise.epsilon,
            };
            let y_delta = if amplitude == 0.0 {
                y_true.clone()
            } else {
                &y_true + NodalVector::from_vec(xi) * amplitude
            };
            DataSample {
                sample_id,
                omega,
                u_true,
                y_true,
                y_delta,
            }
        })
        .collect();
    Ok(Dataset {
        case,
        seed,
        noise: *noise,
        n_nodes: n,
        rho: sys.rho(),
        samples,
    })
}

/// Contiguous, equally sized batches.
pub fn split_batches(samples: &[DataSample], n_batches: usize) -> Result<Vec<&[DataSample]>> {
    if n_batches == 0 || !samples.len().is_multiple_of(n_batches) {
        return Err(Error::InvalidArgument(format!(
            "{n_batches} batches do not evenly divide {} samples",
            samples.len()
        )));
    }
    Ok(samples.chunks(samples.len() / n_batches).collect())
}

const CSV_HEADER: &str = "sample_id,node_index,x,u_true,y_true,y_delta";

/// Write the dataset as CSV: `#`-prefixed metadata lines (`# key=value`,
/// plus one `# omega=id,w1,w2,w3` line per sample), then the header
/// `sample_id,node_index,x,u_true,y_true,y_delta` and one row per node.
pub fn write_dataset_csv<W: Write>(ds: &Dataset, mesh: &Mesh1D, mut out: W) -> Result<()> {
    writeln!(out, "# case={}", ds.case)?;
    writeln!(out, "# seed={}", ds.seed)?;
    writeln!(out, "# epsilon={:.17e}", ds.noise.epsilon)?;
    writeln!(out, "# noise_scaling={}", ds.noise.scaling)?;
    writeln!(out, "# n_nodes={}", ds.n_nodes)?;
    writeln!(out, "# rho={:.17e}", ds.rho)?;
    writeln!(out, "# n_samples={}", ds.samples.len())?;
    for s in &ds.samples {
        writeln!(
            out,
            "# omega={},{:.17e},{:.17e},{:.17e}",
            s.sample_id, s.omega[0], s.omega[1], s.omega[2]
        )?;
    }
    writeln!(out, "{CSV_HEADER}")?;
    for s in &ds.samples {
        for (j, &x) in mesh.nodes().iter().enumerate() {
            writeln!(
                out,
                "{},{},{:.17e},{:.17e},{:.17e},{:.17e}",
                s.sample_id, j, x, s.u_true[j], s.y_true[j], s.y_delta[j]
            )?;
        }
    }
    Ok(())
}

/// Inverse of [`write_dataset_csv`].
pub fn read_dataset_csv<R: BufRead>(input: R) -> Result<Dataset> {
    let mut meta = std::collections::BTreeMap::new();
    let mut omegas = std::collections::BTreeMap::new();
    let mut rows: Vec<(usize, usize, [f64; 3])> = Vec::new();
    let mut seen_header = false;
    let perr = |line: usize, msg: String| Error::Parse { line, msg };
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let (k, v) = rest
                .trim()
                .split_once('=')
                .ok_or_else(|| perr(lineno, "metadata line without '='".into()))?;
            if k.trim() == "omega" {
                let parts: Vec<&str> = v.split(',').collect();
                if parts.len() != 4 {
                    return Err(perr(lineno, "omega needs id and three values".into()));
                }
                let id: usize = parts[0].trim().parse().map_err(|e| perr(lineno, format!("{e}")))?;
                let mut w = [0.0; 3];
                for (slot, p) in w.iter_mut().zip(&parts[1..]) {
                    *slot = p.trim().parse().map_err(|e| perr(lineno, format!("{e}")))?;
                }
                omegas.insert(id, w);
            } else {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if !seen_header {
            if line != CSV_HEADER {
                return Err(perr(lineno, format!("expected header '{CSV_HEADER}'")));
            }
            seen_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(perr(lineno, format!("expected 6 fields, got {}", f.len())));
        }
        let id: usize = f[0].parse().map_err(|e| perr(lineno, format!("{e}")))?;
        let j: usize = f[1].parse().map_err(|e| perr(lineno, format!("{e}")))?;
        let mut vals = [0.0; 3];
        for (slot, p) in vals.iter_mut().zip(&f[3..]) {
            *slot = p.parse().map_err(|e| perr(lineno, format!("{e}")))?;
        }
        rows.push((id, j, vals));
    }
    let get = |k: &str| -> Result<&String> {
        meta.get(k)
            .ok_or_else(|| perr(0, format!("missing metadata key '{k}'")))
    };
    let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|e| perr(0, format!("{k}: {e}"))) };
    let n_nodes: usize = get("n_nodes")?.parse().map_err(|e| perr(0, format!("n_nodes: {e}")))?;
    let case: Case = get("case")?.parse()?;
    let seed: u64 = get("seed")?.parse().map_err(|e| perr(0, format!("seed: {e}")))?;
    let noise = NoiseModel {
        epsilon: num("epsilon")?,
        scaling: get("noise_scaling")?.parse()?,
    };
    let rho = num("rho")?;

    let mut samples: Vec<DataSample> = Vec::new();
    for (id, j, [u, y, yd]) in rows {
        if samples.last().map(|s| s.sample_id) != Some(id) {
            samples.push(DataSample {
                sample_id: id,
                omega: omegas.get(&id).copied().unwrap_or([f64::NAN; 3]),
                u_true: NodalVector::zeros(n_nodes),
                y_true: NodalVector::zeros(n_nodes),
                y_delta: NodalVector::zeros(n_nodes),
            });
        }
        let s = samples.last_mut().unwrap();
        if j >= n_nodes {
            return Err(perr(0, format!("node index {j} out of range for sample {id}")));
        }
        s.u_true[j] = u;
        s.y_true[j] = y;
        s.y_delta[j] = yd;
    }
    Ok(Dataset {
        case,
        seed,
        noise,
        n_nodes,
        rho,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(n: usize) -> ForwardSystem {
        ForwardSystem::assemble(&Mesh1D::new(n).unwrap(), 0.1).unwrap()
    }

    #[test]
    fn case_a_formula() {
        let mesh = Mesh1D::new(33).unwrap();
        assert_eq!(sample_case_a([0.0; 3], &mesh).unwrap().amax(), 0.0);
        let u = sample_case_a([0.0, 1.0, 1.0], &mesh).unwrap();
        assert_eq!(u[0], 1.0);
        for (j, &x) in mesh.nodes().iter().enumerate() {
            assert!((u[j] - (40.0 * x).cos()).abs() < 1e-15);
        }
        let u = sample_case_a([1.0, 0.0, 1.0], &mesh).unwrap();
        for (j, &x) in mesh.nodes().iter().enumerate() {
            assert!((u[j] - ((20.0 * x).sin() + 1.0)).abs() < 1e-15);
        }
        assert!(sample_case_a([1.5, 0.0, 0.0], &mesh).is_err());
    }

    #[test]
    fn case_b_formula_and_period() {
        let mesh = Mesh1D::new(31).unwrap();
        assert_eq!(sample_case_b([0.0; 3], &mesh).unwrap().amax(), 0.0);
        let u = sample_case_b([0.0, 1.0, 0.0], &mesh).unwrap();
        assert!(u.iter().all(|&v| v == 2.0));
        let u = sample_case_b([0.0, 0.0, 1.0], &mesh).unwrap();
        assert_eq!(u[0], 3.0);
        assert!((u[10] - 3.0).abs() < 1e-13); // x = 1/3
        let u = sample_case_b([0.37, 0.2, 0.8], &mesh).unwrap();
        for j in 0..(31 - 10) {
            assert!((u[j] - u[j + 10]).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_and_deterministic() {
        let s = sys(17);
        let clean = NoiseModel {
            epsilon: 0.0,
            ..Default::default()
        };
        let ds = make_dataset(Case::A, 4, &clean, &s, 7).unwrap();
        assert!(ds.samples.iter().all(|d| d.y_delta == d.y_true));
        for d in &ds.samples {
            let y = s.apply_forward(&d.u_true).unwrap();
            assert_eq!(y, d.y_true);
        }
        let a = make_dataset(Case::B, 8, &NoiseModel::default(), &s, 42).unwrap();
        let b = make_dataset(Case::B, 8, &NoiseModel::default(), &s, 42).unwrap();
        assert_eq!(a, b);
        let c = make_dataset(Case::B, 8, &NoiseModel::default(), &s, 43).unwrap();
        assert_ne!(a.samples[0].y_delta, c.samples[0].y_delta);
        let ids: Vec<usize> = a.samples.iter().map(|d| d.sample_id).collect();
        assert_eq!(ids, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn batches() {
        let s = sys(5);
        let ds = make_dataset(Case::A, 12, &NoiseModel::default(), &s, 1).unwrap();
        assert_eq!(split_batches(&ds.samples, 1).unwrap()[0].len(), 12);
        let b = split_batches(&ds.samples, 12).unwrap();
        assert_eq!(b.len(), 12);
        assert!(b.iter().all(|b| b.len() == 1));
        assert_eq!(split_batches(&ds.samples, 4).unwrap()[1][0].sample_id, 3);
        assert!(split_batches(&ds.samples, 5).is_err());
        assert!(split_batches(&ds.samples, 0).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let s = sys(9);
        let ds = make_dataset(Case::B, 3, &NoiseModel::default(), &s, 9).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&ds, s.mesh(), &mut buf).unwrap();
        let back = read_dataset_csv(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(back, ds);
        let bad = String::from_utf8(buf).unwrap().replace(CSV_HEADER, "a,b,c");
        assert!(matches!(read_dataset_csv(bad.as_bytes()), Err(Error::Parse { .. })));
    }
}
