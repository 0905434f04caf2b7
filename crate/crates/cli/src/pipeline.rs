//! Subcommand bodies. Each writes its artifacts plus a manifest into `out`.

use std::path::{Path, PathBuf};

use codex_core::acquisition::{bin_dense_projections, PhotonCounts};
use codex_core::experiment::{
    reconstruct_codex, reconstruct_ifbp, reconstruct_mbir, Method, Reconstruction, Scan,
};
use codex_core::metrics::{mtf_report, nrmse, rmse, MtfRadii};
use codex_core::phantom::{make_phantom, PhantomKind};
use codex_core::projector::Projector;
use codex_core::sampling::{ExposureCode, SamplingPlan};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CodeName, CodeSpec, ExperimentConfig};
use crate::error::Failure;
use crate::io::{read_array, write_array, write_csv, write_json, write_pgm, Manifest, Sidecar, MANIFEST};

fn write_manifest(out: &Path, command: &str, config: &ExperimentConfig, mut files: Vec<String>) -> Result<Manifest, Failure> {
    files.push(MANIFEST.into());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config_sha256: config.hash(),
        seed: config.seed,
        config: serde_json::to_value(config).expect("config serializes"),
        files,
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

fn view_sidecar(role: &str, shape: (usize, usize), plan: &SamplingPlan, code: &ExposureCode, lambda0: Option<f64>) -> Sidecar {
    Sidecar {
        angles: Some(plan.nominal_view_angles_rad()),
        plan: Some(plan.params()),
        code: Some(code.to_string()),
        lambda0,
        ..Sidecar::new(role, shape)
    }
}

/// Phantom, counts and log projections for the configured scan.
pub fn run_simulate(config: &ExperimentConfig, out: &Path) -> Result<Manifest, Failure> {
    let plan = &config.plan;
    let code = config.exposure_code()?;
    let geometry = config.geometry.resolve()?;
    let phantom = make_phantom(config.phantom, geometry.n_side, config.phantom_seed)?;
    let projector = Projector::new(geometry, &plan.micro_angles_rad())?;
    let scan = Scan::simulate(&projector, phantom.view(), plan, &code, config.lambda0, config.seed)?;

    let mut files = write_array(out, "phantom", &phantom, &Sidecar::new("image", phantom.dim()))?;
    files.push(write_pgm(out, "phantom", &phantom)?);
    let mut counts = view_sidecar("counts", scan.counts.values.dim(), plan, &code, config.lambda0);
    counts.seed = Some(config.seed);
    files.extend(write_array(out, "counts", &scan.counts.values, &counts)?);
    let mut y = view_sidecar("view", scan.y().dim(), plan, &code, config.lambda0);
    y.seed = Some(config.seed);
    y.clamped = Some(scan.projections.clamped());
    files.extend(write_array(out, "y", &scan.projections.y, &y)?);
    files.push(write_pgm(out, "y", &scan.projections.y)?);
    write_manifest(out, "simulate", config, files)
}

/// Coded view data from projections at all `N_theta` micro-angles.
pub fn run_bin(config: &ExperimentConfig, dense: &Path, out: &Path) -> Result<Manifest, Failure> {
    let plan = &config.plan;
    let code = config.exposure_code()?;
    let (values, _) = read_array(dense)?;
    if values.nrows() != plan.n_theta() {
        return Err(Failure::config(format!(
            "dense data has {} rows but the plan has N_theta = {}",
            values.nrows(),
            plan.n_theta()
        )));
    }
    let y = bin_dense_projections(values.view(), plan, &code)?;
    let mut files = write_array(out, "y", &y, &view_sidecar("view", y.dim(), plan, &code, None))?;
    files.push(write_pgm(out, "y", &y)?);
    write_manifest(out, "bin", config, files)
}

/// Rebuilds the scan stored in `data`, checking it against the config.
pub fn load_scan(config: &ExperimentConfig, data: &Path) -> Result<Scan, Failure> {
    let plan = &config.plan;
    let code = config.exposure_code()?;
    let geometry = config.geometry.resolve()?;
    let (y, side) = read_array(&data.join("y.f32"))?;
    if side.plan != Some(plan.params()) || side.code.as_deref() != Some(code.to_string().as_str()) {
        return Err(Failure::config(format!(
            "{} was acquired with plan {:?} and code {:?}, which differ from the config",
            data.display(),
            side.plan,
            side.code
        )));
    }
    if y.ncols() != geometry.num_detector_pixels {
        return Err(Failure::config(format!(
            "data has {} detector pixels, geometry has {}",
            y.ncols(),
            geometry.num_detector_pixels
        )));
    }
    let counts_path = data.join("counts.f32");
    if counts_path.exists() {
        let (values, side) = read_array(&counts_path)?;
        let counts = PhotonCounts {
            values,
            lambda0: side.lambda0,
            noisy: side.lambda0.is_some(),
        };
        Ok(Scan::from_counts(counts, plan, &code, geometry, side.seed.unwrap_or(config.seed))?)
    } else {
        Ok(Scan::from_projections(y, plan, &code, geometry)?)
    }
}

fn reconstruct(config: &ExperimentConfig, scan: &Scan) -> Result<Reconstruction, Failure> {
    let recon = match config.method {
        Method::Codex => {
            let projector = Projector::new(scan.geometry, &scan.plan.micro_angles_rad())?;
            reconstruct_codex(scan, &projector, &config.regularization, &config.codex)?
        }
        Method::Mbir => reconstruct_mbir(scan, &config.regularization, &config.mbir)?,
        Method::Ifbp => reconstruct_ifbp(scan, &config.ifbp)?,
    };
    if recon.image.iter().any(|v| !v.is_finite()) {
        return Err(Failure::Numerical("reconstruction contains non-finite pixels".into()));
    }
    Ok(recon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconMetrics {
    pub method: Method,
    pub nrmse: Option<f64>,
    pub rmse: Option<f64>,
    pub outer_iterations: usize,
    pub deblur_stalls: usize,
    pub clamped_bins: usize,
}

pub fn run_reconstruct(config: &ExperimentConfig, data: &Path, out: &Path) -> Result<ReconMetrics, Failure> {
    let scan = load_scan(config, data)?;
    let recon = reconstruct(config, &scan)?;
    let phantom_path = data.join("phantom.f32");
    let truth = if phantom_path.exists() { Some(read_array(&phantom_path)?.0) } else { None };
    let metrics = ReconMetrics {
        method: config.method,
        nrmse: truth.as_ref().map(|t| nrmse(recon.image.view(), t.view())).transpose()?,
        rmse: truth.as_ref().map(|t| rmse(recon.image.view(), t.view())).transpose()?,
        outer_iterations: recon.history.len(),
        deblur_stalls: recon.stalls,
        clamped_bins: scan.projections.clamped(),
    };

    let mut side = Sidecar::new("image", recon.image.dim());
    side.seed = Some(scan.seed);
    let mut files = write_array(out, "recon", &recon.image, &side)?;
    files.push(write_pgm(out, "recon", &recon.image)?);
    if !recon.history.is_empty() {
        let rows = recon.history.iter().map(|r| format!("{},{:e},{:e}", r.iteration, r.primal, r.dual));
        write_csv(&out.join("residuals.csv"), "iteration,primal,dual", rows)?;
        files.push("residuals.csv".into());
    }
    if !recon.costs.is_empty() {
        let rows = recon.costs.iter().enumerate().map(|(i, c)| format!("{i},{c:e}"));
        write_csv(&out.join("costs.csv"), "sweep,cost", rows)?;
        files.push("costs.csv".into());
    }
    write_json(&out.join("metrics.json"), &metrics)?;
    files.push("metrics.json".into());
    write_manifest(out, "reconstruct", config, files)?;
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub nrmse: f64,
    pub rmse: f64,
    pub mtf: bool,
}

/// NRMSE/RMSE against `reference` (or the configured phantom) and, for star
/// and ring phantoms, MTF curves at the near and far radius.
pub fn run_metrics(config: &ExperimentConfig, image: &Path, reference: Option<&Path>, out: &Path) -> Result<ImageMetrics, Failure> {
    let (recon, _) = read_array(image)?;
    let truth = match reference {
        Some(path) => read_array(path)?.0,
        None => make_phantom(config.phantom, config.geometry.n_side, config.phantom_seed)?,
    };
    let mut files = Vec::new();
    let with_mtf = matches!(config.phantom, PhantomKind::SiemensStar { .. } | PhantomKind::ConcentricCircles);
    if with_mtf {
        let report = mtf_report(recon.view(), config.phantom, MtfRadii::default())?;
        let rows = [("near", &report.near), ("far", &report.far)].into_iter().flat_map(|(label, curve)| {
            curve
                .frequencies
                .iter()
                .zip(&curve.magnitudes)
                .map(move |(f, m)| format!("{label},{},{:.4},{f:.6},{m:.6}", curve.direction.name(), curve.radius))
                .collect::<Vec<_>>()
        });
        write_csv(&out.join("mtf.csv"), "position,direction,radius_px,frequency,mtf", rows)?;
        files.push("mtf.csv".into());
    }
    let metrics = ImageMetrics {
        nrmse: nrmse(recon.view(), truth.view())?,
        rmse: rmse(recon.view(), truth.view())?,
        mtf: with_mtf,
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    files.push("metrics.json".into());
    write_manifest(out, "metrics", config, files)?;
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub code: CodeName,
    pub code_length: usize,
    pub blur_angle_deg: Option<f64>,
    pub lambda0: Option<f64>,
    pub seeds: u64,
    pub rmse: Option<f64>,
    pub nrmse: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    fn csv(&self) -> String {
        let num = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            serde_json::to_value(self.code).expect("code serializes").as_str().unwrap_or_default(),
            self.code_length,
            num(self.blur_angle_deg),
            self.lambda0.map(|l| format!("{l:e}")).unwrap_or_else(|| "inf".into()),
            self.seeds,
            num(self.rmse),
            num(self.nrmse),
            self.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        )
    }
}

/// Mean RMSE and NRMSE over `seeds` scans of one sweep cell.
fn sweep_cell(
    config: &ExperimentConfig,
    projector: &Projector,
    phantom: &Array2<f64>,
    name: CodeName,
    length: usize,
    lambda0: Option<f64>,
    seeds: u64,
) -> Result<(f64, f64, f64), Failure> {
    let plan = SamplingPlan::coprime_with_micro_count(length, config.plan.n_theta(), config.plan.m_theta())?;
    let code = CodeSpec::named(name).build(length)?;
    let (mut sum_rmse, mut sum_nrmse) = (0.0, 0.0);
    for s in 0..seeds {
        let scan = Scan::simulate(projector, phantom.view(), &plan, &code, lambda0, config.seed + s)?;
        let recon = reconstruct(config, &scan)?;
        sum_rmse += rmse(recon.image.view(), phantom.view())?;
        sum_nrmse += nrmse(recon.image.view(), phantom.view())?;
    }
    Ok((plan.blur_angle_deg(), sum_rmse / seeds as f64, sum_nrmse / seeds as f64))
}

/// Flux and code-length sweep. Failing cells are reported in their row.
pub fn run_sweep(config: &ExperimentConfig, out: &Path) -> Result<Vec<SweepRow>, Failure> {
    let spec = config.sweep.as_ref().ok_or_else(|| Failure::config("sweep needs a `sweep` section"))?;
    let geometry = config.geometry.resolve()?;
    let phantom = make_phantom(config.phantom, geometry.n_side, config.phantom_seed)?;
    let projector = Projector::new(geometry, &config.plan.micro_angles_rad())?;
    let cells: Vec<(CodeName, usize, Option<f64>)> = spec
        .code_lengths
        .iter()
        .flat_map(|&k| spec.codes.iter().flat_map(move |&c| spec.lambda0.iter().map(move |&l| (c, k, l))))
        .collect();
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(code, code_length, lambda0)| {
            let result = sweep_cell(config, &projector, &phantom, code, code_length, lambda0, spec.seeds);
            let (blur, rmse, nrmse, error) = match result {
                Ok((b, r, n)) => (Some(b), Some(r), Some(n), None),
                Err(e) => (None, None, None, Some(e.to_string())),
            };
            SweepRow {
                code,
                code_length,
                blur_angle_deg: blur,
                lambda0,
                seeds: spec.seeds,
                rmse,
                nrmse,
                error,
            }
        })
        .collect();
    write_csv(
        &out.join("sweep.csv"),
        "code,code_length,blur_angle_deg,lambda0,seeds,rmse,nrmse,error",
        rows.iter().map(SweepRow::csv),
    )?;
    write_json(&out.join("sweep.json"), &rows)?;
    write_manifest(out, "sweep", config, vec!["sweep.csv".into(), "sweep.json".into()])?;
    Ok(rows)
}

/// Output directory: the `--out` flag, else the config's `output`.
pub fn output_dir(flag: Option<PathBuf>, config: &ExperimentConfig) -> Result<PathBuf, Failure> {
    flag.or_else(|| config.output.clone())
        .ok_or_else(|| Failure::config("no output directory: pass --out or set `output`"))
}
