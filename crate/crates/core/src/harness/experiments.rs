//! Experiment drivers: phantom and projection export, the dense-model
//! analysis, leave-one-out gray-value errors and the volume estimation
//! through the shape-model regression.
//!
//! Every command writes into its own subdirectory of the configured output
//! directory and returns a summary so callers (and tests) can check the
//! numbers without re-reading the CSVs.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use super::config::ExperimentConfig;
use crate::bilinear::{self, build_data_tensor, train_bilinear_with, BilinearModel};
use crate::error::{Error, Result};
use crate::exec;
use crate::io::{self, fmt, Window};
use crate::phantom::{self, hu_to_attenuation, PhantomSpec, Phase};
use crate::projector::{self, ProjectionImage, ProjectionStack, Trajectory, Volume};
use crate::regression::{self, RegressionMap};
use crate::ssm::{self, ShapeModel};
use crate::tensor::Tensor3;

/// The 4D phantom, its projections and the assembled data tensor.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: PhantomSpec,
    pub phases: Vec<Phase>,
    /// HU volumes, one per phase.
    pub volumes: Vec<Volume>,
    pub trajectory: Trajectory,
    pub stacks: Vec<ProjectionStack>,
    /// `pixels × phases × angles`.
    pub tensor: Tensor3,
}

/// HU to linear attenuation (mm⁻¹), voxelwise.
pub fn attenuation(v: &Volume) -> Volume {
    v.map(hu_to_attenuation)
}

impl Dataset {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.phantom_spec()?;
        log::info!("generating {} phantom phases on a {}³ grid", spec.phases.len(), cfg.grid);
        let generated = phantom::generate_4d(&spec)?;
        let (phases, volumes): (Vec<Phase>, Vec<Volume>) = generated.into_iter().unzip();
        Self::from_volumes(cfg, spec, phases, volumes)
    }

    pub fn from_volumes(cfg: &ExperimentConfig, spec: PhantomSpec, phases: Vec<Phase>, volumes: Vec<Volume>) -> Result<Self> {
        let trajectory = Trajectory::circular(cfg.angles, cfg.geometry())?;
        log::info!("projecting {} volumes at {} angles", volumes.len(), trajectory.len());
        let stacks =
            volumes.iter().map(|v| projector::project_stack(&attenuation(v), &trajectory)).collect::<Result<Vec<_>>>()?;
        let tensor = build_data_tensor(&stacks)?;
        Ok(Self { spec, phases, volumes, trajectory, stacks, tensor })
    }

    pub fn angles(&self) -> &[f64] {
        self.trajectory.angles()
    }

    pub fn image(&self, phase: usize, angle: usize) -> ProjectionImage {
        self.stacks[phase].images[angle].clone()
    }
}

fn subdir(cfg: &ExperimentConfig, name: &str) -> Result<PathBuf> {
    cfg.check_out_dir()?;
    let d = cfg.out.join(name);
    std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    Ok(d)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn volume_file(dir: &Path, phase: usize) -> PathBuf {
    dir.join(format!("phase_{phase:02}.mvol"))
}

pub fn stack_file(dir: &Path, phase: usize) -> PathBuf {
    dir.join(format!("phase_{phase:02}.mprj"))
}

fn manifest(cfg: &ExperimentConfig, extra: &str) -> String {
    format!("{}{extra}", cfg.to_text())
}

/// Write the phantom volumes (HU) and a manifest to `<out>/phantom`.
pub fn cmd_phantom(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let dir = subdir(cfg, "phantom")?;
    let spec = cfg.phantom_spec()?;
    let vols = phantom::generate_4d(&spec)?;
    let mut lines = String::new();
    let mut paths = Vec::with_capacity(vols.len());
    for (j, (p, v)) in vols.iter().enumerate() {
        let path = volume_file(&dir, j);
        io::write_volume(&path, v)?;
        lines += &format!("volume {j} {} {:?} {}\n", p.t(), p.label(), path.file_name().unwrap().to_string_lossy());
        paths.push(path);
    }
    write_text(&dir.join("manifest.txt"), &manifest(cfg, &lines))?;
    Ok(paths)
}

/// Project the exported phantom volumes; writes `<out>/projections`.
pub fn cmd_project(cfg: &ExperimentConfig) -> Result<Vec<ProjectionStack>> {
    cfg.validate()?;
    let vol_dir = cfg.out.join("phantom");
    let volumes = (0..cfg.phases).map(|j| io::read_volume(&volume_file(&vol_dir, j))).collect::<Result<Vec<_>>>()?;
    let dir = subdir(cfg, "projections")?;
    let traj = Trajectory::circular(cfg.angles, cfg.geometry())?;
    let mut stacks = Vec::with_capacity(volumes.len());
    for (j, v) in volumes.iter().enumerate() {
        let s = projector::project_stack(&attenuation(v), &traj)?;
        io::write_stack(&stack_file(&dir, j), &s)?;
        stacks.push(s);
    }
    let g = &traj.geometry;
    let mut text =
        format!("detector {} {}\npixel_spacing {} {}\n", g.detector[0], g.detector[1], g.pixel_spacing[0], g.pixel_spacing[1]);
    for (i, a) in traj.angles().iter().enumerate() {
        text += &format!("angle {i} {a} {}\n", a.to_degrees());
    }
    write_text(&dir.join("trajectory.txt"), &manifest(cfg, &text))?;
    Ok(stacks)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Population standard deviation.
fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    mean(&v.iter().map(|x| (x - m) * (x - m)).collect::<Vec<_>>()).sqrt()
}

/// Pearson correlation; zero when either side is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va > 0.0 && vb > 0.0 {
        cov / (va * vb).sqrt()
    } else {
        0.0
    }
}

fn column(m: &DMatrix<f64>, c: usize) -> Vec<f64> {
    m.column(c).iter().cloned().collect()
}

/// Mean and standard deviation of `|a − b|`.
pub fn abs_error_stats(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
    (mean(&d), std_dev(&d))
}

fn weight_rows(prefix: &str, m: &DMatrix<f64>) -> Vec<String> {
    (1..=m.ncols()).map(|c| format!("{prefix}{c}")).collect()
}

#[derive(Clone, Debug)]
pub struct Exp1Summary {
    pub ssm: ShapeModel,
    pub model: BilinearModel,
    pub ssm_explained: Vec<f64>,
    pub resp_explained: Vec<f64>,
    pub rot_explained: Vec<f64>,
    /// `std(A[:,0]) / std(A[:,1])`.
    pub resp_first_ratio: f64,
    /// `std(B[:,0]) / std(B[:,1])`.
    pub rot_first_ratio: f64,
    /// `|corr(A[:,n+1], ssm[:,n])|` for each available `n`.
    pub correspondence: Vec<f64>,
    pub motion_modes: usize,
}

pub fn cmd_experiment1(cfg: &ExperimentConfig) -> Result<Exp1Summary> {
    let ds = Dataset::build(cfg)?;
    experiment1(cfg, &ds)
}

/// Dense model on the whole tensor plus the shape model on all phases.
pub fn experiment1(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Exp1Summary> {
    let dir = subdir(cfg, "exp1")?;
    let nf = ds.phases.len();
    let ssm = ssm::train_ssm(&ds.volumes, nf - 1)?;
    let det = ds.trajectory.geometry.detector;
    let spacing = ds.trajectory.geometry.pixel_spacing;
    let model = train_bilinear_with(
        &ds.tensor,
        cfg.f.min(nf),
        cfg.g.min(ds.angles().len()),
        ds.angles(),
        &ds.phases,
        det,
        spacing,
        &cfg.train_options(),
    )?;
    io::write_model(&dir.join("model.blm"), &model, None)?;

    let a = &model.resp_weights;
    let b = &model.rot_weights;
    let phase_rows = |m: &DMatrix<f64>| -> Vec<Vec<String>> {
        ds.phases
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let mut r = vec![j.to_string(), fmt(p.t()), p.label()];
                r.extend(m.row(j).iter().map(|&v| fmt(v)));
                r
            })
            .collect()
    };
    let mut h: Vec<String> = vec!["phase_index".into(), "phase_t".into(), "label".into()];
    h.extend(weight_rows("w", &ssm.training_weights));
    io::write_csv(
        &dir.join("ssm_weights.csv"),
        &h.iter().map(String::as_str).collect::<Vec<_>>(),
        &phase_rows(&ssm.training_weights),
    )?;
    let mut h: Vec<String> = vec!["phase_index".into(), "phase_t".into(), "label".into()];
    h.extend(weight_rows("a", a));
    io::write_csv(&dir.join("resp_weights.csv"), &h.iter().map(String::as_str).collect::<Vec<_>>(), &phase_rows(a))?;
    let mut h: Vec<String> = vec!["angle_index".into(), "angle_deg".into()];
    h.extend(weight_rows("b", b));
    let rows: Vec<Vec<String>> = ds
        .angles()
        .iter()
        .enumerate()
        .map(|(i, ang)| {
            let mut r = vec![i.to_string(), fmt(ang.to_degrees())];
            r.extend(b.row(i).iter().map(|&v| fmt(v)));
            r
        })
        .collect();
    io::write_csv(&dir.join("rot_weights.csv"), &h.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?;

    let ssm_explained = ssm.explained_variance();
    let resp_explained = model.resp_explained_variance();
    let rot_explained = model.rot_explained_variance();
    let mut rows = Vec::new();
    for (name, curve) in [("ssm", &ssm_explained), ("bilinear_resp", &resp_explained), ("bilinear_rot", &rot_explained)] {
        for (k, v) in curve.iter().enumerate() {
            rows.push(vec![name.to_string(), (k + 1).to_string(), fmt(*v)]);
        }
    }
    io::write_csv(&dir.join("explained_variance.csv"), &["model", "component", "cumulative"], &rows)?;

    // Eigenimages: leading slices of the model tensor.
    for k in 0..model.f().min(3) {
        for l in 0..model.g().min(3) {
            let mut rot = vec![0.0; model.g()];
            rot[l] = 1.0;
            let mut resp = vec![0.0; model.f()];
            resp[k] = 1.0;
            let img = bilinear::synthesize(&model, &resp, &rot)?;
            io::write_image_pgm(&dir.join(format!("eigen_r{}_a{}.pgm", k + 1, l + 1)), &img, None)?;
        }
    }

    let ratio = |m: &DMatrix<f64>| {
        if m.ncols() < 2 {
            f64::NAN
        } else {
            std_dev(&column(m, 0)) / std_dev(&column(m, 1))
        }
    };
    let resp_first_ratio = ratio(a);
    let rot_first_ratio = ratio(b);
    let correspondence: Vec<f64> = (0..ssm.modes().min(model.f().saturating_sub(1)))
        .map(|n| correlation(&column(a, n + 1), &column(&ssm.training_weights, n)).abs())
        .collect();
    let motion_modes = ds.spec.motion_mode_count();

    let mut rows = vec![
        vec!["truncation_error".to_string(), fmt(model.truncation_error)],
        vec!["resp_first_std_ratio".into(), fmt(resp_first_ratio)],
        vec!["rot_first_std_ratio".into(), fmt(rot_first_ratio)],
        vec!["motion_modes".into(), motion_modes.to_string()],
    ];
    for (n, c) in correspondence.iter().enumerate() {
        rows.push(vec![format!("abs_corr_a{}_ssm{}", n + 2, n + 1), fmt(*c)]);
    }
    io::write_csv(&dir.join("summary.csv"), &["metric", "value"], &rows)?;
    log::info!(
        "exp1: truncation {:.3e}, first-column ratios {:.3}/{:.3}",
        model.truncation_error,
        resp_first_ratio,
        rot_first_ratio
    );

    Ok(Exp1Summary {
        ssm,
        model,
        ssm_explained,
        resp_explained,
        rot_explained,
        resp_first_ratio,
        rot_first_ratio,
        correspondence,
        motion_modes,
    })
}

/// Model trained without phase `held` and without the held-out angles.
pub fn train_holdout_model(cfg: &ExperimentConfig, ds: &Dataset, held: usize) -> Result<BilinearModel> {
    let (keep_angles, _) = cfg.angle_partition(ds.angles().len());
    let keep_phases: Vec<usize> = (0..ds.phases.len()).filter(|&j| j != held).collect();
    let sub = ds.tensor.select(&keep_phases, &keep_angles)?;
    let angles: Vec<f64> = keep_angles.iter().map(|&i| ds.angles()[i]).collect();
    let phases: Vec<Phase> = keep_phases.iter().map(|&j| ds.phases[j]).collect();
    train_bilinear_with(
        &sub,
        cfg.f.min(keep_phases.len()),
        cfg.g.min(keep_angles.len()),
        &angles,
        &phases,
        ds.trajectory.geometry.detector,
        ds.trajectory.geometry.pixel_spacing,
        &cfg.train_options(),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrayCell {
    pub phase: usize,
    pub angle: usize,
    pub reference_mean: f64,
    pub mean_abs_error: f64,
    pub std_abs_error: f64,
    pub percent: f64,
    pub dense_mean_abs_error: f64,
    pub dense_percent: f64,
    pub condition_number: f64,
}

#[derive(Clone, Debug)]
pub struct Exp2Summary {
    pub cells: Vec<GrayCell>,
    /// Pooled: mean absolute error over all cells / mean reference gray value × 100.
    pub mean_percent: f64,
    /// The same for the dense model with the configured ranks.
    pub dense_mean_percent: f64,
    pub mean_abs_error: f64,
    pub reference_mean: f64,
}

/// `err / reference × 100`; 0 for a zero reference.
pub fn error_percent(err: f64, reference: f64) -> f64 {
    if reference != 0.0 {
        err / reference * 100.0
    } else {
        0.0
    }
}

pub fn cmd_experiment2(cfg: &ExperimentConfig) -> Result<Exp2Summary> {
    let ds = Dataset::build(cfg)?;
    experiment2(cfg, &ds)
}

/// Leave-one-phase-out and held-out-angle gray-value errors.
pub fn experiment2(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Exp2Summary> {
    let dir = subdir(cfg, "exp2")?;
    let (_, held_angles) = cfg.angle_partition(ds.angles().len());
    if held_angles.is_empty() {
        return Err(Error::Config("no held-out angles with this stride/offset".into()));
    }
    let nf = ds.phases.len();
    let dense = train_bilinear_with(
        &ds.tensor,
        cfg.f.min(nf),
        cfg.g.min(ds.angles().len()),
        ds.angles(),
        &ds.phases,
        ds.trajectory.geometry.detector,
        ds.trajectory.geometry.pixel_spacing,
        &cfg.train_options(),
    )?;
    let held_phases = cfg.heldout_phases();
    let per_phase = exec::map_range(held_phases.len(), |hp| -> Result<Vec<(GrayCell, ProjectionImage)>> {
        let j = held_phases[hp];
        let model = train_holdout_model(cfg, ds, j)?;
        log::info!("exp2: phase {j} held out, truncation {:.3e}", model.truncation_error);
        held_angles
            .iter()
            .map(|&i| {
                let reference = ds.image(j, i);
                let (est, rebuilt) = bilinear::rebuild(&model, &reference, ds.angles()[i])?;
                let (mae, sd) = abs_error_stats(rebuilt.values(), reference.values());
                let resp: Vec<f64> = dense.resp_weights.row(j).iter().cloned().collect();
                let rot: Vec<f64> = dense.rot_weights.row(i).iter().cloned().collect();
                let dense_img = bilinear::synthesize(&dense, &resp, &rot)?;
                let (dmae, _) = abs_error_stats(dense_img.values(), reference.values());
                let rm = reference.mean();
                let diff: Vec<f64> = rebuilt.values().iter().zip(reference.values()).map(|(a, b)| a - b).collect();
                let diff = ProjectionImage::new(reference.dims(), reference.spacing(), diff)?;
                Ok((
                    GrayCell {
                        phase: j,
                        angle: i,
                        reference_mean: rm,
                        mean_abs_error: mae,
                        std_abs_error: sd,
                        percent: error_percent(mae, rm),
                        dense_mean_abs_error: dmae,
                        dense_percent: error_percent(dmae, rm),
                        condition_number: est.condition_number,
                    },
                    diff,
                ))
            })
            .collect()
    });

    let mut cells = Vec::new();
    for r in per_phase {
        for (cell, diff) in r? {
            let m = diff.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let window = Window { min: -m, max: m };
            io::write_image_pgm(&dir.join(format!("diff_p{}_a{:02}.pgm", cell.phase, cell.angle)), &diff, Some(window))?;
            cells.push(cell);
        }
    }

    let header = [
        "phase_index",
        "phase_label",
        "angle_index",
        "angle_deg",
        "reference_mean",
        "mean_abs_error",
        "std_abs_error",
        "error_percent",
        "dense_mean_abs_error",
        "dense_error_percent",
        "condition_number",
    ];
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                c.phase.to_string(),
                ds.phases[c.phase].label(),
                c.angle.to_string(),
                fmt(ds.angles()[c.angle].to_degrees()),
                fmt(c.reference_mean),
                fmt(c.mean_abs_error),
                fmt(c.std_abs_error),
                fmt(c.percent),
                fmt(c.dense_mean_abs_error),
                fmt(c.dense_percent),
                fmt(c.condition_number),
            ]
        })
        .collect();
    io::write_csv(&dir.join("gray_errors.csv"), &header, &rows)?;

    let mean_abs_error = mean(&cells.iter().map(|c| c.mean_abs_error).collect::<Vec<_>>());
    let reference_mean = mean(&cells.iter().map(|c| c.reference_mean).collect::<Vec<_>>());
    let dense_mae = mean(&cells.iter().map(|c| c.dense_mean_abs_error).collect::<Vec<_>>());
    let summary = Exp2Summary {
        mean_percent: error_percent(mean_abs_error, reference_mean),
        dense_mean_percent: error_percent(dense_mae, reference_mean),
        mean_abs_error,
        reference_mean,
        cells,
    };
    let rows = vec![
        vec!["cells".to_string(), summary.cells.len().to_string()],
        vec!["mean_abs_error".into(), fmt(summary.mean_abs_error)],
        vec!["reference_mean".into(), fmt(summary.reference_mean)],
        vec!["error_percent".into(), fmt(summary.mean_percent)],
        vec!["dense_mean_abs_error".into(), fmt(dense_mae)],
        vec!["dense_error_percent".into(), fmt(summary.dense_mean_percent)],
    ];
    io::write_csv(&dir.join("summary.csv"), &["metric", "value"], &rows)?;
    log::info!("exp2: {:.3}% mean gray error (dense model {:.3}%)", summary.mean_percent, summary.dense_mean_percent);
    Ok(summary)
}

/// Index of the training phase closest on the breathing cycle (ties go to
/// the lower index).
pub fn nearest_phase(phases: &[Phase], target: usize, candidates: &[usize]) -> usize {
    let mut best = candidates[0];
    for &c in candidates {
        if phases[c].distance(phases[target]) < phases[best].distance(phases[target]) - 1e-12 {
            best = c;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct HuCell {
    pub phase: usize,
    pub angle: usize,
    pub mean_abs_error: f64,
    pub std_abs_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HuPhase {
    pub phase: usize,
    pub mean_error: f64,
    pub across_angle_std: f64,
    pub baseline_phase: usize,
    pub baseline_error: f64,
    /// Error of the held-out volume projected onto the shape model.
    pub ssm_projection_error: f64,
}

#[derive(Clone, Debug)]
pub struct Exp3Summary {
    pub cells: Vec<HuCell>,
    pub phases: Vec<HuPhase>,
    pub beats_baseline: usize,
    pub mean_error: f64,
    pub mean_across_angle_std: f64,
}

/// Surrogate-driven volume estimate: bilinear weights → shape-model weights.
pub struct VolumeEstimator {
    pub model: BilinearModel,
    pub ssm: ShapeModel,
    pub regression: RegressionMap,
}

impl VolumeEstimator {
    /// Train on the listed phases and the retained angles.
    pub fn train(cfg: &ExperimentConfig, ds: &Dataset, held: usize) -> Result<Self> {
        let model = train_holdout_model(cfg, ds, held)?;
        let train_vols: Vec<Volume> = (0..ds.phases.len()).filter(|&j| j != held).map(|j| ds.volumes[j].clone()).collect();
        let e = cfg.modes_e.min(train_vols.len() - 1);
        let ssm = ssm::train_ssm(&train_vols, e)?;
        let regression = regression::fit_regression(&model.resp_weights, &ssm.training_weights, cfg.ridge)?;
        Ok(Self { model, ssm, regression })
    }

    pub fn estimate(&self, p: &ProjectionImage, angle: f64) -> Result<Volume> {
        let est = bilinear::estimate_respiratory(&self.model, p, angle)?;
        let w = regression::predict(&self.regression, &est.weights)?;
        self.ssm.reconstruct(&w)
    }
}

fn coronal(v: &Volume) -> (usize, usize, Vec<f64>) {
    let [nx, ny, nz] = v.dims();
    let j = ny / 2;
    let mut out = Vec::with_capacity(nx * nz);
    for k in 0..nz {
        for i in 0..nx {
            out.push(v.get(i, j, k));
        }
    }
    (nx, nz, out)
}

pub fn cmd_experiment3(cfg: &ExperimentConfig) -> Result<Exp3Summary> {
    let ds = Dataset::build(cfg)?;
    experiment3(cfg, &ds)
}

/// Held-out volume estimation through the shape-model regression.
pub fn experiment3(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Exp3Summary> {
    let dir = subdir(cfg, "exp3")?;
    let (_, held_angles) = cfg.angle_partition(ds.angles().len());
    if held_angles.is_empty() {
        return Err(Error::Config("no held-out angles with this stride/offset".into()));
    }
    if ds.phases.len() < 3 {
        return Err(Error::Config("volume estimation needs at least 3 phases".into()));
    }
    let held_phases = cfg.heldout_phases();
    type PhaseResult = (HuPhase, Vec<HuCell>, Volume, VolumeEstimator);
    let per_phase = exec::map_range(held_phases.len(), |hp| -> Result<PhaseResult> {
        let j = held_phases[hp];
        let estimator = VolumeEstimator::train(cfg, ds, j)?;
        let truth = &ds.volumes[j];
        let mut cells = Vec::with_capacity(held_angles.len());
        let mut first = None;
        for &i in &held_angles {
            let v = estimator.estimate(&ds.stacks[j].images[i], ds.angles()[i])?;
            let (m, s) = abs_error_stats(v.values(), truth.values());
            cells.push(HuCell { phase: j, angle: i, mean_abs_error: m, std_abs_error: s });
            first.get_or_insert(v);
        }
        let errs: Vec<f64> = cells.iter().map(|c| c.mean_abs_error).collect();
        let candidates: Vec<usize> = (0..ds.phases.len()).filter(|&c| c != j).collect();
        let baseline_phase = nearest_phase(&ds.phases, j, &candidates);
        let (baseline_error, _) = abs_error_stats(ds.volumes[baseline_phase].values(), truth.values());
        let projected = estimator.ssm.reconstruct(&estimator.ssm.weights_of(truth)?)?;
        let (ssm_projection_error, _) = abs_error_stats(projected.values(), truth.values());
        log::info!("exp3: phase {j} held out, mean HU error {:.3} (baseline {baseline_error:.3})", mean(&errs));
        Ok((
            HuPhase {
                phase: j,
                mean_error: mean(&errs),
                across_angle_std: std_dev(&errs),
                baseline_phase,
                baseline_error,
                ssm_projection_error,
            },
            cells,
            first.expect("held-out angles are non-empty"),
            estimator,
        ))
    });

    let mut phases = Vec::new();
    let mut cells = Vec::new();
    for r in per_phase {
        let (ph, c, estimate, estimator) = r?;
        let j = ph.phase;
        io::write_model(&dir.join(format!("model_p{j}.blm")), &estimator.model, Some(&estimator.regression))?;
        io::write_volume(&dir.join(format!("estimate_p{j}.mvol")), &estimate)?;
        let diff = estimate.lin_comb(1.0, &ds.volumes[j], -1.0)?;
        io::write_volume(&dir.join(format!("difference_p{j}.mvol")), &diff)?;
        let hu = Window { min: -1000.0, max: 200.0 };
        let (w, h, s) = coronal(&ds.volumes[j]);
        io::write_pgm(&dir.join(format!("coronal_truth_p{j}.pgm")), w, h, &s, Some(hu))?;
        let (w, h, s) = coronal(&estimate);
        io::write_pgm(&dir.join(format!("coronal_estimate_p{j}.pgm")), w, h, &s, Some(hu))?;
        let (w, h, s) = coronal(&diff);
        let m = s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        io::write_pgm(&dir.join(format!("coronal_difference_p{j}.pgm")), w, h, &s, Some(Window { min: -m, max: m }))?;
        phases.push(ph);
        cells.extend(c);
    }

    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                c.phase.to_string(),
                ds.phases[c.phase].label(),
                c.angle.to_string(),
                fmt(ds.angles()[c.angle].to_degrees()),
                fmt(c.mean_abs_error),
                fmt(c.std_abs_error),
            ]
        })
        .collect();
    io::write_csv(
        &dir.join("hu_errors.csv"),
        &["phase_index", "phase_label", "angle_index", "angle_deg", "mean_abs_hu_error", "std_abs_hu_error"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = phases
        .iter()
        .map(|p| {
            vec![
                p.phase.to_string(),
                ds.phases[p.phase].label(),
                fmt(p.mean_error),
                fmt(p.across_angle_std),
                p.baseline_phase.to_string(),
                fmt(p.baseline_error),
                fmt(p.ssm_projection_error),
                (p.mean_error < p.baseline_error).to_string(),
            ]
        })
        .collect();
    io::write_csv(
        &dir.join("hu_phases.csv"),
        &[
            "phase_index",
            "phase_label",
            "mean_hu_error",
            "across_angle_std",
            "baseline_phase_index",
            "baseline_mean_hu_error",
            "ssm_projection_hu_error",
            "beats_baseline",
        ],
        &rows,
    )?;

    let beats_baseline = phases.iter().filter(|p| p.mean_error < p.baseline_error).count();
    let mean_error = mean(&phases.iter().map(|p| p.mean_error).collect::<Vec<_>>());
    let mean_across_angle_std = mean(&phases.iter().map(|p| p.across_angle_std).collect::<Vec<_>>());
    io::write_csv(
        &dir.join("summary.csv"),
        &["metric", "value"],
        &[
            vec!["phases".to_string(), phases.len().to_string()],
            vec!["beats_baseline".into(), beats_baseline.to_string()],
            vec!["mean_hu_error".into(), fmt(mean_error)],
            vec!["mean_across_angle_std".into(), fmt(mean_across_angle_std)],
        ],
    )?;
    Ok(Exp3Summary { cells, phases, beats_baseline, mean_error, mean_across_angle_std })
}
