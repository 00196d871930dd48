//! The experiment stages. Every stage reads its inputs from and writes its
//! outputs to the run directory, so stages can be rerun independently.

use std::fs;
use std::path::{Path, PathBuf};

use cspapi::acquisition::{add_noise, apply_cs, CsData};
use cspapi::csdesign::{
    assemble_block_diagonal, first_admissible_with_sin, optimize_sin, sin_number, StructuredCsMatrix,
};
use cspapi::geometry::{make_disc_phantom_averaged, SourceImage};
use cspapi::io::{
    read_cs_data, read_image, read_matrix, read_pressure, write_cs_data, write_diagnostics, write_image, write_matrix,
    write_means, write_pgm, write_pressure, write_recovered, MatrixMeta,
};
use cspapi::recon::two_step_reconstruct;
use cspapi::wave::{apply_t, circular_means, fbp_from_pressure, wave_forward, MeansData, PressureData};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{stage_seed, ExperimentConfig, Stage, Variant};
use crate::error::{CliError, CliResult};
use crate::report::{relative_error, ErrorReport, Table, VariantErrors};

/// SIN values below this are indistinguishable from a rank-deficient design.
pub const INFEASIBLE_SIN: f64 = 1e-10;

/// Largest subset size in the SIN-vs-k profile.
pub const PROFILE_MAX_K: usize = 5;

/// Fraction of the peak |means| above which a neighbour difference counts as a jump.
pub const JUMP_THRESHOLD: f64 = 0.05;

/// File names inside a run directory.
#[derive(Clone, Debug)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn matrix(&self, v: Variant) -> PathBuf {
        self.file(&format!("matrix_{}.csv", v.name()))
    }

    pub fn data(&self, v: Variant) -> PathBuf {
        self.file(&format!("y_{}.bin", v.name()))
    }

    pub fn image(&self, name: &str) -> PathBuf {
        self.file(&format!("image_{name}.bin"))
    }

    pub fn report(&self) -> PathBuf {
        self.file("report.json")
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn missing(path: &Path, stage: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Io(format!("{} not found; run `{stage}` first", path.display())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub k: usize,
    pub optimized_sin: f64,
    pub random_sin: f64,
    /// `(k, optimized, random)` for k = 1..=5, each the minimum over groups.
    pub profile: Vec<(usize, f64, f64)>,
}

fn group_sin(groups: &[StructuredCsMatrix], k: usize) -> CliResult<f64> {
    let mut worst = f64::INFINITY;
    for g in groups {
        worst = worst.min(sin_number(g.to_real::<f64>().view(), k)?.theta);
    }
    Ok(worst)
}

fn replicate<T: Clone>(first: T, count: usize) -> Vec<T> {
    vec![first; count]
}

/// Designs one matrix per group (or one shared design), draws the random
/// comparator and writes both assembled matrices and the SIN profile.
pub fn cmd_design(cfg: &ExperimentConfig) -> CliResult<DesignSummary> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.output);
    ensure_dir(layout.root())?;
    let s = &cfg.structure;
    let group = s.group_spec()?;
    let designs = if s.share_design { 1 } else { s.group_count };

    let mut optimized = Vec::with_capacity(designs);
    for g in 0..designs {
        let res = optimize_sin(&group, s.k, s.n_iter, stage_seed(s.seed, Stage::Design(g)))?;
        optimized.push(res.best_matrix);
    }
    if s.share_design {
        optimized = replicate(optimized.remove(0), s.group_count);
    }
    let optimized_sin = group_sin(&optimized, s.k)?;
    let assembled = assemble_block_diagonal(&optimized)?;
    write_matrix(
        &layout.matrix(Variant::Optimized),
        &assembled,
        &MatrixMeta::new(&assembled, s.k, optimized_sin, s.seed),
    )?;
    if !(optimized_sin >= INFEASIBLE_SIN) {
        println!("design infeasible: no SIN above machine precision (best {optimized_sin:e}) for m0 = {}", s.m0);
        return Err(CliError::Infeasible { sin: optimized_sin, k: s.k });
    }

    let mut random = Vec::with_capacity(designs);
    for g in 0..designs {
        let seed = stage_seed(s.seed, Stage::Comparator(g));
        match first_admissible_with_sin(&group, s.k, s.comparator_min_sin, s.comparator_max_draws, seed)? {
            Some((m, _)) => random.push(m),
            None => {
                println!(
                    "design infeasible: no random comparator with SIN >= {} in {} draws",
                    s.comparator_min_sin, s.comparator_max_draws
                );
                return Err(CliError::Infeasible { sin: 0.0, k: s.k });
            }
        }
    }
    if s.share_design {
        random = replicate(random.remove(0), s.group_count);
    }
    let random_sin = group_sin(&random, s.k)?;
    let assembled_random = assemble_block_diagonal(&random)?;
    write_matrix(
        &layout.matrix(Variant::Random),
        &assembled_random,
        &MatrixMeta::new(&assembled_random, s.k, random_sin, s.seed),
    )?;

    let max_k = PROFILE_MAX_K.min(group.n0());
    let mut profile = Vec::with_capacity(max_k);
    let mut csv = String::from("k,optimized,random\n");
    println!("SIN profile (minimum over groups)");
    println!("{:>3}  {:>10}  {:>10}", "k", "optimized", "random");
    for k in 1..=max_k {
        let (o, r) = (group_sin(&optimized, k)?, group_sin(&random, k)?);
        println!("{k:>3}  {o:>10.6}  {r:>10.6}");
        csv.push_str(&format!("{k},{o},{r}\n"));
        profile.push((k, o, r));
    }
    write_text(&layout.file("sin_profile.csv"), &csv)?;
    let summary = DesignSummary {
        k: s.k,
        optimized_sin,
        random_sin,
        profile,
    };
    write_json(&layout.file("design.json"), &summary)?;
    println!("design: SIN(k = {}) optimized {optimized_sin:.6}, random {random_sin:.6}", s.k);
    Ok(summary)
}

/// Gradient-jump statistics of the circular means per sensor group and time slice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpStats {
    pub threshold: f64,
    pub group_size: usize,
    pub max_jumps: usize,
    /// Share of (group, slice) pairs with at most two jumps.
    pub fraction_at_most_two: f64,
}

/// Counts neighbour differences above `JUMP_THRESHOLD · max|h|` inside each
/// group of `group_size` consecutive sensors.
pub fn jump_stats(means: &Array2<f64>, group_size: usize) -> JumpStats {
    let peak = means.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let threshold = JUMP_THRESHOLD * peak;
    let (n, q) = means.dim();
    let mut max_jumps = 0;
    let mut small = 0usize;
    let mut total = 0usize;
    for start in (0..n).step_by(group_size.max(1)) {
        let end = (start + group_size).min(n);
        for l in 0..q {
            let jumps = (start + 1..end)
                .filter(|&i| (means[[i, l]] - means[[i - 1, l]]).abs() > threshold)
                .count();
            max_jumps = max_jumps.max(jumps);
            small += usize::from(jumps <= 2);
            total += 1;
        }
    }
    JumpStats {
        threshold,
        group_size,
        max_jumps,
        fraction_at_most_two: if total == 0 { 1.0 } else { small as f64 / total as f64 },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub label: String,
    pub noise: f64,
    pub jumps: JumpStats,
    pub optimized_data_error: f64,
    pub random_data_error: f64,
}

fn load_matrix(layout: &Layout, v: Variant) -> CliResult<StructuredCsMatrix> {
    let path = layout.matrix(v);
    missing(&path, "design")?;
    Ok(read_matrix(&path)?.0)
}

fn check_matrix(cfg: &ExperimentConfig, a: &StructuredCsMatrix) -> CliResult<()> {
    if a.cols() != cfg.geometry.n {
        return Err(CliError::Dimension(format!(
            "matrix has {} columns but the configuration has {} detectors",
            a.cols(),
            cfg.geometry.n
        )));
    }
    Ok(())
}

/// Phantom, pressure, exact means and compressed data for both matrices.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> CliResult<SimulationSummary> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.output);
    ensure_dir(layout.root())?;
    let geom = cfg.sensor_geometry()?;
    let times = cfg.time_grid()?;
    let grid = cfg.image_grid()?;

    let phantom = make_disc_phantom_averaged(grid, &cfg.phantom.resolved_discs()?, cfg.phantom.supersample)?;
    write_image(&layout.file("phantom.bin"), &phantom)?;
    write_pgm(&layout.file("phantom.pgm"), phantom.values().view())?;

    let p = wave_forward(&phantom, &geom, &times);
    write_pressure(&layout.file("pressure.bin"), &p)?;
    write_pgm(&layout.file("pressure.pgm"), p.values().view())?;
    let means = circular_means(&phantom, &geom, &times);
    write_means(&layout.file("means.bin"), &means)?;
    write_pgm(&layout.file("means.pgm"), means.values().view())?;
    let jumps = jump_stats(means.values(), cfg.structure.b * cfg.structure.g);

    let mut errors = [0.0; 2];
    for (slot, v) in Variant::ALL.into_iter().enumerate() {
        let a = load_matrix(&layout, v)?;
        check_matrix(cfg, &a)?;
        let clean = apply_cs(&a, &p, v.name())?;
        let y = add_noise(&clean, cfg.noise, stage_seed(cfg.structure.seed, Stage::Noise(v)))?;
        errors[slot] = relative_error(y.values(), clean.values())?;
        write_cs_data(&layout.data(v), &y)?;
        write_pgm(&layout.file(&format!("y_{}.pgm", v.name())), y.values().view())?;
    }

    let summary = SimulationSummary {
        label: cfg.label(),
        noise: cfg.noise,
        jumps,
        optimized_data_error: errors[0],
        random_data_error: errors[1],
    };
    write_json(&layout.file("simulation.json"), &summary)?;
    println!(
        "simulate: {} | jumps per group and slice: max {}, {:.1}% at most two | data error {:.4} / {:.4}",
        summary.label,
        jumps.max_jumps,
        100.0 * jumps.fraction_at_most_two,
        errors[0],
        errors[1]
    );
    Ok(summary)
}

fn load_pressure(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<PressureData<f64>> {
    let path = layout.file("pressure.bin");
    missing(&path, "simulate")?;
    let p: PressureData<f64> = read_pressure(&path)?;
    let (n, q) = p.values().dim();
    if n != cfg.geometry.n || q != cfg.geometry.q {
        return Err(CliError::Dimension(format!(
            "pressure data is {n} x {q} but the configuration asks for {} x {}",
            cfg.geometry.n, cfg.geometry.q
        )));
    }
    Ok(p)
}

fn save_image(layout: &Layout, name: &str, image: &SourceImage<f64>) -> CliResult<()> {
    write_image(&layout.image(name), image)?;
    write_pgm(&layout.file(&format!("image_{name}.pgm")), image.values().view())?;
    Ok(())
}

/// Two-step reconstruction for both matrices plus the full-array baseline.
pub fn cmd_reconstruct(cfg: &ExperimentConfig) -> CliResult<ErrorReport> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.output);
    let geom = cfg.sensor_geometry()?;
    let grid = cfg.image_grid()?;
    let p = load_pressure(cfg, &layout)?;
    let phantom_path = layout.file("phantom.bin");
    missing(&phantom_path, "simulate")?;
    let phantom: SourceImage<f64> = read_image(&phantom_path)?;
    if phantom.grid().n_r() != cfg.geometry.n_r {
        return Err(CliError::Dimension(format!(
            "phantom has {} pixels per side but the configuration asks for {}",
            phantom.grid().n_r(),
            cfg.geometry.n_r
        )));
    }

    let target: MeansData<f64> = apply_t(&p);
    let baseline = fbp_from_pressure(&p, &geom, &grid)?;
    save_image(&layout, "full", &baseline)?;
    let full = VariantErrors {
        rel_image_error: relative_error(baseline.values(), phantom.values())?,
        ..VariantErrors::default()
    };

    let mut variants = [VariantErrors::default(); 2];
    for (slot, v) in Variant::ALL.into_iter().enumerate() {
        let a = load_matrix(&layout, v)?;
        check_matrix(cfg, &a)?;
        let path = layout.data(v);
        missing(&path, "simulate")?;
        let y: CsData<f64> = read_cs_data(&path, cfg.geometry.radius)?;
        if y.m() != a.rows() || y.times().q() != cfg.geometry.q {
            return Err(CliError::Dimension(format!(
                "{} holds {} x {} samples, expected {} x {}",
                path.display(),
                y.m(),
                y.times().q(),
                a.rows(),
                cfg.geometry.q
            )));
        }
        let clean = apply_cs(&a, &p, v.name())?;
        let yt = y.transformed()?;
        let peak = yt.values().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let opts = cfg.tv_options(peak);
        let (image, recovered) = two_step_reconstruct(&y, &a, &geom, &grid, &opts)?;
        save_image(&layout, v.name(), &image)?;
        write_recovered(&layout.file(&format!("recovered_{}.bin", v.name())), &recovered, &geom)?;
        write_pgm(&layout.file(&format!("recovered_{}.pgm", v.name())), recovered.values().view())?;
        write_diagnostics(&layout.file(&format!("diagnostics_{}.json", v.name())), &recovered)?;
        if recovered.unconverged() > 0 {
            eprintln!(
                "warning: {} of {} slices did not converge for the {} matrix",
                recovered.unconverged(),
                recovered.slices().len(),
                v.name()
            );
        }
        variants[slot] = VariantErrors {
            rel_data_error: relative_error(y.values(), clean.values())?,
            rel_cs_error: relative_error(recovered.values(), target.values())?,
            rel_fbp_error: relative_error(image.values(), baseline.values())?,
            rel_image_error: relative_error(image.values(), phantom.values())?,
        };
    }

    let report = ErrorReport {
        label: cfg.label(),
        optimized: variants[0],
        random: variants[1],
        full,
    };
    write_json(&layout.report(), &report)?;
    write_text(&layout.file("report.csv"), &report.to_csv())?;
    print!("reconstruct: {}\n{}", report.label, report.to_csv());
    Ok(report)
}

/// Merges run reports into one table, written next to `out` as CSV and text.
pub fn cmd_evaluate(reports: &[PathBuf], out: &Path) -> CliResult<Table> {
    let mut loaded = Vec::with_capacity(reports.len());
    for path in reports {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let report: ErrorReport =
            serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        loaded.push(report);
    }
    let table = Table::from_reports(&loaded)?;
    ensure_dir(out)?;
    write_text(&out.join("evaluation.csv"), &table.to_csv())?;
    let text = table.to_text();
    write_text(&out.join("evaluation.txt"), &text)?;
    print!("{text}");
    Ok(table)
}

/// All four stages on one configuration.
pub fn cmd_pipeline(cfg: &ExperimentConfig) -> CliResult<ErrorReport> {
    cmd_design(cfg)?;
    cmd_simulate(cfg)?;
    let report = cmd_reconstruct(cfg)?;
    let layout = Layout::new(&cfg.output);
    cmd_evaluate(&[layout.report()], layout.root())?;
    Ok(report)
}
