//! `mvm`: multi-view matching and reconstruction from the command line.
//!
//! Exit codes: 0 success, 2 unreadable or invalid input, 3 no detections,
//! 4 internal failure. Verbosity comes from `MVM_LOG` (`warn` by default).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mvm::affinity::{AffinityMode, AppearanceDescriptor, DetectionKey, Pose2D};
use mvm::geometry::CameraView;
use mvm::io::{self, IoError, PipelineConfig, SkeletonRecord};
use mvm::matching::{Partition, PoseGroup};
use mvm::metrics::EvalReport;
use mvm::pipeline::{
    evaluate, match_detections, reconstruct_all, refine_all, GroundTruth, PipelineError, PipelineInputs,
};
use mvm::reconstruction::Skeleton3D;
use mvm::refinement::{fit_gmm, BoneTable, GmmPrior};
use mvm::scene::ObservedScene;
use mvm::synth::{self, render_observations, sample_pose_corpus, sample_scene, SceneSpec};

const RESOLVED_CONFIG: &str = "config.resolved.toml";
const RESOLVED_SCENE: &str = "scene.resolved.toml";

#[derive(Parser)]
#[command(name = "mvm", version, about = "Multi-view matching and 3D reconstruction of frozen multi-person scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with ground truth.
    Synth(SynthArgs),
    /// Group detections by person (groups.json).
    Match(RunArgs),
    /// Triangulate every group (skeletons.json).
    Reconstruct(RunArgs),
    /// Bundle-adjust and scale-calibrate skeletons (skeletons.json).
    Refine(RunArgs),
    /// Score groups and skeletons (eval_report.json).
    Eval(EvalArgs),
    /// Match, reconstruct, refine and evaluate in one run.
    Pipeline(EvalArgs),
    /// Fit the Gaussian-mixture pose prior (gmm.json).
    FitGmm(FitGmmArgs),
    /// Convert a COLMAP text model to cameras.json.
    ImportColmap(ColmapArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description (TOML); defaults apply to missing keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Default)]
struct RunArgs {
    /// Run configuration (TOML). Flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    poses: Option<PathBuf>,
    #[arg(long)]
    cameras: Option<PathBuf>,
    #[arg(long)]
    descriptors: Option<PathBuf>,
    #[arg(long)]
    gmm: Option<PathBuf>,
    #[arg(long)]
    bones: Option<PathBuf>,
    #[arg(long)]
    groups: Option<PathBuf>,
    #[arg(long)]
    skeletons: Option<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Epipolar sharpness, px⁻¹.
    #[arg(long)]
    gamma: Option<f64>,
    /// Greedy merge threshold.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed_min_confidence: Option<f64>,
    /// Weight of the pose prior.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    robust_delta_px: Option<f64>,
    #[arg(long)]
    min_common_joints: Option<usize>,
    #[arg(long)]
    affinity_mode: Option<AffinityMode>,
    #[arg(long)]
    c_var_tau: Option<f64>,
    #[arg(long)]
    ransac_iterations: Option<usize>,
    #[arg(long)]
    inlier_threshold_px: Option<f64>,
    #[arg(long)]
    min_inliers: Option<usize>,
    #[arg(long)]
    min_parallax_deg: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Args)]
struct FitGmmArgs {
    /// Number of mixture components.
    #[arg(long, default_value_t = 8)]
    components: usize,
    /// skeletons.json whose fully valid skeletons form the corpus. Without
    /// it a synthetic corpus is drawn.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = synth::DEFAULT_CORPUS_JITTER)]
    jitter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ColmapArgs {
    #[arg(long)]
    cameras_txt: PathBuf,
    #[arg(long)]
    images_txt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    Input(String),
    NoDetections,
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Input(_) => 2,
            Self::NoDetections => 3,
            Self::Internal(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Input(m) | Self::Internal(m) => f.write_str(m),
            Self::NoDetections => f.write_str("no detections to process"),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        Self::Input(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::NoDetections => Self::NoDetections,
            e => Self::Internal(e.to_string()),
        }
    }
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

type Result<T> = std::result::Result<T, CliError>;

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
}

/// Config file first, then flags; every path made absolute.
fn resolve_config(args: &RunArgs) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let p = &mut cfg.paths;
    for (slot, flag) in [
        (&mut p.poses, &args.poses),
        (&mut p.cameras, &args.cameras),
        (&mut p.descriptors, &args.descriptors),
        (&mut p.gmm, &args.gmm),
        (&mut p.bones, &args.bones),
        (&mut p.groups, &args.groups),
        (&mut p.skeletons, &args.skeletons),
        (&mut p.ground_truth, &args.ground_truth),
        (&mut p.out, &args.out),
    ] {
        if let Some(f) = flag {
            *slot = Some(f.clone());
        }
        if let Some(s) = slot.as_mut() {
            *s = absolute(s)?;
        }
    }
    macro_rules! take {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = args.$flag { cfg.$($field).+ = v; })*
        };
    }
    take!(
        seed => seed,
        gamma => gamma,
        tau => tau,
        seed_min_confidence => seed_min_confidence,
        lambda => lambda,
        robust_delta_px => robust_delta_px,
        min_common_joints => min_common_joints,
        affinity_mode => affinity_mode,
        c_var_tau => c_var_tau,
        ransac_iterations => ransac.iterations,
        inlier_threshold_px => ransac.inlier_threshold_px,
        min_inliers => ransac.min_inliers,
        min_parallax_deg => ransac.min_parallax_deg,
    );
    cfg.validate().map_err(|m| CliError::Input(format!("invalid configuration: {m}")))?;
    Ok(cfg)
}

fn required<'a>(path: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::Input(format!("no {name} path given (--{name} or [paths] {name})")))
}

/// Inputs of one run, all parsed before any computation.
struct Loaded {
    cfg: PipelineConfig,
    out: PathBuf,
    poses: Vec<Pose2D>,
    cameras: Vec<CameraView>,
    descriptors: Option<BTreeMap<DetectionKey, AppearanceDescriptor>>,
}

/// Reads the configured inputs. Descriptors are only demanded by commands
/// that match.
fn load_common(args: &RunArgs, matches: bool) -> Result<Loaded> {
    let cfg = resolve_config(args)?;
    let out = required(&cfg.paths.out, "out")?.to_path_buf();
    let poses = io::read_poses(required(&cfg.paths.poses, "poses")?)?;
    let cameras = io::read_cameras(required(&cfg.paths.cameras, "cameras")?)?;
    let descriptors = match &cfg.paths.descriptors {
        Some(p) => Some(io::read_descriptors(p)?),
        None if !matches || cfg.affinity_mode == AffinityMode::Geometric => None,
        None => return Err(CliError::Input("descriptors are required unless affinity_mode is geometric".into())),
    };
    if poses.is_empty() {
        return Err(CliError::NoDetections);
    }
    ObservedScene::new(&poses, &cameras).map_err(|e| CliError::Input(e.to_string()))?;
    Ok(Loaded {
        cfg,
        out,
        poses,
        cameras,
        descriptors,
    })
}

fn read_optional<T>(path: &Option<PathBuf>, read: impl Fn(&Path) -> std::result::Result<T, IoError>) -> Result<Option<T>> {
    path.as_deref().map(read).transpose().map_err(Into::into)
}

/// Pairs each skeleton with the group of the same person.
fn pair_with_groups(partition: &Partition, records: Vec<SkeletonRecord>) -> Result<Vec<(PoseGroup, Skeleton3D)>> {
    records
        .into_iter()
        .map(|r| {
            let group = partition
                .groups
                .iter()
                .find(|g| g.person_id == r.skeleton.person_id)
                .ok_or_else(|| CliError::Input(format!("skeleton of person {} has no group", r.skeleton.person_id)))?;
            Ok((group.clone(), r.skeleton))
        })
        .collect()
}

/// Writes `(file name, contents)` pairs after all of them were computed.
fn write_all(out: &Path, files: &[(&str, String)]) -> Result<()> {
    for (name, text) in files {
        let path = out.join(name);
        std::fs::create_dir_all(out)
            .and_then(|_| std::fs::write(&path, text))
            .map_err(|e| CliError::Internal(format!("{}: cannot write: {e}", path.display())))?;
    }
    Ok(())
}

fn report_table(report: &EvalReport) -> String {
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6}"));
    let rows = [
        ("mean_reprojection_px".to_string(), format!("{:.6}", report.mean_reprojection_px)),
        ("mean_group_size".to_string(), format!("{:.6}", report.mean_group_size)),
        ("outlier_count".to_string(), report.outlier_count.to_string()),
        (format!("c_var ({})", io::C_VAR_UNITS), format!("{:.6}", report.c_var)),
        ("pa_mpjpe".to_string(), opt(report.pa_mpjpe)),
        ("clustering_f1".to_string(), opt(report.clustering_f1)),
    ];
    let width = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
}

fn print_report(report: &EvalReport, format: Format) {
    match format {
        Format::Table => print!("{}", report_table(report)),
        Format::Json => print!("{}", io::eval_report_to_json(report)),
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => io::load_scene_spec(p)?,
        None => SceneSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let scene = sample_scene(&spec).map_err(|e| CliError::Input(e.to_string()))?;
    let obs = render_observations(&scene, &spec).map_err(internal)?;
    log::info!("rendered {} detections in {} frames", obs.poses.len(), scene.cameras.len());
    write_all(
        &args.out,
        &[
            ("poses2d.json", io::poses_to_json(&obs.poses)),
            ("cameras.json", io::cameras_to_json(&scene.cameras)),
            ("descriptors.json", io::descriptors_to_json(&obs.descriptors)),
            ("ground_truth.json", io::ground_truth_to_json(&scene.people, &obs.labels)),
            ("bones.json", io::bones_to_json(&BoneTable::default())),
            (RESOLVED_SCENE, io::scene_spec_to_toml(&spec)),
        ],
    )
}

fn cmd_match(args: &RunArgs) -> Result<()> {
    let l = load_common(args, true)?;
    let partition = match_detections(&l.poses, &l.cameras, l.descriptors.as_ref(), &l.cfg.params())?;
    log::info!("{} groups", partition.groups.len());
    write_all(
        &l.out,
        &[
            ("groups.json", io::groups_to_json(&partition)),
            (RESOLVED_CONFIG, l.cfg.to_resolved_toml()),
        ],
    )
}

fn cmd_reconstruct(args: &RunArgs) -> Result<()> {
    let l = load_common(args, false)?;
    let partition = io::read_groups(required(&l.cfg.paths.groups, "groups")?)?;
    let scene = ObservedScene::new(&l.poses, &l.cameras).map_err(internal)?;
    let skeletons = reconstruct_all(&partition, &scene, &l.cfg.params().ransac)?;
    let records: Vec<SkeletonRecord> = skeletons
        .into_iter()
        .map(|(_, skeleton)| SkeletonRecord {
            skeleton,
            scale_factor: None,
        })
        .collect();
    write_all(
        &l.out,
        &[
            ("skeletons.json", io::skeletons_to_json(&records)),
            (RESOLVED_CONFIG, l.cfg.to_resolved_toml()),
        ],
    )
}

fn cmd_refine(args: &RunArgs) -> Result<()> {
    let l = load_common(args, false)?;
    let partition = io::read_groups(required(&l.cfg.paths.groups, "groups")?)?;
    let records = io::read_skeletons(required(&l.cfg.paths.skeletons, "skeletons")?)?;
    let gmm = read_optional(&l.cfg.paths.gmm, io::read_gmm)?;
    let bones = read_optional(&l.cfg.paths.bones, io::read_bones)?.unwrap_or_default();
    let paired = pair_with_groups(&partition, records)?;
    let scene = ObservedScene::new(&l.poses, &l.cameras).map_err(internal)?;
    let people = refine_all(&paired, &scene, gmm.as_ref(), &bones, &l.cfg.params().bundle)?;
    let records: Vec<SkeletonRecord> = people
        .into_iter()
        .map(|p| SkeletonRecord {
            skeleton: p.refined,
            scale_factor: p.scale_factor,
        })
        .collect();
    write_all(
        &l.out,
        &[
            ("skeletons.json", io::skeletons_to_json(&records)),
            (RESOLVED_CONFIG, l.cfg.to_resolved_toml()),
        ],
    )
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let l = load_common(&args.run, false)?;
    let partition = io::read_groups(required(&l.cfg.paths.groups, "groups")?)?;
    let records = io::read_skeletons(required(&l.cfg.paths.skeletons, "skeletons")?)?;
    let ground_truth = read_optional(&l.cfg.paths.ground_truth, io::read_ground_truth)?;
    let paired = pair_with_groups(&partition, records)?;
    let scene = ObservedScene::new(&l.poses, &l.cameras).map_err(internal)?;
    let scored: Vec<(&PoseGroup, &Skeleton3D)> = paired.iter().map(|(g, s)| (g, s)).collect();
    let report = evaluate(&partition, &scored, &scene, l.cfg.c_var_tau, ground_truth.as_ref())?;
    write_all(
        &l.out,
        &[
            ("eval_report.json", io::eval_report_to_json(&report)),
            (RESOLVED_CONFIG, l.cfg.to_resolved_toml()),
        ],
    )?;
    print_report(&report, args.format);
    Ok(())
}

fn cmd_pipeline(args: &EvalArgs) -> Result<()> {
    let l = load_common(&args.run, true)?;
    let gmm: Option<GmmPrior> = read_optional(&l.cfg.paths.gmm, io::read_gmm)?;
    let bones = read_optional(&l.cfg.paths.bones, io::read_bones)?.unwrap_or_default();
    let ground_truth: Option<GroundTruth> = read_optional(&l.cfg.paths.ground_truth, io::read_ground_truth)?;
    let inputs = PipelineInputs {
        poses: &l.poses,
        cameras: &l.cameras,
        descriptors: l.descriptors.as_ref(),
        gmm: gmm.as_ref(),
        bones: &bones,
        ground_truth: ground_truth.as_ref(),
    };
    let output = mvm::pipeline::run_pipeline(&inputs, &l.cfg.params())?;
    let records: Vec<SkeletonRecord> = output
        .people
        .iter()
        .map(|p| SkeletonRecord {
            skeleton: p.refined.clone(),
            scale_factor: p.scale_factor,
        })
        .collect();
    write_all(
        &l.out,
        &[
            ("groups.json", io::groups_to_json(&output.partition)),
            ("skeletons.json", io::skeletons_to_json(&records)),
            ("eval_report.json", io::eval_report_to_json(&output.report)),
            (RESOLVED_CONFIG, l.cfg.to_resolved_toml()),
        ],
    )?;
    print_report(&output.report, args.format);
    Ok(())
}

fn cmd_fit_gmm(args: &FitGmmArgs) -> Result<()> {
    let corpus = match &args.corpus {
        Some(path) => io::read_skeletons(path)?
            .into_iter()
            .filter_map(|r| r.skeleton.positions().into_iter().collect::<Option<Vec<_>>>())
            .collect(),
        None => sample_pose_corpus(args.samples, args.jitter, args.seed),
    };
    let fit = fit_gmm(&corpus, args.components, args.seed).map_err(|e| CliError::Input(e.to_string()))?;
    log::info!(
        "EM stopped after {} iterations, objective {:?}",
        fit.iterations,
        fit.objective_trace.last()
    );
    write_all(&args.out, &[("gmm.json", io::gmm_to_json(&fit.prior))])
}

fn cmd_import_colmap(args: &ColmapArgs) -> Result<()> {
    let cameras = io::import_colmap(&args.cameras_txt, &args.images_txt)?;
    log::info!("imported {} cameras", cameras.len());
    write_all(&args.out, &[("cameras.json", io::cameras_to_json(&cameras))])
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MVM_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Match(a) => cmd_match(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::FitGmm(a) => cmd_fit_gmm(a),
        Command::ImportColmap(a) => cmd_import_colmap(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mvm: {e}");
            ExitCode::from(e.code())
        }
    }
}
