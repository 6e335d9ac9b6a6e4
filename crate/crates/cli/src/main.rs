//! `wsdesc`: synthesize pairs, train, extract descriptors, register, evaluate
//! and check gradients.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

mod gradcheck;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;
use wsdesc_core::datagen::{
    gt_pairs, list_pair_dirs, load_point_cloud, procedural_shape, read_pair, synthesize_pairs, PairGenConfig,
    DEFAULT_CROP_K, DEFAULT_MAX_ROT_DEG, DEFAULT_NOISE_CLIP, DEFAULT_SHAPE_POINTS, DEFAULT_TRANS_RANGE,
};
use wsdesc_core::descriptor::{
    extract_descriptors, init_network, keypoint_grid, load_checkpoint, save_checkpoint, write_descriptors, GridConfig,
};
use wsdesc_core::metrics::{
    correspondence_rmse, evaluation_csv, evaluation_json, inlier_ratio, summarize, PairEvaluation,
};
use wsdesc_core::pointcloud::{farthest_point_sample, PointCloud, RigidTransform, SpatialIndex};
use wsdesc_core::registration::{match_pair, ransac_register, RansacConfig, MIN_SAMPLE};
use wsdesc_core::trainer::{log_csv, train, TrainConfig, TrainOptions};
use wsdesc_core::NetworkParams32;

/// Weakly supervised local 3D descriptors for point cloud registration.
#[derive(Debug, Parser)]
#[command(name = "wsdesc", version)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// key = value file (training keys; other commands read r_lrf, sigma and cutoff) [default: none]
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print machine-readable JSON instead of text [default: off]
    #[arg(long, global = true, default_value_t = false)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate training or evaluation pairs from shapes.
    Synth(SynthArgs),
    /// Train a descriptor network on synthesized pairs.
    Train(TrainArgs),
    /// Write descriptors for keypoints of one or more clouds.
    Extract(ExtractArgs),
    /// Register a source cloud onto a target cloud.
    Register(RegisterArgs),
    /// Score registration on a directory of pairs.
    Evaluate(EvaluateArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Directory of .ply/.off/.xyz shapes [default: none]
    #[arg(long = "in", conflicts_with = "procedural", required_unless_present = "procedural")]
    input: Option<PathBuf>,
    /// Use this many procedural shapes instead of --in [default: none]
    #[arg(long)]
    procedural: Option<usize>,
    /// Points per procedural shape.
    #[arg(long, default_value_t = DEFAULT_SHAPE_POINTS)]
    shape_points: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of pairs.
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// Largest rotation per axis in degrees.
    #[arg(long, default_value_t = DEFAULT_MAX_ROT_DEG)]
    max_rot: f64,
    /// Largest translation per axis.
    #[arg(long, default_value_t = DEFAULT_TRANS_RANGE)]
    trans: f64,
    /// Points kept per cropped side.
    #[arg(long, default_value_t = DEFAULT_CROP_K)]
    crop_k: usize,
    /// Gaussian noise per coordinate; 0 disables it.
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    /// Noise clipping bound.
    #[arg(long, default_value_t = DEFAULT_NOISE_CLIP)]
    noise_clip: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Directory of pair_* directories.
    #[arg(long)]
    pairs: PathBuf,
    /// Checkpoint path.
    #[arg(long, default_value = "model.ck")]
    out: PathBuf,
    /// Training log CSV.
    #[arg(long, default_value = "train_log.csv")]
    log: PathBuf,
    /// Start from this checkpoint instead of a fresh network [default: none]
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 16_000)]
    steps: usize,
    /// Keypoints per cloud and step.
    #[arg(long, default_value_t = 512)]
    kp: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_o: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_c: f64,
    /// Network preset: standard or compact.
    #[arg(long, default_value = "standard")]
    arch: String,
    /// Grid resolution.
    #[arg(long, default_value_t = 16)]
    h: usize,
    /// Descriptor length.
    #[arg(long, default_value_t = 32)]
    n: usize,
    /// Frame radius.
    #[arg(long, default_value_t = 0.3)]
    r_lrf: f64,
    /// Voxelization sharpness.
    #[arg(long, default_value_t = 1e-3)]
    sigma: f64,
    /// Voxelization cutoff.
    #[arg(long, default_value_t = 1e-6)]
    cutoff: f64,
    #[arg(long, default_value_t = 500)]
    checkpoint_every: usize,
    /// Keep the support fixed [default: off]
    #[arg(long, default_value_t = false)]
    fixed_support: bool,
    /// Drop the feature-similarity weights [default: off]
    #[arg(long, default_value_t = false)]
    no_wf: bool,
    /// Drop the spectral weights [default: off]
    #[arg(long, default_value_t = false)]
    no_wsm: bool,
    /// Drop the orthogonality loss [default: off]
    #[arg(long, default_value_t = false)]
    no_lo: bool,
    /// Drop the cycle loss [default: off]
    #[arg(long, default_value_t = false)]
    no_lc: bool,
    /// Softmax-weighted target positions [default: off]
    #[arg(long, default_value_t = false)]
    soft_positions: bool,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Cloud to describe; repeatable.
    #[arg(long, required = true)]
    cloud: Vec<PathBuf>,
    /// File of keypoint indices, one per line, used for every cloud [default: farthest point sampling]
    #[arg(long)]
    keypoints: Option<PathBuf>,
    /// Keypoints sampled when --keypoints is absent.
    #[arg(long, default_value_t = 512)]
    num_keypoints: usize,
    /// Output directory for <stem>.desc and <stem>.desc.idx.
    #[arg(long, default_value = "descriptors")]
    out_dir: PathBuf,
    /// Also write each keypoint's voxel grid as text here [default: none]
    #[arg(long)]
    dump_voxels: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RansacArgs {
    /// Keypoints per cloud.
    #[arg(long, default_value_t = 512)]
    kp: usize,
    /// RANSAC inlier distance.
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(long, default_value_t = 50_000)]
    max_iters: usize,
    /// Early-stop confidence.
    #[arg(long, default_value_t = 0.999)]
    confidence: f64,
    /// Skip least-squares refinement on the inliers [default: off]
    #[arg(long, default_value_t = false)]
    no_refine: bool,
}

impl RansacArgs {
    fn config(&self, seed: u64) -> RansacConfig {
        RansacConfig {
            max_iters: self.max_iters,
            inlier_tau: self.tau,
            confidence: self.confidence,
            seed,
            refine: !self.no_refine,
        }
    }
}

#[derive(Debug, Args)]
struct RegisterArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    dst: PathBuf,
    #[command(flatten)]
    ransac: RansacArgs,
    /// Write the report here as well as to stdout [default: none]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the putative correspondences as text [default: none]
    #[arg(long)]
    dump_corrs: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Directory of pair_* directories.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    ransac: RansacArgs,
    /// Inlier distance for the inlier ratio.
    #[arg(long, default_value_t = 0.1)]
    tau1: f64,
    /// Inlier-ratio threshold for feature-match recall.
    #[arg(long, default_value_t = 0.05)]
    tau2: f64,
    /// Correspondence RMSE threshold for registration recall.
    #[arg(long, default_value_t = 0.2)]
    rr_threshold: f64,
    /// Write the CSV (or JSON with --json) here as well as to stdout [default: none]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GradMode {
    Quick,
    Full,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = GradMode::Full)]
    mode: GradMode,
}

/// A bad flag value, reported with exit code 1.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(&cli, &matches) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.downcast_ref::<UsageError>().is_some() { 1 } else { 2 })
        }
    }
}

fn run(cli: &Cli, matches: &ArgMatches) -> Result<ExitCode> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("starting the worker pool")?;
    }
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Train(a) => train_cmd(cli, a, sub),
        Command::Extract(a) => extract(cli, a),
        Command::Register(a) => register(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Gradcheck(a) => gradcheck_cmd(cli, a),
    }
}

fn emit(cli: &Cli, text: &str, value: serde_json::Value) -> Result<()> {
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&value)?);
    } else {
        print!("{text}");
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    Ok(cfg)
}

fn grid_config(cli: &Cli) -> Result<GridConfig> {
    Ok(read_config(cli)?.grid())
}

fn load_params(path: &Path) -> Result<NetworkParams32> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<ExitCode> {
    let cfg = PairGenConfig {
        max_rot_deg: a.max_rot,
        trans_range: a.trans,
        crop_k: a.crop_k,
        noise_std: a.noise_std,
        noise_clip: a.noise_clip,
        seed: cli.seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let shapes: Vec<PointCloud> = match (&a.input, a.procedural) {
        (Some(dir), _) => load_shapes(dir)?,
        (None, Some(n)) => {
            if n == 0 {
                return Err(usage("--procedural must be at least 1"));
            }
            let seeds = wsdesc_core::datagen::pair_seeds(cli.seed ^ 0x5eed, n);
            seeds
                .iter()
                .map(|&s| procedural_shape(s, a.shape_points))
                .collect::<Result<_, _>>()
                .map_err(|e| usage(e.to_string()))?
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let entries = synthesize_pairs(&shapes, &a.out, a.count, &cfg)?;
    let mut text = String::new();
    for e in &entries {
        let _ = writeln!(text, "{} overlap {:.4} seed {}", e.pair_id, e.overlap, e.seed);
    }
    let rows: Vec<_> = entries
        .iter()
        .map(|e| json!({"pair": e.pair_id, "overlap": e.overlap, "seed": e.seed}))
        .collect();
    emit(cli, &text, json!({ "out": a.out, "pairs": rows }))?;
    Ok(ExitCode::SUCCESS)
}

/// Every readable shape in `dir`; all unreadable files are reported at once.
fn load_shapes(dir: &Path) -> Result<Vec<PointCloud>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut shapes = Vec::new();
    let mut failures = Vec::new();
    for f in &files {
        match load_point_cloud(f) {
            Ok(c) => shapes.push(c),
            Err(e) => failures.push(format!("  {}: {e}", f.display())),
        }
    }
    if !failures.is_empty() {
        return Err(anyhow!("{} unreadable input file(s):\n{}", failures.len(), failures.join("\n")));
    }
    if shapes.is_empty() {
        return Err(anyhow!("no shapes in {}", dir.display()));
    }
    Ok(shapes)
}

fn train_cmd(cli: &Cli, a: &TrainArgs, m: &ArgMatches) -> Result<ExitCode> {
    let mut cfg = read_config(cli)?;
    let explicit = |id: &str| m.value_source(id) == Some(ValueSource::CommandLine);
    let flags: [(&str, String); 12] = [
        ("steps", a.steps.to_string()),
        ("kp", a.kp.to_string()),
        ("lr", a.lr.to_string()),
        ("lambda_o", a.lambda_o.to_string()),
        ("lambda_c", a.lambda_c.to_string()),
        ("arch", a.arch.clone()),
        ("h", a.h.to_string()),
        ("n", a.n.to_string()),
        ("r_lrf", a.r_lrf.to_string()),
        ("sigma", a.sigma.to_string()),
        ("cutoff", a.cutoff.to_string()),
        ("checkpoint_every", a.checkpoint_every.to_string()),
    ];
    for (id, v) in flags {
        if explicit(id) {
            let key = if id == "kp" { "kp_per_cloud" } else { id };
            cfg.set(key, &v).map_err(|e| usage(e.to_string()))?;
        }
    }
    for (id, on) in [
        ("fixed_support", a.fixed_support),
        ("no_wf", a.no_wf),
        ("no_wsm", a.no_wsm),
        ("no_lo", a.no_lo),
        ("no_lc", a.no_lc),
        ("soft_positions", a.soft_positions),
    ] {
        if on {
            cfg.set(id, "true").map_err(|e| usage(e.to_string()))?;
        }
    }
    if explicit("seed") || cli.config.is_none() {
        cfg.seed = cli.seed;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let dataset = list_pair_dirs(&a.pairs)?
        .iter()
        .map(|d| read_pair(d).with_context(|| format!("reading pair {}", d.display())))
        .collect::<Result<Vec<_>>>()?;
    let arch = cfg.architecture()?;
    let params: NetworkParams32 = match &a.init {
        Some(p) => {
            let params = load_params(p)?;
            if params.arch != arch {
                return Err(anyhow!("{} does not match the configured architecture", p.display()));
            }
            params
        }
        None => init_network(&arch, cfg.seed, cfg.r_lrf)?,
    };
    let opts = TrainOptions {
        checkpoint: Some(a.out.clone()),
    };
    let out = train(&dataset, params, &cfg, &opts, |r| {
        if r.step % cfg.checkpoint_every == 0 {
            eprintln!("step {} l_pcr {:.5} support {:.5}", r.step, r.l_pcr, r.support);
        }
    })?;
    save_checkpoint(&out.params, &a.out)?;
    write_file(&a.log, &log_csv(&out.log))?;
    let text = format!(
        "checkpoint {}\nlog {}\nupdates {}\nskipped {}\nsupport {}\n",
        a.out.display(),
        a.log.display(),
        out.updates,
        out.skipped_steps,
        out.params.support()
    );
    emit(
        cli,
        &text,
        json!({
            "checkpoint": a.out,
            "log": a.log,
            "updates": out.updates,
            "skipped_steps": out.skipped_steps,
            "support": out.params.support(),
            "config": cfg,
        }),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn read_keypoints(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim()
                .parse()
                .map_err(|_| anyhow!("{} line {}: expected a keypoint index, got {l:?}", path.display(), n + 1))
        })
        .collect()
}

fn extract(cli: &Cli, a: &ExtractArgs) -> Result<ExitCode> {
    let grid = grid_config(cli)?;
    let params = load_params(&a.ckpt)?;
    let fixed = a.keypoints.as_deref().map(read_keypoints).transpose()?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut text = String::new();
    let mut rows = Vec::new();
    for path in &a.cloud {
        let cloud = load_point_cloud(path)?;
        let keypoints = match &fixed {
            Some(k) => {
                if let Some(bad) = k.iter().find(|&&i| i >= cloud.len()) {
                    return Err(anyhow!("keypoint {bad} out of range for {} ({} points)", path.display(), cloud.len()));
                }
                k.clone()
            }
            None => farthest_point_sample(&cloud, a.num_keypoints.min(cloud.len()), cli.seed)?,
        };
        let ex = extract_descriptors(&cloud, &keypoints, &params, &grid)?;
        let stem = path.file_stem().map_or("cloud".into(), |s| s.to_string_lossy().into_owned());
        let desc = a.out_dir.join(format!("{stem}.desc"));
        write_descriptors(&desc, &ex.keypoints, &ex.descriptors)?;
        if let Some(dir) = &a.dump_voxels {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let index = SpatialIndex::build(&cloud)?;
            for &kp in &ex.keypoints {
                let g = keypoint_grid(&cloud, &index, kp, params.support(), params.arch.resolution, &grid)?;
                write_file(&dir.join(format!("{stem}_{kp}.txt")), &g.dump_text())?;
            }
        }
        let _ = writeln!(
            text,
            "{} -> {} ({} described, {} skipped)",
            path.display(),
            desc.display(),
            ex.keypoints.len(),
            ex.skipped.len()
        );
        rows.push(json!({
            "cloud": path,
            "descriptors": desc,
            "described": ex.keypoints.len(),
            "skipped": ex.skipped,
        }));
    }
    emit(cli, &text, json!({ "outputs": rows }))?;
    Ok(ExitCode::SUCCESS)
}

fn register(cli: &Cli, a: &RegisterArgs) -> Result<ExitCode> {
    let grid = grid_config(cli)?;
    let cfg = a.ransac.config(cli.seed);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let params = load_params(&a.ckpt)?;
    let src = load_point_cloud(&a.src)?;
    let dst = load_point_cloud(&a.dst)?;
    let matches = match_pair(&src, &dst, &params, a.ransac.kp, cli.seed, &grid)?;
    let (ps, qs) = matches.positions(&src, &dst);
    if let Some(path) = &a.dump_corrs {
        let mut s = String::from("# src_index dst_index src_x src_y src_z dst_x dst_y dst_z\n");
        for (k, &(i, j)) in matches.correspondences.iter().enumerate() {
            let (p, q) = (ps[k], qs[k]);
            let _ = writeln!(s, "{i} {j} {} {} {} {} {} {}", p.x, p.y, p.z, q.x, q.y, q.z);
        }
        write_file(path, &s)?;
    }
    if ps.len() < MIN_SAMPLE {
        return Err(anyhow!("registration failed: only {} mutual matches", ps.len()));
    }
    let result = ransac_register(&ps, &qs, &cfg)?;
    let report = if cli.json {
        let mut v = result.to_json();
        v["correspondences"] = json!(matches.correspondences.len());
        v["skipped_keypoints"] = json!(matches.skipped);
        serde_json::to_string_pretty(&v)? + "\n"
    } else {
        format!(
            "{}correspondences {}\nskipped_keypoints {}\n",
            result.to_text(),
            matches.correspondences.len(),
            matches.skipped
        )
    };
    print!("{report}");
    if let Some(path) = &a.out {
        write_file(path, &report)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<ExitCode> {
    let grid = grid_config(cli)?;
    let base = a.ransac.config(cli.seed);
    base.validate().map_err(|e| usage(e.to_string()))?;
    for (k, v) in [("--tau1", a.tau1), ("--tau2", a.tau2), ("--rr-threshold", a.rr_threshold)] {
        if !(v > 0.0) {
            return Err(usage(format!("{k} must be positive, got {v}")));
        }
    }
    let params = load_params(&a.ckpt)?;
    let mut evals = Vec::new();
    for (i, dir) in list_pair_dirs(&a.pairs)?.iter().enumerate() {
        let pair = read_pair(dir).with_context(|| format!("reading pair {}", dir.display()))?;
        let seed = cli.seed.wrapping_add(i as u64);
        let matches = match_pair(&pair.source, &pair.target, &params, a.ransac.kp, seed, &grid)?;
        let (ps, qs) = matches.positions(&pair.source, &pair.target);
        let corrs: Vec<_> = ps.iter().copied().zip(qs.iter().copied()).collect();
        let ir = inlier_ratio(&corrs, &pair.gt, a.tau1)?;
        let est = if ps.len() >= MIN_SAMPLE {
            ransac_register(&ps, &qs, &RansacConfig { seed, ..base })
                .map(|r| r.transform)
                .unwrap_or_else(|_| RigidTransform::identity())
        } else {
            RigidTransform::identity()
        };
        let corr_rmse = correspondence_rmse(&gt_pairs(&pair), &est)?;
        evals.push(PairEvaluation {
            pair_id: dir.file_name().map_or(String::new(), |n| n.to_string_lossy().into_owned()),
            ir: ir.value,
            num_corrs: corrs.len(),
            corr_rmse,
            registration_ok: corr_rmse < a.rr_threshold,
            est,
            gt: pair.gt,
        });
    }
    let summary = summarize(&evals, a.tau1, a.tau2, a.rr_threshold)?;
    let report = if cli.json {
        serde_json::to_string_pretty(&evaluation_json(&evals, &summary))? + "\n"
    } else {
        evaluation_csv(&evals, &summary)
    };
    print!("{report}");
    if let Some(path) = &a.out {
        write_file(path, &report)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck_cmd(cli: &Cli, a: &GradcheckArgs) -> Result<ExitCode> {
    let mode = match a.mode {
        GradMode::Quick => gradcheck::Mode::Quick,
        GradMode::Full => gradcheck::Mode::Full,
    };
    let results = gradcheck::run(mode)?;
    let ok = results.iter().all(|r| r.passed);
    emit(cli, &gradcheck::table(&results), json!({ "suites": results, "passed": ok }))?;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}
