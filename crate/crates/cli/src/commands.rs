//! The four subcommands and the argument surface. Each command returns an
//! exit code: 0 ok, 1 check failure, 2 usage, 3 numerical abort, 4 bad
//! artifact.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use tgan_core::data::write_samples_csv;
use tgan_core::eval::{EvalReport, REPORT_HEADER};
use tgan_core::gan::GanModel;
use tgan_core::tdist::{self, VerifyConfig};
use tgan_core::{Rng, Tensor};

use crate::checkpoint::{self, CheckpointError};
use crate::config::{RunConfig, KEYS};
use crate::image;
use crate::run::{self, RunError};

const VERIFY_STREAM: u64 = 7;
const GRID_POINTS: usize = 13;
const GRID_HALF_WIDTH: f64 = 3.0;
const DENSITY_SIZE: usize = 128;

pub const LOSSES_HEADER: &str = "step,d_loss,g_loss,c_loss";

fn with_config_args(cmd: Command) -> Command {
    let mut cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("PATH")
            .help("config file of `key = value` lines; flags override it"),
    );
    for (key, help) in KEYS {
        cmd = cmd.arg(Arg::new(*key).long(*key).value_name("VALUE").help(*help));
    }
    cmd
}

pub fn command() -> Command {
    Command::new("tgan")
        .about("Student's-t mixture latent GAN lab")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            with_config_args(Command::new("verify-theorem"))
                .about("check the standardization theorem over a random parameter sweep")
                .arg(
                    Arg::new("perturb-density")
                        .long("perturb-density")
                        .value_name("EPS")
                        .help("test hook: add EPS to the transformed density"),
                ),
        )
        .subcommand(with_config_args(Command::new("train")).about("train a model and write losses, checkpoints, images and an eval report"))
        .subcommand(
            with_config_args(Command::new("sample"))
                .about("draw class-conditional samples from a checkpoint")
                .arg(Arg::new("checkpoint").long("checkpoint").value_name("PATH").required(true).help("checkpoint file (.tgan)"))
                .arg(
                    Arg::new("labels")
                        .long("labels")
                        .value_name("LIST")
                        .help("comma-separated classes, one grid column each (default: all)"),
                )
                .arg(Arg::new("n").long("n").value_name("N").help("samples per class"))
                .arg(Arg::new("out").long("out").value_name("DIR").help("output directory (default: out_dir)"))
                .arg(
                    Arg::new("ppm")
                        .long("ppm")
                        .action(ArgAction::SetTrue)
                        .help("also write a color density plot for 2-D data"),
                ),
        )
        .subcommand(
            with_config_args(Command::new("eval"))
                .about("evaluate checkpoints against the real data")
                .arg(
                    Arg::new("checkpoint")
                        .long("checkpoint")
                        .value_name("PATH")
                        .action(ArgAction::Append)
                        .required(true)
                        .help("checkpoint to score; repeat for several"),
                )
                .arg(Arg::new("out").long("out").value_name("DIR").help("output directory (default: out_dir)")),
        )
}

/// Parses `args` (without the program name) and runs the command.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv = std::iter::once(std::ffi::OsString::from("tgan")).chain(args.into_iter().map(Into::into));
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match matches.subcommand() {
        Some(("verify-theorem", m)) => resolve_config(m, None).and_then(|mut c| {
            if let Some(eps) = m.get_one::<String>("perturb-density") {
                c.set("verify.perturb_density", eps).map_err(|e| RunError::Usage(e.to_string()))?;
            }
            cmd_verify_theorem(&c)
        }),
        Some(("train", m)) => resolve_config(m, None).and_then(|c| cmd_train(&c)),
        Some(("sample", m)) => sample_from_matches(m),
        Some(("eval", m)) => eval_from_matches(m),
        _ => Err(RunError::Usage("unknown subcommand".into())),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn read_text(path: &Path) -> Result<String, RunError> {
    fs::read_to_string(path).map_err(|e| RunError::Usage(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path, e: std::io::Error) -> RunError {
    RunError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// `base` (or defaults), then `--config`, then individual flags.
fn resolve_config(m: &ArgMatches, base: Option<RunConfig>) -> Result<RunConfig, RunError> {
    let mut cfg = base.unwrap_or_default();
    if let Some(p) = m.get_one::<String>("config") {
        cfg.apply_text(&read_text(Path::new(p))?)
            .map_err(|e| RunError::Usage(format!("{p}: {e}")))?;
    }
    for (key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v).map_err(|e| RunError::Usage(e.to_string()))?;
        }
    }
    cfg.validate().map_err(|e| RunError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn cmd_verify_theorem(cfg: &RunConfig) -> Result<i32, RunError> {
    if cfg.verify_sets == 0 {
        return Err(RunError::Usage("empty parameter sweep (verify.sets = 0)".into()));
    }
    let vc = VerifyConfig {
        samples: cfg.verify_samples,
        density_tolerance: cfg.verify_tolerance,
        ks_alpha: cfg.verify_alpha,
        density_perturbation: cfg.verify_perturb_density,
    };
    let mut rng = Rng::stream(cfg.seed, VERIFY_STREAM);
    let mut csv = format!("{}\n", tdist::REPORT_HEADER);
    let mut failures = Vec::new();
    for _ in 0..cfg.verify_sets {
        let params = tdist::random_params(&mut rng, cfg.verify_max_dim);
        let grid = tdist::axis_grid(&params, GRID_POINTS, GRID_HALF_WIDTH);
        let report = tdist::verify_transform_theorem(&params, &grid, &vc, &mut rng)
            .map_err(|e| RunError::Usage(e.to_string()))?;
        let rows = tdist::report_csv_rows(&report);
        failures.extend(rows.lines().filter(|l| l.ends_with(",false")).map(String::from));
        csv.push_str(&rows);
    }
    ensure_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("theorem_report.csv"), csv.as_bytes())?;
    if failures.is_empty() {
        println!("verify-theorem: {} parameter sets passed", cfg.verify_sets);
        Ok(0)
    } else {
        eprintln!("{}", tdist::REPORT_HEADER);
        for f in &failures {
            eprintln!("{f}");
        }
        Ok(1)
    }
}

fn checkpoint_name(step: u64) -> String {
    format!("ckpt_{step:06}.tgan")
}

pub fn cmd_train(cfg: &RunConfig) -> Result<i32, RunError> {
    let dir = cfg.out_dir.clone();
    ensure_dir(&dir)?;
    write_file(&dir.join("config.txt"), cfg.serialize().as_bytes())?;
    for w in run::latent_config(cfg, 1).warnings() {
        eprintln!("warning: {w}");
    }
    let ds = run::build_dataset(cfg)?;
    let losses_path = dir.join("losses.csv");
    let file = fs::File::create(&losses_path).map_err(|e| io_err(&losses_path, e))?;
    let mut losses = std::io::BufWriter::new(file);
    writeln!(losses, "{LOSSES_HEADER}").map_err(|e| io_err(&losses_path, e))?;

    let every = cfg.train_checkpoint_every;
    let total = cfg.train_steps;
    let mut written = 0usize;
    let outcome = run::train(cfg, &ds, |t| {
        let s = t.steps_done();
        if every > 0 && s % every == 0 && s < total {
            write_file(&dir.join(checkpoint_name(s)), &checkpoint::save_model(&t.model))?;
        }
        Ok(())
    })?;
    for r in &outcome.losses {
        writeln!(losses, "{},{},{},{}", r.step, r.d_loss, r.g_loss, r.c_loss).map_err(|e| io_err(&losses_path, e))?;
        written += 1;
    }
    losses.flush().map_err(|e| io_err(&losses_path, e))?;

    if let Some(e) = outcome.abort {
        let msg = format!("{e}\nsteps completed: {written}\n");
        write_file(&dir.join("diagnostics.txt"), msg.as_bytes())?;
        return Err(RunError::Numerical(e));
    }
    let model = &outcome.trainer.model;
    write_file(&dir.join("final.tgan"), &checkpoint::save_model(model))?;
    write_images(cfg, model, &dir, ds.image_side())?;

    let clf = run::train_classifier(cfg, &ds)?;
    let d_adv: Vec<f64> = outcome.losses.iter().map(|r| r.d_adv).collect();
    let report = run::evaluate_model("final", cfg, model, &ds, &clf, Some(&d_adv))?;
    write_reports(&dir, std::slice::from_ref(&report))?;
    print!("{}", report.text_block());
    Ok(0)
}

/// Class-column grid for image data, density plot for 2-D data.
fn write_images(cfg: &RunConfig, model: &GanModel, dir: &Path, side: Option<usize>) -> Result<(), RunError> {
    match side {
        Some(side) => {
            let classes: Vec<usize> = (0..model.cfg.num_classes).collect();
            let (s, _) = sample_grid(cfg, model, &classes, cfg.eval_per_class)?;
            write_file(&dir.join("grid.pgm"), &image::image_grid(&s, side, classes.len()))
        }
        None => {
            let (s, _) = run::generate(cfg, model, cfg.eval_samples)?;
            write_file(&dir.join("density.pgm"), &image::density_pgm(&s, DENSITY_SIZE))
        }
    }
}

/// `rows` samples per entry of `classes`, ordered row-major so entry `j`
/// lands in grid column `j`.
fn sample_grid(cfg: &RunConfig, model: &GanModel, classes: &[usize], rows: usize) -> Result<(Tensor, Vec<usize>), RunError> {
    let labels: Vec<usize> = (0..rows).flat_map(|_| classes.iter().copied()).collect();
    let mut rng = Rng::stream(cfg.seed, run::SAMPLE_STREAM);
    Ok((model.sample(&labels, &mut rng)?, labels))
}

fn write_reports(dir: &Path, reports: &[EvalReport]) -> Result<(), RunError> {
    let mut csv = format!("{REPORT_HEADER}\n");
    let mut text = String::new();
    for r in reports {
        let _ = writeln!(csv, "{}", r.csv_row());
        text.push_str(&r.text_block());
    }
    write_file(&dir.join("eval_report.csv"), csv.as_bytes())?;
    write_file(&dir.join("eval_report.txt"), text.as_bytes())
}

/// Config stored next to a checkpoint, if any.
fn sibling_config(ckpt: &Path) -> Result<Option<RunConfig>, RunError> {
    let p = ckpt.parent().unwrap_or(Path::new(".")).join("config.txt");
    if !p.exists() {
        return Ok(None);
    }
    RunConfig::parse(&read_text(&p)?)
        .map(Some)
        .map_err(|e| RunError::Artifact(format!("{}: {e}", p.display())))
}

fn record_len(records: &[checkpoint::Record], name: &str) -> Result<usize, RunError> {
    records
        .iter()
        .find(|r| r.name == name)
        .map(|r| r.data.len())
        .ok_or_else(|| RunError::Artifact(format!("checkpoint lacks `{name}`")))
}

/// Rebuilds the model described by `cfg` and fills it from the checkpoint.
/// Data width and class count are read from the output biases.
pub fn load_model(cfg: &RunConfig, ckpt: &Path) -> Result<GanModel, RunError> {
    if !ckpt.exists() {
        return Err(RunError::Usage(format!("{}: no such checkpoint", ckpt.display())));
    }
    let bytes = fs::read(ckpt).map_err(|e| io_err(ckpt, e))?;
    let artifact = |e: CheckpointError| RunError::Artifact(format!("{}: {e}", ckpt.display()));
    let records = checkpoint::decode(&bytes).map_err(artifact)?;
    let data_dim = record_len(&records, "generator.2.bias")?;
    let classes = record_len(&records, "discriminator.cls.1.bias")?;
    let mut model = run::build_model(cfg, data_dim, classes)?;
    checkpoint::load_into(&mut model, &bytes).map_err(artifact)?;
    Ok(model)
}

fn parse_usize(m: &ArgMatches, key: &str) -> Result<Option<usize>, RunError> {
    m.get_one::<String>(key)
        .map(|v| v.parse().map_err(|e| RunError::Usage(format!("--{key} {v}: {e}"))))
        .transpose()
}

fn sample_from_matches(m: &ArgMatches) -> Result<i32, RunError> {
    let ckpt = PathBuf::from(m.get_one::<String>("checkpoint").expect("required"));
    let cfg = resolve_config(m, sibling_config(&ckpt)?)?;
    let labels = match m.get_one::<String>("labels") {
        Some(list) => Some(
            list.split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|e| RunError::Usage(format!("--labels {list}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?,
        ),
        None => None,
    };
    let out = m.get_one::<String>("out").map(PathBuf::from);
    cmd_sample(&cfg, &ckpt, labels.as_deref(), parse_usize(m, "n")?, out.as_deref(), m.get_flag("ppm"))
}

pub fn cmd_sample(
    cfg: &RunConfig,
    ckpt: &Path,
    labels: Option<&[usize]>,
    per_class: Option<usize>,
    out: Option<&Path>,
    ppm: bool,
) -> Result<i32, RunError> {
    let model = load_model(cfg, ckpt)?;
    let classes: Vec<usize> = labels.map_or_else(|| (0..model.cfg.num_classes).collect(), <[usize]>::to_vec);
    if classes.is_empty() {
        return Err(RunError::Usage("no labels requested".into()));
    }
    if let Some(&c) = classes.iter().find(|&&c| c >= model.cfg.num_classes) {
        return Err(RunError::Usage(format!("label {c} >= {} classes", model.cfg.num_classes)));
    }
    let rows = per_class.unwrap_or(cfg.eval_per_class);
    let (samples, labs) = sample_grid(cfg, &model, &classes, rows)?;
    let dir = out.unwrap_or(&cfg.out_dir);
    ensure_dir(dir)?;
    let mut csv = Vec::new();
    write_samples_csv(&mut csv, &samples, &labs).map_err(|e| io_err(dir, e))?;
    write_file(&dir.join("samples.csv"), &csv)?;
    let d = model.cfg.data_dim;
    let side = (d as f64).sqrt().round() as usize;
    if d > 2 && side * side == d {
        write_file(&dir.join("grid.pgm"), &image::image_grid(&samples, side, classes.len()))?;
    } else if d == 2 && ppm {
        write_file(
            &dir.join("density.ppm"),
            &image::density_ppm(&samples, &labs, model.cfg.num_classes, DENSITY_SIZE),
        )?;
    }
    Ok(0)
}

fn eval_from_matches(m: &ArgMatches) -> Result<i32, RunError> {
    let ckpts: Vec<PathBuf> = m
        .get_many::<String>("checkpoint")
        .expect("required")
        .map(PathBuf::from)
        .collect();
    for c in &ckpts {
        if !c.exists() {
            return Err(RunError::Usage(format!("{}: no such checkpoint", c.display())));
        }
    }
    let cfg = resolve_config(m, sibling_config(&ckpts[0])?)?;
    let out = m.get_one::<String>("out").map(PathBuf::from);
    cmd_eval(&cfg, &ckpts, out.as_deref())
}

/// Adversarial discriminator losses recovered from a `losses.csv` next to
/// the checkpoint: `d_loss - α·c_loss`, truncated to the checkpoint's step
/// for interval checkpoints.
fn sibling_d_adv(ckpt: &Path, alpha: f64) -> Option<Vec<f64>> {
    let text = fs::read_to_string(ckpt.parent()?.join("losses.csv")).ok()?;
    let upto = ckpt
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix("ckpt_")?.strip_suffix(".tgan")?.parse::<usize>().ok())
        .unwrap_or(usize::MAX);
    text.lines()
        .skip(1)
        .take(upto)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let d: f64 = f.get(1)?.parse().ok()?;
            let c: f64 = f.get(3)?.parse().ok()?;
            Some(d - alpha * c)
        })
        .collect()
}

/// Evaluates the real data and every checkpoint with one proxy classifier.
/// Each checkpoint is rebuilt from the config saved beside it when present.
pub fn cmd_eval(cfg: &RunConfig, ckpts: &[PathBuf], out: Option<&Path>) -> Result<i32, RunError> {
    let ds = run::build_dataset(cfg)?;
    let clf = run::train_classifier(cfg, &ds)?;
    let mut reports = vec![run::evaluate_real(cfg, &ds, &clf)?];
    for c in ckpts {
        let model_cfg = sibling_config(c)?.unwrap_or_else(|| cfg.clone());
        let model = load_model(&model_cfg, c)?;
        if model.cfg.data_dim != ds.data_dim() || model.cfg.num_classes != ds.num_classes() {
            return Err(RunError::Artifact(format!(
                "{}: model shape {}x{} does not match the dataset {}x{}",
                c.display(),
                model.cfg.data_dim,
                model.cfg.num_classes,
                ds.data_dim(),
                ds.num_classes()
            )));
        }
        let d_adv = sibling_d_adv(c, model_cfg.train_alpha);
        let name = format!(
            "{}:{}:{}",
            model_cfg.model_objective.as_str(),
            model_cfg.latent_kind.as_str(),
            c.display().to_string().replace(',', "_")
        );
        let sample_cfg = RunConfig {
            eval_samples: cfg.eval_samples,
            eval_splits: cfg.eval_splits,
            ..model_cfg
        };
        reports.push(run::evaluate_model(&name, &sample_cfg, &model, &ds, &clf, d_adv.as_deref())?);
    }
    let dir = out.unwrap_or(&cfg.out_dir);
    ensure_dir(dir)?;
    write_reports(dir, &reports)?;
    for r in &reports {
        print!("{}", r.text_block());
    }
    Ok(0)
}
