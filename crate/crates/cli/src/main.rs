use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use tabclean_core::bayes::ModelFile;
use tabclean_core::compensatory::{cache_key, DEFAULT_MAX_ENTRIES};
use tabclean_core::engine::{Cleaner, DEFAULT_TAU_CLEAN, DEFAULT_TOP_K};
use tabclean_core::harness::{read_mask, write_mask, Dependence, FdGroup};
use tabclean_core::structure::GlassoParams;
use tabclean_core::table::{profile, SchemaHint, DEFAULT_BINS};
use tabclean_core::*;

const EXIT_USAGE: u8 = 1;
const EXIT_WARNINGS: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "tabclean",
    version,
    about = "Unsupervised Bayesian-network data cleaning"
)]
struct Cli {
    /// Worker threads for cleaning (default: all cores). 1 gives a serial reference run.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON object mapping attribute names to kinds (categorical, numeric, text);
    /// unlisted attributes are inferred.
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-attribute statistics of a CSV file.
    Profile {
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn the network structure and CPTs from a (dirty) CSV file.
    Learn(LearnArgs),
    /// Apply an edit script (add_edge / remove_edge / merge) to a model.
    Edit {
        model: PathBuf,
        edits: PathBuf,
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repair a CSV file with a learned model and user constraints.
    Clean(CleanArgs),
    /// Corrupt a clean CSV file with typos, NULLs, inconsistencies and swaps.
    Inject(InjectArgs),
    /// Score a repair against the clean table.
    Eval {
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        dirty: PathBuf,
        #[arg(long)]
        cleaned: PathBuf,
        /// Mask written by `inject`; without it the mask is recomputed from clean vs dirty.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic table governed by functional dependencies.
    Synth {
        #[arg(long, default_value_t = 1000)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON array of FD groups; defaults to zip/provider groups over six columns.
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the attribute kinds, for use with `--schema`.
        #[arg(long)]
        schema_out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct LearnArgs {
    csv: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// DOT rendering of the skeleton; defaults to `<out>` with a `.dot` extension.
    #[arg(long)]
    dot: Option<PathBuf>,
    #[arg(long, default_value_t = GlassoParams::default().rho)]
    rho: f64,
    #[arg(long, default_value_t = StructureParams::default().edge_threshold)]
    edge_threshold: f64,
    #[arg(long, default_value_t = StructureParams::default().ridge)]
    ridge: f64,
    #[arg(long, default_value_t = GlassoParams::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = GlassoParams::default().max_iter)]
    max_iter: usize,
    /// Comma-separated attribute ordering for the decomposition.
    #[arg(long, value_delimiter = ',')]
    ordering: Option<Vec<String>>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
}

#[derive(Args)]
struct CleanArgs {
    csv: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// User-constraint config; without it every value passes.
    #[arg(long)]
    ucs: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = ConfidenceParams::default().lambda)]
    lambda: f64,
    #[arg(long, default_value_t = ConfidenceParams::default().beta)]
    beta: f64,
    #[arg(long, default_value_t = ConfidenceParams::default().tau)]
    tau: f64,
    #[arg(long, default_value_t = DEFAULT_TAU_CLEAN)]
    tau_clean: f64,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    /// Score candidates on the full network instead of the node's sub-network.
    #[arg(long)]
    no_partition: bool,
    #[arg(long)]
    no_tuple_prune: bool,
    #[arg(long)]
    no_domain_prune: bool,
    #[arg(long, value_enum, default_value = "cell-context")]
    prune_mode: PruneModeArg,
    #[arg(long, default_value_t = DEFAULT_MAX_ENTRIES)]
    max_corr_entries: usize,
    /// Cache file for the co-occurrence table, keyed by input content and parameters.
    #[arg(long)]
    corr_cache: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PruneModeArg {
    CellContext,
    SubNetwork,
}

#[derive(Args)]
struct InjectArgs {
    csv: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    typo: f64,
    #[arg(long, default_value_t = 0.0)]
    missing: f64,
    #[arg(long, default_value_t = 0.0)]
    inconsistency: f64,
    #[arg(long, default_value_t = 0.0)]
    swap: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Inputs shared by every subcommand.
struct Ctx {
    schema_path: Option<PathBuf>,
    schema: Option<SchemaHint>,
}

impl Ctx {
    fn load(schema_path: Option<PathBuf>) -> Result<Self> {
        let schema = match &schema_path {
            Some(p) => Some(serde_json::from_str(
                &std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            )?),
            None => None,
        };
        Ok(Ctx {
            schema_path,
            schema,
        })
    }

    fn table(&self, path: &Path) -> Result<Table> {
        load_csv(path, self.schema.as_ref())
    }

    fn manifest(&self, command: &str, params: serde_json::Value) -> Result<Manifest> {
        let m = Manifest::new(command, params);
        match &self.schema_path {
            Some(p) => m.with_input(p),
            None => Ok(m),
        }
    }
}

fn print_stdout(text: &str) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn check_range(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if !(lo..=hi).contains(&v) {
        return Err(Error::InvalidParam(format!(
            "--{name} must be in [{lo}, {hi}], got {v}"
        )));
    }
    Ok(())
}

fn cmd_profile(ctx: &Ctx, csv: &Path, out: Option<&Path>) -> Result<()> {
    let table = ctx.table(csv)?;
    let manifest = ctx.manifest("profile", json!({}))?.with_input(csv)?;
    let doc = json!({
        "manifest": manifest,
        "rows": table.n_rows(),
        "attributes": profile(&table),
    });
    match out {
        Some(p) => write_json(p, &doc),
        None => print_stdout(&(serde_json::to_string_pretty(&doc)? + "\n")),
    }
}

fn cmd_learn(ctx: &Ctx, a: &LearnArgs) -> Result<()> {
    check_range("rho", a.rho, 0.0, f64::INFINITY)?;
    check_range("edge-threshold", a.edge_threshold, 0.0, f64::INFINITY)?;
    check_range("alpha", a.alpha, 0.0, f64::INFINITY)?;
    let params = LearnParams {
        structure: StructureParams {
            ridge: a.ridge,
            glasso: GlassoParams {
                rho: a.rho,
                tol: a.tol,
                max_iter: a.max_iter,
            },
            edge_threshold: a.edge_threshold,
            ordering: a.ordering.clone(),
        },
        alpha: a.alpha,
        bins: a.bins,
    };
    let table = ctx.table(&a.csv)?;
    let model = learn(&table, &params)?;
    if !model.structure.fit.converged {
        log::warn!(
            "graphical lasso stopped before convergence (KKT residual {:.2e})",
            model.structure.fit.kkt_residual
        );
    }
    let mut file = model.to_model_file();
    file.manifest = Some(
        ctx.manifest("learn", serde_json::to_value(&params)?)?
            .with_input(&a.csv)?,
    );
    write_json(&a.out, &file)?;
    let dot = a.dot.clone().unwrap_or_else(|| a.out.with_extension("dot"));
    std::fs::write(&dot, model.structure.skeleton.to_dot()).map_err(|e| Error::io(&dot, e))?;
    eprintln!(
        "learned {} edges over {} attributes -> {}",
        model.structure.skeleton.edges.len(),
        table.n_cols(),
        a.out.display()
    );
    Ok(())
}

fn read_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_edit(ctx: &Ctx, model_path: &Path, edits_path: &Path, csv: &Path, out: &Path) -> Result<()> {
    let model = read_model(model_path)?;
    let bn = BayesNet::from_model_file(&model)?;
    let edits: Vec<EditOp> = serde_json::from_str(
        &std::fs::read_to_string(edits_path).map_err(|e| Error::io(edits_path, e))?,
    )?;
    let table = model.discretization.apply(&ctx.table(csv)?)?;
    let edited = apply_edits(&bn, &table, &edits)?;
    let mut file = edited.to_model_file(&model.discretization);
    file.manifest = Some(
        ctx.manifest("edit", serde_json::to_value(&edits)?)?
            .with_input(model_path)?
            .with_input(edits_path)?
            .with_input(csv)?,
    );
    write_json(out, &file)?;
    eprintln!("applied {} edits -> {}", edits.len(), out.display());
    Ok(())
}

/// Returns whether the run produced warnings.
fn cmd_clean(ctx: &Ctx, a: &CleanArgs) -> Result<bool> {
    let params = CleanParams {
        tau_clean: a.tau_clean,
        top_k: a.top_k,
        use_partition: !a.no_partition,
        use_tuple_prune: !a.no_tuple_prune,
        use_domain_prune: !a.no_domain_prune,
        prune_mode: match a.prune_mode {
            PruneModeArg::CellContext => PruneMode::CellContext,
            PruneModeArg::SubNetwork => PruneMode::SubNetwork,
        },
        confidence: ConfidenceParams {
            lambda: a.lambda,
            tau: a.tau,
            beta: a.beta,
        },
        max_corr_entries: a.max_corr_entries,
    };
    params.validate()?;
    params.confidence.validate()?;

    let table = ctx.table(&a.csv)?;
    let model = read_model(&a.model)?;
    let bn = BayesNet::from_model_file(&model)?;
    let names = table.attribute_names();
    let mut ucs = match &a.ucs {
        Some(p) => ConstraintSet::load(p, &names)?,
        None => ConstraintSet::unconstrained(&names),
    };
    ucs.prepare(&table)?;

    let cleaner = match &a.corr_cache {
        None => Cleaner::new(
            &table,
            &bn,
            &model.discretization,
            &ucs,
            &params.confidence,
            params.max_corr_entries,
        )?,
        Some(cache) => {
            let key = cache_key(&table, &ucs, &params.confidence)?;
            let cached = CorrTable::load_cache(&key, cache)?;
            let hit = cached.is_some();
            let cleaner = Cleaner::with_corr(&table, &bn, &model.discretization, &ucs, |enc| {
                cached.unwrap_or_else(|| {
                    let conf = ucs.confidences(&table, &params.confidence);
                    let mut corr = CorrTable::build(enc, &conf, &params.confidence);
                    corr.cap_entries(params.max_corr_entries);
                    corr
                })
            })?;
            if !hit {
                cleaner.corr().save_cache(&key, cache)?;
            }
            log::info!("co-occurrence cache {}", if hit { "hit" } else { "miss" });
            cleaner
        }
    };
    let mut outcome = cleaner.run(&params)?;

    outcome.table.write_csv(&a.out)?;
    let mut manifest = ctx
        .manifest("clean", serde_json::to_value(params)?)?
        .with_input(&a.csv)?
        .with_input(&a.model)?;
    if let Some(p) = &a.ucs {
        manifest = manifest.with_input(p)?;
    }
    outcome.report.manifest = Some(manifest);
    write_json(&a.report, &outcome.report)?;
    let r = &outcome.report;
    eprintln!(
        "{} repairs, {} inferred, {} pruned, {} skipped -> {}",
        r.repairs.len(),
        r.inferred_cells,
        r.pruned_cells,
        r.skipped_cells,
        a.out.display()
    );
    for w in &r.warnings {
        log::warn!("{w}");
    }
    Ok(!r.warnings.is_empty())
}

fn cmd_inject(ctx: &Ctx, a: &InjectArgs) -> Result<()> {
    let spec = ErrorSpec {
        typo: a.typo,
        missing: a.missing,
        inconsistency: a.inconsistency,
        swap: a.swap,
        seed: a.seed,
    };
    let table = ctx.table(&a.csv)?;
    let (dirty, truth) = inject_errors(&table, &spec)?;
    dirty.write_csv(&a.out)?;
    write_mask(&a.mask, &truth.mask)?;
    // The mask itself is a bare array; its provenance lives next to it.
    let manifest = ctx
        .manifest("inject", serde_json::to_value(spec)?)?
        .with_input(&a.csv)?;
    write_json(
        &sidecar(&a.mask),
        &json!({ "manifest": manifest, "cells": truth.mask.len() }),
    )?;
    eprintln!(
        "corrupted {} cells -> {}",
        truth.mask.len(),
        a.out.display()
    );
    Ok(())
}

fn sidecar(mask: &Path) -> PathBuf {
    let mut name = mask
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    mask.with_file_name(name)
}

fn cmd_eval(
    ctx: &Ctx,
    clean_p: &Path,
    dirty_p: &Path,
    cleaned_p: &Path,
    mask_p: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let clean_t = ctx.table(clean_p)?;
    let dirty = ctx.table(dirty_p)?;
    let cleaned = ctx.table(cleaned_p)?;
    let truth = match mask_p {
        Some(p) => {
            let mask = read_mask(p)?;
            GroundTruth {
                clean: clean_t,
                mask,
            }
        }
        None => GroundTruth::from_pair(&clean_t, &dirty)?,
    };
    let metrics = score(&dirty, &cleaned, &truth)?;
    print_stdout(&metrics.to_text())?;
    if let Some(out) = out {
        let mut manifest = ctx
            .manifest("eval", json!({}))?
            .with_input(clean_p)?
            .with_input(dirty_p)?
            .with_input(cleaned_p)?;
        if let Some(p) = mask_p {
            manifest = manifest.with_input(p)?;
        }
        write_json(out, &json!({ "manifest": manifest, "metrics": metrics }))?;
    }
    Ok(())
}

fn default_groups() -> Vec<FdGroup> {
    vec![
        FdGroup::new(
            "zip",
            50,
            &[
                ("city", Dependence::Injective),
                ("state", Dependence::Coarse(10)),
            ],
        ),
        FdGroup::new(
            "provider",
            50,
            &[
                ("name", Dependence::Injective),
                ("kind", Dependence::Coarse(5)),
            ],
        ),
    ]
}

fn cmd_synth(
    rows: usize,
    seed: u64,
    groups: Option<&Path>,
    out: &Path,
    schema_out: Option<&Path>,
) -> Result<()> {
    let groups = match groups {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => default_groups(),
    };
    let table = generate_synthetic(rows, &groups, seed)?;
    table.write_csv(out)?;
    if let Some(p) = schema_out {
        let schema: SchemaHint = table
            .attributes()
            .iter()
            .map(|a| (a.name.clone(), a.kind))
            .collect();
        write_json(p, &schema)?;
    }
    eprintln!(
        "{} rows x {} attributes -> {}",
        table.n_rows(),
        table.n_cols(),
        out.display()
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<bool> {
    let ctx = Ctx::load(cli.schema.clone())?;
    match &cli.cmd {
        Command::Profile { csv, out } => cmd_profile(&ctx, csv, out.as_deref()).map(|_| false),
        Command::Learn(a) => cmd_learn(&ctx, a).map(|_| false),
        Command::Edit {
            model,
            edits,
            csv,
            out,
        } => cmd_edit(&ctx, model, edits, csv, out).map(|_| false),
        Command::Clean(a) => cmd_clean(&ctx, a),
        Command::Inject(a) => cmd_inject(&ctx, a).map(|_| false),
        Command::Eval {
            clean,
            dirty,
            cleaned,
            mask,
            out,
        } => cmd_eval(&ctx, clean, dirty, cleaned, mask.as_deref(), out.as_deref()).map(|_| false),
        Command::Synth {
            rows,
            seed,
            groups,
            out,
            schema_out,
        } => cmd_synth(*rows, *seed, groups.as_deref(), out, schema_out.as_deref()).map(|_| false),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(EXIT_USAGE);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(EXIT_WARNINGS),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidParam(_) | Error::InvalidConstraint { .. } => {
                    ExitCode::from(EXIT_USAGE)
                }
                _ => ExitCode::from(EXIT_RUNTIME),
            }
        }
    }
}
