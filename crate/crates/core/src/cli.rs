//! Batch driver: parses configs, orchestrates basis construction, assembly,
//! time marching and evaluation, manages the disk caches, and writes CSV
//! outputs.

use crate::basis1d::{
    build_basis, build_generators, read_generator_cache, verify_basis, write_generator_cache,
    Basis1D, GeneratorSet,
};
use crate::model::{
    analytic_price, evaluate_solution_at_prices, load_params, payoff_on_cube, pde_coefficients,
    DomainSpec, MarketParams, OptionKind,
};
use crate::operator::{
    assemble_level_blocks, generator_key, project_payoff, read_level_blocks, write_level_blocks,
    LevelBlocks, SparseOperator,
};
use crate::solve::{estimate_condition, march, MarchConfig, StepLog};
use crate::sparsegrid::{enumerate, Level0Width, SparseIndexSet};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

/// Unknown-count ceiling; larger runs need `--force`.
pub const GUARDRAIL_UNKNOWNS: usize = 200_000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("basis stage: {0}")]
    Basis(String),
    #[error("assembly stage: {0}")]
    Assembly(String),
    #[error("solve stage: {0}")]
    Solve(String),
    #[error("evaluate stage: {0}")]
    Evaluate(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Basis(_) => 3,
            CliError::Assembly(_) => 4,
            CliError::Solve(_) => 5,
            CliError::Evaluate(_) => 6,
        }
    }
}

/// Interpretation of the `--level` flag. The reference result tables label
/// levels one higher than the internal wavelet level; their level 0 is the
/// scaling-functions-only grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LevelConvention {
    Table,
    Lemma,
}

/// Translates a user-facing level into the internal wavelet level and the
/// level-0 block convention.
pub fn resolve_level(convention: LevelConvention, k: u32) -> (u32, Level0Width) {
    match convention {
        LevelConvention::Lemma => (k, Level0Width::Full),
        LevelConvention::Table => {
            if k == 0 {
                (0, Level0Width::ScalingOnly)
            } else {
                (k - 1, Level0Width::Full)
            }
        }
    }
}

/// Table-convention level corresponding to an internal level pair, used for
/// the default step count M = 4^k(table).
fn table_level(convention: LevelConvention, k: u32) -> u32 {
    match convention {
        LevelConvention::Table => k,
        LevelConvention::Lemma => k + 1,
    }
}

/// Quadrature refinement for the payoff projection, beyond the level needed
/// for polynomial exactness. The payoff kink dominates the projection error,
/// so finer targets (higher levels, lower dimension) get more refinement.
pub fn default_q_extra(d: usize, internal_k: u32) -> u32 {
    match d {
        1 | 2 => {
            if internal_k >= 4 {
                9
            } else {
                6
            }
        }
        3 => 6,
        _ => 4,
    }
}

#[derive(Debug, Parser)]
#[command(name = "sparsewave", version, about = "Wavelet-Galerkin option pricer on sparse grids")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Construct and verify the 1D wavelet basis; write the generator cache
    /// and a verification report.
    Basis(BasisArgs),
    /// Price one option configuration end to end.
    Price(PriceArgs),
    /// Reproduce result-table rows for a range of levels.
    Table1(TableArgs),
    /// Estimate operator condition numbers across levels.
    Cond(CondArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Output directory for CSV files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Cache directory for generator and block tables.
    #[arg(long, default_value = "cache")]
    cache: PathBuf,
    /// Worker threads (0 uses all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Relative residual tolerance for conjugate gradients.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Allow runs whose unknown count exceeds the guardrail.
    #[arg(long)]
    force: bool,
    /// Level labeling convention.
    #[arg(long, value_enum, default_value_t = LevelConvention::Table)]
    level_convention: LevelConvention,
}

#[derive(Debug, Args)]
struct BasisArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Sparse level.
    #[arg(long, default_value_t = 3)]
    level: u32,
}

#[derive(Debug, Args)]
struct PriceArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Market parameter file (TOML).
    #[arg(long)]
    params: PathBuf,
    /// Number of assets; overrides the parameter file by replicating its
    /// per-asset entries.
    #[arg(long)]
    dim: Option<usize>,
    /// Sparse level.
    #[arg(long, default_value_t = 3)]
    level: u32,
    /// Time steps; defaults to 4^k under the table convention.
    #[arg(long)]
    steps: Option<usize>,
    /// Option kind; overrides the parameter file.
    #[arg(long, value_enum)]
    option: Option<OptionCli>,
    /// Payoff quadrature refinement (levels beyond exactness).
    #[arg(long)]
    quad_extra: Option<u32>,
}

#[derive(Debug, Args)]
struct TableArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Market parameter file (TOML).
    #[arg(long)]
    params: PathBuf,
    /// Number of assets.
    #[arg(long)]
    dim: Option<usize>,
    /// Largest level to run (rows 0..=max-level, both option kinds).
    #[arg(long, default_value_t = 4)]
    max_level: u32,
    /// Payoff quadrature refinement (levels beyond exactness).
    #[arg(long)]
    quad_extra: Option<u32>,
}

#[derive(Debug, Args)]
struct CondArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Market parameter file (TOML).
    #[arg(long)]
    params: PathBuf,
    /// Number of assets.
    #[arg(long)]
    dim: Option<usize>,
    /// Smallest level.
    #[arg(long, default_value_t = 2)]
    min_level: u32,
    /// Largest level.
    #[arg(long, default_value_t = 5)]
    max_level: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OptionCli {
    Put,
    Call,
}

impl From<OptionCli> for OptionKind {
    fn from(o: OptionCli) -> Self {
        match o {
            OptionCli::Put => OptionKind::Put,
            OptionCli::Call => OptionKind::Call,
        }
    }
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Basis(args) => cmd_basis(args),
        Cmd::Price(args) => cmd_price(args),
        Cmd::Table1(args) => cmd_table1(args),
        Cmd::Cond(args) => cmd_cond(args),
    }
}

fn init_threads(threads: usize) {
    if threads > 0 {
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

/// Loads the generator set, preferring the disk cache; rebuilds and rewrites
/// on a miss or a corrupted file.
pub fn cached_generators(cache_dir: &Path) -> Result<GeneratorSet, CliError> {
    let path = cache_dir.join("generators.cache");
    if path.exists() {
        if let Ok(set) = read_generator_cache(&path) {
            return Ok(set);
        }
    }
    let set = build_generators().map_err(|e| CliError::Basis(e.to_string()))?;
    write_generator_cache(&set, &path).map_err(|e| CliError::Basis(e.to_string()))?;
    Ok(set)
}

/// Loads or assembles the one-dimensional block matrices up to the basis
/// level, keyed by the generator hash so a stale cache is never reused.
pub fn cached_blocks(
    basis: &Basis1D,
    generators: &GeneratorSet,
    cache_dir: &Path,
) -> Result<LevelBlocks, CliError> {
    let key = format!("{}:k{}", generator_key(generators), basis.max_level);
    let path = cache_dir.join(format!("blocks_k{}.cache", basis.max_level));
    if path.exists() {
        if let Ok(blocks) = read_level_blocks(&path, &key) {
            return Ok(blocks);
        }
    }
    let blocks = assemble_level_blocks(basis).map_err(|e| CliError::Assembly(e.to_string()))?;
    write_level_blocks(&blocks, &key, &path).map_err(|e| CliError::Assembly(e.to_string()))?;
    Ok(blocks)
}

/// Adapts the per-asset entries of a parameter file to a different asset
/// count by replicating the first volatility and off-diagonal correlation.
pub fn params_for_dim(params: &MarketParams, d: usize) -> Result<MarketParams, CliError> {
    if d == params.d {
        return Ok(params.clone());
    }
    let sigma = params.sigma[0];
    let rho_off = if params.d > 1 { params.rho[0][1] } else { 0.25 };
    let adapted = MarketParams {
        d,
        r: params.r,
        sigma: vec![sigma; d],
        rho: (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { rho_off }).collect())
            .collect(),
        strike: params.strike,
        maturity: params.maturity,
        mu: None,
    };
    adapted
        .validate()
        .map_err(|e| CliError::Parse(e.to_string()))?;
    Ok(adapted)
}

/// Everything produced by one pricing run.
#[derive(Debug, Clone)]
pub struct PriceOutcome {
    pub d: usize,
    pub level: u32,
    pub n: usize,
    pub steps: usize,
    pub kind: OptionKind,
    pub it_max: usize,
    pub it_mean: f64,
    /// Numeric prices at P1, P2, P3.
    pub values: [f64; 3],
    /// Closed-form prices at P1, P2, P3.
    pub exact: [f64; 3],
    /// Absolute errors at P1, P2, P3.
    pub errors: [f64; 3],
    pub logs: Vec<StepLog>,
    pub wall_ms: u128,
}

pub struct PriceConfig<'a> {
    pub params: &'a MarketParams,
    pub domain: &'a DomainSpec,
    pub kind: OptionKind,
    pub convention: LevelConvention,
    pub level: u32,
    pub steps: Option<usize>,
    pub tol: f64,
    pub q_extra: Option<u32>,
    pub cache_dir: &'a Path,
    pub force: bool,
}

/// Runs the full pipeline once: basis, assembly, payoff projection, time
/// march, pointwise evaluation at P1, P2, P3.
pub fn price_once(cfg: &PriceConfig) -> Result<PriceOutcome, CliError> {
    let started = Instant::now();
    let params = cfg.params;
    let d = params.d;
    let (internal_k, width) = resolve_level(cfg.convention, cfg.level);
    let set = enumerate(d, internal_k, width);
    if set.total_count > GUARDRAIL_UNKNOWNS && !cfg.force {
        return Err(CliError::Parse(format!(
            "{} unknowns exceed the guardrail of {GUARDRAIL_UNKNOWNS}; pass --force to run anyway",
            set.total_count
        )));
    }
    let points = evaluation_points(params);
    for p in &points {
        // Fail early if an evaluation point falls outside the box.
        cfg.domain
            .prices_to_cube(p, params.maturity)
            .map_err(|e| CliError::Parse(e.to_string()))?;
    }

    let generators = cached_generators(cfg.cache_dir)?;
    let basis = build_basis(&generators, internal_k);
    let blocks = cached_blocks(&basis, &generators, cfg.cache_dir)?;

    let steps = cfg
        .steps
        .unwrap_or_else(|| 4usize.pow(table_level(cfg.convention, cfg.level)));
    if steps == 0 {
        return Err(CliError::Parse("steps must be positive".to_string()));
    }
    let q_extra = cfg.q_extra.unwrap_or_else(|| default_q_extra(d, internal_k));
    let u0 = payoff_on_cube(cfg.kind, params, cfg.domain);
    let c0 = project_payoff(&u0, &set, &basis, q_extra);

    let tau = params.maturity / steps as f64;
    let op = SparseOperator::new(
        set.clone(),
        Arc::new(blocks),
        pde_coefficients(params, cfg.domain, tau),
    );
    let mut march_cfg = MarchConfig::new(steps);
    march_cfg.tol = cfg.tol;
    let (c, logs) = march(&op, &c0, &march_cfg).map_err(|e| CliError::Solve(e.to_string()))?;

    let mut values = [0.0f64; 3];
    let mut exact = [0.0f64; 3];
    let mut errors = [0.0f64; 3];
    for (i, p) in points.iter().enumerate() {
        values[i] = evaluate_solution_at_prices(&c, &set, &basis, cfg.domain, p, params.maturity)
            .map_err(|e| CliError::Evaluate(e.to_string()))?;
        exact[i] = analytic_price(cfg.kind, params, p, params.maturity);
        errors[i] = (values[i] - exact[i]).abs();
    }
    let it_max = logs.iter().map(|l| l.iterations).max().unwrap_or(0);
    let it_mean = if logs.is_empty() {
        0.0
    } else {
        logs.iter().map(|l| l.iterations).sum::<usize>() as f64 / logs.len() as f64
    };
    Ok(PriceOutcome {
        d,
        level: cfg.level,
        n: set.total_count,
        steps,
        kind: cfg.kind,
        it_max,
        it_mean,
        values,
        exact,
        errors,
        logs,
        wall_ms: started.elapsed().as_millis(),
    })
}

/// The standard evaluation points P1 = K/2, P2 = K, P3 = 3K/2 on the
/// diagonal.
pub fn evaluation_points(params: &MarketParams) -> [Vec<f64>; 3] {
    let k = params.strike;
    [
        vec![k / 2.0; params.d],
        vec![k; params.d],
        vec![1.5 * k; params.d],
    ]
}

fn kind_label(kind: OptionKind) -> &'static str {
    match kind {
        OptionKind::Put => "put",
        OptionKind::Call => "call",
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Parse(format!("cannot create output directory: {e}")))?;
    std::fs::write(dir.join(name), contents)
        .map_err(|e| CliError::Parse(format!("cannot write {name}: {e}")))
}

const RESULTS_HEADER: &str = "d,k,N,M,option,it_max,it_mean,e_p1,e_p2,e_p3\n";

fn result_row(o: &PriceOutcome) -> String {
    format!(
        "{},{},{},{},{},{},{:.2},{:.5e},{:.5e},{:.5e}\n",
        o.d,
        o.level,
        o.n,
        o.steps,
        kind_label(o.kind),
        o.it_max,
        o.it_mean,
        o.errors[0],
        o.errors[1],
        o.errors[2]
    )
}

fn solver_log_rows(o: &PriceOutcome) -> String {
    let mut out = String::new();
    for l in &o.logs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.5e}\n",
            o.d,
            o.level,
            kind_label(o.kind),
            l.step,
            l.scheme,
            l.iterations,
            l.relative_residual
        ));
    }
    out
}

const SOLVER_LOG_HEADER: &str = "d,k,option,step,scheme,iterations,rel_residual\n";

fn cmd_basis(args: BasisArgs) -> Result<(), CliError> {
    init_threads(args.common.threads);
    let (internal_k, _) = resolve_level(args.common.level_convention, args.level);
    let generators = cached_generators(&args.common.cache)?;
    let basis = build_basis(&generators, internal_k);
    let report = verify_basis(&basis);
    let mut csv = String::from("check,residual,tolerance,passed\n");
    for c in &report.checks {
        csv.push_str(&format!(
            "{},{:.5e},{:.5e},{}\n",
            c.name,
            c.residual,
            c.tolerance,
            c.passed()
        ));
    }
    csv.push_str(&format!(
        "h1_condition,{:.5e},,{}\n",
        report.h1_condition, true
    ));
    write_file(&args.common.out, "verify_report.csv", &csv)?;
    if report.passed() {
        println!(
            "basis level {} verified: {} checks passed",
            args.level,
            report.checks.len()
        );
        Ok(())
    } else {
        let first = report
            .checks
            .iter()
            .find(|c| !c.passed())
            .expect("failed report has a failed check");
        Err(CliError::Basis(format!(
            "check `{}` failed: residual {:.3e} > {:.3e}",
            first.name, first.residual, first.tolerance
        )))
    }
}

fn cmd_price(args: PriceArgs) -> Result<(), CliError> {
    init_threads(args.common.threads);
    let (file_params, file_domain, file_kind) =
        load_params(&args.params).map_err(|e| CliError::Parse(e.to_string()))?;
    let params = params_for_dim(&file_params, args.dim.unwrap_or(file_params.d))?;
    let domain = DomainSpec::new(
        &vec![file_domain.s_min[0]; params.d],
        &vec![file_domain.s_max[0]; params.d],
        &params,
    )
    .map_err(|e| CliError::Parse(e.to_string()))?;
    let kind = args.option.map(OptionKind::from).unwrap_or(file_kind);
    let outcome = price_once(&PriceConfig {
        params: &params,
        domain: &domain,
        kind,
        convention: args.common.level_convention,
        level: args.level,
        steps: args.steps,
        tol: args.common.tol,
        q_extra: args.quad_extra,
        cache_dir: &args.common.cache,
        force: args.common.force,
    })?;
    write_file(
        &args.common.out,
        "results.csv",
        &format!("{RESULTS_HEADER}{}", result_row(&outcome)),
    )?;
    write_file(
        &args.common.out,
        "solver_log.csv",
        &format!("{SOLVER_LOG_HEADER}{}", solver_log_rows(&outcome)),
    )?;
    write_file(
        &args.common.out,
        "timings.csv",
        &format!(
            "d,k,option,wall_ms\n{},{},{},{}\n",
            outcome.d,
            outcome.level,
            kind_label(outcome.kind),
            outcome.wall_ms
        ),
    )?;
    println!(
        "d={} k={} N={} M={}: e(P1)={:.5e} e(P2)={:.5e} e(P3)={:.5e} it_max={}",
        outcome.d,
        outcome.level,
        outcome.n,
        outcome.steps,
        outcome.errors[0],
        outcome.errors[1],
        outcome.errors[2],
        outcome.it_max
    );
    Ok(())
}

fn cmd_table1(args: TableArgs) -> Result<(), CliError> {
    init_threads(args.common.threads);
    let (file_params, file_domain, _) =
        load_params(&args.params).map_err(|e| CliError::Parse(e.to_string()))?;
    let params = params_for_dim(&file_params, args.dim.unwrap_or(file_params.d))?;
    let domain = DomainSpec::new(
        &vec![file_domain.s_min[0]; params.d],
        &vec![file_domain.s_max[0]; params.d],
        &params,
    )
    .map_err(|e| CliError::Parse(e.to_string()))?;

    let mut results = String::from(RESULTS_HEADER);
    let mut logs = String::from(SOLVER_LOG_HEADER);
    let mut timings = String::from("d,k,option,wall_ms\n");
    let mut ratios = String::from("option,k_from,k_to,ratio_p1,ratio_p2,ratio_p3\n");
    let mut failures = String::from("k,option,stage_exit_code,message\n");
    for kind in [OptionKind::Put, OptionKind::Call] {
        let mut prev: Option<PriceOutcome> = None;
        for level in 0..=args.max_level {
            let run = price_once(&PriceConfig {
                params: &params,
                domain: &domain,
                kind,
                convention: args.common.level_convention,
                level,
                steps: None,
                tol: args.common.tol,
                q_extra: args.quad_extra,
                cache_dir: &args.common.cache,
                force: args.common.force,
            });
            match run {
                Ok(outcome) => {
                    results.push_str(&result_row(&outcome));
                    logs.push_str(&solver_log_rows(&outcome));
                    timings.push_str(&format!(
                        "{},{},{},{}\n",
                        outcome.d,
                        outcome.level,
                        kind_label(kind),
                        outcome.wall_ms
                    ));
                    if let Some(p) = &prev {
                        ratios.push_str(&format!(
                            "{},{},{},{:.5e},{:.5e},{:.5e}\n",
                            kind_label(kind),
                            p.level,
                            outcome.level,
                            p.errors[0] / outcome.errors[0],
                            p.errors[1] / outcome.errors[1],
                            p.errors[2] / outcome.errors[2]
                        ));
                    }
                    println!(
                        "{} k={}: N={} M={} e(P1)={:.5e} e(P2)={:.5e} e(P3)={:.5e}",
                        kind_label(kind),
                        level,
                        outcome.n,
                        outcome.steps,
                        outcome.errors[0],
                        outcome.errors[1],
                        outcome.errors[2]
                    );
                    prev = Some(outcome);
                }
                Err(e) => {
                    // Record the failure and keep going with the next row.
                    failures.push_str(&format!(
                        "{},{},{},{}\n",
                        level,
                        kind_label(kind),
                        e.exit_code(),
                        e.to_string().replace(',', ";")
                    ));
                    eprintln!("{} k={level}: {e}", kind_label(kind));
                    prev = None;
                }
            }
        }
    }
    write_file(&args.common.out, "results.csv", &results)?;
    write_file(&args.common.out, "solver_log.csv", &logs)?;
    write_file(&args.common.out, "timings.csv", &timings)?;
    write_file(&args.common.out, "ratios.csv", &ratios)?;
    write_file(&args.common.out, "failures.csv", &failures)?;
    Ok(())
}

fn cmd_cond(args: CondArgs) -> Result<(), CliError> {
    init_threads(args.common.threads);
    if args.min_level > args.max_level {
        return Err(CliError::Parse("min-level exceeds max-level".to_string()));
    }
    let (file_params, file_domain, _) =
        load_params(&args.params).map_err(|e| CliError::Parse(e.to_string()))?;
    let params = params_for_dim(&file_params, args.dim.unwrap_or(file_params.d))?;
    let domain = DomainSpec::new(
        &vec![file_domain.s_min[0]; params.d],
        &vec![file_domain.s_max[0]; params.d],
        &params,
    )
    .map_err(|e| CliError::Parse(e.to_string()))?;

    let generators = cached_generators(&args.common.cache)?;
    let mut csv = String::from("d,k,N,tau,cond,implied_gamma\n");
    for level in args.min_level..=args.max_level {
        let (cond, set) = condition_at_level(
            &params,
            &domain,
            &generators,
            args.common.level_convention,
            level,
            &args.common.cache,
            args.common.force,
        )?;
        let gamma = (cond - 1.0) / (cond + 1.0);
        csv.push_str(&format!(
            "{},{},{},{:.5e},{:.6},{:.6}\n",
            params.d,
            level,
            set.total_count,
            params.maturity * 0.25f64.powi(level as i32),
            cond,
            gamma
        ));
        println!("k={level}: N={} cond={cond:.4}", set.total_count);
    }
    write_file(&args.common.out, "cond.csv", &csv)
}

/// Builds the step operator with tau = T 4^{-k} and estimates its condition
/// number by Lanczos iteration.
pub fn condition_at_level(
    params: &MarketParams,
    domain: &DomainSpec,
    generators: &GeneratorSet,
    convention: LevelConvention,
    level: u32,
    cache_dir: &Path,
    force: bool,
) -> Result<(f64, SparseIndexSet), CliError> {
    let (internal_k, width) = resolve_level(convention, level);
    let set = enumerate(params.d, internal_k, width);
    if set.total_count > GUARDRAIL_UNKNOWNS && !force {
        return Err(CliError::Parse(format!(
            "{} unknowns exceed the guardrail of {GUARDRAIL_UNKNOWNS}; pass --force to run anyway",
            set.total_count
        )));
    }
    let basis = build_basis(generators, internal_k);
    let blocks = cached_blocks(&basis, generators, cache_dir)?;
    let tau = params.maturity * 0.25f64.powi(table_level(convention, level) as i32);
    // The operator is scaled by tau so that its spectrum sits near 1; the
    // condition number is scale invariant.
    let op = SparseOperator::new(
        set.clone(),
        Arc::new(blocks),
        pde_coefficients(params, domain, tau),
    );
    let cond = estimate_condition(
        |v| {
            let mut out = op.apply(v).expect("operator dimensions fixed");
            for o in out.iter_mut() {
                *o *= tau;
            }
            out
        },
        set.total_count,
    );
    Ok((cond, set))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_conventions_resolve_as_documented() {
        assert_eq!(
            resolve_level(LevelConvention::Table, 0),
            (0, Level0Width::ScalingOnly)
        );
        assert_eq!(
            resolve_level(LevelConvention::Table, 4),
            (3, Level0Width::Full)
        );
        assert_eq!(
            resolve_level(LevelConvention::Lemma, 3),
            (3, Level0Width::Full)
        );
        let (k, w) = resolve_level(LevelConvention::Table, 0);
        assert_eq!(enumerate(2, k, w).total_count, 36);
        let (k, w) = resolve_level(LevelConvention::Table, 3);
        assert_eq!(enumerate(2, k, w).total_count, 1152);
    }

    #[test]
    fn dim_override_replicates_per_asset_entries() {
        let base = MarketParams {
            d: 2,
            r: 0.06,
            sigma: vec![0.2, 0.2],
            rho: vec![vec![1.0, 0.25], vec![0.25, 1.0]],
            strike: 10.0,
            maturity: 1.0,
            mu: None,
        };
        let p3 = params_for_dim(&base, 3).unwrap();
        assert_eq!(p3.sigma, vec![0.2; 3]);
        assert_eq!(p3.rho[0][2], 0.25);
        assert_eq!(p3.rho[2][2], 1.0);
    }

    #[test]
    fn result_rows_use_six_significant_digits() {
        let outcome = PriceOutcome {
            d: 2,
            level: 3,
            n: 1152,
            steps: 64,
            kind: OptionKind::Put,
            it_max: 7,
            it_mean: 5.5,
            values: [0.0; 3],
            exact: [0.0; 3],
            errors: [6.497403e-4, 1.039941e-3, 5.345091e-4],
            logs: Vec::new(),
            wall_ms: 0,
        };
        let row = result_row(&outcome);
        assert_eq!(
            row,
            "2,3,1152,64,put,7,5.50,6.49740e-4,1.03994e-3,5.34509e-4\n"
        );
    }

    #[test]
    fn guardrail_rejects_oversized_runs() {
        let params = params_for_dim(
            &MarketParams {
                d: 2,
                r: 0.06,
                sigma: vec![0.2, 0.2],
                rho: vec![vec![1.0, 0.25], vec![0.25, 1.0]],
                strike: 10.0,
                maturity: 1.0,
                mu: None,
            },
            4,
        )
        .unwrap();
        let domain = DomainSpec::new(&vec![0.1; 4], &vec![50.0; 4], &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = price_once(&PriceConfig {
            params: &params,
            domain: &domain,
            kind: OptionKind::Put,
            convention: LevelConvention::Table,
            level: 3,
            steps: None,
            tol: 1e-10,
            q_extra: None,
            cache_dir: dir.path(),
            force: false,
        })
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("guardrail"));
    }

    #[test]
    fn coarse_pricing_run_is_accurate_and_deterministic() {
        let params = MarketParams {
            d: 2,
            r: 0.06,
            sigma: vec![0.2, 0.2],
            rho: vec![vec![1.0, 0.25], vec![0.25, 1.0]],
            strike: 10.0,
            maturity: 1.0,
            mu: None,
        };
        let domain = DomainSpec::new(&[0.1, 0.1], &[50.0, 50.0], &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cfg = PriceConfig {
            params: &params,
            domain: &domain,
            kind: OptionKind::Put,
            convention: LevelConvention::Table,
            level: 1,
            steps: None,
            tol: 1e-10,
            q_extra: None,
            cache_dir: dir.path(),
            force: false,
        };
        let a = price_once(&cfg).unwrap();
        assert_eq!(a.n, 144);
        assert_eq!(a.steps, 4);
        // Reference row: e(P1) = 2.16e-3, e(P2) = 5.29e-3.
        assert!(a.errors[0] <= 2.16e-3 * 5.0 && a.errors[0] >= 2.16e-3 / 5.0);
        assert!(a.errors[1] <= 5.29e-3 * 5.0 && a.errors[1] >= 5.29e-3 / 5.0);
        assert!(a.it_max <= 12);
        // Second run from the warm cache is bit-identical.
        let b = price_once(&cfg).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(result_row(&a), result_row(&b));
    }
}
