#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use corrpath_core::objectives::{parse_clock, DEFAULT_THETA};
use corrpath_core::scenario::ScenarioMeta;
use corrpath_core::scengen::{full_set, generate_sg, sample_rs};
use corrpath_core::solver::{hall_solve, SolveError, DEFAULT_K_MAX};
use corrpath_core::speedstats::{correlation_summary, profile, CorrelationSummary, ProfileMode, SummaryOptions, DEFAULT_PAIR_BUDGET};
use corrpath_core::stability::{
    first_meeting_goal, report, FullReference, OdPair, RequiredScenarios, StabilityError, StabilityReport, SweepConfig,
};
use corrpath_core::synth::{generate_network, generate_panel, SynthSpec};
use corrpath_core::{MeetParams, Method, NodeId, Objective, ObjectiveKind, ObjectiveSpec, RoadNetwork, ScenarioSet, SpeedPanel, TimeGrid, VarKey};

const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(name = "corrpath", version, about = "Optimal paths under correlated link speeds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic network and speed panel.
    Synth(SynthArgs),
    /// Correlation histogram of a speed panel, or a correlation profile.
    Analyze(AnalyzeArgs),
    /// Build a scenario set (SG, RS or the full panel).
    Generate(GenerateArgs),
    /// Optimal path for one objective on a scenario set.
    Solve(SolveArgs),
    /// Stability sweep over scenario set sizes.
    Stability(StabilityArgs),
}

#[derive(Args, Clone)]
struct GridArgs {
    /// Start of the time window (decimal hours or HH:MM[:SS]).
    #[arg(long, default_value = "8.0")]
    window_start: String,
    #[arg(long, default_value_t = 5.0)]
    period_minutes: f64,
}

impl GridArgs {
    fn grid(&self, n_periods: usize) -> Result<TimeGrid> {
        if !(self.period_minutes > 0.0) {
            bail!("--period-minutes must be positive");
        }
        Ok(TimeGrid::new(parse_clock(&self.window_start).map_err(|e| anyhow!(e))?, self.period_minutes, n_periods))
    }
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    links: PathBuf,
    #[arg(long)]
    speeds: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
}

impl InputArgs {
    fn load(&self) -> Result<(RoadNetwork, SpeedPanel)> {
        let net = RoadNetwork::load(&self.links).with_context(|| format!("reading {}", self.links.display()))?;
        let panel = SpeedPanel::load(&self.speeds, &net, self.grid.grid(1)?)
            .with_context(|| format!("reading {}", self.speeds.display()))?;
        Ok((net, panel))
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    nodes: usize,
    #[arg(long, default_value_t = 40)]
    links: usize,
    #[arg(long, default_value_t = 24)]
    periods: usize,
    #[arg(long, default_value_t = 102)]
    days: usize,
    #[arg(long, default_value_t = 90.0)]
    base_speed: f64,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    spatial_rho: f64,
    #[arg(long, default_value_t = 0.7, allow_negative_numbers = true)]
    temporal_rho: f64,
    #[arg(long, default_value_t = 1.0)]
    floor: f64,
    #[arg(long, default_value_t = 0.3)]
    log_sd: f64,
    #[arg(long, env = "CORRPATH_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Directory receiving links.csv and speeds.csv.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Spatial,
    Temporal,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    #[arg(long, default_value_t = DEFAULT_PAIR_BUDGET)]
    pair_budget: u64,
    /// Sample pairs with this seed when the panel exceeds the pair budget.
    #[arg(long)]
    sample_seed: Option<u64>,
    /// Print a correlation profile instead of the histogram.
    #[arg(long, value_enum, requires_all = ["link", "period"])]
    profile: Option<ProfileArg>,
    /// Anchor link id for --profile.
    #[arg(long)]
    link: Option<i64>,
    /// Anchor period index for --profile.
    #[arg(long)]
    period: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    method: Method,
    /// Number of scenarios; ignored for `full`.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, env = "CORRPATH_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Scenario CSV; metadata goes to `<out>.meta.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ObjectiveArgs {
    #[arg(long)]
    objective: ObjectiveKind,
    #[arg(long, default_value_t = DEFAULT_THETA)]
    theta: f64,
    /// Due time for f4/f5.
    #[arg(long)]
    due: Option<String>,
    /// Earliest arrival for f5.
    #[arg(long)]
    earliest: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Departure time; defaults to the window start.
    #[arg(long)]
    depart: Option<String>,
    /// Origin and destination node ids, `O,D`.
    #[arg(long)]
    od: String,
    #[arg(long, default_value_t = DEFAULT_K_MAX)]
    k_max: usize,
}

fn clock(flag: &str, value: &Option<String>) -> Result<f64> {
    let v = value.as_deref().ok_or_else(|| anyhow!("--{flag} is required for this objective"))?;
    parse_clock(v).map_err(|e| anyhow!("--{flag}: {e}"))
}

impl ObjectiveArgs {
    fn spec(&self, grid: &TimeGrid) -> Result<ObjectiveSpec> {
        let objective = match self.objective {
            ObjectiveKind::F1 => Objective::MeanStd { theta: self.theta },
            ObjectiveKind::F2 => Objective::ExpectedTime,
            ObjectiveKind::F3 => Objective::ExpectedEmission { meet: MeetParams::GOODS_3_5_TO_7_5_T },
            ObjectiveKind::F4 => Objective::Tardiness { due_s: clock("due", &self.due)? },
            ObjectiveKind::F5 => {
                Objective::TardinessEarliness { earliest_s: clock("earliest", &self.earliest)?, due_s: clock("due", &self.due)? }
            }
            ObjectiveKind::F6 => Objective::Budget { alpha: self.alpha.ok_or_else(|| anyhow!("--alpha is required for f6"))? },
        };
        let depart = match &self.depart {
            Some(_) => clock("depart", &self.depart)?,
            None => grid.window_start_s,
        };
        Ok(ObjectiveSpec::new(objective, depart)?)
    }

    fn od(&self) -> Result<OdPair> {
        let parse = |s: &str| s.trim().parse::<u32>().map_err(|_| anyhow!("--od expects `O,D` node ids, got `{}`", self.od));
        match self.od.split_once(',') {
            Some((o, d)) => Ok(OdPair::new(parse(o)?, parse(d)?)),
            None => bail!("--od expects `O,D` node ids, got `{}`", self.od),
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    links: PathBuf,
    /// Scenario CSV from `generate`.
    #[arg(long, conflicts_with = "speeds", required_unless_present = "speeds")]
    scenarios: Option<PathBuf>,
    /// Solve on the full panel instead.
    #[arg(long)]
    speeds: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    objective: ObjectiveArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StabilityArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    objective: ObjectiveArgs,
    #[arg(long, value_delimiter = ',', default_value = "sg,rs")]
    methods: Vec<Method>,
    /// `start:end:step` or a comma list.
    #[arg(long, default_value = "10:100:5")]
    sizes: String,
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// RD goals in percent; each adds a required-size row per method.
    #[arg(long, value_delimiter = ',')]
    goal_rd: Vec<f64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, env = "CORRPATH_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Skip the full-set solve and leave ord_pct empty.
    #[arg(long)]
    no_ord: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_nodes: a.nodes,
        n_links: a.links,
        n_periods: a.periods,
        n_days: a.days,
        base_speed: a.base_speed,
        spatial_rho: a.spatial_rho,
        temporal_rho: a.temporal_rho,
        seed: a.seed,
        floor_kmh: a.floor,
        log_sd: a.log_sd,
        period_minutes: a.grid.period_minutes,
        window_start_s: parse_clock(&a.grid.window_start).map_err(|e| anyhow!(e))?,
    };
    let net = generate_network(&spec)?;
    let panel = generate_panel(&net, &spec)?;
    std::fs::create_dir_all(&a.out_dir)?;
    net.save(a.out_dir.join("links.csv"))?;
    let mut w = BufWriter::new(File::create(a.out_dir.join("speeds.csv"))?);
    panel.write_csv(&net, &mut w)?;
    w.flush()?;
    Ok(())
}

fn write_summary(s: &CorrelationSummary, out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "bin_low,bin_high,count")?;
    for (i, c) in s.bins.iter().enumerate() {
        let (lo, hi) = CorrelationSummary::bin_edges(i);
        writeln!(out, "{lo:.1},{hi:.1},{c}")?;
    }
    writeln!(out, "# n_vars={}", s.n_vars)?;
    writeln!(out, "# zero_variance_vars={}", s.zero_variance_vars)?;
    writeln!(out, "# total_pairs={}", s.total_pairs)?;
    writeln!(out, "# evaluated_pairs={}", s.evaluated_pairs)?;
    writeln!(out, "# sampled={}", s.sampled)?;
    writeln!(out, "# threshold={}", s.threshold)?;
    writeln!(out, "# insignificant_frac={}", s.insignificant_frac())?;
    writeln!(out, "# significant_frac={}", s.significant_frac())?;
    writeln!(out, "# strong_frac={}", s.strong_frac())
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    let (net, panel) = a.input.load()?;
    let mut out = output(&a.out)?;
    if let Some(mode) = a.profile {
        let link_id = a.link.expect("clap requires --link");
        let link = net.link_position(link_id).ok_or_else(|| anyhow!("unknown link id {link_id}"))?;
        let mode = match mode {
            ProfileArg::Spatial => ProfileMode::Spatial,
            ProfileArg::Temporal => ProfileMode::Temporal,
        };
        let entries = profile(&panel, VarKey::new(link, a.period.expect("clap requires --period")), mode, a.level)?;
        writeln!(out, "link_id,period,r,significant")?;
        for e in entries {
            let r = e.r.map(|r| r.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{r},{}", net.links()[e.var.link_index].link_id, e.var.period_index, e.significant)?;
        }
    } else {
        let opts = SummaryOptions { level: a.level, pair_budget: a.pair_budget, subsample_seed: a.sample_seed, periods: None };
        write_summary(&correlation_summary(&panel, &opts)?, &mut out)?;
    }
    out.flush()?;
    Ok(())
}

fn meta_path(csv: &FsPath) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let (net, panel) = a.input.load()?;
    let count = || a.count.ok_or_else(|| anyhow!("--count is required for --method {}", a.method));
    let set = match a.method {
        Method::Sg => generate_sg(&panel, count()?, a.seed)?,
        Method::Rs => sample_rs(&panel, count()?, a.seed)?,
        Method::Full => full_set(&panel),
    };
    let mut w = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    set.write_csv(&net, &mut w)?;
    w.flush()?;
    let mut json = serde_json::to_string_pretty(&set.meta())?;
    json.push('\n');
    std::fs::write(meta_path(&a.out), json)?;
    Ok(())
}

#[derive(Serialize)]
struct SolveOutput {
    objective: String,
    origin: NodeId,
    destination: NodeId,
    depart_s: f64,
    nodes: Vec<NodeId>,
    link_ids: Vec<i64>,
    value: f64,
    unit: &'static str,
    optimal: bool,
    k_explored: usize,
    tau_history: Vec<f64>,
}

fn unit(kind: ObjectiveKind) -> &'static str {
    if kind == ObjectiveKind::F3 {
        "kg"
    } else {
        "s"
    }
}

fn cmd_solve(a: &SolveArgs) -> Result<()> {
    let net = RoadNetwork::load(&a.links).with_context(|| format!("reading {}", a.links.display()))?;
    let grid = a.grid.grid(1)?;
    let set = match (&a.scenarios, &a.speeds) {
        (Some(path), _) => {
            let meta_file = meta_path(path);
            let meta: Option<ScenarioMeta> = if meta_file.exists() {
                Some(serde_json::from_slice(&std::fs::read(&meta_file)?).with_context(|| format!("reading {}", meta_file.display()))?)
            } else {
                None
            };
            let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
            ScenarioSet::from_reader(io::BufReader::new(file), &net, grid, meta.as_ref())
                .with_context(|| format!("reading {}", path.display()))?
        }
        (None, Some(path)) => {
            let panel = SpeedPanel::load(path, &net, grid).with_context(|| format!("reading {}", path.display()))?;
            full_set(&panel)
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    let spec = a.objective.spec(&set.grid())?;
    let od = a.objective.od()?;
    let r = hall_solve(&net, &set, &spec, od.origin, od.dest, a.objective.k_max)?;
    let out = SolveOutput {
        objective: spec.kind().to_string(),
        origin: od.origin,
        destination: od.dest,
        depart_s: spec.depart_s,
        link_ids: r.path.link_ids(&net),
        nodes: r.path.nodes,
        value: r.value,
        unit: unit(spec.kind()),
        optimal: r.optimal,
        k_explored: r.k_explored,
        tau_history: r.tau_history,
    };
    let mut w = output(&a.out)?;
    serde_json::to_writer_pretty(&mut w, &out)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    let bad = || anyhow!("--sizes expects `start:end:step` or a comma list, got `{s}`");
    let sizes: Vec<usize> = if s.contains(':') {
        let parts = s.split(':').map(|p| p.trim().parse::<usize>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
        let [start, end, step] = parts[..] else { return Err(bad()) };
        if step == 0 || start > end {
            return Err(bad());
        }
        (start..=end).step_by(step).collect()
    } else {
        s.split(',').map(|p| p.trim().parse::<usize>().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad());
    }
    Ok(sizes)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn cmd_stability(a: &StabilityArgs) -> Result<()> {
    let (net, panel) = a.input.load()?;
    let spec = a.objective.spec(&panel.grid())?;
    let od = a.objective.od()?;
    let sizes = parse_sizes(&a.sizes)?;
    if a.runs == 0 {
        bail!("--runs must be at least 1");
    }
    if a.methods.contains(&Method::Full) {
        bail!("--methods accepts sg and rs");
    }
    let cfg = SweepConfig { m: a.m, runs: a.runs, seed: a.seed, k_max: a.objective.k_max };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = a.jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build()?;
    let cells: Vec<(Method, usize)> = a.methods.iter().flat_map(|&m| sizes.iter().map(move |&s| (m, s))).collect();
    let rows: Vec<StabilityReport> = pool.install(|| -> Result<_, StabilityError> {
        let reference =
            if a.no_ord { None } else { Some(FullReference::solve(&panel, &net, &spec, od, cfg.k_max)?) };
        cells.par_iter().map(|&(method, s)| report(&panel, &net, method, s, &spec, od, &cfg, reference.as_ref())).collect()
    })?;

    let mut out = output(&a.out)?;
    writeln!(
        out,
        "method,objective,od,S,m,rd_pct,var,ord_pct,rs_min_rd,rs_mean_rd,rs_max_rd,rs_min_var,rs_mean_var,rs_max_var"
    )?;
    let od_label = format!("{}-{}", od.origin, od.dest);
    for r in &rows {
        let rs = r.rs.as_ref();
        let rd = rs.and_then(|x| x.rd);
        writeln!(
            out,
            "{},{},{od_label},{},{},{},{},{},{},{},{},{},{},{}",
            r.method,
            spec.kind(),
            r.size,
            r.m,
            fmt_opt(r.rd),
            r.var,
            fmt_opt(r.ord),
            fmt_opt(rd.map(|x| x.min)),
            fmt_opt(rd.map(|x| x.mean)),
            fmt_opt(rd.map(|x| x.max)),
            fmt_opt(rs.map(|x| x.var.min)),
            fmt_opt(rs.map(|x| x.var.mean)),
            fmt_opt(rs.map(|x| x.var.max)),
        )?;
    }
    for &method in &a.methods {
        for &goal in &a.goal_rd {
            let found = first_meeting_goal::<()>(&sizes, goal, |s| {
                Ok(rows.iter().find(|r| r.method == method && r.size == s).and_then(|r| r.rd))
            })
            .expect("lookup cannot fail");
            let required = match found {
                RequiredScenarios::Found(s) => s.to_string(),
                RequiredScenarios::NotReached(s) => format!(">{s}"),
            };
            writeln!(out, "# s_rd method={method} goal_rd={goal} required={required}")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// 3 for infeasible queries, 4 for invariant violations, 2 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        let solve = cause.downcast_ref::<SolveError>().or_else(|| match cause.downcast_ref::<StabilityError>() {
            Some(StabilityError::Solve(e)) => Some(e),
            _ => None,
        });
        match solve {
            Some(SolveError::NoPath(..)) => return 3,
            Some(SolveError::Invariant(_)) => return 4,
            _ => {}
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Stability(a) => cmd_stability(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
