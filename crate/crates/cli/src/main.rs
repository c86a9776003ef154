use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use stream_dse::codec::{entropy, estimate_ratio, huffman_build, mean_code_length, read_raw, stream_ratio, Scheme};
use stream_dse::dse::{calibration_set, check_constraints, weight_sample, CodecModel, DesignPlan, DseConfig, Explorer};
use stream_dse::report::{batch_csv, batch_sweep, design_report, gnuplot_script, ratio_csv, ratio_sweep, validate_plan, validation_table};
use stream_dse::simulator::{measured_graph_depth, simulate, waveform_csv};
use stream_dse::{CostTable, DeviceSpec, Error, ModelGraph, Shape, VertexKind};

/// Design-space exploration for streaming CNN accelerators.
#[derive(Parser)]
#[command(name = "stream-dse", version)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the exploration and write plan.json, report.json, report.txt and audit.jsonl.
    Dse(DseArgs),
    /// Evaluate the latency model of a plan (or of a fresh exploration) at a batch size.
    Estimate(EstimateArgs),
    /// Simulate the subgraphs of a plan word by word.
    Simulate(SimArgs),
    /// Compare the plan's analytical depth and interval with the simulator.
    Validate(SimArgs),
    /// Sweep batch size or activation compression ratio.
    Sweep(SweepArgs),
    /// Compression statistics of the calibration data, the weights or a raw tensor file.
    CodecStats(CodecArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Model graph (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Device description (JSON).
    #[arg(long)]
    device: PathBuf,
    /// Off-chip codec.
    #[arg(long, default_value = "none")]
    codec: Scheme,
    /// Seed of the synthetic calibration data.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-kind resource cost table (JSON); the bundled table otherwise.
    #[arg(long)]
    cost_table: Option<PathBuf>,
}

#[derive(Args)]
struct DseArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    batch: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated vertex kinds a subgraph may start at.
    #[arg(long, value_delimiter = ',')]
    boundary_kinds: Option<Vec<VertexKind>>,
    #[arg(long)]
    max_merge_rounds: Option<usize>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    batch: u64,
    /// Plan from `dse`; explores from scratch when absent.
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    plan: PathBuf,
    /// Only this subgraph.
    #[arg(long)]
    subgraph: Option<usize>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    frames: u64,
    /// Simulate a resized model (e.g. 3x64x80) with the plan's partitioning and parallelism.
    #[arg(long)]
    sim_shape: Option<String>,
    /// Write a waveform CSV per subgraph into this directory.
    #[arg(long)]
    dump_waveform: Option<PathBuf>,
    /// Write the result as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Batch,
    Ratio,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, value_enum)]
    axis: Axis,
    #[arg(long, value_delimiter = ',', default_value = "1,4,16,64")]
    batches: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "1.0,1.2,1.4,1.6,1.8,2.0")]
    multipliers: Vec<f64>,
    /// Subgraph swept on the ratio axis; the first one with evictions by default.
    #[arg(long)]
    subgraph: Option<usize>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    frames: u64,
    #[arg(long)]
    sim_shape: Option<String>,
    /// CSV output file (stdout otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a gnuplot script next to the CSV.
    #[arg(long)]
    gnuplot: bool,
}

#[derive(Args)]
struct CodecArgs {
    /// Model whose calibration data and weights are measured.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Raw tensor file to measure instead.
    #[arg(long)]
    tensor: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.cmd {
        Cmd::Dse(a) => cmd_dse(a),
        Cmd::Estimate(a) => cmd_estimate(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Validate(a) => cmd_validate(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::CodecStats(a) => cmd_codec_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for designs that cannot be built or run, 2 for bad input.
fn exit_code(e: &anyhow::Error) -> u8 {
    fn design_fault(e: &Error) -> bool {
        match e {
            Error::Infeasible { .. } | Error::Deadlock { .. } | Error::IllegalEviction { .. } => true,
            Error::InSubgraph { source, .. } => design_fault(source),
            _ => false,
        }
    }
    let infeasible = e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(design_fault) || c.downcast_ref::<Infeasible>().is_some());
    if infeasible {
        1
    } else {
        2
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Infeasible(String);

struct Loaded {
    g: ModelGraph,
    device: DeviceSpec,
    costs: CostTable,
    codec: CodecModel,
}

fn load(c: &Common) -> anyhow::Result<Loaded> {
    let g = ModelGraph::from_file(&c.model).with_context(|| format!("loading model {}", c.model.display()))?;
    let device = DeviceSpec::from_file(&c.device).with_context(|| format!("loading device {}", c.device.display()))?;
    let costs = match &c.cost_table {
        Some(p) => CostTable::from_file(p).with_context(|| format!("loading cost table {}", p.display()))?,
        None => CostTable::default(),
    };
    let codec = CodecModel::calibrate(&g, c.codec, c.seed)?;
    Ok(Loaded { g, device, costs, codec })
}

fn load_plan(path: &Path) -> anyhow::Result<DesignPlan> {
    let text = fs::read_to_string(path).with_context(|| format!("reading plan {}", path.display()))?;
    Ok(DesignPlan::from_json(&text).with_context(|| format!("parsing plan {}", path.display()))?)
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_shape(s: &str) -> anyhow::Result<Shape> {
    let dims = s.split(['x', ',']).map(|d| d.trim().parse::<u64>()).collect::<Result<Vec<_>, _>>().with_context(|| format!("bad shape `{s}`"))?;
    Shape::from_dims(&dims).with_context(|| format!("shape `{s}` must be CxHxW or CxDxHxW"))
}

/// The model and plan to simulate, resized when a simulation shape is given.
fn sim_target(l: &Loaded, plan: DesignPlan, sim_shape: Option<&str>) -> anyhow::Result<(ModelGraph, DesignPlan)> {
    let Some(shape) = sim_shape else { return Ok((l.g.clone(), plan)) };
    let g = l.g.with_input_shape(parse_shape(shape)?)?;
    let cfg = DseConfig { batch: plan.batch, ..Default::default() };
    let plan = Explorer::new(&g, &l.device, &l.costs, &l.codec, &cfg)?.refit(&plan)?;
    Ok((g, plan))
}

fn cmd_dse(a: DseArgs) -> anyhow::Result<()> {
    let l = load(&a.common)?;
    let mut cfg = DseConfig { batch: a.batch, ..Default::default() };
    cfg.boundary_kinds = a.boundary_kinds.map(|k| k.into_iter().collect::<BTreeSet<_>>());
    if let Some(n) = a.max_merge_rounds {
        cfg.max_merge_rounds = n;
    }
    let plan = Explorer::new(&l.g, &l.device, &l.costs, &l.codec, &cfg)?.run()?;
    let violations = check_constraints(&l.g, &plan, &l.device);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Infeasible(format!("plan violates constraints: {}", list.join("; "))).into());
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let report = design_report(&l.g, &plan, &l.device);
    write(&a.out.join("plan.json"), &plan.to_json()?)?;
    write(&a.out.join("report.json"), &report.to_json()?)?;
    write(&a.out.join("audit.jsonl"), &plan.audit_jsonl()?)?;
    let table = report.to_table();
    write(&a.out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_estimate(a: EstimateArgs) -> anyhow::Result<()> {
    let plan = match &a.plan {
        Some(p) => load_plan(p)?,
        None => {
            let l = load(&a.common)?;
            let cfg = DseConfig { batch: a.batch, ..Default::default() };
            Explorer::new(&l.g, &l.device, &l.costs, &l.codec, &cfg)?.run()?
        }
    };
    let perf = plan.performance_at(a.batch)?;
    println!("{}", serde_json::to_string_pretty(&perf)?);
    Ok(())
}

fn selected(plan: &DesignPlan, only: Option<usize>) -> anyhow::Result<Vec<usize>> {
    match only {
        Some(i) if i >= plan.subgraphs.len() => bail!("plan has {} subgraphs, no subgraph {i}", plan.subgraphs.len()),
        Some(i) => Ok(vec![i]),
        None => Ok((0..plan.subgraphs.len()).collect()),
    }
}

fn cmd_simulate(a: SimArgs) -> anyhow::Result<()> {
    let l = load(&a.common)?;
    let (g, plan) = sim_target(&l, load_plan(&a.plan)?, a.sim_shape.as_deref())?;
    if let Some(dir) = &a.dump_waveform {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut rows = Vec::new();
    for i in selected(&plan, a.subgraph)? {
        let (sub, mut cfg) = stream_dse::dse::subgraph_sim(&g, &plan, i, &l.device, a.frames)?;
        cfg.waveform = a.dump_waveform.is_some();
        let rep = simulate(&sub, &cfg).map_err(|e| Error::InSubgraph { index: i, source: Box::new(e) })?;
        if let Some(dir) = &a.dump_waveform {
            write(&dir.join(format!("subgraph_{i}.csv")), &waveform_csv(&rep))?;
        }
        println!(
            "subgraph {i}: fill {:.1} cycles, interval {}, total {:.1} cycles, stall {:.1} cycles",
            measured_graph_depth(&rep).unwrap_or(0.0),
            rep.interval.map_or("-".into(), |x| format!("{x:.1}")),
            rep.total_cycles,
            rep.total_stall()
        );
        rows.push(serde_json::json!({
            "subgraph": i,
            "fill": measured_graph_depth(&rep),
            "interval": rep.interval,
            "total_cycles": rep.total_cycles,
            "stall_cycles": rep.total_stall(),
        }));
    }
    if let Some(out) = &a.out {
        write(out, &serde_json::to_string_pretty(&rows)?)?;
    }
    Ok(())
}

fn cmd_validate(a: SimArgs) -> anyhow::Result<()> {
    let l = load(&a.common)?;
    let (g, plan) = sim_target(&l, load_plan(&a.plan)?, a.sim_shape.as_deref())?;
    let mut rows = validate_plan(&g, &plan, &l.device, a.frames)?;
    if let Some(i) = a.subgraph {
        rows.retain(|r| r.subgraph == i);
    }
    print!("{}", validation_table(&rows));
    if let Some(out) = &a.out {
        write(out, &serde_json::to_string_pretty(&rows)?)?;
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> anyhow::Result<()> {
    let plan = load_plan(&a.plan)?;
    let csv = match a.axis {
        Axis::Batch => {
            if a.batches.iter().any(|b| *b == 0) {
                bail!(Error::Config("batch sizes must be at least 1".into()));
            }
            batch_csv(&batch_sweep(&plan, &a.batches)?)
        }
        Axis::Ratio => {
            let l = load(&a.common)?;
            let (g, plan) = sim_target(&l, plan, a.sim_shape.as_deref())?;
            let index = match a.subgraph {
                Some(i) => selected(&plan, Some(i))?[0],
                None => plan.subgraphs.iter().position(|s| !s.evictions.is_empty()).unwrap_or(0),
            };
            ratio_csv(&ratio_sweep(&g, &plan, index, &l.device, a.frames, &a.multipliers)?)
        }
    };
    match &a.out {
        Some(out) => {
            write(out, &csv)?;
            if a.gnuplot {
                let (x, y, col) = match a.axis {
                    Axis::Batch => ("batch", "reconfiguration share", 4),
                    Axis::Ratio => ("compression ratio multiplier", "MAC/s", 2),
                };
                let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                write(&out.with_extension("gp"), &gnuplot_script(&name, x, y, col))?;
            }
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_codec_stats(a: CodecArgs) -> anyhow::Result<()> {
    let schemes = [Scheme::Rle, Scheme::Huffman];
    if let Some(path) = &a.tensor {
        let s = read_raw(path).with_context(|| format!("reading tensor {}", path.display()))?;
        let hist = s.histogram();
        let table = huffman_build(&hist, s.word_length)?;
        println!("{}: {} words of {} bits", path.display(), s.len(), s.word_length);
        println!("  entropy {:.4} bits, huffman mean length {:.4} bits", entropy(&hist), mean_code_length(&hist, &table)?);
        for scheme in schemes {
            println!("  {scheme:<8} ratio {:.4}", stream_ratio(&s, scheme, None)?);
        }
        return Ok(());
    }
    let Some(model) = &a.model else { bail!(Error::Config("codec-stats needs --model or --tensor".into())) };
    let g = ModelGraph::from_file(model).with_context(|| format!("loading model {}", model.display()))?;
    let samples = calibration_set(&g, a.seed)?;
    println!("{}: {} calibration maps, seed {}", g.name, samples.len(), a.seed);
    for scheme in schemes {
        let r = estimate_ratio(&samples, scheme)?;
        println!("  activations {scheme:<8} c̄ {:.4} (min {:.4}, max {:.4})", r.c_bar, r.min, r.max);
    }
    for v in g.vertex_ids() {
        let Some(sample) = weight_sample(&g, v, a.seed)? else { continue };
        let ratios: Vec<String> = schemes
            .iter()
            .map(|s| stream_ratio(&sample, *s, None).map(|r| format!("{s} {r:.4}")))
            .collect::<stream_dse::Result<_>>()?;
        println!("  weights {:<20} {}", g.vertex(v).id, ratios.join("  "));
    }
    Ok(())
}
