//! Headless command-line front end.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use softbody_ahp::{cost_value_points, priority_vector, write_points_csv, ComparisonMatrix};
use softbody_core::collision::Collider;
use softbody_core::engine::{Series, SeriesFrame, SimInstance};
use softbody_core::model::{CreationParams, Dimension};
use softbody_core::persistence::{
    export_csv_file, load_environment, load_object, load_state, save_object, save_series,
    save_state,
};
use softbody_core::registry::Catalog;
use softbody_core::Vec3;

use crate::server::{self, ServerConfig};

#[derive(Debug, Parser)]
#[command(name = "softbody", version, about = "Mass-spring softbody simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the WebSocket server.
    Serve(ServeArgs),
    /// Build a body and write it as an object file.
    Create(CreateArgs),
    /// Simulate an object file headlessly.
    Run(RunArgs),
    /// Continue a saved state.
    Resume(ResumeArgs),
    /// Run one object under several integrators and report their divergence.
    Compare(CompareArgs),
    /// Cost-value points from AHP comparison matrices.
    Ahp(AhpArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Overridden by SOFTBODY_PORT.
    #[arg(long, default_value_t = server::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = server::DEFAULT_MAX_INSTANCES)]
    pub max_instances: usize,
    /// Environment file applied to new instances (default: ground plane).
    #[arg(long)]
    pub environment: Option<PathBuf>,
    /// Directory served at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CreateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub dim: u8,
    /// Total particle count, split evenly over the layers.
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Outer radius or chain length, m.
    #[arg(long)]
    pub size: Option<f64>,
    /// Total mass, kg.
    #[arg(long)]
    pub mass: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Output {
    /// Record every simulated step to a series file.
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Write the recorded frames as CSV.
    #[arg(long)]
    pub export_csv: Option<PathBuf>,
    /// Write the final state.
    #[arg(long)]
    pub save_state: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub object: PathBuf,
    #[arg(long)]
    pub integrator: Option<String>,
    #[arg(long)]
    pub detector: Option<String>,
    #[arg(long)]
    pub steps: u64,
    /// Time step override, s.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub environment: Option<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct ResumeArgs {
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long)]
    pub steps: u64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub object: PathBuf,
    /// Comma-separated; divergence is measured against the first.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub integrators: Vec<String>,
    #[arg(long)]
    pub steps: u64,
    /// Common time step; defaults to the first integrator's.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub environment: Option<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct AhpArgs {
    #[arg(long)]
    pub value_matrix: PathBuf,
    #[arg(long)]
    pub cost_matrix: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Run a parsed command. Errors are reported by the caller as one line.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve(a) => serve(a),
        Command::Create(a) => create(a),
        Command::Run(a) => run(a),
        Command::Resume(a) => resume(a),
        Command::Compare(a) => compare(a),
        Command::Ahp(a) => ahp(a),
    }
}

fn coded<E: std::fmt::Display>(code: &str) -> impl Fn(E) -> anyhow::Error + '_ {
    move |e| anyhow!("{code}: {e}")
}

fn serve(a: ServeArgs) -> Result<()> {
    let port = match std::env::var("SOFTBODY_PORT") {
        Ok(p) => p.parse().with_context(|| format!("SOFTBODY_PORT={p} is not a port"))?,
        Err(_) => a.port,
    };
    let environment = match &a.environment {
        Some(p) => load_environment(p).map_err(|e| anyhow!("{}: {e}", e.code()))?.colliders,
        None => vec![Collider::ground()],
    };
    let config = ServerConfig {
        host: a.host,
        port,
        max_instances: a.max_instances,
        environment,
        static_dir: a.static_dir,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let (addr, serving) = server::bind(config).await?;
        tracing::info!("listening on ws://{addr}/ws");
        println!("listening on ws://{addr}/ws");
        serving.await?;
        Ok(())
    })
}

fn create(a: CreateArgs) -> Result<()> {
    let dim = Dimension::try_from(a.dim).map_err(|e| anyhow!(e))?;
    let mut cp = CreationParams::default_for(dim);
    if let Some(l) = a.layers {
        cp.layer_count = l;
    }
    if let Some(n) = a.particles {
        if cp.layer_count == 0 || n % cp.layer_count != 0 {
            bail!("INVALID_PARAMS: {n} particles cannot be split over {} layers", cp.layer_count);
        }
        cp.particle_count = n / cp.layer_count;
    }
    if let Some(s) = a.size {
        cp.size = s;
    }
    if let Some(m) = a.mass {
        cp.mass = softbody_core::model::MassSpec::Total(m);
    }
    let body = softbody_core::model::create_soft_body(&cp).map_err(|e| anyhow!("{}: {e}", e.code()))?;
    save_object(&a.out, &body, Some(&cp)).map_err(|e| anyhow!("{}: {e}", e.code()))?;
    println!(
        "wrote {} ({} particles, {} springs, {} faces)",
        a.out.display(),
        body.particle_count(),
        body.springs.len(),
        body.faces.len()
    );
    Ok(())
}

fn load_instance(object: &Path, environment: Option<&Path>, cat: &Catalog) -> Result<SimInstance> {
    let imported = load_object(object).map_err(|e| anyhow!("{}: {e}", e.code()))?;
    let mut inst = SimInstance::new(1, imported.body, cat);
    inst.creation = imported.creation;
    if let Some(p) = environment {
        inst.environment = load_environment(p).map_err(|e| anyhow!("{}: {e}", e.code()))?.colliders;
    }
    Ok(inst)
}

/// Frame holding the instance's current state, used as the first frame of
/// CLI recordings so a zero-step run still records where it started.
fn initial_frame(i: &SimInstance) -> SeriesFrame {
    SeriesFrame {
        tick: i.tick,
        sim_time: i.sim_time,
        positions: i.body.particles.iter().map(|p| p.position).collect(),
        velocities: i.body.particles.iter().map(|p| p.velocity).collect(),
        broken_spring_ids: Vec::new(),
    }
}

/// Step `steps` times, honouring the recording and output options.
fn simulate(mut inst: SimInstance, steps: u64, out: &Output, cat: &Catalog) -> Result<()> {
    let first = initial_frame(&inst);
    let recording = out.record.is_some() || out.export_csv.is_some();
    inst.resume().map_err(coded("WRONG_STATUS"))?;
    if recording {
        inst.start_recording(1, None).map_err(|e| anyhow!("{}: {e}", e.code()))?;
    }
    for _ in 0..steps {
        inst.step(cat)
            .map_err(|e| anyhow!("{}: step {} failed: {e}", e.code(), inst.tick + 1))?;
    }
    let series = if recording {
        let mut s: Series = inst.stop_recording().map_err(|e| anyhow!("{}: {e}", e.code()))?;
        s.frames.insert(0, first);
        s.header.start_tick = s.frames[0].tick;
        Some(s)
    } else {
        None
    };
    inst.pause().map_err(coded("WRONG_STATUS"))?;
    if let (Some(path), Some(s)) = (&out.record, &series) {
        save_series(path, s).map_err(|e| anyhow!("{}: {e}", e.code()))?;
    }
    if let (Some(path), Some(s)) = (&out.export_csv, &series) {
        export_csv_file(path, s).map_err(|e| anyhow!("{}: {e}", e.code()))?;
    }
    if let Some(path) = &out.save_state {
        save_state(path, &inst).map_err(|e| anyhow!("{}: {e}", e.code()))?;
    }
    let frame = inst.snapshot_frame(Vec::new());
    println!(
        "tick {} sim_time {} energy {} springs {}",
        inst.tick,
        inst.sim_time,
        frame.diagnostics.energy,
        inst.body.springs.len()
    );
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let cat = Catalog::with_builtins();
    let mut inst = load_instance(&a.object, a.environment.as_deref(), &cat)?;
    if let Some(name) = &a.integrator {
        if !cat.integrators.contains(name) {
            bail!("UNKNOWN_ALGORITHM: no integrator named `{name}`");
        }
        inst.integrator = name.clone();
    }
    if let Some(name) = &a.detector {
        if !cat.detectors.contains(name) {
            bail!("UNKNOWN_ALGORITHM: no detector named `{name}`");
        }
        inst.detector = name.clone();
    }
    if let Some(dt) = a.dt {
        inst.params.time_step_override = Some(dt);
        inst.params.validate().map_err(|e| anyhow!("{}: {e}", e.code()))?;
    }
    simulate(inst, a.steps, &a.output, &cat)
}

fn resume(a: ResumeArgs) -> Result<()> {
    let cat = Catalog::with_builtins();
    let loaded = load_state(&a.state, 1, &cat).map_err(|e| anyhow!("{}: {e}", e.code()))?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    simulate(loaded.instance, a.steps, &a.output, &cat)
}

pub const COMPARE_HEADER: [&str; 2] = ["tick", "sim_time"];

fn compare(a: CompareArgs) -> Result<()> {
    let cat = Catalog::with_builtins();
    let base = load_instance(&a.object, a.environment.as_deref(), &cat)?;
    for name in &a.integrators {
        if !cat.integrators.contains(name) {
            bail!("UNKNOWN_ALGORITHM: no integrator named `{name}`");
        }
    }
    if a.integrators.len() < 2 {
        bail!("INVALID_PARAMS: compare needs at least two integrators");
    }
    let dt = match a.dt {
        Some(dt) => dt,
        None => cat.integrators.get(&a.integrators[0])?.spec.time_step,
    };
    let mut runs: Vec<SimInstance> = a
        .integrators
        .iter()
        .map(|name| {
            let mut i = base.clone();
            i.integrator = name.clone();
            i.params.time_step_override = Some(dt);
            i
        })
        .collect();
    for i in &mut runs {
        i.params.validate().map_err(|e| anyhow!("{}: {e}", e.code()))?;
        i.resume().map_err(coded("WRONG_STATUS"))?;
    }
    let mut w = csv::Writer::from_writer(
        File::create(&a.report).map_err(|e| anyhow!("IO_FAILURE: {}: {e}", a.report.display()))?,
    );
    let mut header: Vec<String> = COMPARE_HEADER.iter().map(|s| s.to_string()).collect();
    for name in &a.integrators[1..] {
        header.push(format!("max_divergence_{name}"));
        header.push(format!("rms_divergence_{name}"));
    }
    w.write_record(&header)?;
    for _ in 0..a.steps {
        let mut positions = Vec::with_capacity(runs.len());
        for (i, name) in runs.iter_mut().zip(&a.integrators) {
            let f = i
                .step(&cat)
                .map_err(|e| anyhow!("{}: {name} failed at step {}: {e}", e.code(), i.tick + 1))?;
            positions.push(f.positions);
        }
        let mut row = vec![runs[0].tick.to_string(), runs[0].sim_time.to_string()];
        for other in &positions[1..] {
            let (max, rms) = divergence(&positions[0], other);
            row.push(max.to_string());
            row.push(rms.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| anyhow!("IO_FAILURE: {e}"))?;
    println!("wrote {} ({} rows)", a.report.display(), a.steps);
    Ok(())
}

/// Maximum and root-mean-square particle distance between two runs.
pub fn divergence(a: &[Vec3], b: &[Vec3]) -> (f64, f64) {
    if a.is_empty() {
        return (0.0, 0.0);
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p.distance(*q)).collect();
    let max = d.iter().copied().fold(0.0, f64::max);
    let rms = (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt();
    (max, rms)
}

fn ahp(a: AhpArgs) -> Result<()> {
    let load = |p: &Path| ComparisonMatrix::from_csv_path(p).map_err(|e| anyhow!("{}: {e}", e.code()));
    let value = load(&a.value_matrix)?;
    let cost = load(&a.cost_matrix)?;
    for (name, m) in [("value", &value), ("cost", &cost)] {
        for w in m.reciprocity_warnings() {
            eprintln!("warning: {name} matrix: {w}");
        }
    }
    let points = cost_value_points(&priority_vector(&value), &priority_vector(&cost))
        .map_err(|e| anyhow!("{}: {e}", e.code()))?;
    let file = File::create(&a.out).map_err(|e| anyhow!("IO_FAILURE: {}: {e}", a.out.display()))?;
    write_points_csv(&points, file).map_err(|e| anyhow!("{}: {e}", e.code()))?;
    let mut stdout = std::io::stdout().lock();
    for p in &points {
        writeln!(stdout, "{:<6} cost {:>8.3}%  value {:>8.3}%", p.label, p.cost_percent, p.value_percent)?;
    }
    Ok(())
}
