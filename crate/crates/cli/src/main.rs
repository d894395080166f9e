//! `tensegrity` command-line tool.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tensegrity::dynamics::{self, laws_from_prestress, DynamicsConfig};
use tensegrity::mission::{self, MissionConfig};
use tensegrity::sizing::{total_min_mass, MaterialLibrary};
use tensegrity::statics::{prestress_modes, solve_force_densities, EquilibriumSolution, LoadCase};
use tensegrity::topology::{
    build_bar_system, build_prism, build_rig, prism_equilibrium_twist, BarSystem, RigParams,
    Topology,
};
use tensegrity::Error;

/// Exit status for unreadable or malformed input and output failures.
const EXIT_PARSE: u8 = 3;
/// Exit status for inputs that parse but fail validation or have no solution.
const EXIT_MODEL: u8 = 4;

#[derive(Parser)]
#[command(
    name = "tensegrity",
    version,
    about = "Tensegrity structures: build, solve, size, simulate; plus the drilling mission model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a topology and write it as JSON.
    Topo {
        #[command(subcommand)]
        kind: TopoKind,
    },
    /// Solve N K = W for string and bar force densities.
    Solve {
        /// Topology JSON.
        #[arg(long)]
        topo: PathBuf,
        /// Load JSON `{"forces": {"<node>": [fx, fy, fz]}}`; zero load if omitted.
        #[arg(long)]
        load: Option<PathBuf>,
        /// Solution JSON; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimum member masses for a solved topology.
    Mass {
        #[arg(long)]
        topo: PathBuf,
        /// Solution JSON from `solve`.
        #[arg(long)]
        solution: PathBuf,
        /// Materials JSON added to (or overriding) the built-in materials.
        #[arg(long)]
        materials: Option<PathBuf>,
        /// Mass report JSON; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-member CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Integrate the dynamics and write the trajectory CSV.
    Dyn {
        #[arg(long)]
        topo: PathBuf,
        /// Dynamics config JSON; defaults if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trajectory CSV; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Step, s (overrides the config).
        #[arg(long)]
        dt: Option<f64>,
        /// Simulated time, s (overrides the config).
        #[arg(long)]
        duration: Option<f64>,
        /// Prestress the strings along the positive self-stress mode, scaled
        /// so the largest string force density equals this value (N/m).
        #[arg(long)]
        prestress: Option<f64>,
    },
    /// Run the drill/heat/extract/filter cycle and write the log CSV.
    Mission {
        /// Config JSON applied on top of the profile.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Bundled profile: as-designed or as-tested.
        #[arg(long, default_value = "as-designed")]
        profile: String,
        /// Mission length, s; one full cycle if omitted.
        #[arg(long)]
        duration: Option<f64>,
        /// Log CSV; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum TopoKind {
    /// Regular n-strut prism.
    Prism {
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// m
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        /// m
        #[arg(long, default_value_t = 1.0)]
        height: f64,
        /// Top ring rotation, rad; equilibrium twist if omitted.
        #[arg(long)]
        twist: Option<f64>,
        #[command(flatten)]
        out: OutArg,
    },
    /// T-bar replacing a single compressive bar.
    Tbar(BarSystemArgs),
    /// D-bar replacing a single compressive bar.
    Dbar(BarSystemArgs),
    /// Three-ring drilling-rig frame with an anchored bottom ring.
    Rig {
        /// Primary stay elevation, degrees.
        #[arg(long, default_value_t = 45.0)]
        stay_angle: f64,
        #[arg(long, default_value_t = 4)]
        joints: usize,
        #[arg(long, default_value_t = 1)]
        stays_per_joint: usize,
        /// Ring radius, m (all three rings).
        #[arg(long)]
        radius: Option<f64>,
        /// Middle and top ring heights above the bottom ring, m.
        #[arg(long, num_args = 2, value_names = ["MIDDLE", "TOP"])]
        heights: Option<Vec<f64>>,
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Args)]
struct BarSystemArgs {
    /// Terminal-to-terminal length, m.
    #[arg(long, default_value_t = 1.0)]
    span: f64,
    /// Width relative to half the span.
    #[arg(long, default_value_t = 0.1)]
    aspect: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct OutArg {
    /// Topology JSON; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Outcome of a successful command.
struct CommandResult {
    /// Written files; `-` stands for stdout.
    artifacts: Vec<PathBuf>,
    summary: String,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Json(_) | Error::Csv(_) => EXIT_PARSE,
        _ => EXIT_MODEL,
    }
}

/// Writes to `path`, or to stdout (recorded as `-`) when no path is given.
fn emit(path: Option<&Path>, bytes: &[u8], artifacts: &mut Vec<PathBuf>) -> Result<(), Error> {
    match path {
        Some(p) => {
            fs::write(p, bytes).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            artifacts.push(p.to_path_buf());
        }
        None => {
            io::stdout().write_all(bytes).map_err(|e| Error::Io {
                path: "<stdout>".into(),
                source: e,
            })?;
            artifacts.push(PathBuf::from("-"));
        }
    }
    Ok(())
}

fn json_bytes(s: String) -> Vec<u8> {
    let mut b = s.into_bytes();
    b.push(b'\n');
    b
}

fn topo_summary(t: &Topology) -> String {
    format!(
        "nodes: {}, bars: {}, strings: {}, anchored: {}",
        t.node_count(),
        t.bar_count(),
        t.string_count(),
        t.anchored_nodes().len()
    )
}

fn cmd_topo(kind: TopoKind) -> Result<CommandResult, Error> {
    let (topology, out) = match kind {
        TopoKind::Prism {
            n,
            radius,
            height,
            twist,
            out,
        } => {
            let twist = twist.unwrap_or_else(|| prism_equilibrium_twist(n.max(3)));
            (build_prism(n, radius, height, twist)?, out.out)
        }
        TopoKind::Tbar(a) => (
            build_bar_system(BarSystem::TBar, a.span, a.aspect)?,
            a.out.out,
        ),
        TopoKind::Dbar(a) => (
            build_bar_system(BarSystem::DBar, a.span, a.aspect)?,
            a.out.out,
        ),
        TopoKind::Rig {
            stay_angle,
            joints,
            stays_per_joint,
            radius,
            heights,
            out,
        } => {
            let mut p = RigParams {
                stay_angle: stay_angle.to_radians(),
                nodes_per_ring: joints,
                stays_per_joint,
                ..RigParams::default()
            };
            if let Some(r) = radius {
                p.ring_radii = [r; 3];
            }
            if let Some(h) = heights {
                p.ring_heights = [0.0, h[0], h[1]];
            }
            (build_rig(&p)?, out.out)
        }
    };
    let mut artifacts = Vec::new();
    emit(
        out.as_deref(),
        &json_bytes(topology.to_json_string()?),
        &mut artifacts,
    )?;
    Ok(CommandResult {
        artifacts,
        summary: topo_summary(&topology),
    })
}

fn cmd_solve(topo: &Path, load: Option<&Path>, out: Option<&Path>) -> Result<CommandResult, Error> {
    let t = Topology::load(topo)?;
    let w = match load {
        Some(p) => LoadCase::load(p, t.node_count())?,
        None => LoadCase::zeros(t.node_count()),
    };
    let s = solve_force_densities(&t, &t.positions(), &w)?;
    let mut artifacts = Vec::new();
    emit(out, &json_bytes(s.to_json_string()?), &mut artifacts)?;
    let mut summary = format!(
        "residual: {:e}, nullspace_dim: {}",
        s.residual_norm, s.nullspace_dim
    );
    for w in &s.warnings {
        summary.push_str("\nwarning: ");
        summary.push_str(w);
    }
    Ok(CommandResult { artifacts, summary })
}

fn cmd_mass(
    topo: &Path,
    solution: &Path,
    materials: Option<&Path>,
    out: Option<&Path>,
    csv: Option<&Path>,
) -> Result<CommandResult, Error> {
    let t = Topology::load(topo)?;
    let s = EquilibriumSolution::load(solution)?;
    let lib = match materials {
        Some(p) => MaterialLibrary::load(p)?,
        None => MaterialLibrary::builtin(),
    };
    let report = total_min_mass(&t, &t.positions(), &s, &lib)?;
    let mut artifacts = Vec::new();
    emit(out, &json_bytes(report.to_json_string()?), &mut artifacts)?;
    if let Some(p) = csv {
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        emit(Some(p), &buf, &mut artifacts)?;
    }
    Ok(CommandResult {
        artifacts,
        summary: format!(
            "total: {} kg (strings {} kg, bars {} kg)",
            report.total, report.string_total, report.bar_total
        ),
    })
}

fn cmd_dyn(
    topo: &Path,
    config: Option<&Path>,
    out: Option<&Path>,
    dt: Option<f64>,
    duration: Option<f64>,
    prestress: Option<f64>,
) -> Result<CommandResult, Error> {
    let t = Topology::load(topo)?;
    let mut cfg = match config {
        Some(p) => DynamicsConfig::load(p)?,
        None => DynamicsConfig::default(),
    };
    if let Some(dt) = dt {
        cfg.dt = dt;
    }
    if let Some(d) = duration {
        cfg.duration = d;
    }
    if let Some(peak) = prestress {
        let pos = t.positions();
        let modes = prestress_modes(&t, &pos)?;
        let mode = modes.positive_mode.ok_or_else(|| {
            Error::Model("--prestress: topology has no all-positive self-stress mode".into())
        })?;
        let gamma = &mode.as_slice()[..t.string_count()];
        let gmax = gamma.iter().cloned().fold(0.0, f64::max);
        let scaled: Vec<f64> = gamma.iter().map(|g| g / gmax * peak).collect();
        cfg.string_laws = Some(laws_from_prestress(
            &t,
            &pos,
            &scaled,
            cfg.string_stiffness,
            cfg.string_damping,
        )?);
    }
    let (model, state, schedule) = cfg.build(&t)?;
    let traj = dynamics::simulate(
        &state,
        &model,
        &schedule,
        cfg.duration,
        cfg.dt,
        cfg.sample_stride,
    )?;
    let mut buf = Vec::new();
    traj.write_csv(&mut buf)?;
    let mut artifacts = Vec::new();
    emit(out, &buf, &mut artifacts)?;
    let last = traj.last().expect("trajectory has the initial sample");
    let drift = traj.samples.iter().map(|s| s.max_drift).fold(0.0, f64::max);
    Ok(CommandResult {
        artifacts,
        summary: format!(
            "samples: {}, final time: {} s, final energy: {} J, max pre-projection drift: {:e}",
            traj.samples.len(),
            last.state.time,
            last.energy.total(),
            drift
        ),
    })
}

fn cmd_mission(
    config: Option<&Path>,
    profile: &str,
    duration: Option<f64>,
    out: Option<&Path>,
) -> Result<CommandResult, Error> {
    let mut cfg = MissionConfig::profile(profile)?;
    if let Some(p) = config {
        let text = fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?;
        cfg = cfg.overlay_json_str(&text)?;
    }
    let duration = duration.unwrap_or_else(|| cfg.cycle_length());
    let log = mission::run_cycle(&cfg, duration)?;
    let mut buf = Vec::new();
    log.write_csv(&mut buf)?;
    let mut artifacts = Vec::new();
    emit(out, &buf, &mut artifacts)?;
    let last = log.last().expect("log has the initial sample");
    Ok(CommandResult {
        artifacts,
        summary: format!(
            "profile: {}, melted: {} cc, extracted: {} cc, filtered: {} cc, energy: {} J",
            cfg.name, last.melted, last.extracted, last.filtered, last.energy
        ),
    })
}

fn run(cli: Cli) -> Result<CommandResult, Error> {
    match cli.command {
        Command::Topo { kind } => cmd_topo(kind),
        Command::Solve { topo, load, out } => cmd_solve(&topo, load.as_deref(), out.as_deref()),
        Command::Mass {
            topo,
            solution,
            materials,
            out,
            csv,
        } => cmd_mass(
            &topo,
            &solution,
            materials.as_deref(),
            out.as_deref(),
            csv.as_deref(),
        ),
        Command::Dyn {
            topo,
            config,
            out,
            dt,
            duration,
            prestress,
        } => cmd_dyn(
            &topo,
            config.as_deref(),
            out.as_deref(),
            dt,
            duration,
            prestress,
        ),
        Command::Mission {
            config,
            profile,
            duration,
            out,
        } => cmd_mission(config.as_deref(), &profile, duration, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(r) => {
            // Keep stdout clean when it carries an artifact itself.
            let mut lines = vec![r.summary];
            lines.extend(
                r.artifacts
                    .iter()
                    .filter(|a| a.as_os_str() != "-")
                    .map(|a| format!("wrote {}", a.display())),
            );
            if r.artifacts.iter().any(|a| a.as_os_str() == "-") {
                eprintln!("{}", lines.join("\n"));
            } else {
                println!("{}", lines.join("\n"));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.module());
            ExitCode::from(exit_code(&e))
        }
    }
}
