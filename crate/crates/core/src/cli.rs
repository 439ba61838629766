//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::metrics::Metrics;
use crate::runtime::World;
use crate::scenario::{Mode, Scenario, ScenarioError};
use crate::simnet::{render_trace, TraceRecord, TUNNEL_LABEL};

#[derive(Debug, Parser)]
#[command(name = "manet-sec", version, about = "Secure AODV and authenticated TCP over a simulated MANET")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Provision node keys and write the public registry.
    Keygen(Common),
    /// Run a scenario and write metrics.json, trace.tsv and summary.txt.
    Run(Common),
    /// Check a trace against a fresh run of its scenario.
    VerifyTrace {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Secure,
    Baseline,
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    pub sec_level: Option<u8>,
}

impl Common {
    pub fn load(&self) -> Result<Scenario, ScenarioError> {
        let mut sc = Scenario::load(&self.scenario)?;
        if let Some(s) = self.seed {
            sc.seed = s;
        }
        if let Some(m) = self.mode {
            sc.mode = match m {
                ModeArg::Secure => Mode::Secure,
                ModeArg::Baseline => Mode::Baseline,
            };
        }
        if let Some(l) = self.sec_level {
            sc.sec_level = l;
        }
        sc.validate()?;
        Ok(sc)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    Parse,
    Causality,
    Conservation,
    Determinism,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{kind:?} violation at line {line}: {message}")]
    Violation {
        kind: ViolationKind,
        line: usize,
        message: String,
    },
}

fn violation(kind: ViolationKind, line: usize, message: String) -> CliError {
    CliError::Violation { kind, line, message }
}

/// Runs a scenario to completion.
pub fn execute(sc: &Scenario) -> Result<(Vec<TraceRecord>, Metrics), ScenarioError> {
    let mut world = World::build(sc)?;
    world.run()?;
    let metrics = Metrics::collect(&world);
    Ok((world.trace().to_vec(), metrics))
}

/// Writes the three run outputs into `out`. Nothing is written if the run
/// fails.
pub fn cmd_run(sc: &Scenario, out: &Path) -> Result<Metrics, CliError> {
    let (trace, metrics) = execute(sc)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("metrics.json"), metrics.to_json())?;
    fs::write(out.join("trace.tsv"), render_trace(&trace))?;
    fs::write(out.join("summary.txt"), metrics.render_table())?;
    Ok(metrics)
}

pub fn cmd_keygen(sc: &Scenario, out: &Path) -> Result<PathBuf, CliError> {
    let keys = sc.provision()?;
    let registry = sc.registry(&keys)?;
    fs::create_dir_all(out)?;
    let path = out.join("registry.json");
    registry.save(&path).map_err(ScenarioError::from)?;
    Ok(path)
}

/// Checks, in order: every line parses; records are in tick order, within
/// the run and over declared links; the record count matches a fresh run;
/// every record matches the fresh run.
pub fn verify_trace(text: &str, sc: &Scenario) -> Result<(), CliError> {
    let mut given = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let rec = TraceRecord::parse_line(line)
            .ok_or_else(|| violation(ViolationKind::Parse, i + 1, format!("unparseable record {line:?}")))?;
        given.push(rec);
    }
    let mut world = World::build(sc)?;
    let topo = world_topology(&world);
    let mut last = 0;
    for (i, r) in given.iter().enumerate() {
        let bad = if r.tick < last {
            Some("tick goes backwards")
        } else if r.tick > sc.run_until {
            Some("sent after the end of the run")
        } else if r.kind != TUNNEL_LABEL && topo.link(r.from, r.to).is_none() {
            Some("no link between endpoints")
        } else {
            None
        };
        if let Some(why) = bad {
            return Err(violation(ViolationKind::Causality, i + 1, format!("{why}: {}", r.to_line())));
        }
        last = r.tick;
    }
    world.run()?;
    let fresh = world.trace();
    if fresh.len() != given.len() {
        let line = fresh
            .iter()
            .zip(&given)
            .position(|(a, b)| a != b)
            .unwrap_or(fresh.len().min(given.len()));
        let expected = fresh.get(line).map(TraceRecord::to_line).unwrap_or_default();
        return Err(violation(
            ViolationKind::Conservation,
            line + 1,
            format!("{} records, expected {}; first gap near {expected:?}", given.len(), fresh.len()),
        ));
    }
    if let Some(i) = fresh.iter().zip(&given).position(|(a, b)| a != b) {
        return Err(violation(
            ViolationKind::Determinism,
            i + 1,
            format!("got {:?}, rerun gives {:?}", given[i].to_line(), fresh[i].to_line()),
        ));
    }
    Ok(())
}

fn world_topology(world: &World) -> crate::simnet::Topology {
    let mut t = crate::simnet::Topology::new();
    for a in world.scenario().addrs() {
        t.add_node(a);
    }
    for l in &world.scenario().links {
        let _ = t.add_link(
            crate::identity::NodeAddr(l.a),
            crate::identity::NodeAddr(l.b),
            crate::simnet::LinkProps::default(),
        );
    }
    t
}

/// Exit status: 0 ok, 1 secure-mode breach, 2 error.
pub fn main_with(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Keygen(c) => c
            .load()
            .map_err(CliError::from)
            .and_then(|sc| cmd_keygen(&sc, &c.out))
            .map(|p| {
                println!("wrote {}", p.display());
                0
            }),
        Command::Run(c) => c.load().map_err(CliError::from).and_then(|sc| cmd_run(&sc, &c.out)).map(|m| {
            print!("{}", m.render_table());
            i32::from(m.secure_breach())
        }),
        Command::VerifyTrace { common, trace } => common
            .load()
            .map_err(CliError::from)
            .and_then(|sc| {
                let text = fs::read_to_string(trace)?;
                verify_trace(&text, &sc)
            })
            .map(|()| {
                println!("ok");
                0
            }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        2
    })
}
