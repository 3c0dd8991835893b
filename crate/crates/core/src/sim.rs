//! Discrete-time world: planar robot poses, range-limited lossy broadcast,
//! and per-tick probes.
//!
//! Frames a robot emits at tick `t` reach the others at tick `t + 1`. Range
//! and bearing are computed from the poses the robots had when sending.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::lang::image::Image;
use crate::strings::StringTable;
use crate::value::{StrId, Value};
use crate::vm::{Action, Fault, HostFn, Vm, VmConfig, VmError};
use crate::wire::{Delivery, Frame, RobotId};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),
    #[error("robot {robot}: {source}")]
    Vm { robot: RobotId, source: VmError },
}

fn cfg_err(msg: impl Into<String>) -> SimError {
    SimError::Config(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    #[default]
    Grid,
    Uniform,
}

impl FromStr for Placement {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "grid" => Ok(Placement::Grid),
            "uniform" => Ok(Placement::Uniform),
            other => Err(cfg_err(format!(
                "unknown placement `{other}` (grid or uniform)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Range and bearing of a link, as handed to the receiver. The offset is
/// taken from sender to receiver; bearing is relative to the receiver's
/// heading and wrapped to `[-pi, pi)`.
pub fn situate(sender: &Pose, receiver: &Pose) -> (f64, f64) {
    let dx = receiver.x - sender.x;
    let dy = receiver.y - sender.y;
    let d = dx.hypot(dy);
    let tau = std::f64::consts::TAU;
    let pi = std::f64::consts::PI;
    let az = (dy.atan2(dx) - receiver.heading + pi).rem_euclid(tau) - pi;
    (d, az)
}

/// World settings from a TOML file; every key is optional.
///
/// ```toml
/// robots = 25
/// placement = "grid"   # or "uniform"
/// spacing = 1.0        # grid pitch, and mean spacing for uniform
/// radius = 1.0
/// loss = 0.0
/// seed = 1
/// ticks = 50
/// jobs = 1
/// hz = 10
/// probes = ["stig:value", "msgs"]
///
/// [vm]
/// heap_size = 1536
/// stack_capacity = 64
/// budget = 500
/// reduced_memory = false
/// ```
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub robots: usize,
    pub placement: Placement,
    pub spacing: f64,
    pub radius: f64,
    pub loss: f64,
    pub seed: u64,
    pub ticks: u64,
    pub jobs: usize,
    pub hz: u32,
    pub probes: Vec<String>,
    pub vm: VmSettings,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            robots: 25,
            placement: Placement::Grid,
            spacing: 1.0,
            radius: 1.0,
            loss: 0.0,
            seed: 1,
            ticks: 50,
            jobs: 1,
            hz: 10,
            probes: Vec::new(),
            vm: VmSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VmSettings {
    pub heap_size: usize,
    pub pairs_per_segment: usize,
    pub stack_capacity: usize,
    pub gc_interval: u32,
    pub budget: Option<u64>,
    pub neighbor_capacity: usize,
    pub stig_capacity: usize,
    pub outbox_capacity: usize,
    pub swarm: bool,
    pub neighbors: bool,
    pub stigmergy: bool,
    pub reduced_memory: bool,
}

impl Default for VmSettings {
    fn default() -> Self {
        let c = VmConfig::default();
        VmSettings {
            heap_size: c.heap_size,
            pairs_per_segment: c.pairs_per_segment,
            stack_capacity: c.stack_capacity,
            gc_interval: c.gc_interval,
            budget: c.budget,
            neighbor_capacity: c.neighbor_capacity,
            stig_capacity: c.stig_capacity,
            outbox_capacity: c.outbox_capacity,
            swarm: c.features.swarm,
            neighbors: c.features.neighbors,
            stigmergy: c.features.stigmergy,
            reduced_memory: c.features.reduced_memory,
        }
    }
}

impl VmSettings {
    pub fn to_config(&self) -> VmConfig {
        let mut c = VmConfig {
            heap_size: self.heap_size,
            pairs_per_segment: self.pairs_per_segment,
            stack_capacity: self.stack_capacity,
            gc_interval: self.gc_interval,
            budget: self.budget,
            neighbor_capacity: self.neighbor_capacity,
            stig_capacity: self.stig_capacity,
            outbox_capacity: self.outbox_capacity,
            ..VmConfig::default()
        };
        c.features.swarm = self.swarm;
        c.features.neighbors = self.neighbors;
        c.features.stigmergy = self.stigmergy;
        c.features.reduced_memory = self.reduced_memory;
        c
    }
}

impl WorldConfig {
    pub fn from_toml(text: &str) -> Result<WorldConfig, SimError> {
        toml::from_str(text).map_err(|e| cfg_err(e.message().to_string()))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.robots == 0 {
            return Err(cfg_err("robots must be at least 1"));
        }
        if self.robots > RobotId::MAX as usize {
            return Err(cfg_err("too many robots"));
        }
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(cfg_err("loss must be within 0..=1"));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(cfg_err("radius must be a finite non-negative number"));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(cfg_err("spacing must be positive"));
        }
        if self.jobs == 0 {
            return Err(cfg_err("jobs must be at least 1"));
        }
        if self.hz == 0 {
            return Err(cfg_err("hz must be positive"));
        }
        Ok(())
    }

    pub fn parsed_probes(&self) -> Result<Vec<Probe>, SimError> {
        self.probes.iter().map(|p| p.parse()).collect()
    }
}

/// What to sample each tick, for every robot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Probe {
    /// Value under a stigmergy key, `nil` when absent.
    Stig(String),
    /// `1` when a member of swarm `id`, else `0`.
    Swarm(u8),
    /// Frames sent this tick.
    Msgs,
}

impl FromStr for Probe {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Probe, SimError> {
        if s == "msgs" {
            return Ok(Probe::Msgs);
        }
        if let Some(k) = s.strip_prefix("stig:") {
            if k.is_empty() {
                return Err(cfg_err("probe `stig:` needs a key"));
            }
            return Ok(Probe::Stig(k.to_string()));
        }
        if let Some(id) = s.strip_prefix("swarm:") {
            let id: u8 = id
                .parse()
                .map_err(|_| cfg_err(format!("bad swarm id in probe `{s}`")))?;
            crate::swarm::check_id(id as i32).map_err(|e| cfg_err(e.to_string()))?;
            return Ok(Probe::Swarm(id));
        }
        Err(cfg_err(format!(
            "unknown probe `{s}` (expected stig:<key>, swarm:<id> or msgs)"
        )))
    }
}

impl std::fmt::Display for Probe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Probe::Stig(k) => write!(f, "stig:{k}"),
            Probe::Swarm(id) => write!(f, "swarm:{id}"),
            Probe::Msgs => write!(f, "msgs"),
        }
    }
}

/// Script-level text for a value.
pub fn format_value(v: Value, strings: &StringTable) -> String {
    match v {
        Value::Nil => "nil".into(),
        Value::Int(i) => i.to_string(),
        Value::Float(f) => f.to_string(),
        Value::Str(s) => strings.text(s),
        Value::Table(t) => format!("table:{t}"),
        Value::Closure(o) => format!("closure:{o}"),
        Value::UserClosure(i) => format!("host:{i}"),
    }
}

pub struct Robot {
    pub vm: Vm,
    pub pose: Pose,
    sent: usize,
    faulted: bool,
}

impl Robot {
    /// Frames emitted in the last tick.
    pub fn sent(&self) -> usize {
        self.sent
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TickReport {
    pub tick: u64,
    pub delivered: usize,
    pub dropped: usize,
    pub decode_errors: usize,
    /// Robots that faulted during this tick.
    pub faults: Vec<(RobotId, Fault)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRow {
    pub tick: u64,
    pub robot: RobotId,
    pub probe: usize,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub probes: Vec<Probe>,
    pub rows: Vec<ProbeRow>,
    pub faults: Vec<(u64, RobotId, Fault)>,
    pub delivered: usize,
    pub dropped: usize,
    pub decode_errors: usize,
    /// Per stigmergy probe: first tick from which every robot reported the
    /// same non-nil value through the end of the run.
    pub convergence: Vec<(String, Option<u64>)>,
}

impl RunReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tick,robot,probe,value\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.tick,
                r.robot,
                self.probes[r.probe],
                csv_field(&r.value)
            );
        }
        s
    }

    pub fn summary(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (k, c) in &self.convergence {
            match c {
                Some(t) => out.push(format!("converged stig:{k} at tick {t}")),
                None => out.push(format!("not converged stig:{k}")),
            }
        }
        out.push(format!(
            "messages delivered={} dropped={} undecodable={} faults={}",
            self.delivered,
            self.dropped,
            self.decode_errors,
            self.faults.len()
        ));
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Teleport host function: `goto(dx, dy)` moves the robot by the given
/// offset in world coordinates at the end of the tick.
pub fn goto_host() -> HostFn {
    Arc::new(|ctx, args| {
        let mut a = Vec::with_capacity(2);
        for i in 0..2 {
            let v = args.get(i).copied().unwrap_or(Value::Nil);
            a.push(
                v.as_f64()
                    .ok_or_else(|| format!("goto expects numbers, got {}", v.tag().name()))?,
            );
        }
        ctx.actions.push(Action {
            name: "goto".into(),
            args: a,
        });
        Ok(Value::Nil)
    })
}

pub struct World {
    robots: Vec<Robot>,
    radius: f64,
    loss: f64,
    rng: ChaCha8Rng,
    tick: u64,
    hz: u32,
    inboxes: Vec<Vec<Delivery>>,
    pool: Option<rayon::ThreadPool>,
}

impl World {
    pub fn spawn(image: Arc<Image>, cfg: &WorldConfig) -> Result<World, SimError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = cfg.robots;
        let poses: Vec<Pose> = match cfg.placement {
            Placement::Grid => {
                let side = (n as f64).sqrt().ceil() as usize;
                (0..n)
                    .map(|i| Pose {
                        x: (i % side) as f64 * cfg.spacing,
                        y: (i / side) as f64 * cfg.spacing,
                        heading: 0.0,
                    })
                    .collect()
            }
            Placement::Uniform => {
                let extent = (n as f64).sqrt() * cfg.spacing;
                (0..n)
                    .map(|_| Pose {
                        x: rng.random::<f64>() * extent,
                        y: rng.random::<f64>() * extent,
                        heading: rng.random::<f64>() * std::f64::consts::TAU,
                    })
                    .collect()
            }
        };
        World::with_poses(image, &poses, cfg, rng)
    }

    /// A world with explicit poses; robot `i` gets id `i`.
    pub fn with_poses(
        image: Arc<Image>,
        poses: &[Pose],
        cfg: &WorldConfig,
        rng: ChaCha8Rng,
    ) -> Result<World, SimError> {
        if poses.is_empty() {
            return Err(cfg_err("robots must be at least 1"));
        }
        let vm_cfg = cfg.vm.to_config();
        let mut robots = Vec::with_capacity(poses.len());
        for (i, &pose) in poses.iter().enumerate() {
            let id = i as RobotId;
            let mut vm = Vm::new(image.clone(), &vm_cfg, id)
                .map_err(|source| SimError::Vm { robot: id, source })?;
            vm.register_named("goto", goto_host())
                .map_err(|source| SimError::Vm { robot: id, source })?;
            robots.push(Robot {
                vm,
                pose,
                sent: 0,
                faulted: false,
            });
        }
        let pool = if cfg.jobs > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.jobs)
                    .build()
                    .map_err(|e| cfg_err(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(World {
            inboxes: vec![Vec::new(); robots.len()],
            robots,
            radius: cfg.radius,
            loss: cfg.loss,
            rng,
            tick: 0,
            hz: cfg.hz,
            pool,
        })
    }

    pub fn robots(&self) -> &[Robot] {
        &self.robots
    }

    pub fn robots_mut(&mut self) -> &mut [Robot] {
        &mut self.robots
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn hz(&self) -> u32 {
        self.hz
    }

    /// Frames queued for delivery at the next tick, per receiver.
    pub fn pending(&self) -> &[Vec<Delivery>] {
        &self.inboxes
    }

    /// Runs one tick: every robot takes a timestep on what it heard, then
    /// outgoing frames are routed for the next tick and poses updated.
    pub fn step(&mut self) -> TickReport {
        let mut report = TickReport {
            tick: self.tick,
            ..TickReport::default()
        };
        let inboxes = std::mem::take(&mut self.inboxes);
        let run = |(r, inbox): (&mut Robot, &Vec<Delivery>)| {
            let sensors = BTreeMap::from([
                ("x".to_string(), r.pose.x),
                ("y".to_string(), r.pose.y),
                ("heading".to_string(), r.pose.heading),
            ]);
            r.vm.timestep(inbox, &sensors)
        };
        let outcomes: Vec<_> = match &self.pool {
            Some(pool) => pool.install(|| {
                self.robots
                    .par_iter_mut()
                    .zip(inboxes.par_iter())
                    .map(run)
                    .collect()
            }),
            None => self
                .robots
                .iter_mut()
                .zip(inboxes.iter())
                .map(run)
                .collect(),
        };

        let mut outboxes: Vec<Vec<Frame>> = Vec::with_capacity(outcomes.len());
        let mut moves = Vec::new();
        for (i, o) in outcomes.into_iter().enumerate() {
            report.decode_errors += o.decode_errors;
            if let Some(f) = o.status {
                if !self.robots[i].faulted {
                    self.robots[i].faulted = true;
                    report.faults.push((i as RobotId, f));
                }
            }
            for a in &o.actions {
                if a.name == "goto" {
                    moves.push((i, a.args[0], a.args[1]));
                }
            }
            self.robots[i].sent = o.outbox.len();
            outboxes.push(o.outbox);
        }

        let n = self.robots.len();
        let mut next = vec![Vec::new(); n];
        for (s, frames) in outboxes.iter().enumerate() {
            if frames.is_empty() {
                continue;
            }
            let sp = self.robots[s].pose;
            for (r, inbox) in next.iter_mut().enumerate() {
                if r == s {
                    continue;
                }
                let (d, az) = situate(&sp, &self.robots[r].pose);
                if d > self.radius {
                    continue;
                }
                for f in frames {
                    if self.loss > 0.0 && self.rng.random::<f64>() < self.loss {
                        report.dropped += 1;
                        continue;
                    }
                    report.delivered += 1;
                    inbox.push(Delivery {
                        sender: s as RobotId,
                        distance: d as f32,
                        azimuth: az as f32,
                        elevation: 0.0,
                        frame: *f,
                    });
                }
            }
        }
        self.inboxes = next;
        for (i, dx, dy) in moves {
            let p = &mut self.robots[i].pose;
            p.x += dx;
            p.y += dy;
        }
        self.tick += 1;
        report
    }

    fn sample(&self, probe: &Probe, r: &Robot, key: Option<StrId>) -> String {
        match probe {
            Probe::Stig(_) => {
                let v = key
                    .and_then(|k| r.vm.stigmergy().entry(k))
                    .map_or(Value::Nil, |e| e.value);
                format_value(v, r.vm.image().strings())
            }
            Probe::Swarm(id) => u8::from(r.vm.swarm().own().contains(*id)).to_string(),
            Probe::Msgs => r.sent.to_string(),
        }
    }

    /// Runs `ticks` ticks, sampling every probe for every robot after each.
    pub fn run(&mut self, ticks: u64, probes: &[Probe]) -> Result<RunReport, SimError> {
        if ticks == 0 {
            return Err(cfg_err("ticks must be at least 1"));
        }
        let keys: Vec<Option<StrId>> = probes
            .iter()
            .map(|p| match p {
                Probe::Stig(k) => self.robots[0].vm.image().find_string(k),
                _ => None,
            })
            .collect();
        let mut report = RunReport {
            probes: probes.to_vec(),
            rows: Vec::with_capacity(ticks as usize * self.robots.len() * probes.len()),
            faults: Vec::new(),
            delivered: 0,
            dropped: 0,
            decode_errors: 0,
            convergence: Vec::new(),
        };
        let mut last_disagree: Vec<Option<u64>> = vec![None; probes.len()];
        let mut agreed_any = vec![false; probes.len()];
        for _ in 0..ticks {
            let t = self.step();
            report.delivered += t.delivered;
            report.dropped += t.dropped;
            report.decode_errors += t.decode_errors;
            report
                .faults
                .extend(t.faults.into_iter().map(|(r, f)| (t.tick, r, f)));
            for (pi, p) in probes.iter().enumerate() {
                let vals: Vec<String> = self
                    .robots
                    .iter()
                    .map(|r| self.sample(p, r, keys[pi]))
                    .collect();
                if matches!(p, Probe::Stig(_)) {
                    let agree = vals[0] != "nil" && vals.iter().all(|v| *v == vals[0]);
                    if agree {
                        agreed_any[pi] = true;
                    } else {
                        last_disagree[pi] = Some(t.tick);
                    }
                }
                for (ri, v) in vals.into_iter().enumerate() {
                    report.rows.push(ProbeRow {
                        tick: t.tick,
                        robot: ri as RobotId,
                        probe: pi,
                        value: v,
                    });
                }
            }
        }
        for (pi, p) in probes.iter().enumerate() {
            if let Probe::Stig(k) = p {
                let c = match last_disagree[pi] {
                    _ if !agreed_any[pi] => None,
                    None => Some(0),
                    Some(t) if t + 1 < self.tick => Some(t + 1),
                    Some(_) => None,
                };
                report.convergence.push((k.clone(), c));
            }
        }
        report.rows.sort_by_key(|r| (r.tick, r.robot, r.probe));
        Ok(report)
    }

    /// True when every robot holds the same stigmergy entries.
    pub fn stores_converged(&self) -> bool {
        let first = self.robots[0].vm.stigmergy().snapshot();
        self.robots
            .iter()
            .all(|r| r.vm.stigmergy().snapshot() == first)
    }

    /// Heap dumps of every robot, in id order.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (i, r) in self.robots.iter().enumerate() {
            let _ = writeln!(s, "# robot {i}");
            s.push_str(&r.vm.dump());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pythagorean_link() {
        let (d, az) = situate(
            &Pose::default(),
            &Pose {
                x: 3.0,
                y: 4.0,
                heading: 0.0,
            },
        );
        assert_eq!(d, 5.0);
        assert!((az - 4f64.atan2(3.0)).abs() < 1e-12);
    }

    #[test]
    fn probe_grammar() {
        assert_eq!("msgs".parse::<Probe>().unwrap(), Probe::Msgs);
        assert_eq!("swarm:3".parse::<Probe>().unwrap(), Probe::Swarm(3));
        assert_eq!("stig:k".parse::<Probe>().unwrap(), Probe::Stig("k".into()));
        assert!("swarm:8".parse::<Probe>().is_err());
        assert!("bogus".parse::<Probe>().is_err());
    }

    #[test]
    fn config_parsing() {
        let c = WorldConfig::from_toml("robots = 4\nloss = 0.25\n[vm]\nbudget = 100\n").unwrap();
        assert_eq!(c.robots, 4);
        assert_eq!(c.vm.budget, Some(100));
        assert!(WorldConfig::from_toml("robot = 4").is_err());
        let bad = WorldConfig {
            robots: 0,
            ..WorldConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
