use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use swarmvm::bench;
use swarmvm::lang::{self, asm, narrow, CompileOptions, Image, Program, Width};
use swarmvm::sim::{format_value, Placement, Probe, World, WorldConfig};
use swarmvm::strings::NATIVE_COUNT;
use swarmvm::value::Value;
use swarmvm::vm::{Vm, VmConfig};

const PROBE_HELP: &str = "Probe to sample every tick, repeatable: \
`stig:<key>` (value under a stigmergy key on each robot), \
`swarm:<id>` (1 if the robot is in swarm 0..=7), \
`msgs` (frames the robot sent). Default: msgs";

#[derive(Parser)]
#[command(name = "swarmvm", version, about = "Swarm VM toolchain and simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a script to a narrow image.
    Compile {
        src: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Assemble text into an image.
    Asm {
        src: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Emit the wide (.wbo) encoding.
        #[arg(long)]
        wide: bool,
    },
    /// Print the assembly of a narrow or wide image.
    Disasm { image: PathBuf },
    /// Translate a wide image to a narrow one.
    Narrow {
        image: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run one VM for a number of timesteps with an empty inbox.
    Run {
        image: PathBuf,
        #[command(flatten)]
        vm: VmFlags,
        /// Print one line per substep.
        #[arg(long)]
        trace: bool,
    },
    /// Simulate a swarm and write the probe report as CSV.
    Sim(SimArgs),
    /// Measure timestep overhead and instruction throughput.
    Bench {
        image: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        seconds: f64,
    },
    /// Run one VM and print its heap dump and RAM accounting.
    Heapdump {
        image: PathBuf,
        #[command(flatten)]
        vm: VmFlags,
    },
}

#[derive(Args)]
struct VmFlags {
    #[arg(long, default_value_t = 1)]
    ticks: u64,
    /// Robot id the VM runs as.
    #[arg(long, default_value_t = 0)]
    id: u16,
    /// Instructions allowed per timestep.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    reduced_memory: bool,
}

#[derive(Args)]
struct SimArgs {
    image: PathBuf,
    /// World settings file (TOML); flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    robots: Option<usize>,
    #[arg(long)]
    ticks: Option<u64>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    loss: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// grid or uniform
    #[arg(long)]
    placement: Option<String>,
    #[arg(long = "probe", help = PROBE_HELP)]
    probes: Vec<String>,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for stepping robots.
    #[arg(long)]
    jobs: Option<usize>,
    /// Write every robot's heap dump here after the run.
    #[arg(long)]
    heapdump: Option<PathBuf>,
}

enum Failure {
    Fault(String),
    Usage(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Fault(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Fault(m) | Failure::Usage(m) | Failure::Io(m) => m,
        }
    }
}

type Res<T> = Result<T, Failure>;

fn read(path: &Path) -> Res<Vec<u8>> {
    fs::read(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Res<String> {
    let b = read(path)?;
    String::from_utf8(b).map_err(|_| Failure::Io(format!("{}: not UTF-8 text", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Res<()> {
    fs::write(path, bytes).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn load_image(path: &Path) -> Res<Arc<Image>> {
    let b = read(path)?;
    Image::from_bytes(&b)
        .map(Arc::new)
        .map_err(|e| Failure::Fault(format!("{}: bad image: {e}", path.display())))
}

fn single_line(s: &str) -> String {
    s.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn compile_cmd(src: &Path, out: Option<PathBuf>) -> Res<()> {
    let text = read_text(src)?;
    let img = lang::compile(&text, &CompileOptions::default())
        .map_err(|e| Failure::Fault(format!("{}:{e}", src.display())))?;
    let out = out.unwrap_or_else(|| src.with_extension("nbo"));
    write(&out, &img.to_bytes())?;
    let user = img.strings().len() - NATIVE_COUNT as usize;
    println!(
        "{}: code {} bytes, {} strings ({} user)",
        out.display(),
        img.code().len(),
        img.strings().len(),
        user
    );
    Ok(())
}

fn asm_cmd(src: &Path, out: Option<PathBuf>, wide: bool) -> Res<()> {
    let text = read_text(src)?;
    let width = if wide { Width::Wide } else { Width::Narrow };
    let p = asm::assemble(&text, width)
        .map_err(|e| Failure::Fault(format!("{}:{e}", src.display())))?;
    let bytes = p
        .to_bytes(width)
        .map_err(|e| Failure::Fault(format!("{}: {e}", src.display())))?;
    let out = out.unwrap_or_else(|| src.with_extension(if wide { "wbo" } else { "nbo" }));
    write(&out, &bytes)?;
    println!("{}: {} bytes", out.display(), bytes.len());
    Ok(())
}

fn image_width(bytes: &[u8]) -> Width {
    if bytes.starts_with(b"WBO1") {
        Width::Wide
    } else {
        Width::Narrow
    }
}

fn disasm_cmd(path: &Path) -> Res<()> {
    let b = read(path)?;
    let p = Program::from_bytes(&b, image_width(&b))
        .map_err(|e| Failure::Fault(format!("{}: bad image: {e}", path.display())))?;
    print!("{}", asm::disassemble(&p));
    Ok(())
}

fn narrow_cmd(path: &Path, out: Option<PathBuf>) -> Res<()> {
    let b = read(path)?;
    let n =
        narrow::narrow_bytes(&b).map_err(|e| Failure::Fault(format!("{}: {e}", path.display())))?;
    let out = out.unwrap_or_else(|| path.with_extension("nbo"));
    write(&out, &n)?;
    println!("{}: {} -> {} bytes", out.display(), b.len(), n.len());
    Ok(())
}

fn vm_config(f: &VmFlags) -> VmConfig {
    let mut c = VmConfig {
        budget: f.budget,
        ..VmConfig::default()
    };
    c.features.reduced_memory = f.reduced_memory;
    c
}

fn run_vm(path: &Path, f: &VmFlags, trace: bool) -> Res<Vm> {
    if f.ticks == 0 {
        return Err(Failure::Usage("--ticks must be at least 1".into()));
    }
    let img = load_image(path)?;
    let mut cfg = vm_config(f);
    cfg.trace = trace;
    let mut vm = Vm::new(img, &cfg, f.id).map_err(|e| Failure::Usage(e.to_string()))?;
    vm.register_named("goto", swarmvm::sim::goto_host())
        .map_err(|e| Failure::Fault(e.to_string()))?;
    let sensors = BTreeMap::new();
    for t in 0..f.ticks {
        let out = vm.timestep(&[], &sensors);
        for line in &out.trace {
            println!("tick {t}: {line}");
        }
        if let Some(fault) = out.status {
            return Err(Failure::Fault(format!(
                "{}: tick {t}: {fault}",
                path.display()
            )));
        }
    }
    Ok(vm)
}

fn run_cmd(path: &Path, f: &VmFlags, trace: bool) -> Res<()> {
    let vm = run_vm(path, f, trace)?;
    let strings = vm.image().strings();
    for (id, _) in strings.iter().filter(|(id, _)| *id >= NATIVE_COUNT) {
        match vm.global_id(id) {
            None | Some(Value::Closure(_) | Value::UserClosure(_) | Value::Table(_)) => {}
            Some(v) => println!("{} = {}", strings.text(id), format_value(v, strings)),
        }
    }
    println!(
        "ok: {} timesteps, {} instructions",
        f.ticks,
        vm.counters().instructions
    );
    Ok(())
}

fn heapdump_cmd(path: &Path, f: &VmFlags) -> Res<()> {
    let vm = run_vm(path, f, false)?;
    print!("{}", vm.dump());
    Ok(())
}

fn sim_cmd(a: &SimArgs) -> Res<()> {
    let usage = |e: swarmvm::sim::SimError| Failure::Usage(e.to_string());
    let mut cfg = match &a.config {
        Some(p) => WorldConfig::from_toml(&read_text(p)?)
            .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => WorldConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = a.$field { cfg.$field = v; })* };
    }
    set!(robots, ticks, radius, loss, seed, jobs);
    if let Some(p) = &a.placement {
        cfg.placement = p.parse::<Placement>().map_err(usage)?;
    }
    if !a.probes.is_empty() {
        cfg.probes = a.probes.clone();
    }
    if cfg.probes.is_empty() {
        cfg.probes = vec!["msgs".into()];
    }
    let probes: Vec<Probe> = cfg.parsed_probes().map_err(usage)?;
    cfg.validate().map_err(usage)?;
    if cfg.ticks == 0 {
        return Err(Failure::Usage("config: ticks must be at least 1".into()));
    }
    let img = load_image(&a.image)?;
    let mut world = World::spawn(img, &cfg).map_err(usage)?;
    let report = world.run(cfg.ticks, &probes).map_err(usage)?;
    let csv = report.to_csv();
    match &a.out {
        Some(p) => write(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    if let Some(p) = &a.heapdump {
        write(p, world.dump().as_bytes())?;
    }
    for line in report.summary() {
        if a.out.is_some() {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    }
    if let Some((tick, robot, f)) = report.faults.first() {
        return Err(Failure::Fault(format!(
            "{}: robot {robot} tick {tick}: {f} ({} robots faulted)",
            a.image.display(),
            report.faults.len()
        )));
    }
    Ok(())
}

fn bench_cmd(path: &Path, seconds: f64) -> Res<()> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        return Err(Failure::Usage("--seconds must be positive".into()));
    }
    let img = load_image(path)?;
    let r = bench::run(img, &VmConfig::default(), seconds).map_err(|e| match e {
        bench::BenchError::BadDuration => Failure::Usage(e.to_string()),
        other => Failure::Fault(format!("{}: {other}", path.display())),
    })?;
    println!("timesteps: {}", r.timesteps);
    println!("instructions: {}", r.instructions);
    println!("instructions_per_second: {:.0}", r.instructions_per_second);
    println!("overhead_ms: {:.6}", r.overhead_seconds * 1e3);
    println!("budget_100ms: {}", r.budget);
    Ok(())
}

fn dispatch(cli: Cli) -> Res<()> {
    match cli.cmd {
        Cmd::Compile { src, out } => compile_cmd(&src, out),
        Cmd::Asm { src, out, wide } => asm_cmd(&src, out, wide),
        Cmd::Disasm { image } => disasm_cmd(&image),
        Cmd::Narrow { image, out } => narrow_cmd(&image, out),
        Cmd::Run { image, vm, trace } => run_cmd(&image, &vm, trace),
        Cmd::Sim(a) => sim_cmd(&a),
        Cmd::Bench { image, seconds } => bench_cmd(&image, seconds),
        Cmd::Heapdump { image, vm } => heapdump_cmd(&image, &vm),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = single_line(&e.to_string());
            let msg = msg.strip_prefix("error: ").unwrap_or(&msg);
            eprintln!("error: usage: {msg}");
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", single_line(f.message()));
            ExitCode::from(f.code())
        }
    }
}
