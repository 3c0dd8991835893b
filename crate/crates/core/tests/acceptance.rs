//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so the lines always show.

mod common;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use half::f16;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use swarmvm::bench;
use swarmvm::heap::{Heap, HeapError, OBJECT_SIZE};
use swarmvm::lang::asm::{assemble, disassemble};
use swarmvm::lang::narrow::{narrow_bytes, narrow_translate, NarrowError};
use swarmvm::lang::{Image, Program, Width};
use swarmvm::sim::{Placement, Probe, VmSettings, World, WorldConfig};
use swarmvm::swarm::{SetOp, SwarmList};
use swarmvm::value::{Value, F16};
use swarmvm::vm::{FaultKind, Vm, VmConfig};
use swarmvm::wire::{Delivery, Message};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Byte accounting taken from the heap dump, independent of the cursors.
fn dump_accounting(heap: &Heap) -> Result<(usize, usize), String> {
    let d = heap.dump();
    let mut objects = 0;
    let mut segments = 0;
    for line in d.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.first() {
            Some(&"O") => objects += 1,
            Some(&"S") => {
                // index, mode, next, then one entry per 2-byte slot pair
                let slots = match f[2] {
                    "arr" => f.len() - 4,
                    _ => 2 * (f.len() - 4),
                };
                let bytes = 2 + 2 * slots;
                ensure(bytes == 2 + 4 * heap.pairs_per_segment(), || {
                    format!("segment line `{line}` is {bytes} bytes")
                })?;
                segments += 1;
            }
            _ => {}
        }
    }
    Ok((objects, segments))
}

fn c1_heap_accounting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    use rand::Rng;
    let mut ops = 0;
    let mut heaps = 0;
    while ops < 100_000 {
        heaps += 1;
        let pairs = rng.random_range(1..=6);
        let mut h = Heap::new(rng.random_range(64..=2048), pairs).unwrap();
        let seg = 2 + 4 * pairs;
        let mut roots = Vec::new();
        let mut tables = Vec::new();
        for _ in 0..2_000 {
            ops += 1;
            let before = h.stats();
            let r: Result<(), HeapError> = match rng.random_range(0..8) {
                0..=2 => h.obj_alloc(Value::Int(rng.random())).map(|o| roots.push(o)),
                3 => h.table_new().map(|t| {
                    if let Value::Table(t) = t {
                        tables.push(t);
                        roots.push(t);
                    }
                }),
                4 | 5 if !tables.is_empty() => {
                    let t = tables[rng.random_range(0..tables.len())];
                    let k = if rng.random_bool(0.5) {
                        Value::Int(rng.random_range(0..20))
                    } else {
                        Value::Str(rng.random_range(0..10))
                    };
                    h.table_set(Value::Table(t), k, Value::Int(rng.random()))
                }
                6 => {
                    if !roots.is_empty() {
                        let i = rng.random_range(0..roots.len());
                        let o = roots.swap_remove(i);
                        tables.retain(|&t| t != o);
                    }
                    Ok(())
                }
                _ => {
                    h.gc_collect(roots.iter().copied());
                    Ok(())
                }
            };
            let s = h.stats();
            ensure(
                s.object_bytes() + s.unclaimed() + s.segment_bytes() == s.arena,
                || format!("identity broken after op {ops}: {s:?}"),
            )?;
            ensure(
                (s.live_objects + s.dead_objects) * OBJECT_SIZE == s.rop,
                || format!("object slots are not 3 bytes each: {s:?}"),
            )?;
            ensure(
                (s.live_segments + s.dead_segments) * seg == s.arena - s.lsp,
                || format!("segments are not {seg} bytes each: {s:?}"),
            )?;
            let (o, sg) = dump_accounting(&h)?;
            ensure(o == s.live_objects && sg == s.live_segments, || {
                format!("dump shows {o} objects/{sg} segments, stats {s:?}")
            })?;
            if let Ok(()) = r {
                let grew = s.live_bytes() as isize - before.live_bytes() as isize;
                ensure(grew <= (OBJECT_SIZE * 3 + seg * 2) as isize, || {
                    format!("one operation claimed {grew} bytes")
                })?;
            } else if r != Err(HeapError::OutOfMemory) {
                return Err(format!("unexpected error {r:?}"));
            } else {
                h.gc_collect(roots.iter().copied());
                roots.truncate(roots.len() / 2);
                tables.retain(|t| roots.contains(t));
            }
        }
    }
    Ok(format!(
        "{ops} operations over {heaps} heaps, identity exact"
    ))
}

fn c2_gc() -> Outcome {
    let t = Instant::now();
    let mut collections = 0;
    for seed in 0..1000 {
        collections += gc_program(seed, 400)?;
    }
    let el = t.elapsed();
    ensure(el < Duration::from_secs(60), || format!("took {el:?}"))?;
    Ok(format!(
        "1000 programs, {collections} collections, no corruption, in {:.1}s",
        el.as_secs_f64()
    ))
}

fn c3_ram() -> Outcome {
    let img = compile_fixture("stig_demo.bz");
    let vm = VmSettings {
        heap_size: 1536,
        stack_capacity: 64,
        neighbor_capacity: 8,
        ..VmSettings::default()
    };
    let run = stig_run(&img, 3, 0.0, 40, vm.clone());
    ensure(run.faults == 0, || format!("{} faults", run.faults))?;
    let at = run.converged.ok_or("demo did not converge")?;
    ensure(run.max_ram <= 2048, || {
        format!("modeled RAM {}", run.max_ram)
    })?;
    // the heap dump carries the same accounting
    let v = Vm::new(img, &vm.to_config(), 0).map_err(|e| e.to_string())?;
    let dump = v.dump();
    let line = dump
        .lines()
        .find(|l| l.starts_with("# ram "))
        .ok_or("no ram line in dump")?;
    let total: usize = line
        .rsplit("total=")
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or("unparsable ram line")?;
    ensure(total <= 2048, || format!("dump reports {total} bytes"))?;
    Ok(format!(
        "converged at tick {at}, modeled RAM {total} B <= 2048 B"
    ))
}

fn c4_convergence() -> Outcome {
    let t = Instant::now();
    let img = compile_fixture("stig_demo.bz");
    let bound = GRID_DIAMETER + 1;
    let mut worst = 0;
    for seed in 0..100 {
        let r = stig_run(&img, seed, 0.0, 40, VmSettings::default());
        let c = r
            .converged
            .ok_or_else(|| format!("lossless seed {seed} never converged"))?;
        let lag = c - r.last_put;
        ensure(lag <= bound, || {
            format!("lossless seed {seed}: {lag} ticks after last put")
        })?;
        worst = worst.max(lag);
    }
    let mut ok20 = 0;
    let mut worst20 = 0;
    for seed in 0..100 {
        let r = stig_run(&img, 1000 + seed, 0.2, 60, VmSettings::default());
        if let Some(c) = r.converged {
            if c - r.last_put <= 50 {
                ok20 += 1;
                worst20 = worst20.max(c - r.last_put);
            }
        }
    }
    ensure(ok20 >= 99, || {
        format!("loss 0.2: {ok20}/100 within 50 ticks")
    })?;
    let mut worst50 = 0;
    for seed in 0..100 {
        let r = stig_run(&img, 2000 + seed, 0.5, 210, VmSettings::default());
        let c = r
            .converged
            .ok_or_else(|| format!("loss 0.5 seed {seed} never converged"))?;
        let lag = c - r.last_put;
        ensure(lag <= 200, || format!("loss 0.5 seed {seed}: {lag} ticks"))?;
        worst50 = worst50.max(lag);
    }
    let el = t.elapsed();
    ensure(el < Duration::from_secs(120), || format!("took {el:?}"))?;
    Ok(format!(
        "lossless worst {worst}/{bound}; loss 0.2 {ok20}/100 (worst {worst20}); loss 0.5 100/100 (worst {worst50}); {:.1}s",
        el.as_secs_f64()
    ))
}

fn c5_ring() -> Outcome {
    let mut total = 0;
    for overwrite in [false, true] {
        for seed in 0..10 {
            ring_run(seed, 10_000, overwrite)?;
            total += 10_000;
        }
    }
    Ok(format!("{total} operations, both policies, exact"))
}

fn global_after_main(img: Arc<Image>, name: &str) -> Result<Value, String> {
    let mut vm = Vm::new(img, &VmConfig::default(), 0).map_err(|e| e.to_string())?;
    vm.run_main().map_err(|f| f.to_string())?;
    vm.global(name).ok_or_else(|| format!("no global {name}"))
}

fn c6_compiler() -> Outcome {
    let fib = compile_src(
        "function fib(n) {\n  if (n < 2) { return n }\n  return fib(n - 1) + fib(n - 2)\n}\na = fib(10)\nb = fib(15)\n",
    );
    let a = global_after_main(fib.clone(), "a")?;
    let b = global_after_main(fib, "b")?;
    ensure(a == Value::Int(55) && b == Value::Int(610), || {
        format!("fib gave {a:?}, {b:?}")
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut ints, mut floats, mut faults) = (0, 0, 0);
    for i in 0..1000 {
        let e = gen_expr(&mut rng, 5);
        let src = format!("r = {}\n", render(&e));
        let img = compile_src(&src);
        let mut vm = Vm::new(img, &VmConfig::default(), 0).unwrap();
        let got = vm.run_main();
        match (eval(&e), got) {
            (Err(()), Err(f)) if f.kind == FaultKind::DivisionByZero => faults += 1,
            (Ok(want), Ok(())) => {
                let g = vm.global("r").unwrap();
                ensure(matches_oracle(want, g), || {
                    format!("expression {i} `{src}`: oracle {want:?}, vm {g:?}")
                })?;
                match want {
                    OVal::Int(_) => ints += 1,
                    OVal::Float(_) => floats += 1,
                }
            }
            (want, got) => {
                return Err(format!(
                    "expression {i} `{src}`: oracle {want:?}, vm {got:?}"
                ))
            }
        }
    }
    Ok(format!(
        "fib(10)=55 fib(15)=610; 1000 expressions ({ints} int exact, {floats} float <=1 ulp, {faults} div-by-zero faults)"
    ))
}

fn c7_narrowing() -> Outcome {
    let mut n = 0;
    let mut programs: Vec<(String, Program, Width)> = Vec::new();
    for f in fixtures_with_ext(".asm") {
        for w in [Width::Narrow, Width::Wide] {
            if let Ok(p) = assemble(&fixture_text(&f), w) {
                programs.push((f.clone(), p, w));
            }
        }
    }
    for f in fixtures_with_ext(".bz") {
        if f.starts_with("bad_") {
            continue;
        }
        programs.push((f.clone(), compile_fixture(&f).program(), Width::Narrow));
    }
    for (name, p, w) in &programs {
        let text = disassemble(p);
        let again = assemble(&text, *w).map_err(|e| format!("{name}: {e}"))?;
        ensure(disassemble(&again) == text, || {
            format!("{name}: text not a fixpoint")
        })?;
        ensure(
            again.to_bytes(*w).unwrap() == p.to_bytes(*w).unwrap(),
            || format!("{name}: bytes differ after reassembly"),
        )?;
        n += 1;
    }

    let src = fixture_text("wide.asm");
    let wide = assemble(&src, Width::Wide).map_err(|e| e.to_string())?;
    let immediates = wide
        .code
        .iter()
        .filter(|i| matches!(i.op, swarmvm::lang::Op::PushI | swarmvm::lang::Op::PushF))
        .count();
    ensure(immediates == 10, || {
        format!("wide fixture has {immediates} immediates")
    })?;
    let wb = wide.to_bytes(Width::Wide).unwrap();
    let nb = narrow_bytes(&wb).map_err(|e| e.to_string())?;
    ensure(nb.len() < wb.len(), || {
        format!("{} -> {} bytes", wb.len(), nb.len())
    })?;
    let narrow = narrow_translate(&wide).unwrap();
    let dropped = wide.strings.len() - narrow.strings.len();
    ensure(dropped == 3, || format!("{dropped} strings dropped"))?;
    // narrowing equals assembling the same text narrow without the dead strings
    let stripped: String = src
        .lines()
        .filter(|l| !l.trim_start().starts_with(".string"))
        .map(|l| format!("{l}\n"))
        .collect();
    let direct = assemble(&stripped, Width::Narrow)
        .unwrap()
        .to_bytes(Width::Narrow)
        .unwrap();
    ensure(direct == nb, || {
        "narrowed image differs from direct narrow assembly".into()
    })?;
    let img = Arc::new(Image::from_bytes(&nb).map_err(|e| e.to_string())?);
    let mut vm = Vm::new(img, &VmConfig::default(), 0).unwrap();
    vm.run_main().map_err(|f| f.to_string())?;
    let h = |x: f64| Value::Float(F16::from_bits(f16::from_f64(x).to_bits()));
    let hv = |v: Value| match v {
        Value::Float(f) => f16::from_bits(f.to_bits()).to_f64(),
        Value::Int(i) => i as f64,
        _ => f64::NAN,
    };
    let want = [
        ("a", Value::Int(1000 - 2000)),
        ("b", Value::Int(-1)),
        ("c", h(1.5 * 0.25)),
        ("d", h(-3.0 + 65504.0)),
        ("e", h(12f64.powf(0.5))),
    ];
    for (g, w) in want {
        let got = vm.global(g).unwrap_or(Value::Nil);
        ensure(got == w, || {
            format!("global {g}: {got:?}, expected {w:?} ({})", hv(w))
        })?;
    }
    let over = assemble(&fixture_text("overflow.asm"), Width::Wide).unwrap();
    match narrow_translate(&over) {
        Err(NarrowError::NarrowOverflow {
            offset: 5,
            value: 70000,
            ..
        }) => {}
        other => return Err(format!("overflow fixture gave {other:?}")),
    }
    Ok(format!(
        "{n} fixpoints; wide {} -> narrow {} bytes, 3 strings dropped, results bit-exact; overflow at offset 5",
        wb.len(),
        nb.len()
    ))
}

fn foreach_high_water(neighbors: u16) -> Result<usize, String> {
    let img = compile_src(
        "total = 0\nfunction step() {\n  neighbors.foreach(function(rid, data) {\n    var s = data.distance + data.azimuth\n    total = total + 1\n  })\n}\n",
    );
    let mut vm = Vm::new(img, &VmConfig::default(), 0).unwrap();
    let inbox: Vec<Delivery> = (0..neighbors)
        .map(|i| Delivery {
            sender: i + 1,
            distance: 0.5 + i as f32,
            azimuth: -1.0 + 0.25 * i as f32,
            elevation: 0.0,
            frame: Message::Swarm {
                robot: i + 1,
                bits: 0,
            }
            .encode(),
        })
        .collect();
    let sensors = BTreeMap::new();
    vm.timestep(&inbox, &sensors);
    vm.set_sensors(&sensors);
    vm.ingest(&inbox).map_err(|f| f.to_string())?;
    vm.heap_mut().reset_high_water();
    vm.run_step().map_err(|f| f.to_string())?;
    let t = vm.global("total");
    ensure(t == Some(Value::Int(2 * neighbors as i16)), || {
        format!("total {t:?}")
    })?;
    Ok(vm.heap().high_water())
}

fn c8_foreach() -> Outcome {
    let one = foreach_high_water(1)?;
    let cap = foreach_high_water(8)?;
    ensure(one == cap, || {
        format!("high water {one} B with 1 neighbor, {cap} B with 8")
    })?;
    Ok(format!("high water {one} B for both 1 and 8 neighbors"))
}

fn c9_swarm() -> Outcome {
    let ops = [SetOp::Union, SetOp::Intersection, SetOp::Difference];
    let mut checks = 0u64;
    for bits in 0..=255u8 {
        let l = SwarmList(bits);
        for id in 0..8u8 {
            ensure(l.contains(id) == (bits >> id & 1 == 1), || {
                "contains".into()
            })?;
            let j = l.with(id, true);
            ensure(j.with(id, true) == j, || "join not idempotent".into())?;
            ensure(j.0 == bits | 1 << id, || "join touched other bits".into())?;
            let restored = if l.contains(id) { j } else { j.with(id, false) };
            ensure(restored == l, || "leave after join did not restore".into())?;
            checks += 3;
        }
        for &op in &ops {
            for a in 0..8u8 {
                for b in 0..8u8 {
                    for dest in 0..8u8 {
                        let x = bits >> a & 1 == 1;
                        let y = bits >> b & 1 == 1;
                        let r = match op {
                            SetOp::Union => x | y,
                            SetOp::Intersection => x & y,
                            SetOp::Difference => x & !y,
                        };
                        let want = bits & !(1 << dest) | (r as u8) << dest;
                        let got = l.apply(op, a, b, dest);
                        ensure(got.0 == want, || {
                            format!("{op:?}({a},{b})->{dest} on {bits:#010b}: {:#010b}", got.0)
                        })?;
                        checks += 1;
                    }
                }
            }
        }
    }
    for call in [
        "swarm.join(8)",
        "swarm.leave(8)",
        "swarm.create(8)",
        "swarm.in(-1)",
        "swarm.select(9, 1)",
        "swarm.union(0, 1, 8)",
    ] {
        let img = compile_src(call);
        let mut vm = Vm::new(img, &VmConfig::default(), 0).unwrap();
        let f = vm
            .run_main()
            .err()
            .ok_or_else(|| format!("`{call}` did not fault"))?;
        ensure(matches!(f.kind, FaultKind::SwarmRange(_)), || {
            format!("`{call}`: {f}")
        })?;
    }
    Ok(format!(
        "{checks} bitfield checks; out-of-range ids fault with SwarmRange"
    ))
}

fn c10_bench() -> Outcome {
    // the derivation is a pure function of its two measurements
    for (o, ips, want) in [
        (0.0, 1e6, 100_000),
        (0.02, 5e5, 40_000),
        (0.1, 1e6, 0),
        (0.15, 1e6, 0),
    ] {
        let got = bench::derive_budget(o, ips);
        ensure(got == want, || {
            format!("budget({o}, {ips}) = {got}, expected {want}")
        })?;
    }
    let img = compile_fixture("arith_loop.bz");
    let r = bench::run(img, &VmConfig::default(), 0.2).map_err(|e| e.to_string())?;
    ensure(
        r.instructions_per_second > 0.0 && r.instructions_per_second.is_finite(),
        || format!("ips {}", r.instructions_per_second),
    )?;
    ensure(r.overhead_seconds > 0.0 && r.overhead_seconds < 0.1, || {
        format!("overhead {} s", r.overhead_seconds)
    })?;
    let again = bench::derive_budget(r.overhead_seconds, r.instructions_per_second);
    let formula = ((0.1 - r.overhead_seconds) * r.instructions_per_second).floor() as u64;
    ensure(r.budget == again && r.budget == formula, || {
        format!("reported {} vs recomputed {again}/{formula}", r.budget)
    })?;
    let err = bench::run(compile_fixture("arith_loop.bz"), &VmConfig::default(), 0.0);
    ensure(matches!(err, Err(bench::BenchError::BadDuration)), || {
        "zero seconds accepted".into()
    })?;
    Ok(format!(
        "{:.0} instr/s, overhead {:.4} ms, budget {} = (0.1 - overhead) * ips",
        r.instructions_per_second,
        r.overhead_seconds * 1e3,
        r.budget
    ))
}

fn sim_output(jobs: usize) -> (String, String) {
    let img = compile_fixture("stig_demo.bz");
    let cfg = WorldConfig {
        robots: 30,
        placement: Placement::Uniform,
        radius: 1.6,
        loss: 0.3,
        seed: 11,
        jobs,
        ..WorldConfig::default()
    };
    let probes: Vec<Probe> = ["stig:value", "msgs", "swarm:0"]
        .iter()
        .map(|p| p.parse().unwrap())
        .collect();
    let mut w = World::spawn(img, &cfg).unwrap();
    let rep = w.run(40, &probes).unwrap();
    (rep.to_csv(), w.dump())
}

fn c11_determinism() -> Outcome {
    let base = sim_output(1);
    for jobs in [1, 2, 4, 8] {
        let o = sim_output(jobs);
        ensure(o.0 == base.0, || format!("CSV differs with --jobs {jobs}"))?;
        ensure(o.1 == base.1, || {
            format!("heap dump differs with --jobs {jobs}")
        })?;
    }
    Ok(format!(
        "{} CSV bytes and {} dump bytes identical for jobs 1, 1, 2, 4, 8",
        base.0.len(),
        base.1.len()
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("heap accounting", c1_heap_accounting),
        ("gc soundness and completeness", c2_gc),
        ("2 KB RAM budget", c3_ram),
        ("stigmergy convergence", c4_convergence),
        ("ring buffer oracle", c5_ring),
        ("compiler correctness", c6_compiler),
        ("bytecode narrowing", c7_narrowing),
        ("constant-space foreach", c8_foreach),
        ("swarm bitfield laws", c9_swarm),
        ("benchmark methodology", c10_bench),
        ("determinism", c11_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.2}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("acceptance: {}/11 passed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
