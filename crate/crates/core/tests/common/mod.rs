//! Helpers and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::sync::Arc;

use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swarmvm::heap::{Heap, HeapError, NO_OBJ};
use swarmvm::lang::{compile, CompileOptions, Image};
use swarmvm::ringbuf::{OverflowPolicy, RingBuffer, RingError};
use swarmvm::sim::{Placement, VmSettings, World, WorldConfig};
use swarmvm::value::{ObjIdx, Value, F16};

// ---- fixtures ----

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap()
}

pub fn fixtures_with_ext(ext: &str) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(fixture_path(""))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(ext))
        .collect();
    v.sort();
    v
}

pub fn compile_src(src: &str) -> Arc<Image> {
    Arc::new(compile(src, &CompileOptions::default()).unwrap())
}

pub fn compile_fixture(name: &str) -> Arc<Image> {
    compile_src(&fixture_text(name))
}

// ---- ring buffer ----

/// Unbounded FIFO cut down to the buffer's contract.
pub struct FifoOracle {
    items: VecDeque<u32>,
    cap: usize,
    overwrite: bool,
}

impl FifoOracle {
    pub fn new(cap: usize, overwrite: bool) -> Self {
        FifoOracle {
            items: VecDeque::new(),
            cap,
            overwrite,
        }
    }

    pub fn push(&mut self, x: u32) -> Result<Option<u32>, ()> {
        if self.items.len() < self.cap {
            self.items.push_back(x);
            Ok(None)
        } else if self.overwrite {
            self.items.push_back(x);
            Ok(self.items.pop_front())
        } else {
            Err(())
        }
    }

    pub fn pop(&mut self) -> Option<u32> {
        self.items.pop_front()
    }

    pub fn at(&self, i: usize) -> Option<u32> {
        self.items.get(i).copied()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }
}

/// Random operation sequence against the oracle. Returns the first
/// diverging step, if any.
pub fn ring_run(seed: u64, ops: usize, overwrite: bool) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = rng.random_range(1..=16);
    let policy = if overwrite {
        OverflowPolicy::Overwrite
    } else {
        OverflowPolicy::Reject
    };
    let mut rb: RingBuffer<u32> = RingBuffer::new(cap, policy);
    let mut or = FifoOracle::new(cap, overwrite);
    for step in 0..ops {
        let fail = |what: &str| Err(format!("seed {seed} step {step}: {what}"));
        match rng.random_range(0..10) {
            0..=4 => {
                let x = rng.random();
                let got = rb.push(x).map_err(|e| assert_eq!(e, RingError::Full));
                if got != or.push(x) {
                    return fail("push");
                }
            }
            5..=7 => {
                if rb.pop().ok() != or.pop() {
                    return fail("pop");
                }
            }
            8 => {
                let i = rng.random_range(0..cap + 2);
                if rb.at(i).ok() != or.at(i) {
                    return fail("at");
                }
            }
            _ => {
                if rb.len() != or.len() {
                    return fail("len");
                }
                let all: Vec<u32> = rb.iter().copied().collect();
                let want: Vec<u32> = (0..or.len()).map(|i| or.at(i).unwrap()).collect();
                if all != want {
                    return fail("iter");
                }
            }
        }
    }
    Ok(())
}

// ---- expressions ----

#[derive(Clone, Debug)]
pub enum Ex {
    Int(i16),
    /// Literal text exactly as written into the source.
    Float(String),
    Neg(Box<Ex>),
    Not(Box<Ex>),
    Bin(&'static str, Box<Ex>, Box<Ex>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OVal {
    Int(i16),
    Float(f16),
}

impl OVal {
    fn f64(self) -> f64 {
        match self {
            OVal::Int(i) => i as f64,
            OVal::Float(f) => f.to_f64(),
        }
    }

    fn truthy(self) -> bool {
        match self {
            OVal::Int(i) => i != 0,
            OVal::Float(f) => f.to_f64() != 0.0,
        }
    }
}

pub const BIN_OPS: &[&str] = &[
    "+", "-", "*", "/", "%", "==", "!=", "<", "<=", ">", ">=", "and", "or",
];

pub fn gen_expr(rng: &mut ChaCha8Rng, depth: u32) -> Ex {
    if depth == 0 || rng.random_range(0..4) == 0 {
        return if rng.random_bool(0.5) {
            Ex::Int(rng.random_range(-300..=300))
        } else {
            let whole: i32 = rng.random_range(-40..=40);
            let frac: u32 = rng.random_range(0..100);
            Ex::Float(format!("{whole}.{frac:02}"))
        };
    }
    match rng.random_range(0..10) {
        0 => Ex::Neg(Box::new(gen_expr(rng, depth - 1))),
        1 => Ex::Not(Box::new(gen_expr(rng, depth - 1))),
        _ => {
            let op = BIN_OPS[rng.random_range(0..BIN_OPS.len())];
            Ex::Bin(
                op,
                Box::new(gen_expr(rng, depth - 1)),
                Box::new(gen_expr(rng, depth - 1)),
            )
        }
    }
}

pub fn render(e: &Ex) -> String {
    match e {
        Ex::Int(i) => format!("({i})"),
        Ex::Float(s) => format!("({s})"),
        Ex::Neg(a) => format!("(-{})", render(a)),
        Ex::Not(a) => format!("(not {})", render(a)),
        Ex::Bin(op, a, b) => format!("({} {op} {})", render(a), render(b)),
    }
}

/// Direct evaluation with 16-bit wrapping integers and half-precision
/// floats rounded once per operation. `Err` means division by zero.
pub fn eval(e: &Ex) -> Result<OVal, ()> {
    Ok(match e {
        Ex::Int(i) => OVal::Int(*i),
        Ex::Float(s) => OVal::Float(f16::from_f64(s.parse::<f64>().unwrap())),
        Ex::Neg(a) => match eval(a)? {
            OVal::Int(i) => OVal::Int((-(i as i32)) as i16),
            OVal::Float(f) => OVal::Float(-f),
        },
        Ex::Not(a) => OVal::Int(!eval(a)?.truthy() as i16),
        Ex::Bin(op, a, b) => {
            let (x, y) = (eval(a)?, eval(b)?);
            let b01 = |c: bool| OVal::Int(c as i16);
            match *op {
                "and" => b01(x.truthy() && y.truthy()),
                "or" => b01(x.truthy() || y.truthy()),
                "==" | "!=" | "<" | "<=" | ">" | ">=" => {
                    // NaN equals itself and sorts above every number
                    let rank = |v: f64| if v.is_nan() { (1, 0.0) } else { (0, v) };
                    let (p, q) = (rank(x.f64()), rank(y.f64()));
                    let ord = p.partial_cmp(&q).unwrap();
                    use std::cmp::Ordering::*;
                    b01(match *op {
                        "==" => ord == Equal,
                        "!=" => ord != Equal,
                        "<" => ord == Less,
                        "<=" => ord != Greater,
                        ">" => ord == Greater,
                        _ => ord != Less,
                    })
                }
                _ => match (x, y) {
                    (OVal::Int(p), OVal::Int(q)) => {
                        let (p, q) = (p as i64, q as i64);
                        let r = match *op {
                            "+" => p + q,
                            "-" => p - q,
                            "*" => p * q,
                            "/" | "%" if q == 0 => return Err(()),
                            "/" => p / q,
                            _ => p % q,
                        };
                        OVal::Int(r.rem_euclid(1 << 16) as u16 as i16)
                    }
                    _ => {
                        let (p, q) = (x.f64(), y.f64());
                        let r = match *op {
                            "+" => p + q,
                            "-" => p - q,
                            "*" => p * q,
                            "/" => p / q,
                            _ => p % q,
                        };
                        OVal::Float(f16::from_f64(r))
                    }
                },
            }
        }
    })
}

/// Distance in representable halves; NaNs all count as one point.
pub fn ulps(a: f16, b: F16) -> u32 {
    let b = f16::from_bits(b.to_bits());
    if a.is_nan() || b.is_nan() {
        return if a.is_nan() && b.is_nan() {
            0
        } else {
            u32::MAX
        };
    }
    let key = |x: f16| {
        let bits = x.to_bits() as i32;
        if bits & 0x8000 != 0 {
            -(bits & 0x7FFF)
        } else {
            bits
        }
    };
    (key(a) - key(b)).unsigned_abs()
}

/// Compares a VM result with the oracle result.
pub fn matches_oracle(want: OVal, got: Value) -> bool {
    match (want, got) {
        (OVal::Int(a), Value::Int(b)) => a == b,
        (OVal::Float(a), Value::Float(b)) => ulps(a, b) <= 1,
        _ => false,
    }
}

// ---- heap shadow model ----

#[derive(Clone, Debug)]
enum Shadow {
    Scalar(Value),
    Table(BTreeMap<ShadowKey, usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum ShadowKey {
    Int(i16),
    Str(u16),
}

impl ShadowKey {
    fn value(self) -> Value {
        match self {
            ShadowKey::Int(i) => Value::Int(i),
            ShadowKey::Str(s) => Value::Str(s),
        }
    }
}

fn scalar(rng: &mut ChaCha8Rng) -> Value {
    match rng.random_range(0..4) {
        0 => Value::Int(rng.random()),
        1 => Value::Float(F16::from_bits(rng.random_range(0..0x7C00))),
        2 => Value::Str(rng.random_range(0..40)),
        _ => Value::Closure(rng.random_range(0..100)),
    }
}

fn check_node(
    heap: &Heap,
    shadow: &[Shadow],
    obj: ObjIdx,
    node: usize,
    depth: u32,
) -> Result<(), String> {
    let v = heap.value(obj).map_err(|e| format!("object {obj}: {e}"))?;
    match &shadow[node] {
        Shadow::Scalar(s) => {
            if v != *s {
                return Err(format!("object {obj} holds {v:?}, shadow {s:?}"));
            }
        }
        Shadow::Table(m) => {
            let Value::Table(t) = v else {
                return Err(format!("object {obj} should be a table"));
            };
            let n = heap.table_len(t).map_err(|e| e.to_string())?;
            if n != m.len() {
                return Err(format!("table {t} has {n} entries, shadow {}", m.len()));
            }
            if depth > 6 {
                return Ok(());
            }
            for (k, &child) in m {
                let r = heap
                    .table_get_ref(t, k.value())
                    .map_err(|e| e.to_string())?
                    .ok_or_else(|| format!("table {t} lost key {k:?}"))?;
                check_node(heap, shadow, r, child, depth + 1)?;
            }
        }
    }
    Ok(())
}

/// One random alloc/set/drop program, checked against a shadow model
/// after every collection. Returns the number of collections run.
pub fn gc_program(seed: u64, steps: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = rng.random_range(1..=4);
    let mut heap = Heap::new(rng.random_range(256..=1024), pairs).unwrap();
    let mut shadow: Vec<Shadow> = Vec::new();
    // (object, shadow node)
    let mut roots: Vec<(ObjIdx, usize)> = Vec::new();
    let mut collections = 0;
    for step in 0..steps {
        let ctx = |e: String| format!("seed {seed} step {step}: {e}");
        let r: Result<(), HeapError> = (|| {
            match rng.random_range(0..10) {
                0..=2 => {
                    let v = scalar(&mut rng);
                    let o = heap.obj_alloc(v)?;
                    shadow.push(Shadow::Scalar(v));
                    roots.push((o, shadow.len() - 1));
                }
                3 => {
                    let Value::Table(t) = heap.table_new()? else {
                        unreachable!()
                    };
                    shadow.push(Shadow::Table(BTreeMap::new()));
                    roots.push((t, shadow.len() - 1));
                }
                4..=6 => {
                    let tables: Vec<usize> = (0..roots.len())
                        .filter(|&i| matches!(shadow[roots[i].1], Shadow::Table(_)))
                        .collect();
                    if tables.is_empty() || roots.is_empty() {
                        return Ok(());
                    }
                    let (t, tn) = roots[tables[rng.random_range(0..tables.len())]];
                    let key = if rng.random_bool(0.6) {
                        ShadowKey::Int(rng.random_range(0..12))
                    } else {
                        ShadowKey::Str(rng.random_range(0..8))
                    };
                    let ko = heap.obj_alloc(key.value())?;
                    let delete = rng.random_range(0..6) == 0;
                    let (vo, vn) = if delete {
                        (heap.obj_alloc(Value::Nil)?, None)
                    } else {
                        let (o, n) = roots[rng.random_range(0..roots.len())];
                        (o, Some(n))
                    };
                    heap.table_set_ref(t, ko, vo)?;
                    let Shadow::Table(m) = &mut shadow[tn] else {
                        unreachable!()
                    };
                    match vn {
                        Some(n) => {
                            m.insert(key, n);
                        }
                        None => {
                            m.remove(&key);
                        }
                    }
                }
                7 | 8 => {
                    if !roots.is_empty() {
                        roots.swap_remove(rng.random_range(0..roots.len()));
                    }
                }
                _ => {
                    heap.gc_collect(roots.iter().map(|r| r.0));
                    collections += 1;
                }
            }
            Ok(())
        })();
        match r {
            Ok(()) => {}
            Err(HeapError::OutOfMemory) => {
                heap.gc_collect(roots.iter().map(|r| r.0));
                collections += 1;
                // shrink the root set so the program can continue
                roots.truncate(roots.len() / 2);
            }
            Err(e) => return Err(ctx(e.to_string())),
        }
        if matches!(r, Err(HeapError::OutOfMemory)) || step % 97 == 0 {
            for &(o, n) in &roots {
                check_node(&heap, &shadow, o, n, 0).map_err(ctx)?;
            }
        }
    }
    heap.gc_collect(roots.iter().map(|r| r.0));
    for &(o, n) in &roots {
        check_node(&heap, &shadow, o, n, 0).map_err(|e| format!("seed {seed} final: {e}"))?;
    }
    let again = heap.gc_collect(roots.iter().map(|r| r.0));
    if again != 0 {
        return Err(format!(
            "seed {seed}: second collection reclaimed {again} bytes"
        ));
    }
    let freed_all = heap.gc_collect(std::iter::empty::<ObjIdx>());
    let s = heap.stats();
    if s.live_objects != 0 || s.live_segments != 0 || s.rop != 0 || s.lsp != s.arena {
        return Err(format!(
            "seed {seed}: garbage left after dropping every root ({freed_all} freed, {s:?})"
        ));
    }
    let _ = NO_OBJ;
    Ok(collections + 3)
}

// ---- stigmergy runs ----

pub const GRID_DIAMETER: u64 = 8;

pub struct StigRun {
    pub last_put: u64,
    /// Tick after which every store first agreed, with the key present.
    pub converged: Option<u64>,
    pub faults: usize,
    pub max_ram: usize,
}

/// 25 robots on a 5x5 grid run the demo; one or two seed-chosen robots
/// write at seed-chosen ticks.
pub fn stig_run(
    image: &Arc<Image>,
    seed: u64,
    loss: f64,
    max_ticks: u64,
    vm: VmSettings,
) -> StigRun {
    let cfg = WorldConfig {
        robots: 25,
        placement: Placement::Grid,
        radius: 1.0,
        loss,
        seed,
        vm,
        ..WorldConfig::default()
    };
    let mut world = World::spawn(image.clone(), &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5717);
    let writers = rng.random_range(1..=2);
    let mut last_put = 0;
    let chosen: Vec<(usize, u64, i16)> = (0..writers)
        .map(|_| {
            (
                rng.random_range(0..25),
                rng.random_range(0..5u64),
                rng.random_range(-500..500),
            )
        })
        .collect();
    for r in world.robots_mut() {
        r.vm.run_main().unwrap();
        r.vm.set_global_named("writer", Value::Int(-1)).unwrap();
    }
    for &(w, at, payload) in &chosen {
        let vm = &mut world.robots_mut()[w].vm;
        vm.set_global_named("writer", Value::Int(w as i16)).unwrap();
        vm.set_global_named("put_at", Value::Int(at as i16))
            .unwrap();
        vm.set_global_named("payload", Value::Int(payload)).unwrap();
        last_put = last_put.max(at);
    }
    let key = image.find_string("value").unwrap();
    let mut faults = 0;
    let mut max_ram = 0;
    let mut converged = None;
    for _ in 0..max_ticks {
        let rep = world.step();
        faults += rep.faults.len();
        for r in world.robots() {
            max_ram = max_ram.max(r.vm.ram_report().total());
        }
        let t = rep.tick;
        if t >= last_put
            && world.stores_converged()
            && world.robots()[0].vm.stigmergy().entry(key).is_some()
        {
            converged = Some(t);
            break;
        }
    }
    StigRun {
        last_put,
        converged,
        faults,
        max_ram,
    }
}
