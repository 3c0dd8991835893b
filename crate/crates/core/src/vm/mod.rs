//! Interpreter and timestep engine.
//!
//! The operand stack holds heap object indices. Each script call gets an
//! activation record: a heap table mapping local slot numbers to values,
//! with arguments in slots `0..argc`. Call frames (return offset, caller
//! locals, caller stack base) sit in a small fixed cache; once it is full,
//! or always in reduced-memory mode, frames spill onto the operand stack as
//! three objects each.
//!
//! A timestep runs four substeps: store sensor readings, ingest received
//! messages, run the script's `step`, and flush outgoing messages. The very
//! first timestep also runs the top-level code and `init` beforehand.

mod natives;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::heap::{Heap, HeapError, HeapStats, NO_OBJ};
use crate::lang::image::Image;
use crate::lang::isa::{ImageError, Op, Width};
use crate::neighbors::NeighborTable;
use crate::ringbuf::{OverflowPolicy, RingBuffer};
use crate::stigmergy::StigStore;
use crate::strings::{native, StringTable};
use crate::swarm::SwarmRegistry;
use crate::value::{arith, compare, ArithOp, CmpOp, ObjIdx, StrId, Value, ValueError, F16};
use crate::wire::{Delivery, Frame, Message, RobotId, MAX_FRAME};

pub use natives::Builtin;

/// Return offset marking a frame entered from host code.
pub const HOST_RETURN: u16 = 0xFFFF;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Features {
    pub swarm: bool,
    pub neighbors: bool,
    pub stigmergy: bool,
    pub reduced_memory: bool,
}

impl Default for Features {
    fn default() -> Self {
        Features {
            swarm: true,
            neighbors: true,
            stigmergy: true,
            reduced_memory: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VmConfig {
    pub heap_size: usize,
    pub pairs_per_segment: usize,
    pub stack_capacity: usize,
    /// Frames kept outside the operand stack. Zero in reduced-memory mode.
    pub frame_cache: usize,
    /// Collect before every `gc_interval`-th instruction.
    pub gc_interval: u32,
    /// Instructions allowed per timestep; `None` is unlimited.
    pub budget: Option<u64>,
    pub features: Features,
    pub neighbor_capacity: usize,
    pub staleness: u8,
    pub stig_capacity: usize,
    pub outbox_capacity: usize,
    pub swarm_table_capacity: usize,
    pub subscription_capacity: usize,
    /// Send the swarm list at least this often, in timesteps.
    pub swarm_period: u32,
    /// Record one line per substep in [`TimestepOutcome::trace`].
    pub trace: bool,
}

impl Default for VmConfig {
    fn default() -> Self {
        VmConfig {
            heap_size: 1536,
            pairs_per_segment: 4,
            stack_capacity: 64,
            frame_cache: 8,
            gc_interval: 64,
            budget: None,
            features: Features::default(),
            neighbor_capacity: 8,
            staleness: crate::neighbors::DEFAULT_STALENESS,
            stig_capacity: 8,
            outbox_capacity: 4,
            swarm_table_capacity: 8,
            subscription_capacity: 4,
            swarm_period: 10,
            trace: false,
        }
    }
}

impl VmConfig {
    /// The configuration actually used once feature flags are applied.
    pub fn effective(&self) -> VmConfig {
        let mut c = self.clone();
        if c.features.reduced_memory {
            c.frame_cache = 0;
            c.pairs_per_segment = c.pairs_per_segment.min(2);
        }
        c
    }

    pub fn ram_report(&self) -> RamReport {
        let c = self.effective();
        RamReport {
            heap: c.heap_size,
            stack: c.stack_capacity * 2,
            frames: c.frame_cache * 6,
            neighbors: if c.features.neighbors {
                c.neighbor_capacity * NEIGHBOR_RECORD_BYTES
            } else {
                0
            },
            subscriptions: if c.features.neighbors {
                c.subscription_capacity * 4
            } else {
                0
            },
            stigmergy: if c.features.stigmergy {
                c.stig_capacity * 10
            } else {
                0
            },
            swarm: if c.features.swarm {
                c.swarm_table_capacity * 3
            } else {
                0
            },
            outbox: c.outbox_capacity * (MAX_FRAME + 1),
            registers: REGISTER_BYTES,
        }
    }
}

/// robot id, three 4-byte floats, age
const NEIGHBOR_RECORD_BYTES: usize = 2 + 12 + 1;
/// pc, locals, base, depth, gc counter, budget counter, own swarm list,
/// flags
const REGISTER_BYTES: usize = 16;

/// Modeled RAM use in bytes, by structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RamReport {
    pub heap: usize,
    pub stack: usize,
    pub frames: usize,
    pub neighbors: usize,
    pub subscriptions: usize,
    pub stigmergy: usize,
    pub swarm: usize,
    pub outbox: usize,
    pub registers: usize,
}

impl RamReport {
    pub fn total(&self) -> usize {
        self.heap
            + self.stack
            + self.frames
            + self.neighbors
            + self.subscriptions
            + self.stigmergy
            + self.swarm
            + self.outbox
            + self.registers
    }
}

impl fmt::Display for RamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "heap={} stack={} frames={} neighbors={} subscriptions={} stigmergy={} swarm={} outbox={} registers={} total={}",
            self.heap,
            self.stack,
            self.frames,
            self.neighbors,
            self.subscriptions,
            self.stigmergy,
            self.swarm,
            self.outbox,
            self.registers,
            self.total()
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum FaultKind {
    #[error("stack overflow")]
    StackOverflow,
    #[error("stack underflow")]
    StackUnderflow,
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("out of heap memory")]
    OutOfMemory,
    #[error("unknown global `{0}`")]
    UnknownGlobal(String),
    #[error("instruction budget exhausted")]
    BudgetExhausted,
    #[error("swarm id {0} outside 0..=7")]
    SwarmRange(i32),
    #[error("stigmergy store full")]
    StoreFull,
    #[error("outgoing message queue full")]
    QueueFull,
    #[error("subscription table full")]
    SubscriptionsFull,
    #[error("feature `{0}` is disabled")]
    FeatureDisabled(&'static str),
    #[error("cannot call a value of type {0}")]
    NotCallable(&'static str),
    #[error("closure offset {0} is not an instruction")]
    BadClosure(u16),
    #[error("host function index {0} is not registered")]
    BadHostFunction(u16),
    #[error("local access outside a function")]
    NoFrame,
    #[error("host function: {0}")]
    Host(String),
}

impl From<ValueError> for FaultKind {
    fn from(e: ValueError) -> Self {
        match e {
            ValueError::DivisionByZero => FaultKind::DivisionByZero,
            other => FaultKind::TypeMismatch(other.to_string()),
        }
    }
}

impl From<HeapError> for FaultKind {
    fn from(e: HeapError) -> Self {
        match e {
            HeapError::OutOfMemory => FaultKind::OutOfMemory,
            other => FaultKind::TypeMismatch(other.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("fault at pc {pc}: {kind}")]
pub struct Fault {
    pub kind: FaultKind,
    pub pc: u16,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum VmError {
    #[error("bad image: {0}")]
    BadImage(#[from] ImageError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("`{0}` is already defined")]
    DuplicateRegistration(String),
    #[error("string id {0} is not in the image")]
    UnknownString(StrId),
    #[error("{0}")]
    Fault(#[from] Fault),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepStatus {
    Running,
    Done,
    Faulted(Fault),
}

/// Something a host function asked the robot to do this timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct Action {
    pub name: String,
    pub args: Vec<f64>,
}

/// What a registered host function can see and do.
pub struct HostCtx<'a> {
    pub robot_id: RobotId,
    pub sensors: &'a BTreeMap<String, f64>,
    pub actions: &'a mut Vec<Action>,
    pub strings: &'a StringTable,
}

/// Host function body. Receives the call's arguments and returns the call's
/// value (use `Value::Nil` for none). Tables cannot be returned.
pub type HostFn = Arc<dyn Fn(&mut HostCtx<'_>, &[Value]) -> Result<Value, String> + Send + Sync>;

#[derive(Clone)]
enum HostEntry {
    Builtin(Builtin),
    User(StrId, HostFn),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct CallFrame {
    ret_pc: u16,
    locals: ObjIdx,
    base: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Flow {
    Continue,
    Done,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    /// Top-level code not yet finished.
    Main,
    /// Top-level finished; `init` pending.
    Init,
    Ready,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TimestepOutcome {
    pub outbox: Vec<Frame>,
    pub status: Option<Fault>,
    pub decode_errors: usize,
    pub actions: Vec<Action>,
    pub instructions: u64,
    pub trace: Vec<String>,
}

impl TimestepOutcome {
    pub fn faulted(&self) -> bool {
        self.status.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct VmCounters {
    pub instructions: u64,
    pub collections: u64,
    pub reclaimed_bytes: u64,
    pub timesteps: u64,
    pub decode_errors: u64,
}

pub struct Vm {
    image: Arc<Image>,
    config: VmConfig,
    robot_id: RobotId,
    heap: Heap,
    stack: Vec<ObjIdx>,
    frames: Vec<CallFrame>,
    depth: usize,
    pc: u16,
    locals: ObjIdx,
    base: usize,
    globals: ObjIdx,
    nil: ObjIdx,
    pins: Vec<ObjIdx>,
    registry: Vec<HostEntry>,
    since_gc: u32,
    executed: u64,
    fault: Option<Fault>,
    phase: Phase,
    swarm: SwarmRegistry,
    stig: StigStore,
    nbrs: NeighborTable,
    outbox: RingBuffer<Frame>,
    sensors: BTreeMap<String, f64>,
    actions: Vec<Action>,
    counters: VmCounters,
}

impl fmt::Debug for Vm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Vm")
            .field("robot_id", &self.robot_id)
            .field("pc", &self.pc)
            .field("depth", &self.depth)
            .field("fault", &self.fault)
            .finish_non_exhaustive()
    }
}

impl Vm {
    pub fn new(image: Arc<Image>, config: &VmConfig, robot_id: RobotId) -> Result<Vm, VmError> {
        let c = config.effective();
        if c.stack_capacity == 0 || c.stack_capacity > u16::MAX as usize {
            return Err(VmError::Config(
                "stack capacity must be in 1..=65535".into(),
            ));
        }
        for (name, v) in [
            ("neighbor capacity", c.neighbor_capacity),
            ("stigmergy capacity", c.stig_capacity),
            ("outbox capacity", c.outbox_capacity),
            ("swarm table capacity", c.swarm_table_capacity),
        ] {
            if v == 0 {
                return Err(VmError::Config(format!("{name} must be positive")));
            }
        }
        if c.gc_interval == 0 {
            return Err(VmError::Config("gc interval must be positive".into()));
        }
        let heap = Heap::new(c.heap_size, c.pairs_per_segment)
            .map_err(|e| VmError::Config(e.to_string()))?;
        let mut vm = Vm {
            image,
            robot_id,
            heap,
            stack: Vec::with_capacity(c.stack_capacity),
            frames: Vec::with_capacity(c.frame_cache),
            depth: 0,
            pc: 0,
            locals: NO_OBJ,
            base: 0,
            globals: NO_OBJ,
            nil: NO_OBJ,
            pins: Vec::new(),
            registry: Vec::new(),
            since_gc: 0,
            executed: 0,
            fault: None,
            phase: Phase::Main,
            swarm: SwarmRegistry::new(c.swarm_table_capacity, c.swarm_period),
            stig: StigStore::new(c.stig_capacity),
            nbrs: NeighborTable::new(c.neighbor_capacity, c.staleness, c.subscription_capacity),
            outbox: RingBuffer::new(c.outbox_capacity, OverflowPolicy::Reject),
            sensors: BTreeMap::new(),
            actions: Vec::new(),
            counters: VmCounters::default(),
            config: c,
        };
        vm.boot().map_err(|kind| {
            VmError::Config(format!("runtime setup does not fit the heap: {kind}"))
        })?;
        Ok(vm)
    }

    pub fn from_bytes(bytes: &[u8], config: &VmConfig, robot_id: RobotId) -> Result<Vm, VmError> {
        let image = Image::from_bytes(bytes)?;
        Vm::new(Arc::new(image), config, robot_id)
    }

    fn boot(&mut self) -> Result<(), FaultKind> {
        self.nil = self.heap.obj_alloc(Value::Nil)?;
        self.heap.set_permanent(self.nil, true)?;
        let Value::Table(g) = self.heap.table_new()? else {
            unreachable!()
        };
        self.globals = g;
        self.heap.set_permanent(g, true)?;
        self.pc = self.image.entry();
        self.set_global(native::ID, Value::Int(self.robot_id as i16))?;
        natives::install(self)
    }

    /// Restores the freshly loaded state, keeping host registrations.
    pub fn reset(&mut self) -> Result<(), VmError> {
        let user: Vec<(StrId, HostFn)> = self
            .registry
            .iter()
            .filter_map(|e| match e {
                HostEntry::User(n, f) => Some((*n, f.clone())),
                HostEntry::Builtin(_) => None,
            })
            .collect();
        *self = Vm::new(self.image.clone(), &self.config, self.robot_id)?;
        for (n, f) in user {
            self.register(n, f)?;
        }
        Ok(())
    }

    // ---- accessors ----

    pub fn robot_id(&self) -> RobotId {
        self.robot_id
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn config(&self) -> &VmConfig {
        &self.config
    }

    pub fn heap(&self) -> &Heap {
        &self.heap
    }

    pub fn heap_mut(&mut self) -> &mut Heap {
        &mut self.heap
    }

    pub fn heap_stats(&self) -> HeapStats {
        self.heap.stats()
    }

    pub fn fault(&self) -> Option<&Fault> {
        self.fault.as_ref()
    }

    pub fn pc(&self) -> u16 {
        self.pc
    }

    pub fn counters(&self) -> VmCounters {
        self.counters
    }

    pub fn swarm(&self) -> &SwarmRegistry {
        &self.swarm
    }

    pub fn stigmergy(&self) -> &StigStore {
        &self.stig
    }

    pub fn neighbors(&self) -> &NeighborTable {
        &self.nbrs
    }

    pub fn ram_report(&self) -> RamReport {
        self.config.ram_report()
    }

    /// Values on the operand stack, bottom first.
    pub fn stack_values(&self) -> Vec<Value> {
        self.stack
            .iter()
            .map(|&o| self.heap.value(o).unwrap_or(Value::Nil))
            .collect()
    }

    pub fn stack_depth(&self) -> usize {
        self.stack.len()
    }

    pub fn global(&self, name: &str) -> Option<Value> {
        let id = self.image.find_string(name)?;
        self.global_id(id)
    }

    pub fn global_id(&self, id: StrId) -> Option<Value> {
        let r = self
            .heap
            .table_get_ref(self.globals, Value::Str(id))
            .ok()??;
        self.heap.value(r).ok()
    }

    /// Sets a global from the host. Returns `false` when the image never
    /// mentions `name`. Tables cannot be passed in.
    pub fn set_global_named(&mut self, name: &str, v: Value) -> Result<bool, VmError> {
        if matches!(v, Value::Table(_)) {
            return Err(VmError::Config("host cannot store tables".into()));
        }
        let Some(id) = self.image.find_string(name) else {
            return Ok(false);
        };
        self.set_global(id, v)
            .map_err(|kind| VmError::Fault(Fault { kind, pc: self.pc }))?;
        Ok(true)
    }

    /// Reads a table field, for inspecting script state from the host.
    pub fn table_get(&self, t: Value, key: Value) -> Option<Value> {
        self.heap.table_get(t, key).ok()
    }

    /// Heap dump followed by the modeled RAM breakdown.
    pub fn dump(&self) -> String {
        let mut s = self.heap.dump();
        s.push_str(&format!("# ram {}\n", self.ram_report()));
        s
    }

    // ---- registration ----

    /// Makes `name_id` a global bound to `f`.
    pub fn register(&mut self, name_id: StrId, f: HostFn) -> Result<(), VmError> {
        if self.image.strings().lookup(name_id).is_err() {
            return Err(VmError::UnknownString(name_id));
        }
        if self.global_id(name_id).is_some() {
            return Err(VmError::DuplicateRegistration(
                self.image.strings().text(name_id),
            ));
        }
        let idx = self.registry.len() as u16;
        self.registry.push(HostEntry::User(name_id, f));
        self.set_global(name_id, Value::UserClosure(idx))
            .map_err(|kind| VmError::Fault(Fault { kind, pc: self.pc }))
    }

    /// Like [`register`](Vm::register) by text. Returns `false` without
    /// registering when the image never mentions `name`.
    pub fn register_named(&mut self, name: &str, f: HostFn) -> Result<bool, VmError> {
        match self.image.find_string(name) {
            Some(id) => self.register(id, f).map(|_| true),
            None => Ok(false),
        }
    }

    fn add_builtin(&mut self, b: Builtin) -> Value {
        let idx = self.registry.len() as u16;
        self.registry.push(HostEntry::Builtin(b));
        Value::UserClosure(idx)
    }

    fn set_global(&mut self, id: StrId, v: Value) -> Result<(), FaultKind> {
        let k = self.alloc(Value::Str(id))?;
        self.pins.push(k);
        let r = self.alloc(v).and_then(|vo| {
            self.pins.push(vo);
            let r = self.set_ref(self.globals, k, vo);
            self.pins.pop();
            r
        });
        self.pins.pop();
        r
    }

    // ---- heap helpers ----

    fn roots(&self) -> Vec<ObjIdx> {
        let mut r = Vec::with_capacity(self.stack.len() + self.pins.len() + self.frames.len() + 2);
        r.extend_from_slice(&self.stack);
        r.extend_from_slice(&self.pins);
        r.extend(self.frames.iter().map(|f| f.locals));
        r.push(self.locals);
        r.push(self.globals);
        r.retain(|&o| o != NO_OBJ);
        r
    }

    /// Runs a full collection now.
    pub fn collect(&mut self) -> usize {
        let roots = self.roots();
        let freed = self.heap.gc_collect(roots);
        self.since_gc = 0;
        self.counters.collections += 1;
        self.counters.reclaimed_bytes += freed as u64;
        freed
    }

    /// Runs `f`, and on out-of-memory collects once and retries once.
    fn with_retry<T>(
        &mut self,
        mut f: impl FnMut(&mut Heap) -> Result<T, HeapError>,
    ) -> Result<T, FaultKind> {
        match f(&mut self.heap) {
            Err(HeapError::OutOfMemory) => {
                self.collect();
                f(&mut self.heap).map_err(FaultKind::from)
            }
            r => r.map_err(FaultKind::from),
        }
    }

    fn alloc(&mut self, v: Value) -> Result<ObjIdx, FaultKind> {
        if v.is_nil() && self.nil != NO_OBJ {
            return Ok(self.nil);
        }
        self.with_retry(|h| h.obj_alloc(v))
    }

    fn new_table(&mut self) -> Result<ObjIdx, FaultKind> {
        match self.with_retry(|h| h.table_new())? {
            Value::Table(t) => Ok(t),
            _ => unreachable!("table_new returns a table"),
        }
    }

    /// Caller keeps `k` and `v` reachable.
    fn set_ref(&mut self, t: ObjIdx, k: ObjIdx, v: ObjIdx) -> Result<(), FaultKind> {
        self.pins.push(t);
        let r = self.with_retry(|h| h.table_set_ref(t, k, v));
        self.pins.pop();
        r
    }

    fn value(&self, o: ObjIdx) -> Value {
        self.heap
            .value(o)
            .expect("stack and pinned objects are live")
    }

    // ---- stack helpers ----

    fn peek(&self, n: usize) -> Result<ObjIdx, FaultKind> {
        if self.stack.len() < self.base + n + 1 {
            return Err(FaultKind::StackUnderflow);
        }
        Ok(self.stack[self.stack.len() - 1 - n])
    }

    fn drop_n(&mut self, n: usize) {
        let l = self.stack.len() - n;
        self.stack.truncate(l);
    }

    fn push(&mut self, o: ObjIdx) -> Result<(), FaultKind> {
        if self.stack.len() >= self.config.stack_capacity {
            return Err(FaultKind::StackOverflow);
        }
        self.stack.push(o);
        Ok(())
    }

    fn push_value(&mut self, v: Value) -> Result<(), FaultKind> {
        if self.stack.len() >= self.config.stack_capacity {
            return Err(FaultKind::StackOverflow);
        }
        let o = self.alloc(v)?;
        self.stack.push(o);
        Ok(())
    }

    /// Replaces the top `n` operands with `v`, allocating before popping.
    fn replace_top(&mut self, n: usize, v: Value) -> Result<(), FaultKind> {
        let o = self.alloc(v)?;
        self.drop_n(n);
        self.push(o)
    }

    fn binary(&mut self) -> Result<(Value, Value), FaultKind> {
        let b = self.peek(0)?;
        let a = self.peek(1)?;
        Ok((self.value(a), self.value(b)))
    }

    // ---- execution ----

    fn fetch(&self) -> Option<(Op, u16, usize)> {
        let code = self.image.code();
        let at = self.pc as usize;
        if at >= code.len() {
            return None;
        }
        let op = Op::from_byte(code[at]).expect("image was validated");
        let size = Width::Narrow.instr_size(op);
        let operand = if size == 3 {
            u16::from_le_bytes([code[at + 1], code[at + 2]])
        } else {
            0
        };
        Some((op, operand, at + size))
    }

    fn step_one(&mut self) -> Result<Flow, FaultKind> {
        if let Some(b) = self.config.budget {
            if self.executed >= b {
                return Err(FaultKind::BudgetExhausted);
            }
        }
        if self.since_gc >= self.config.gc_interval {
            self.collect();
        }
        self.since_gc += 1;
        self.executed += 1;
        self.counters.instructions += 1;
        let Some((op, operand, next)) = self.fetch() else {
            // running off the end behaves like DONE
            return self.op_done();
        };
        let here = self.pc;
        self.pc = next as u16;
        match op {
            Op::Nop => {}
            Op::Done => {
                self.pc = here;
                return self.op_done();
            }
            Op::PushNil => self.push(self.nil)?,
            Op::PushI => self.push_value(Value::Int(operand as i16))?,
            Op::PushF => self.push_value(Value::Float(F16::from_bits(operand)))?,
            Op::PushS => self.push_value(Value::Str(operand))?,
            Op::PushL => self.push_value(Value::Closure(operand))?,
            Op::PushT => {
                if self.stack.len() >= self.config.stack_capacity {
                    return Err(FaultKind::StackOverflow);
                }
                let t = self.new_table()?;
                self.push(t)?;
            }
            Op::Dup => {
                let o = self.peek(0)?;
                self.push(o)?;
            }
            Op::Pop => {
                self.peek(0)?;
                self.drop_n(1);
            }
            Op::LLoad => {
                if self.locals == NO_OBJ {
                    return Err(FaultKind::NoFrame);
                }
                let r = self
                    .heap
                    .table_get_ref(self.locals, Value::Int(operand as i16))?;
                self.push(r.unwrap_or(self.nil))?;
            }
            Op::LStore => {
                if self.locals == NO_OBJ {
                    return Err(FaultKind::NoFrame);
                }
                let v = self.peek(0)?;
                let k = self.alloc(Value::Int(operand as i16))?;
                self.pins.push(k);
                let r = self.set_ref(self.locals, k, v);
                self.pins.pop();
                r?;
                self.drop_n(1);
            }
            Op::GLoad => match self.heap.table_get_ref(self.globals, Value::Str(operand))? {
                Some(o) => self.push(o)?,
                None => return Err(self.missing_global(operand)),
            },
            Op::GStore => {
                let v = self.peek(0)?;
                let k = self.alloc(Value::Str(operand))?;
                self.pins.push(k);
                let r = self.set_ref(self.globals, k, v);
                self.pins.pop();
                r?;
                self.drop_n(1);
            }
            Op::TGet => {
                let k = self.peek(0)?;
                let t = self.peek(1)?;
                let (tv, kv) = (self.value(t), self.value(k));
                let Value::Table(ti) = tv else {
                    return Err(FaultKind::TypeMismatch(format!(
                        "indexing a {}",
                        tv.tag().name()
                    )));
                };
                let r = self.heap.table_get_ref(ti, kv)?;
                self.drop_n(2);
                self.push(r.unwrap_or(self.nil))?;
            }
            Op::TPut => {
                let v = self.peek(0)?;
                let k = self.peek(1)?;
                let t = self.peek(2)?;
                let tv = self.value(t);
                let Value::Table(ti) = tv else {
                    return Err(FaultKind::TypeMismatch(format!(
                        "assigning into a {}",
                        tv.tag().name()
                    )));
                };
                self.set_ref(ti, k, v)?;
                self.drop_n(3);
            }
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Mod | Op::Pow => {
                let (a, b) = self.binary()?;
                let aop = match op {
                    Op::Add => ArithOp::Add,
                    Op::Sub => ArithOp::Sub,
                    Op::Mul => ArithOp::Mul,
                    Op::Div => ArithOp::Div,
                    Op::Mod => ArithOp::Mod,
                    _ => ArithOp::Pow,
                };
                let r = arith(aop, a, b)?;
                self.replace_top(2, r)?;
            }
            Op::Neg => {
                let a = self.value(self.peek(0)?);
                let r = arith(ArithOp::Neg, a, Value::Nil)?;
                self.replace_top(1, r)?;
            }
            Op::And | Op::Or => {
                let (a, b) = self.binary()?;
                let r = if op == Op::And {
                    a.truthy() && b.truthy()
                } else {
                    a.truthy() || b.truthy()
                };
                self.replace_top(2, Value::Int(r as i16))?;
            }
            Op::Not => {
                let a = self.value(self.peek(0)?);
                self.replace_top(1, Value::Int(!a.truthy() as i16))?;
            }
            Op::Eq | Op::Neq | Op::Lt | Op::Lte | Op::Gt | Op::Gte => {
                let (a, b) = self.binary()?;
                let cop = match op {
                    Op::Eq => CmpOp::Eq,
                    Op::Neq => CmpOp::Neq,
                    Op::Lt => CmpOp::Lt,
                    Op::Lte => CmpOp::Lte,
                    Op::Gt => CmpOp::Gt,
                    _ => CmpOp::Gte,
                };
                let r = compare(cop, a, b)?;
                self.replace_top(2, r)?;
            }
            Op::Jump => self.pc = here.wrapping_add(operand),
            Op::JumpZ | Op::JumpNZ => {
                let c = self.value(self.peek(0)?).truthy();
                self.drop_n(1);
                if c == (op == Op::JumpNZ) {
                    self.pc = here.wrapping_add(operand);
                }
            }
            Op::Call => self.do_call(operand as usize, next as u16)?,
            Op::Ret0 => return self.do_return(self.nil),
            Op::Ret1 => {
                let r = self.peek(0)?;
                return self.do_return(r);
            }
        }
        Ok(Flow::Continue)
    }

    fn missing_global(&self, id: StrId) -> FaultKind {
        let f = &self.config.features;
        match id {
            native::SWARM if !f.swarm => FaultKind::FeatureDisabled("swarm"),
            native::STIGMERGY if !f.stigmergy => FaultKind::FeatureDisabled("stigmergy"),
            native::NEIGHBORS if !f.neighbors => FaultKind::FeatureDisabled("neighbors"),
            _ => FaultKind::UnknownGlobal(self.image.strings().text(id)),
        }
    }

    fn op_done(&mut self) -> Result<Flow, FaultKind> {
        if self.depth == 0 {
            Ok(Flow::Done)
        } else {
            self.do_return(self.nil)
        }
    }

    fn push_frame(&mut self, ret_pc: u16) -> Result<(), FaultKind> {
        let frame = CallFrame {
            ret_pc,
            locals: self.locals,
            base: self.base as u16,
        };
        if self.frames.len() < self.config.frame_cache {
            self.frames.push(frame);
            return Ok(());
        }
        if self.stack.len() + 3 > self.config.stack_capacity {
            return Err(FaultKind::StackOverflow);
        }
        let a = self.alloc(Value::Int(ret_pc as i16))?;
        self.stack.push(a);
        let b = if frame.locals == NO_OBJ {
            self.nil
        } else {
            frame.locals
        };
        self.stack.push(b);
        let c = self.alloc(Value::Int(frame.base as i16))?;
        self.stack.push(c);
        Ok(())
    }

    fn pop_frame(&mut self) -> CallFrame {
        if self.depth > self.frames.len() {
            let n = self.stack.len();
            let (a, b, c) = (self.stack[n - 3], self.stack[n - 2], self.stack[n - 1]);
            self.stack.truncate(n - 3);
            let int = |v: Value| match v {
                Value::Int(i) => i as u16,
                _ => unreachable!("spilled frame slots hold ints"),
            };
            CallFrame {
                ret_pc: int(self.value(a)),
                locals: if b == self.nil { NO_OBJ } else { b },
                base: int(self.value(c)),
            }
        } else {
            self.frames.pop().expect("depth counts frames")
        }
    }

    fn do_call(&mut self, argc: usize, ret_pc: u16) -> Result<(), FaultKind> {
        let callee = self.peek(argc)?;
        match self.value(callee) {
            Value::Closure(off) => {
                if !self.image.is_boundary(off as usize) {
                    return Err(FaultKind::BadClosure(off));
                }
                let t = self.new_table()?;
                self.pins.push(t);
                let first = self.stack.len() - argc;
                for i in 0..argc {
                    let a = self.stack[first + i];
                    if a == self.nil {
                        continue;
                    }
                    let k = self.alloc(Value::Int(i as i16))?;
                    self.pins.push(k);
                    let r = self.set_ref(t, k, a);
                    self.pins.pop();
                    r?;
                }
                self.stack.truncate(first - 1);
                self.push_frame(ret_pc)?;
                self.pins.pop();
                self.locals = t;
                self.base = self.stack.len();
                self.pc = off;
                self.depth += 1;
                Ok(())
            }
            Value::UserClosure(i) => {
                let first = self.stack.len() - argc;
                let args: Vec<ObjIdx> = self.stack[first..].to_vec();
                let r = self.call_host(i, &args)?;
                let o = self.alloc(r)?;
                self.stack.truncate(first - 1);
                self.push(o)
            }
            other => Err(FaultKind::NotCallable(other.tag().name())),
        }
    }

    fn do_return(&mut self, r: ObjIdx) -> Result<Flow, FaultKind> {
        if self.depth == 0 {
            return Ok(Flow::Done);
        }
        self.stack.truncate(self.base);
        let f = self.pop_frame();
        self.locals = f.locals;
        self.base = f.base as usize;
        self.pc = f.ret_pc;
        self.depth -= 1;
        self.push(r)?;
        Ok(Flow::Continue)
    }

    fn call_host(&mut self, i: u16, args: &[ObjIdx]) -> Result<Value, FaultKind> {
        let entry = self
            .registry
            .get(i as usize)
            .cloned()
            .ok_or(FaultKind::BadHostFunction(i))?;
        match entry {
            HostEntry::Builtin(b) => self.builtin(b, args),
            HostEntry::User(_, f) => {
                let vals: Vec<Value> = args.iter().map(|&a| self.value(a)).collect();
                let mut ctx = HostCtx {
                    robot_id: self.robot_id,
                    sensors: &self.sensors,
                    actions: &mut self.actions,
                    strings: self.image.strings(),
                };
                let v = f(&mut ctx, &vals).map_err(FaultKind::Host)?;
                if matches!(v, Value::Table(_)) {
                    return Err(FaultKind::Host(
                        "host functions cannot return tables".into(),
                    ));
                }
                Ok(v)
            }
        }
    }

    /// Calls a script or host closure from host code and returns the result
    /// object. The result is not rooted; pin it before allocating.
    fn call_value(&mut self, callee: ObjIdx, args: &[ObjIdx]) -> Result<ObjIdx, FaultKind> {
        if self.stack.len() + args.len() + 1 > self.config.stack_capacity {
            return Err(FaultKind::StackOverflow);
        }
        self.stack.push(callee);
        self.stack.extend_from_slice(args);
        let saved_pc = self.pc;
        let d = self.depth;
        self.do_call(args.len(), HOST_RETURN)?;
        while self.depth > d {
            self.step_one()?;
        }
        self.pc = saved_pc;
        let r = self.peek(0)?;
        self.drop_n(1);
        Ok(r)
    }

    /// Calls with plain values; they are allocated and pinned first.
    fn call_with_values(&mut self, callee: Value, args: &[Value]) -> Result<ObjIdx, FaultKind> {
        let mark = self.pins.len();
        let r = (|| {
            let c = self.alloc(callee)?;
            self.pins.push(c);
            let mut objs = Vec::with_capacity(args.len());
            for &a in args {
                let o = self.alloc(a)?;
                self.pins.push(o);
                objs.push(o);
            }
            self.call_value(c, &objs)
        })();
        self.pins.truncate(mark);
        r
    }

    fn record<T>(&mut self, r: Result<T, FaultKind>) -> Result<T, Fault> {
        r.map_err(|kind| {
            let f = Fault { kind, pc: self.pc };
            self.fault = Some(f.clone());
            f
        })
    }

    /// Executes one instruction of the top-level code.
    pub fn step_instruction(&mut self) -> StepStatus {
        if let Some(f) = &self.fault {
            return StepStatus::Faulted(f.clone());
        }
        if self.phase != Phase::Main {
            return StepStatus::Done;
        }
        let r = self.step_one();
        match self.record(r) {
            Ok(Flow::Continue) => StepStatus::Running,
            Ok(Flow::Done) => {
                self.phase = Phase::Init;
                StepStatus::Done
            }
            Err(f) => StepStatus::Faulted(f),
        }
    }

    /// Runs the top-level code to completion.
    pub fn run_main(&mut self) -> Result<(), Fault> {
        loop {
            match self.step_instruction() {
                StepStatus::Running => {}
                StepStatus::Done => return Ok(()),
                StepStatus::Faulted(f) => return Err(f),
            }
        }
    }

    /// Calls global `name` with `args` from the host. Missing globals are
    /// an error; the result must not be a table.
    pub fn call_global(&mut self, name: &str, args: &[Value]) -> Result<Value, Fault> {
        if let Some(f) = &self.fault {
            return Err(f.clone());
        }
        let r = (|| {
            let id = self
                .image
                .find_string(name)
                .ok_or_else(|| FaultKind::UnknownGlobal(name.to_string()))?;
            let f = self.global_id(id).ok_or_else(|| self.missing_global(id))?;
            let o = self.call_with_values(f, args)?;
            Ok(self.value(o))
        })();
        self.record(r)
    }

    fn call_hook(&mut self, id: StrId) -> Result<(), FaultKind> {
        if let Some(f) = self.global_id(id) {
            self.call_with_values(f, &[])?;
        }
        Ok(())
    }

    fn setup(&mut self) -> Result<(), Fault> {
        if self.phase == Phase::Main {
            self.run_main()?;
        }
        if self.phase == Phase::Init {
            self.phase = Phase::Ready;
            let r = self.call_hook(native::INIT);
            self.record(r)?;
        }
        Ok(())
    }

    // ---- timestep ----

    /// Substep 1: expose sensor readings to host functions.
    pub fn set_sensors(&mut self, sensors: &BTreeMap<String, f64>) {
        self.sensors.clone_from(sensors);
    }

    /// Substep 2: update neighbors, swarm table and stigmergy from the
    /// inbox and run topic listeners. Returns the number of undecodable
    /// frames, which are skipped.
    pub fn ingest(&mut self, inbox: &[Delivery]) -> Result<usize, Fault> {
        if let Some(f) = &self.fault {
            return Err(f.clone());
        }
        let r = self.ingest_inner(inbox);
        self.record(r)
    }

    fn ingest_inner(&mut self, inbox: &[Delivery]) -> Result<usize, FaultKind> {
        let f = self.config.features;
        let mut errors = 0;
        if f.neighbors {
            self.nbrs.age_all();
        }
        let mut calls = Vec::new();
        for d in inbox {
            let msg = match Message::decode(d.frame.as_bytes()) {
                Ok(m) => m,
                Err(_) => {
                    errors += 1;
                    continue;
                }
            };
            if f.neighbors {
                self.nbrs
                    .update(d.sender, d.distance, d.azimuth, d.elevation);
            }
            match msg {
                Message::Swarm { robot, bits } => {
                    if f.swarm {
                        self.swarm.on_message(robot, bits);
                    }
                }
                Message::Bcast {
                    robot,
                    topic,
                    value,
                } => {
                    if f.neighbors {
                        if let Some(l) = self.nbrs.listener(topic) {
                            calls.push((l, value, robot, d.distance));
                        }
                    }
                }
                Message::StigPut(e) | Message::StigQuery(e) => {
                    if f.stigmergy {
                        self.stig.on_message(e);
                    }
                }
            }
        }
        if f.neighbors {
            self.nbrs.evict_stale();
        }
        self.counters.decode_errors += errors as u64;
        for (l, value, robot, dist) in calls {
            let args = [
                value,
                Value::Int(robot as i16),
                Value::Float(F16::from_f32(dist)),
            ];
            self.call_with_values(l, &args)?;
        }
        Ok(errors)
    }

    /// Substep 3: run `step`, if defined.
    pub fn run_step(&mut self) -> Result<(), Fault> {
        if let Some(f) = &self.fault {
            return Err(f.clone());
        }
        let r = self.call_hook(native::STEP);
        self.record(r)
    }

    /// Substep 4: queue swarm and stigmergy traffic, then drain the outbox.
    pub fn flush(&mut self) -> Vec<Frame> {
        if self.fault.is_none() {
            if self.config.features.swarm && self.swarm.due() && !self.outbox.is_full() {
                let m = Message::Swarm {
                    robot: self.robot_id,
                    bits: self.swarm.own().0,
                };
                self.outbox.push(m.encode()).expect("room checked");
                self.swarm.mark_sent();
            }
            if self.config.features.stigmergy {
                let room = self.outbox.capacity() - self.outbox.len();
                for m in self.stig.drain_pending(room) {
                    self.outbox.push(m.encode()).expect("room checked");
                }
            }
        }
        let mut out = Vec::with_capacity(self.outbox.len());
        while let Ok(f) = self.outbox.pop() {
            out.push(f);
        }
        out
    }

    /// One full timestep.
    pub fn timestep(
        &mut self,
        inbox: &[Delivery],
        sensors: &BTreeMap<String, f64>,
    ) -> TimestepOutcome {
        let mut out = TimestepOutcome::default();
        if let Some(f) = &self.fault {
            out.status = Some(f.clone());
            return out;
        }
        self.counters.timesteps += 1;
        self.actions.clear();
        let trace = self.config.trace;
        self.set_sensors(sensors);
        if trace {
            out.trace.push(format!("sensors {}", sensors.len()));
        }
        let r = (|| {
            self.setup()?;
            self.executed = 0;
            out.decode_errors = self.ingest(inbox)?;
            if trace {
                out.trace.push(format!(
                    "ingest {} messages, {} undecodable",
                    inbox.len(),
                    out.decode_errors
                ));
            }
            self.run_step()?;
            if trace {
                out.trace
                    .push(format!("step {} instructions", self.executed));
            }
            Ok(())
        })();
        out.instructions = self.executed;
        if let Err(f) = r {
            out.status = Some(f);
            return out;
        }
        out.outbox = self.flush();
        if trace {
            out.trace.push(format!("flush {} frames", out.outbox.len()));
        }
        out.actions = std::mem::take(&mut self.actions);
        out
    }
}

#[cfg(test)]
mod tests;
