//! Built-in globals and the `swarm`, `stigmergy` and `neighbors` tables.

use super::{FaultKind, Vm};
use crate::heap::NO_OBJ;
use crate::neighbors::NeighborRecord;
use crate::stigmergy::StigError;
use crate::strings::native;
use crate::swarm::SetOp;
use crate::value::{ObjIdx, StrId, Value, F16};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Builtin {
    Abs,
    Sqrt,
    Size,
    StigPut,
    StigGet,
    StigSize,
    Broadcast,
    Listen,
    Ignore,
    Foreach,
    Map,
    Reduce,
    Filter,
    Count,
    SwarmCreate,
    SwarmJoin,
    SwarmLeave,
    SwarmIn,
    SwarmSelect,
    SwarmUnselect,
    SwarmExec,
    SwarmSet(SetOp),
}

const STIGMERGY: &[(StrId, Builtin)] = &[
    (native::PUT, Builtin::StigPut),
    (native::GET, Builtin::StigGet),
    (native::SIZE, Builtin::StigSize),
];

const NEIGHBORS: &[(StrId, Builtin)] = &[
    (native::BROADCAST, Builtin::Broadcast),
    (native::LISTEN, Builtin::Listen),
    (native::IGNORE, Builtin::Ignore),
    (native::FOREACH, Builtin::Foreach),
    (native::MAP, Builtin::Map),
    (native::REDUCE, Builtin::Reduce),
    (native::FILTER, Builtin::Filter),
    (native::COUNT, Builtin::Count),
];

const SWARM: &[(StrId, Builtin)] = &[
    (native::CREATE, Builtin::SwarmCreate),
    (native::JOIN, Builtin::SwarmJoin),
    (native::LEAVE, Builtin::SwarmLeave),
    (native::IN, Builtin::SwarmIn),
    (native::SELECT, Builtin::SwarmSelect),
    (native::UNSELECT, Builtin::SwarmUnselect),
    (native::EXEC, Builtin::SwarmExec),
    (native::UNION, Builtin::SwarmSet(SetOp::Union)),
    (native::INTERSECTION, Builtin::SwarmSet(SetOp::Intersection)),
    (native::DIFFERENCE, Builtin::SwarmSet(SetOp::Difference)),
];

pub(super) fn install(vm: &mut Vm) -> Result<(), FaultKind> {
    for (name, b) in [
        (native::ABS, Builtin::Abs),
        (native::SQRT, Builtin::Sqrt),
        (native::SIZE, Builtin::Size),
    ] {
        let f = vm.add_builtin(b);
        vm.set_global(name, f)?;
    }
    let f = vm.config.features;
    if f.stigmergy {
        install_table(vm, native::STIGMERGY, STIGMERGY)?;
    }
    if f.neighbors {
        install_table(vm, native::NEIGHBORS, NEIGHBORS)?;
    }
    if f.swarm {
        install_table(vm, native::SWARM, SWARM)?;
    }
    Ok(())
}

fn install_table(vm: &mut Vm, name: StrId, methods: &[(StrId, Builtin)]) -> Result<(), FaultKind> {
    let t = vm.new_table()?;
    vm.pins.push(t);
    for &(m, b) in methods {
        let f = vm.add_builtin(b);
        let k = vm.alloc(Value::Str(m))?;
        vm.pins.push(k);
        let v = vm.alloc(f)?;
        vm.pins.push(v);
        vm.set_ref(t, k, v)?;
        vm.pins.truncate(vm.pins.len() - 2);
    }
    vm.set_global(name, Value::Table(t))?;
    vm.pins.pop();
    Ok(())
}

fn arg(vm: &Vm, args: &[ObjIdx], i: usize) -> Value {
    args.get(i).map(|&o| vm.value(o)).unwrap_or(Value::Nil)
}

fn mismatch(what: &str, got: Value) -> FaultKind {
    FaultKind::TypeMismatch(format!("{what} expected, got {}", got.tag().name()))
}

fn int_arg(vm: &Vm, args: &[ObjIdx], i: usize) -> Result<i32, FaultKind> {
    match arg(vm, args, i) {
        Value::Int(v) => Ok(v as i32),
        other => Err(mismatch("int", other)),
    }
}

fn str_arg(vm: &Vm, args: &[ObjIdx], i: usize) -> Result<StrId, FaultKind> {
    match arg(vm, args, i) {
        Value::Str(s) => Ok(s),
        other => Err(mismatch("string", other)),
    }
}

/// Object index of a callable argument.
fn fn_arg(vm: &Vm, args: &[ObjIdx], i: usize) -> Result<ObjIdx, FaultKind> {
    match arg(vm, args, i) {
        Value::Closure(_) | Value::UserClosure(_) => Ok(args[i]),
        other => Err(mismatch("function", other)),
    }
}

fn swarm_err(e: crate::swarm::SwarmRange) -> FaultKind {
    FaultKind::SwarmRange(e.0)
}

impl Vm {
    pub(super) fn builtin(&mut self, b: Builtin, args: &[ObjIdx]) -> Result<Value, FaultKind> {
        use Builtin::*;
        match b {
            Abs => match arg(self, args, 0) {
                Value::Int(v) => Ok(Value::Int(v.wrapping_abs())),
                Value::Float(f) => Ok(Value::Float(F16::from_bits(f.to_bits() & 0x7FFF))),
                other => Err(mismatch("number", other)),
            },
            Sqrt => {
                let v = arg(self, args, 0);
                let x = v.as_f64().ok_or_else(|| mismatch("number", v))?;
                Ok(Value::float(x.sqrt()))
            }
            Size => match arg(self, args, 0) {
                Value::Table(t) => Ok(Value::Int(self.heap.table_len(t)? as i16)),
                other => Err(mismatch("table", other)),
            },
            StigPut => {
                let key = str_arg(self, args, 0)?;
                let v = arg(self, args, 1);
                self.stig.put(key, v, self.robot_id).map_err(|e| match e {
                    StigError::StoreFull => FaultKind::StoreFull,
                    StigError::TableValue => mismatch("non-table value", v),
                })?;
                Ok(Value::Nil)
            }
            StigGet => {
                let key = str_arg(self, args, 0)?;
                Ok(self.stig.get(key))
            }
            StigSize => Ok(Value::Int(self.stig.len() as i16)),
            Broadcast => {
                let topic = str_arg(self, args, 0)?;
                let value = arg(self, args, 1);
                if matches!(value, Value::Table(_)) {
                    return Err(mismatch("non-table value", value));
                }
                let m = crate::wire::Message::Bcast {
                    robot: self.robot_id,
                    topic,
                    value,
                };
                self.outbox
                    .push(m.encode())
                    .map_err(|_| FaultKind::QueueFull)?;
                Ok(Value::Nil)
            }
            Listen => {
                let topic = str_arg(self, args, 0)?;
                let f = fn_arg(self, args, 1)?;
                let fv = self.value(f);
                self.nbrs
                    .listen(topic, fv)
                    .map_err(|_| FaultKind::SubscriptionsFull)?;
                Ok(Value::Nil)
            }
            Ignore => {
                let topic = str_arg(self, args, 0)?;
                self.nbrs.ignore(topic);
                Ok(Value::Nil)
            }
            Count => Ok(Value::Int(self.nbrs.len() as i16)),
            Foreach => {
                let f = fn_arg(self, args, 0)?;
                self.foreach(f)?;
                Ok(Value::Nil)
            }
            Map | Filter => {
                let f = fn_arg(self, args, 0)?;
                self.map_filter(f, b == Filter)
            }
            Reduce => {
                let f = fn_arg(self, args, 0)?;
                let init = args.get(1).copied().unwrap_or(self.nil);
                self.reduce(f, init)
            }
            SwarmCreate => {
                let id = int_arg(self, args, 0)?;
                crate::swarm::check_id(id).map_err(swarm_err)?;
                Ok(Value::Int(id as i16))
            }
            SwarmJoin => {
                let id = int_arg(self, args, 0)?;
                self.swarm.join(id).map_err(swarm_err)?;
                Ok(Value::Nil)
            }
            SwarmLeave => {
                let id = int_arg(self, args, 0)?;
                self.swarm.leave(id).map_err(swarm_err)?;
                Ok(Value::Nil)
            }
            SwarmIn => {
                let id = int_arg(self, args, 0)?;
                let m = self.swarm.is_member(id).map_err(swarm_err)?;
                Ok(Value::Int(m as i16))
            }
            SwarmSelect | SwarmUnselect => {
                let id = int_arg(self, args, 0)?;
                crate::swarm::check_id(id).map_err(swarm_err)?;
                if arg(self, args, 1).truthy() {
                    if b == SwarmSelect {
                        self.swarm.join(id).map_err(swarm_err)?;
                    } else {
                        self.swarm.leave(id).map_err(swarm_err)?;
                    }
                }
                Ok(Value::Nil)
            }
            SwarmExec => {
                let id = int_arg(self, args, 0)?;
                let f = fn_arg(self, args, 1)?;
                if !self.swarm.is_member(id).map_err(swarm_err)? {
                    return Ok(Value::Nil);
                }
                let r = self.call_value(f, &[])?;
                Ok(self.value(r))
            }
            SwarmSet(op) => {
                let a = int_arg(self, args, 0)?;
                let b = int_arg(self, args, 1)?;
                let dest = int_arg(self, args, 2)?;
                self.swarm.set_op(op, a, b, dest).map_err(swarm_err)?;
                Ok(Value::Nil)
            }
        }
    }

    /// Fresh `{distance, azimuth, elevation}` table for one neighbor, left
    /// pinned.
    fn neighbor_data(&mut self, r: &NeighborRecord) -> Result<ObjIdx, FaultKind> {
        let t = self.new_table()?;
        self.pins.push(t);
        for (key, x) in [
            (native::DISTANCE, r.distance),
            (native::AZIMUTH, r.azimuth),
            (native::ELEVATION, r.elevation),
        ] {
            let k = self.alloc(Value::Str(key))?;
            self.pins.push(k);
            let v = self.alloc(Value::Float(F16::from_f32(x)))?;
            self.pins.push(v);
            self.set_ref(t, k, v)?;
            self.pins.truncate(self.pins.len() - 2);
        }
        Ok(t)
    }

    /// Allocates the id and data arguments for one neighbor, both pinned.
    fn neighbor_args(&mut self, r: &NeighborRecord) -> Result<[ObjIdx; 2], FaultKind> {
        let id = self.alloc(Value::Int(r.robot as i16))?;
        self.pins.push(id);
        let data = self.neighbor_data(r)?;
        Ok([id, data])
    }

    /// Calls `f(id, data)` per neighbor in constant heap space: every
    /// iteration starts from a freshly collected heap, and its data table is
    /// garbage by the next one.
    fn foreach(&mut self, f: ObjIdx) -> Result<(), FaultKind> {
        let recs: Vec<NeighborRecord> = self.nbrs.records().collect();
        let mark = self.pins.len();
        self.pins.push(f);
        self.collect();
        let r = (|| {
            for rec in &recs {
                let a = self.neighbor_args(rec)?;
                self.call_value(f, &a)?;
                self.pins.truncate(mark + 1);
                self.collect();
            }
            Ok(())
        })();
        self.pins.truncate(mark);
        r
    }

    fn map_filter(&mut self, f: ObjIdx, filter: bool) -> Result<Value, FaultKind> {
        let recs: Vec<NeighborRecord> = self.nbrs.records().collect();
        let mark = self.pins.len();
        self.pins.push(f);
        let r = (|| {
            let out = self.new_table()?;
            self.pins.push(out);
            for rec in &recs {
                let a = self.neighbor_args(rec)?;
                let res = self.call_value(f, &a)?;
                if filter {
                    if self.value(res).truthy() {
                        self.set_ref(out, a[0], a[1])?;
                    }
                } else {
                    self.pins.push(res);
                    self.set_ref(out, a[0], res)?;
                }
                self.pins.truncate(mark + 2);
            }
            Ok(Value::Table(out))
        })();
        self.pins.truncate(mark);
        r
    }

    fn reduce(&mut self, f: ObjIdx, init: ObjIdx) -> Result<Value, FaultKind> {
        let recs: Vec<NeighborRecord> = self.nbrs.records().collect();
        let mark = self.pins.len();
        self.pins.push(f);
        let r = (|| {
            let mut acc = init;
            for rec in &recs {
                self.pins.push(acc);
                let [id, data] = self.neighbor_args(rec)?;
                acc = self.call_value(f, &[id, data, acc])?;
                self.pins.truncate(mark + 1);
            }
            Ok(if acc == NO_OBJ {
                Value::Nil
            } else {
                self.value(acc)
            })
        })();
        self.pins.truncate(mark);
        r
    }
}
