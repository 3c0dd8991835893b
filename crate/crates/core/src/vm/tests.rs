use super::*;
use crate::lang::{compile, CompileOptions};

fn vm_for(src: &str, cfg: &VmConfig) -> Vm {
    let img = compile(src, &CompileOptions::default()).unwrap();
    Vm::new(Arc::new(img), cfg, 3).unwrap()
}

fn run(src: &str) -> Vm {
    let mut vm = vm_for(src, &VmConfig::default());
    vm.run_main().unwrap();
    vm
}

#[test]
fn arithmetic_and_globals() {
    let vm = run("x = 2 + 3 * 4\ny = x / 2\nz = 1.5 * 2");
    assert_eq!(vm.global("x"), Some(Value::Int(14)));
    assert_eq!(vm.global("y"), Some(Value::Int(7)));
    assert_eq!(vm.global("z"), Some(Value::float(3.0)));
    assert_eq!(vm.global("id"), Some(Value::Int(3)));
}

#[test]
fn recursion_spills_frames() {
    let src = "function f(n) { if (n == 0) { return 0 } return 1 + f(n - 1) }\nr = f(12)";
    let vm = run(src);
    assert_eq!(vm.global("r"), Some(Value::Int(12)));
    let mut cfg = VmConfig::default();
    cfg.features.reduced_memory = true;
    let mut vm = vm_for(src, &cfg);
    vm.run_main().unwrap();
    assert_eq!(vm.global("r"), Some(Value::Int(12)));
}

#[test]
fn deep_recursion_overflows() {
    let mut vm = vm_for(
        "function f(n) { return f(n + 1) }\nf(0)",
        &VmConfig::default(),
    );
    let f = vm.run_main().unwrap_err();
    assert_eq!(f.kind, FaultKind::StackOverflow);
    assert_eq!(vm.step_instruction(), StepStatus::Faulted(f));
    vm.reset().unwrap();
    assert!(vm.fault().is_none());
}

#[test]
fn fib() {
    let vm = run("function fib(n) { if (n < 2) { return n } return fib(n - 1) + fib(n - 2) }\na = fib(10)\nb = fib(15)");
    assert_eq!(vm.global("a"), Some(Value::Int(55)));
    assert_eq!(vm.global("b"), Some(Value::Int(610)));
}

#[test]
fn tables_and_closures() {
    let vm = run("t = {.a = 1, [2] = 5}\nt.b = t.a + t[2]\nn = size(t)\ng = function(x) { return x * 2 }\nh = g(t.b)");
    assert_eq!(vm.global("h"), Some(Value::Int(12)));
    assert_eq!(vm.global("n"), Some(Value::Int(3)));
}

#[test]
fn budget() {
    let cfg = VmConfig {
        budget: Some(10),
        ..VmConfig::default()
    };
    let src = (0..11).map(|_| "PUSHNIL\n").collect::<String>();
    let p = crate::lang::asm::assemble(&src, Width::Narrow).unwrap();
    let img = Image::from_program(&p).unwrap();
    let mut vm = Vm::new(Arc::new(img), &cfg, 0).unwrap();
    for _ in 0..10 {
        assert_eq!(vm.step_instruction(), StepStatus::Running);
    }
    match vm.step_instruction() {
        StepStatus::Faulted(f) => assert_eq!(f.kind, FaultKind::BudgetExhausted),
        other => panic!("{other:?}"),
    }
}

#[test]
fn feature_disabled() {
    let mut cfg = VmConfig::default();
    cfg.features.swarm = false;
    let mut vm = vm_for("swarm.join(1)", &cfg);
    assert_eq!(
        vm.run_main().unwrap_err().kind,
        FaultKind::FeatureDisabled("swarm")
    );
}

#[test]
fn swarm_api() {
    let mut vm = vm_for(
        "s = swarm.create(2)\nswarm.join(s)\nm = swarm.in(2)\nr = swarm.exec(2, function() { return 9 })\nswarm.join(8)",
        &VmConfig::default(),
    );
    assert_eq!(vm.run_main().unwrap_err().kind, FaultKind::SwarmRange(8));
    assert_eq!(vm.global("m"), Some(Value::Int(1)));
    assert_eq!(vm.global("r"), Some(Value::Int(9)));
}

#[test]
fn host_registration() {
    let mut vm = vm_for(
        "goto(1, 2.5)\nfunction step() { goto(0, 1) }",
        &VmConfig::default(),
    );
    let f: HostFn = Arc::new(|ctx, args| {
        let a = args.iter().map(|v| v.as_f64().unwrap_or(0.0)).collect();
        ctx.actions.push(Action {
            name: "goto".into(),
            args: a,
        });
        Ok(Value::Nil)
    });
    assert!(vm.register_named("goto", f.clone()).unwrap());
    assert!(matches!(
        vm.register_named("goto", f.clone()),
        Err(VmError::DuplicateRegistration(_))
    ));
    assert!(!vm.register_named("absent", f).unwrap());
    let out = vm.timestep(&[], &BTreeMap::new());
    assert!(out.status.is_none(), "{:?}", out.status);
    assert_eq!(out.actions.len(), 2);
    assert_eq!(out.actions[0].args, vec![1.0, 2.5]);
}

#[test]
fn stigmergy_put_flushes() {
    let mut vm = vm_for(
        "function init() { stigmergy.put(\"k\", 7) }",
        &VmConfig::default(),
    );
    let out = vm.timestep(&[], &BTreeMap::new());
    assert!(out.status.is_none());
    let msgs: Vec<Message> = out
        .outbox
        .iter()
        .map(|f| Message::decode(f.as_bytes()).unwrap())
        .collect();
    assert!(msgs
        .iter()
        .any(|m| matches!(m, Message::StigPut(e) if e.value == Value::Int(7))));
}

#[test]
fn foreach_constant_space() {
    let src = "total = 0\nfunction step() { neighbors.foreach(function(i, d) { var x = d.distance * 2\n total = total + 1 }) }";
    let mut hw = Vec::new();
    for n in [1u16, 8] {
        let mut vm = vm_for(src, &VmConfig::default());
        let inbox: Vec<Delivery> = (0..n)
            .map(|i| Delivery {
                sender: 10 + i,
                distance: 1.0 + i as f32,
                azimuth: 0.5,
                elevation: 0.0,
                frame: Message::Swarm {
                    robot: 10 + i,
                    bits: 0,
                }
                .encode(),
            })
            .collect();
        vm.timestep(&inbox, &BTreeMap::new());
        vm.heap_mut().reset_high_water();
        let out = vm.timestep(&inbox, &BTreeMap::new());
        assert!(out.status.is_none(), "{:?}", out.status);
        assert_eq!(vm.global("total"), Some(Value::Int(2 * n as i16)));
        hw.push(vm.heap().high_water());
    }
    assert_eq!(hw[0], hw[1]);
}

#[test]
fn ram_budget() {
    let r = VmConfig::default().ram_report();
    assert!(r.total() <= 2048, "{r}");
}
