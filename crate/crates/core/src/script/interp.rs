//! Tree-walking interpreter with hard resource limits.
//!
//! Every statement costs one step. Before each statement the interpreter
//! checks the external abort flag, the wall-clock deadline and the step
//! budget; loops additionally count their own iterations. All controller
//! effects go through [`RobotApi`] and are logged into the report.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::ast::{AugOp, BinOp, BoolOp, CmpOp, Expr, FunctionDef, Program, Stmt, Target};
use super::value::{Module, PosePart, Value};
use super::Bindings;
use crate::pose::Pose;
use crate::world::{GripperEvent, RobotApi, RobotError};

const MAX_CALL_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutionLimits {
    /// Seconds of wall-clock time a program may run.
    pub wall_deadline: f64,
    /// Statement evaluations.
    pub max_steps: u64,
    /// Iterations of any single loop.
    pub max_loop_iterations: u64,
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        Self { wall_deadline: 10.0, max_steps: 100_000, max_loop_iterations: 10_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecOptions {
    pub limits: ExecutionLimits,
    /// Multiplier applied to `time.sleep` durations. Virtual time still
    /// advances by the full requested amount.
    pub time_dilation: f64,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self { limits: ExecutionLimits::default(), time_dilation: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    GenerationFailed,
    ParseError,
    StaticCheckFailed,
    RuntimeError,
    Timeout,
    Aborted,
}

impl ExecStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExecStatus::Ok => "ok",
            ExecStatus::GenerationFailed => "generation_failed",
            ExecStatus::ParseError => "parse_error",
            ExecStatus::StaticCheckFailed => "static_check_failed",
            ExecStatus::RuntimeError => "runtime_error",
            ExecStatus::Timeout => "timeout",
            ExecStatus::Aborted => "aborted",
        }
    }
}

/// What a run did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub status: ExecStatus,
    pub say_outputs: Vec<String>,
    /// Poses reached through `go()`, in order.
    pub motion_log: Vec<Pose>,
    pub gripper_events: Vec<GripperEvent>,
    /// Program and policy functions entered, in call order.
    pub call_trace: Vec<String>,
    /// Names that failed the static check.
    pub undefined_names: Vec<String>,
    pub error_detail: Option<String>,
    pub steps: u64,
}

impl ExecutionReport {
    pub fn failed(status: ExecStatus, detail: impl Into<String>) -> Self {
        Self {
            status,
            say_outputs: Vec::new(),
            motion_log: Vec::new(),
            gripper_events: Vec::new(),
            call_trace: Vec::new(),
            undefined_names: Vec::new(),
            error_detail: Some(detail.into()),
            steps: 0,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }
}

enum Halt {
    Runtime { line: usize, message: String },
    Timeout(String),
    Aborted,
}

type Flow<T> = Result<T, Halt>;

fn runtime<T>(line: usize, message: impl Into<String>) -> Flow<T> {
    Err(Halt::Runtime { line, message: message.into() })
}

/// Runs `entry(robot)` from `program`, resolving other calls against the
/// program first and then `bindings`. The static check must have passed.
pub fn execute(
    program: &Program,
    entry: &str,
    bindings: &Bindings,
    robot: &dyn RobotApi,
    abort: &AtomicBool,
    options: &ExecOptions,
) -> ExecutionReport {
    let mut interp = Interp {
        program,
        bindings,
        robot,
        abort,
        limits: options.limits,
        dilation: options.time_dilation.max(0.0),
        started: Instant::now(),
        epoch: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
        sleep_credit: 0.0,
        steps: 0,
        depth: 0,
        report: ExecutionReport {
            status: ExecStatus::Ok,
            say_outputs: Vec::new(),
            motion_log: Vec::new(),
            gripper_events: Vec::new(),
            call_trace: Vec::new(),
            undefined_names: Vec::new(),
            error_detail: None,
            steps: 0,
        },
    };
    let outcome = match interp.lookup(entry) {
        Some(def) => interp.call_function(def, Value::Robot, 0),
        None => runtime(0, format!("entry function '{entry}' is not defined")),
    };
    let mut report = std::mem::replace(&mut interp.report, ExecutionReport::failed(ExecStatus::Ok, ""));
    report.steps = interp.steps;
    match outcome {
        Ok(_) => {}
        Err(Halt::Runtime { line, message }) => {
            report.status = ExecStatus::RuntimeError;
            report.error_detail = Some(if line > 0 { format!("line {line}: {message}") } else { message });
        }
        Err(Halt::Timeout(why)) => {
            report.status = ExecStatus::Timeout;
            report.error_detail = Some(why);
        }
        Err(Halt::Aborted) => {
            report.status = ExecStatus::Aborted;
            report.error_detail = Some("execution aborted by stop".into());
        }
    }
    report
}

struct Interp<'a> {
    program: &'a Program,
    bindings: &'a Bindings,
    robot: &'a dyn RobotApi,
    abort: &'a AtomicBool,
    limits: ExecutionLimits,
    dilation: f64,
    started: Instant,
    epoch: f64,
    sleep_credit: f64,
    steps: u64,
    depth: usize,
    report: ExecutionReport,
}

type Frame = HashMap<String, Value>;

impl<'a> Interp<'a> {
    fn lookup(&self, name: &str) -> Option<&'a FunctionDef> {
        self.program.functions.get(name).or_else(|| self.bindings.get(name).map(|d| d.as_ref()))
    }

    fn check_budget(&mut self) -> Flow<()> {
        if self.abort.load(Ordering::SeqCst) {
            return Err(Halt::Aborted);
        }
        if self.started.elapsed().as_secs_f64() > self.limits.wall_deadline {
            return Err(Halt::Timeout(format!("wall-clock deadline of {}s exceeded", self.limits.wall_deadline)));
        }
        if self.steps >= self.limits.max_steps {
            return Err(Halt::Timeout(format!("step limit of {} exceeded", self.limits.max_steps)));
        }
        Ok(())
    }

    fn call_function(&mut self, def: &FunctionDef, arg: Value, line: usize) -> Flow<Value> {
        if self.depth >= MAX_CALL_DEPTH {
            return runtime(line, "maximum call depth exceeded");
        }
        self.report.call_trace.push(def.name.clone());
        let mut frame = Frame::new();
        frame.insert(def.param.clone(), arg);
        self.depth += 1;
        let result = self.block(&def.body, &mut frame);
        self.depth -= 1;
        result.map(|_| Value::None)
    }

    fn block(&mut self, body: &[Stmt], frame: &mut Frame) -> Flow<()> {
        for stmt in body {
            self.stmt(stmt, frame)?;
        }
        Ok(())
    }

    fn stmt(&mut self, stmt: &Stmt, frame: &mut Frame) -> Flow<()> {
        self.check_budget()?;
        self.steps += 1;
        match stmt {
            Stmt::Expr { expr, .. } => {
                self.eval(expr, frame)?;
            }
            Stmt::Assign { target, value, line } => {
                let v = self.eval(value, frame)?;
                self.assign(target, v, frame, *line)?;
            }
            Stmt::AugAssign { target, op, value, line } => {
                let rhs = self.eval(value, frame)?;
                let current = self.read_target(target, frame, *line)?;
                let bin = match op {
                    AugOp::Add => BinOp::Add,
                    AugOp::Sub => BinOp::Sub,
                };
                let v = binary(bin, &current, &rhs, *line)?;
                self.assign(target, v, frame, *line)?;
            }
            Stmt::Unpack { names, value, line } => {
                let v = self.eval(value, frame)?;
                match v {
                    Value::Tuple(items) if items.len() == 2 => {
                        frame.insert(names[0].clone(), items[0].clone());
                        frame.insert(names[1].clone(), items[1].clone());
                    }
                    other => return runtime(*line, format!("cannot unpack {} into two names", other.type_name())),
                }
            }
            Stmt::If { branches, orelse, .. } => {
                for (cond, body) in branches {
                    if self.eval(cond, frame)?.truthy() {
                        return self.block(body, frame);
                    }
                }
                if let Some(body) = orelse {
                    self.block(body, frame)?;
                }
            }
            Stmt::For { var, start, end, body, line } => {
                let lo = match start {
                    Some(s) => self.int_arg(s, frame, *line)?,
                    None => 0,
                };
                let hi = self.int_arg(end, frame, *line)?;
                let mut iterations = 0u64;
                let mut i = lo;
                while i < hi {
                    iterations += 1;
                    self.loop_guard(iterations)?;
                    frame.insert(var.clone(), Value::Int(i));
                    self.block(body, frame)?;
                    i += 1;
                }
            }
            Stmt::While { cond, body, .. } => {
                let mut iterations = 0u64;
                while self.eval(cond, frame)?.truthy() {
                    iterations += 1;
                    self.loop_guard(iterations)?;
                    self.block(body, frame)?;
                    self.check_budget()?;
                }
            }
        }
        Ok(())
    }

    fn loop_guard(&self, iterations: u64) -> Flow<()> {
        if iterations > self.limits.max_loop_iterations {
            return Err(Halt::Timeout(format!("loop iteration limit of {} exceeded", self.limits.max_loop_iterations)));
        }
        Ok(())
    }

    fn int_arg(&mut self, e: &Expr, frame: &mut Frame, line: usize) -> Flow<i64> {
        match self.eval(e, frame)? {
            Value::Int(i) => Ok(i),
            other => runtime(line, format!("range() expects an int, got {}", other.type_name())),
        }
    }

    fn read_target(&mut self, target: &Target, frame: &Frame, line: usize) -> Flow<Value> {
        match target {
            Target::Name(n) => match frame.get(n) {
                Some(v) => Ok(v.clone()),
                None => runtime(line, format!("name '{n}' is not defined")),
            },
            Target::Attr { root, path } => {
                let mut v = self.variable(root, frame, line)?;
                for attr in path {
                    v = attribute(&v, attr, line)?;
                }
                Ok(v)
            }
        }
    }

    fn variable(&self, name: &str, frame: &Frame, line: usize) -> Flow<Value> {
        if let Some(v) = frame.get(name) {
            return Ok(v.clone());
        }
        match Module::from_name(name) {
            Some(m) => Ok(Value::Module(m)),
            None => runtime(line, format!("name '{name}' is not defined")),
        }
    }

    fn assign(&mut self, target: &Target, value: Value, frame: &mut Frame, line: usize) -> Flow<()> {
        match target {
            Target::Name(n) => {
                frame.insert(n.clone(), value);
                Ok(())
            }
            Target::Attr { root, path } => {
                let mut obj = self.variable(root, frame, line)?;
                let (last, prefix) = path.split_last().expect("attribute path is non-empty");
                for attr in prefix {
                    obj = attribute(&obj, attr, line)?;
                }
                set_attribute(&obj, last, value, line)
            }
        }
    }

    fn eval(&mut self, e: &Expr, frame: &mut Frame) -> Flow<Value> {
        Ok(match e {
            Expr::Int(i) => Value::Int(*i),
            Expr::Float(f) => Value::Float(*f),
            Expr::Str(s) => Value::Str(Rc::from(s.as_str())),
            Expr::Bool(b) => Value::Bool(*b),
            Expr::Name(n) => self.variable(n, frame, 0)?,
            Expr::Attr(inner, attr) => {
                let v = self.eval(inner, frame)?;
                attribute(&v, attr, 0)?
            }
            Expr::Neg(inner) => match self.eval(inner, frame)? {
                Value::Int(i) => Value::Int(i.checked_neg().ok_or_else(|| overflow(0))?),
                Value::Float(f) => Value::Float(-f),
                other => return runtime(0, format!("bad operand type for unary -: '{}'", other.type_name())),
            },
            Expr::Not(inner) => Value::Bool(!self.eval(inner, frame)?.truthy()),
            Expr::Binary(op, l, r) => {
                let lv = self.eval(l, frame)?;
                let rv = self.eval(r, frame)?;
                binary(*op, &lv, &rv, 0)?
            }
            Expr::Compare(first, rest) => {
                let mut lhs = self.eval(first, frame)?;
                for (op, e) in rest {
                    let rhs = self.eval(e, frame)?;
                    if !compare(*op, &lhs, &rhs, 0)? {
                        return Ok(Value::Bool(false));
                    }
                    lhs = rhs;
                }
                Value::Bool(true)
            }
            Expr::Logic(op, l, r) => {
                let lv = self.eval(l, frame)?;
                match (op, lv.truthy()) {
                    (BoolOp::And, false) | (BoolOp::Or, true) => lv,
                    _ => self.eval(r, frame)?,
                }
            }
            Expr::Call { callee, args, line } => {
                let mut values = Vec::with_capacity(args.len());
                for a in args {
                    values.push(self.eval(a, frame)?);
                }
                self.call(callee, values, frame, *line)?
            }
        })
    }

    fn call(&mut self, callee: &Expr, args: Vec<Value>, frame: &mut Frame, line: usize) -> Flow<Value> {
        match callee {
            Expr::Name(name) => {
                if let Some(def) = self.lookup(name) {
                    if args.len() != 1 {
                        return runtime(line, format!("{name}() takes exactly one argument ({} given)", args.len()));
                    }
                    let arg = args.into_iter().next().unwrap();
                    return self.call_function(def, arg, line);
                }
                builtin(name, &args, line)
            }
            Expr::Attr(recv, method) => {
                let receiver = self.eval(recv, frame)?;
                match receiver {
                    Value::Robot => self.robot_call(method, args, line),
                    Value::Module(m) => self.module_call(m, method, &args, line),
                    other => runtime(line, format!("'{}' object has no method '{method}'", other.type_name())),
                }
            }
            _ => runtime(line, "expression is not callable"),
        }
    }

    fn robot_call(&mut self, method: &str, args: Vec<Value>, line: usize) -> Flow<Value> {
        if self.abort.load(Ordering::SeqCst) {
            return Err(Halt::Aborted);
        }
        let arity = match method {
            "add_waypoint" | "find" | "say" => 1,
            _ => 0,
        };
        if args.len() != arity {
            return runtime(line, format!("robot.{method}() takes {arity} argument(s) ({} given)", args.len()));
        }
        let robot_err = |e: RobotError| match e {
            RobotError::Aborted => Halt::Aborted,
            other => Halt::Runtime { line, message: other.to_string() },
        };
        match method {
            "get_pose" => Ok(Value::Pose(Rc::new(RefCell::new(self.robot.get_pose())))),
            "add_waypoint" => match &args[0] {
                Value::Pose(p) => {
                    let pose = *p.borrow();
                    self.robot.add_waypoint(pose).map_err(robot_err)?;
                    Ok(Value::None)
                }
                other => runtime(line, format!("add_waypoint() expects a Pose, got {}", other.type_name())),
            },
            "go" => {
                let reached = self.robot.go().map_err(robot_err)?;
                self.report.motion_log.extend(reached);
                Ok(Value::None)
            }
            "stop" => {
                self.robot.stop();
                Ok(Value::None)
            }
            "find" => match &args[0] {
                Value::Str(name) => {
                    let (pose, found) = self.robot.find(name);
                    Ok(Value::Tuple(Rc::new(vec![Value::Pose(Rc::new(RefCell::new(pose))), Value::Bool(found)])))
                }
                other => runtime(line, format!("find() expects a str, got {}", other.type_name())),
            },
            "say" => {
                let text = args[0].to_string();
                self.robot.say(&text);
                self.report.say_outputs.push(text);
                Ok(Value::None)
            }
            "open_hand" => {
                let ev = self.robot.open_hand();
                self.report.gripper_events.push(ev);
                Ok(Value::None)
            }
            "close_hand" => {
                let ev = self.robot.close_hand();
                self.report.gripper_events.push(ev);
                Ok(Value::None)
            }
            other => runtime(line, format!("robot has no method '{other}'")),
        }
    }

    fn module_call(&mut self, module: Module, member: &str, args: &[Value], line: usize) -> Flow<Value> {
        match (module, member) {
            (Module::Math, "cos" | "sin" | "sqrt" | "radians") => {
                let [x] = args else {
                    return runtime(line, format!("math.{member}() takes exactly one argument"));
                };
                let x = x.as_f64().ok_or_else(|| Halt::Runtime {
                    line,
                    message: format!("math.{member}() expects a number, got {}", x.type_name()),
                })?;
                Ok(Value::Float(match member {
                    "cos" => x.cos(),
                    "sin" => x.sin(),
                    "radians" => x.to_radians(),
                    _ if x < 0.0 => return runtime(line, "math domain error"),
                    _ => x.sqrt(),
                }))
            }
            (Module::Time, "time") => {
                if !args.is_empty() {
                    return runtime(line, "time.time() takes no arguments");
                }
                Ok(Value::Float(self.epoch + self.started.elapsed().as_secs_f64() + self.sleep_credit))
            }
            (Module::Time, "sleep") => {
                let secs = match args {
                    [v] => v.as_f64(),
                    _ => None,
                };
                match secs {
                    Some(s) if s >= 0.0 => {
                        self.sleep(s)?;
                        Ok(Value::None)
                    }
                    Some(_) => runtime(line, "sleep length must be non-negative"),
                    None => runtime(line, "time.sleep() expects one number"),
                }
            }
            _ => runtime(line, "module member is not callable"),
        }
    }

    fn sleep(&mut self, secs: f64) -> Flow<()> {
        let real = secs * self.dilation;
        self.sleep_credit += secs - real;
        let until = Instant::now() + Duration::from_secs_f64(real);
        loop {
            if self.abort.load(Ordering::SeqCst) {
                return Err(Halt::Aborted);
            }
            if self.started.elapsed().as_secs_f64() > self.limits.wall_deadline {
                return Err(Halt::Timeout(format!("wall-clock deadline of {}s exceeded", self.limits.wall_deadline)));
            }
            let now = Instant::now();
            if now >= until {
                return Ok(());
            }
            std::thread::sleep((until - now).min(Duration::from_millis(10)));
        }
    }
}

fn overflow(line: usize) -> Halt {
    Halt::Runtime { line, message: "integer overflow".into() }
}

fn attribute(v: &Value, attr: &str, line: usize) -> Flow<Value> {
    match (v, attr) {
        (Value::Pose(p), "position") => Ok(Value::Part(Rc::clone(p), PosePart::Position)),
        (Value::Pose(p), "orientation") => Ok(Value::Part(Rc::clone(p), PosePart::Orientation)),
        (Value::Part(p, part), field) => {
            let pose = p.borrow();
            let x = match (part, field) {
                (PosePart::Position, "x") => pose.position.x,
                (PosePart::Position, "y") => pose.position.y,
                (PosePart::Position, "z") => pose.position.z,
                (PosePart::Orientation, "w") => pose.orientation.w,
                (PosePart::Orientation, "x") => pose.orientation.x,
                (PosePart::Orientation, "y") => pose.orientation.y,
                (PosePart::Orientation, "z") => pose.orientation.z,
                _ => return runtime(line, format!("'{}' object has no attribute '{field}'", v.type_name())),
            };
            Ok(Value::Float(x))
        }
        (Value::Module(Module::Math), "pi") => Ok(Value::Float(std::f64::consts::PI)),
        _ => runtime(line, format!("'{}' object has no attribute '{attr}'", v.type_name())),
    }
}

fn part_slot<'p>(pose: &'p mut Pose, part: PosePart, field: &str) -> Option<&'p mut f64> {
    Some(match (part, field) {
        (PosePart::Position, "x") => &mut pose.position.x,
        (PosePart::Position, "y") => &mut pose.position.y,
        (PosePart::Position, "z") => &mut pose.position.z,
        (PosePart::Orientation, "w") => &mut pose.orientation.w,
        (PosePart::Orientation, "x") => &mut pose.orientation.x,
        (PosePart::Orientation, "y") => &mut pose.orientation.y,
        (PosePart::Orientation, "z") => &mut pose.orientation.z,
        _ => return None,
    })
}

/// Attribute assignment is limited to pose-valued objects.
fn set_attribute(obj: &Value, attr: &str, value: Value, line: usize) -> Flow<()> {
    match obj {
        Value::Part(p, part) => {
            let x = value.as_f64().ok_or_else(|| Halt::Runtime {
                line,
                message: format!("pose fields must be numbers, got {}", value.type_name()),
            })?;
            let mut pose = p.borrow_mut();
            match part_slot(&mut pose, *part, attr) {
                Some(slot) => {
                    *slot = x;
                    Ok(())
                }
                None => runtime(line, format!("'{}' object has no attribute '{attr}'", obj.type_name())),
            }
        }
        Value::Pose(p) => {
            let source = match (&value, attr) {
                (Value::Part(src, PosePart::Position), "position") => Some((src.borrow().position, None)),
                (Value::Part(src, PosePart::Orientation), "orientation") => Some((Default::default(), Some(src.borrow().orientation))),
                _ => None,
            };
            let Some((position, orientation)) = source else {
                return runtime(line, format!("cannot assign {} to Pose.{attr}", value.type_name()));
            };
            let mut pose = p.borrow_mut();
            match orientation {
                Some(q) => pose.orientation = q,
                None => pose.position = position,
            }
            Ok(())
        }
        other => runtime(line, format!("cannot set attributes on '{}' objects", other.type_name())),
    }
}

fn binary(op: BinOp, l: &Value, r: &Value, line: usize) -> Flow<Value> {
    match (l, r) {
        (Value::Int(a), Value::Int(b)) => {
            let (a, b) = (*a, *b);
            Ok(match op {
                BinOp::Add => Value::Int(a.checked_add(b).ok_or_else(|| overflow(line))?),
                BinOp::Sub => Value::Int(a.checked_sub(b).ok_or_else(|| overflow(line))?),
                BinOp::Mul => Value::Int(a.checked_mul(b).ok_or_else(|| overflow(line))?),
                BinOp::Div => {
                    if b == 0 {
                        return runtime(line, "division by zero");
                    }
                    Value::Float(a as f64 / b as f64)
                }
            })
        }
        (Value::Str(a), Value::Str(b)) if op == BinOp::Add => Ok(Value::Str(Rc::from(format!("{a}{b}").as_str()))),
        _ => match (l.as_f64(), r.as_f64()) {
            (Some(a), Some(b)) => Ok(Value::Float(match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b == 0.0 {
                        return runtime(line, "division by zero");
                    }
                    a / b
                }
            })),
            _ => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                runtime(
                    line,
                    format!("unsupported operand types for {sym}: '{}' and '{}'", l.type_name(), r.type_name()),
                )
            }
        },
    }
}

fn compare(op: CmpOp, l: &Value, r: &Value, line: usize) -> Flow<bool> {
    use std::cmp::Ordering as O;
    let ord = match (l, r) {
        (Value::Str(a), Value::Str(b)) => Some(a.cmp(b)),
        (Value::Bool(a), Value::Bool(b)) => Some(a.cmp(b)),
        (Value::Int(a), Value::Int(b)) => Some(a.cmp(b)),
        _ => match (l.as_f64(), r.as_f64()) {
            (Some(a), Some(b)) => a.partial_cmp(&b),
            _ => None,
        },
    };
    match (op, ord) {
        (CmpOp::Eq, o) => Ok(o == Some(O::Equal)),
        (CmpOp::Ne, o) => Ok(o != Some(O::Equal)),
        (_, None) if l.as_f64().is_some() && r.as_f64().is_some() => Ok(false), // NaN
        (_, None) => runtime(line, format!("cannot order '{}' and '{}'", l.type_name(), r.type_name())),
        (CmpOp::Lt, Some(o)) => Ok(o == O::Less),
        (CmpOp::Le, Some(o)) => Ok(o != O::Greater),
        (CmpOp::Gt, Some(o)) => Ok(o == O::Greater),
        (CmpOp::Ge, Some(o)) => Ok(o != O::Less),
    }
}

fn builtin(name: &str, args: &[Value], line: usize) -> Flow<Value> {
    match name {
        "len" => match args {
            [Value::Str(s)] => Ok(Value::Int(s.chars().count() as i64)),
            [Value::Tuple(t)] => Ok(Value::Int(t.len() as i64)),
            [other] => runtime(line, format!("object of type '{}' has no len()", other.type_name())),
            _ => runtime(line, "len() takes exactly one argument"),
        },
        "abs" => match args {
            [Value::Int(i)] => Ok(Value::Int(i.checked_abs().ok_or_else(|| overflow(line))?)),
            [Value::Float(f)] => Ok(Value::Float(f.abs())),
            _ => runtime(line, "abs() expects one number"),
        },
        "min" | "max" => {
            let items: Vec<Value> = match args {
                [Value::Tuple(t)] => t.as_ref().clone(),
                _ => args.to_vec(),
            };
            let mut iter = items.into_iter();
            let Some(mut best) = iter.next() else {
                return runtime(line, format!("{name}() expects at least one argument"));
            };
            for v in iter {
                let better = if name == "min" { compare(CmpOp::Lt, &v, &best, line)? } else { compare(CmpOp::Gt, &v, &best, line)? };
                if better {
                    best = v;
                }
            }
            Ok(best)
        }
        "round" => match args {
            [Value::Int(i)] => Ok(Value::Int(*i)),
            [Value::Float(f)] => {
                let r = f.round_ties_even();
                if !r.is_finite() || r.abs() > i64::MAX as f64 {
                    return runtime(line, "cannot round a non-finite or huge float to an int");
                }
                Ok(Value::Int(r as i64))
            }
            [x, Value::Int(n)] if x.as_f64().is_some() => {
                if let Value::Int(i) = x {
                    return Ok(Value::Int(*i));
                }
                let scale = 10f64.powi((*n).clamp(-300, 300) as i32);
                Ok(Value::Float((x.as_f64().unwrap() * scale).round_ties_even() / scale))
            }
            _ => runtime(line, "round() expects a number and an optional int"),
        },
        "range" => runtime(line, "range() can only be used in a for-loop header"),
        other => runtime(line, format!("name '{other}' is not defined")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::parse_program;
    use crate::world::{SimWorld, WorldModel};

    fn run(src: &str, entry: &str) -> (ExecutionReport, SimWorld) {
        let world = SimWorld::new(WorldModel::new(Pose::at(0.4, 0.0, 0.5)).with_object(
            "big_bolt",
            Pose::at(0.3, -0.3, 0.02),
            true,
        ));
        let program = parse_program(src).unwrap();
        let abort = AtomicBool::new(false);
        let report = execute(&program, entry, &Bindings::new(), &world, &abort, &ExecOptions::default());
        (report, world)
    }

    #[test]
    fn say_values_python_style() {
        let (r, _) = run(
            "def f(robot):\n    robot.say(1 / 4)\n    robot.say(round(2.5))\n    robot.say(round(1.44225, 2))\n    robot.say('a' + \"b\")\n    robot.say(max(3, 7.5, 2))\n    robot.say(1 < 2 < 3)\n",
            "f",
        );
        assert!(r.is_ok(), "{r:?}");
        assert_eq!(r.say_outputs, vec!["0.25", "2", "1.44", "ab", "7.5", "True"]);
    }

    #[test]
    fn pose_aliasing_and_copying() {
        let (r, world) = run(
            "def f(robot):\n    a = robot.get_pose()\n    b = a\n    b.position.x += 0.1\n    robot.add_waypoint(a)\n    a.position.x += 0.1\n    robot.go()\n",
            "f",
        );
        assert!(r.is_ok(), "{r:?}");
        // the queued waypoint was copied when it was added
        assert!((world.get_pose().position.x - 0.5).abs() < 1e-12);
    }

    #[test]
    fn division_by_zero_is_runtime_error() {
        let (r, _) = run("def f(robot):\n    x = 1 / 0\n", "f");
        assert_eq!(r.status, ExecStatus::RuntimeError);
        assert!(r.error_detail.unwrap().contains("division by zero"));
        let (r, _) = run("def f(robot):\n    x = 1.0 / 0.0\n", "f");
        assert_eq!(r.status, ExecStatus::RuntimeError);
    }

    #[test]
    fn type_mismatch_is_runtime_error() {
        let (r, _) = run("def f(robot):\n    x = 'a' + 1\n", "f");
        assert_eq!(r.status, ExecStatus::RuntimeError);
        assert!(r.error_detail.unwrap().contains("unsupported operand"));
    }

    #[test]
    fn runtime_error_keeps_earlier_motion() {
        let (r, world) = run(
            "def f(robot):\n    w = robot.get_pose()\n    w.position.z -= 0.1\n    robot.add_waypoint(w)\n    robot.go()\n    robot.go()\n",
            "f",
        );
        assert_eq!(r.status, ExecStatus::RuntimeError);
        assert_eq!(r.motion_log.len(), 1);
        assert!((world.get_pose().position.z - 0.4).abs() < 1e-12);
    }

    #[test]
    fn loop_iteration_limit() {
        let (r, _) = run("def f(robot):\n    x = 0\n    while True:\n        x += 1\n", "f");
        assert_eq!(r.status, ExecStatus::Timeout);
        assert!(r.error_detail.unwrap().contains("loop iteration limit"));
    }

    #[test]
    fn unbounded_recursion_stops() {
        let (r, _) = run("def f(robot):\n    f(robot)\n", "f");
        assert_eq!(r.status, ExecStatus::RuntimeError);
        assert!(r.error_detail.unwrap().contains("call depth"));
    }

    #[test]
    fn virtual_time_with_zero_dilation() {
        let world = SimWorld::new(WorldModel::new(Pose::at(0.4, 0.0, 0.5)));
        let src = "def f(robot):\n    start = time.time()\n    end = time.time()\n    while(end - start < 2.0):\n        time.sleep(0.1)\n        end = time.time()\n    robot.say('done')\n";
        let program = parse_program(src).unwrap();
        let abort = AtomicBool::new(false);
        let opts = ExecOptions { time_dilation: 0.0, ..Default::default() };
        let t0 = Instant::now();
        let r = execute(&program, "f", &Bindings::new(), &world, &abort, &opts);
        assert!(r.is_ok(), "{r:?}");
        assert!(t0.elapsed() < Duration::from_millis(500));
    }

    #[test]
    fn abort_flag_stops_execution() {
        let world = SimWorld::new(WorldModel::new(Pose::at(0.4, 0.0, 0.5)));
        let program = parse_program("def f(robot):\n    robot.say('x')\n").unwrap();
        let abort = AtomicBool::new(true);
        let r = execute(&program, "f", &Bindings::new(), &world, &abort, &ExecOptions::default());
        assert_eq!(r.status, ExecStatus::Aborted);
        assert!(r.say_outputs.is_empty());
    }

    #[test]
    fn orientation_edit_and_whole_part_assignment() {
        let (r, world) = run(
            "def f(robot):\n    (p, ok) = robot.find('big_bolt')\n    w = robot.get_pose()\n    w.position = p.position\n    w.position.z += 0.1\n    robot.add_waypoint(w)\n    robot.go()\n",
            "f",
        );
        assert!(r.is_ok(), "{r:?}");
        let pose = world.get_pose().position;
        assert!((pose.x - 0.3).abs() < 1e-12 && (pose.y + 0.3).abs() < 1e-12 && (pose.z - 0.12).abs() < 1e-12);
    }
}
