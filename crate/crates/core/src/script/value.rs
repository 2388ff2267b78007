use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::pose::Pose;

pub type PoseRef = Rc<RefCell<Pose>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosePart {
    Position,
    Orientation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Module {
    Math,
    Time,
}

impl Module {
    pub fn from_name(name: &str) -> Option<Module> {
        match name {
            "math" => Some(Module::Math),
            "time" => Some(Module::Time),
            _ => None,
        }
    }
}

/// Runtime values. Poses are shared by reference so that
/// `waypoint.position.z -= 0.05` mutates the pose bound to `waypoint`.
#[derive(Debug, Clone)]
pub enum Value {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(Rc<str>),
    Tuple(Rc<Vec<Value>>),
    Pose(PoseRef),
    Part(PoseRef, PosePart),
    Robot,
    Module(Module),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::None => "NoneType",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Str(_) => "str",
            Value::Tuple(_) => "tuple",
            Value::Pose(_) => "Pose",
            Value::Part(_, PosePart::Position) => "Point",
            Value::Part(_, PosePart::Orientation) => "Quaternion",
            Value::Robot => "Robot",
            Value::Module(_) => "module",
        }
    }

    pub fn truthy(&self) -> bool {
        match self {
            Value::None => false,
            Value::Bool(b) => *b,
            Value::Int(i) => *i != 0,
            Value::Float(f) => *f != 0.0,
            Value::Str(s) => !s.is_empty(),
            Value::Tuple(t) => !t.is_empty(),
            _ => true,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    fn repr(&self) -> String {
        match self {
            Value::Str(s) => format!("'{s}'"),
            other => other.to_string(),
        }
    }
}

/// Float formatting compatible with Python's `repr`.
pub fn format_float(f: f64) -> String {
    if f.is_nan() {
        return "nan".into();
    }
    if f.is_infinite() {
        return if f > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let abs = f.abs();
    if abs != 0.0 && !(1e-4..1e16).contains(&abs) {
        let s = format!("{f:e}");
        let (mantissa, exp) = s.split_once('e').unwrap_or((&s, "0"));
        let (sign, digits) = match exp.strip_prefix('-') {
            Some(d) => ('-', d),
            None => ('+', exp),
        };
        return format!("{mantissa}e{sign}{digits:0>2}");
    }
    let s = format!("{f}");
    if s.contains('.') {
        s
    } else {
        format!("{s}.0")
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::None => write!(f, "None"),
            Value::Bool(true) => write!(f, "True"),
            Value::Bool(false) => write!(f, "False"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{}", format_float(*x)),
            Value::Str(s) => write!(f, "{s}"),
            Value::Tuple(items) => {
                let parts: Vec<String> = items.iter().map(Value::repr).collect();
                write!(f, "({})", parts.join(", "))
            }
            Value::Pose(p) => {
                let p = p.borrow();
                let (pos, q) = (p.position, p.orientation);
                write!(
                    f,
                    "Pose(position=({}, {}, {}), orientation=({}, {}, {}, {}))",
                    format_float(pos.x),
                    format_float(pos.y),
                    format_float(pos.z),
                    format_float(q.w),
                    format_float(q.x),
                    format_float(q.y),
                    format_float(q.z)
                )
            }
            Value::Part(p, PosePart::Position) => {
                let pos = p.borrow().position;
                write!(f, "Point({}, {}, {})", format_float(pos.x), format_float(pos.y), format_float(pos.z))
            }
            Value::Part(p, PosePart::Orientation) => {
                let q = p.borrow().orientation;
                write!(
                    f,
                    "Quaternion({}, {}, {}, {})",
                    format_float(q.w),
                    format_float(q.x),
                    format_float(q.y),
                    format_float(q.z)
                )
            }
            Value::Robot => write!(f, "<robot>"),
            Value::Module(Module::Math) => write!(f, "<module 'math'>"),
            Value::Module(Module::Time) => write!(f, "<module 'time'>"),
        }
    }
}
