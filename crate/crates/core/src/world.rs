//! Simulated arm and world behind the high-level controller API.
//!
//! The world is a name → pose table (objects and named locations), the end
//! effector pose, and a two-state gripper. Motion is either instant (the
//! default, used by tests and the benchmark) or timed, where the end effector
//! is interpolated towards each waypoint at a fixed tick and every tick is
//! published as a pose event.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::{Pose, Quaternion, Vec3};

pub const DEFAULT_GRASP_RADIUS: f64 = 0.05;
pub const DEFAULT_SPEED: f64 = 0.1;
pub const DEFAULT_TICK_HZ: f64 = 20.0;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("cannot read world file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed world file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{what} has a non-unit quaternion (norm {norm})")]
    NonUnitQuaternion { what: String, norm: f64 },
    #[error("invalid workspace box: {0}")]
    Workspace(String),
    #[error("duplicate object name '{0}'")]
    DuplicateObject(String),
}

/// Failures of controller calls made by a running program.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RobotError {
    #[error("go() called with an empty waypoint queue")]
    EmptyQueue,
    #[error("waypoint ({x:.4}, {y:.4}, {z:.4}) is outside the workspace")]
    OutsideWorkspace { x: f64, y: f64, z: f64 },
    #[error("waypoint orientation is not a unit quaternion (norm {0})")]
    NonUnitQuaternion(f64),
    #[error("motion aborted by stop")]
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gripper {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperAction {
    Open,
    Close,
}

/// One gripper command and the object it released or grasped, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperEvent {
    pub action: GripperAction,
    pub object: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionMode {
    #[default]
    Instant,
    Timed,
}

/// Axis-aligned box the end effector must stay inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl Default for WorkspaceBox {
    fn default() -> Self {
        Self { min: Vec3::new(-1.0, -1.0, -1.0), max: Vec3::new(1.0, 1.0, 1.0) }
    }
}

impl WorkspaceBox {
    pub fn contains(&self, p: Vec3) -> bool {
        (self.min.x..=self.max.x).contains(&p.x)
            && (self.min.y..=self.max.y).contains(&p.y)
            && (self.min.z..=self.max.z).contains(&p.z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub pose: Pose,
    /// Named locations such as `handover` are not graspable.
    pub graspable: bool,
}

/// Complete world state. Cloning it is the snapshot mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub objects: IndexMap<String, WorldObject>,
    pub ee_pose: Pose,
    pub gripper: Gripper,
    pub held_object: Option<String>,
    /// Object position minus end-effector position at grasp time.
    pub held_offset: Vec3,
    pub workspace: WorkspaceBox,
    pub grasp_radius: f64,
}

impl WorldModel {
    pub fn new(start: Pose) -> Self {
        Self {
            objects: IndexMap::new(),
            ee_pose: start,
            gripper: Gripper::Open,
            held_object: None,
            held_offset: Vec3::default(),
            workspace: WorkspaceBox::default(),
            grasp_radius: DEFAULT_GRASP_RADIUS,
        }
    }

    pub fn with_object(mut self, name: &str, pose: Pose, graspable: bool) -> Self {
        self.objects.insert(name.to_string(), WorldObject { pose, graspable });
        self
    }

    pub fn object_pose(&self, name: &str) -> Option<Pose> {
        self.objects.get(name).map(|o| o.pose)
    }

    fn set_ee(&mut self, pose: Pose) {
        self.ee_pose = pose;
        if let Some(name) = &self.held_object {
            let offset = self.held_offset;
            if let Some(obj) = self.objects.get_mut(name) {
                obj.pose.position = pose.position.add(offset);
            }
        }
    }

    fn nearest_graspable(&self) -> Option<String> {
        let ee = self.ee_pose.position;
        self.objects
            .iter()
            .filter(|(_, o)| o.graspable)
            .map(|(name, o)| (name, o.pose.position.distance(ee)))
            .filter(|(_, d)| *d <= self.grasp_radius)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(name, _)| name.clone())
    }
}

#[derive(Debug, Deserialize)]
struct WorldFile {
    start_pose: Pose,
    #[serde(default)]
    workspace: Option<WorkspaceBox>,
    #[serde(default)]
    grasp_radius: Option<f64>,
    #[serde(default)]
    objects: Vec<ObjectEntry>,
}

#[derive(Debug, Deserialize)]
struct ObjectEntry {
    name: String,
    pose: Pose,
    #[serde(default = "default_true")]
    graspable: bool,
}

fn default_true() -> bool {
    true
}

fn check_unit(what: &str, q: &Quaternion) -> Result<(), WorldError> {
    if q.is_unit() {
        Ok(())
    } else {
        Err(WorldError::NonUnitQuaternion { what: what.to_string(), norm: q.norm() })
    }
}

/// Parses and validates a world description (JSON).
pub fn parse_world(text: &str) -> Result<WorldModel, WorldError> {
    let file: WorldFile = serde_json::from_str(text)?;
    check_unit("start_pose", &file.start_pose.orientation)?;
    let mut world = WorldModel::new(file.start_pose);
    if let Some(ws) = file.workspace {
        if !(ws.min.x < ws.max.x && ws.min.y < ws.max.y && ws.min.z < ws.max.z) {
            return Err(WorldError::Workspace("min must be below max on every axis".into()));
        }
        world.workspace = ws;
    }
    if !world.workspace.contains(file.start_pose.position) {
        return Err(WorldError::Workspace("start pose lies outside the workspace".into()));
    }
    if let Some(r) = file.grasp_radius {
        if !(r > 0.0) {
            return Err(WorldError::Workspace("grasp_radius must be positive".into()));
        }
        world.grasp_radius = r;
    }
    for obj in file.objects {
        check_unit(&format!("object '{}'", obj.name), &obj.pose.orientation)?;
        if world.objects.contains_key(&obj.name) {
            return Err(WorldError::DuplicateObject(obj.name));
        }
        world.objects.insert(obj.name, WorldObject { pose: obj.pose, graspable: obj.graspable });
    }
    Ok(world)
}

pub fn load_world(path: impl AsRef<Path>) -> Result<WorldModel, WorldError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| WorldError::Io { path: path.display().to_string(), source })?;
    parse_world(&text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionState {
    pub waypoint_queue: Vec<Pose>,
    /// Cartesian speed in m/s for timed mode.
    pub speed: f64,
    pub mode: MotionMode,
    pub tick_hz: f64,
}

impl Default for MotionState {
    fn default() -> Self {
        Self { waypoint_queue: Vec::new(), speed: DEFAULT_SPEED, mode: MotionMode::Instant, tick_hz: DEFAULT_TICK_HZ }
    }
}

/// Side effects observable outside the interpreter (gateway, text-to-speech).
#[derive(Debug, Clone, PartialEq)]
pub enum RobotEvent {
    Pose(Pose),
    Say(String),
    Gripper(GripperEvent),
}

pub type RobotEventHook = Arc<dyn Fn(&RobotEvent) + Send + Sync>;

/// The controller surface available to generated programs.
pub trait RobotApi {
    fn get_pose(&self) -> Pose;
    fn add_waypoint(&self, pose: Pose) -> Result<(), RobotError>;
    /// Traverses the queued waypoints and returns the ones reached.
    fn go(&self) -> Result<Vec<Pose>, RobotError>;
    fn stop(&self);
    fn find(&self, name: &str) -> (Pose, bool);
    fn say(&self, text: &str);
    fn open_hand(&self) -> GripperEvent;
    fn close_hand(&self) -> GripperEvent;
}

struct Inner {
    model: WorldModel,
    motion: MotionState,
}

/// Thread-safe simulated robot. `stop` and snapshot reads may come from any
/// thread while a program runs.
pub struct SimWorld {
    inner: Mutex<Inner>,
    abort: Arc<AtomicBool>,
    executing: AtomicBool,
    moving: AtomicBool,
    hook: RwLock<Option<RobotEventHook>>,
}

impl std::fmt::Debug for SimWorld {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimWorld").field("model", &self.snapshot()).finish()
    }
}

impl SimWorld {
    pub fn new(model: WorldModel) -> Self {
        Self::with_motion(model, MotionState::default())
    }

    pub fn with_motion(model: WorldModel, motion: MotionState) -> Self {
        Self {
            inner: Mutex::new(Inner { model, motion }),
            abort: Arc::new(AtomicBool::new(false)),
            executing: AtomicBool::new(false),
            moving: AtomicBool::new(false),
            hook: RwLock::new(None),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn emit(&self, event: RobotEvent) {
        let hook = self.hook.read().unwrap_or_else(|e| e.into_inner()).clone();
        if let Some(hook) = hook {
            hook(&event);
        }
    }

    pub fn set_event_hook(&self, hook: Option<RobotEventHook>) {
        *self.hook.write().unwrap_or_else(|e| e.into_inner()) = hook;
    }

    pub fn snapshot(&self) -> WorldModel {
        self.lock().model.clone()
    }

    /// Restores a snapshot and clears any queued motion.
    pub fn restore(&self, model: WorldModel) {
        let mut inner = self.lock();
        inner.model = model;
        inner.motion.waypoint_queue.clear();
    }

    pub fn motion(&self) -> MotionState {
        self.lock().motion.clone()
    }

    pub fn set_mode(&self, mode: MotionMode) {
        self.lock().motion.mode = mode;
    }

    pub fn set_speed(&self, speed: f64) {
        self.lock().motion.speed = speed;
    }

    pub fn set_tick_hz(&self, hz: f64) {
        self.lock().motion.tick_hz = hz;
    }

    /// Operator-side world change (e.g. a part placed by hand).
    pub fn place_object(&self, name: &str, pose: Pose, graspable: bool) {
        self.lock().model.objects.insert(name.to_string(), WorldObject { pose, graspable });
    }

    pub fn remove_object(&self, name: &str) -> bool {
        let mut inner = self.lock();
        if inner.model.held_object.as_deref() == Some(name) {
            inner.model.held_object = None;
        }
        inner.model.objects.shift_remove(name).is_some()
    }

    /// Flag checked by the interpreter between statements.
    pub fn abort_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.abort)
    }

    pub fn begin_execution(&self) {
        self.abort.store(false, Ordering::SeqCst);
        self.executing.store(true, Ordering::SeqCst);
    }

    pub fn end_execution(&self) {
        self.executing.store(false, Ordering::SeqCst);
    }

    pub fn is_aborted(&self) -> bool {
        self.abort.load(Ordering::SeqCst)
    }

    fn move_to(&self, pose: Pose) {
        self.lock().model.set_ee(pose);
        self.emit(RobotEvent::Pose(pose));
    }

    fn traverse_timed(&self, start: Pose, target: Pose, speed: f64, tick_hz: f64) -> Result<(), RobotError> {
        let distance = start.position.distance(target.position);
        let duration = if speed > 0.0 { distance / speed } else { 0.0 };
        let steps = ((duration * tick_hz).ceil() as u64).max(1);
        let tick = Duration::from_secs_f64(1.0 / tick_hz);
        for k in 1..=steps {
            if self.is_aborted() {
                return Err(RobotError::Aborted);
            }
            std::thread::sleep(tick);
            if self.is_aborted() {
                return Err(RobotError::Aborted);
            }
            let pose = if k == steps { target } else { start.lerp(&target, k as f64 / steps as f64) };
            self.move_to(pose);
        }
        Ok(())
    }
}

impl RobotApi for SimWorld {
    fn get_pose(&self) -> Pose {
        self.lock().model.ee_pose
    }

    fn add_waypoint(&self, pose: Pose) -> Result<(), RobotError> {
        if !pose.orientation.is_unit() {
            return Err(RobotError::NonUnitQuaternion(pose.orientation.norm()));
        }
        let mut inner = self.lock();
        if !inner.model.workspace.contains(pose.position) {
            let p = pose.position;
            return Err(RobotError::OutsideWorkspace { x: p.x, y: p.y, z: p.z });
        }
        inner.motion.waypoint_queue.push(pose);
        Ok(())
    }

    fn go(&self) -> Result<Vec<Pose>, RobotError> {
        if !self.executing.load(Ordering::SeqCst) {
            self.abort.store(false, Ordering::SeqCst);
        }
        let (queue, mode, speed, tick_hz) = {
            let mut inner = self.lock();
            if inner.motion.waypoint_queue.is_empty() {
                return Err(RobotError::EmptyQueue);
            }
            let queue = std::mem::take(&mut inner.motion.waypoint_queue);
            (queue, inner.motion.mode, inner.motion.speed, inner.motion.tick_hz)
        };
        self.moving.store(true, Ordering::SeqCst);
        let mut reached = Vec::with_capacity(queue.len());
        let mut result = Ok(());
        for target in queue {
            if self.is_aborted() {
                result = Err(RobotError::Aborted);
                break;
            }
            match mode {
                MotionMode::Instant => self.move_to(target),
                MotionMode::Timed => {
                    let start = self.get_pose();
                    if let Err(e) = self.traverse_timed(start, target, speed, tick_hz) {
                        result = Err(e);
                        break;
                    }
                }
            }
            reached.push(target);
        }
        self.moving.store(false, Ordering::SeqCst);
        result.map(|_| reached)
    }

    fn stop(&self) {
        self.lock().motion.waypoint_queue.clear();
        if self.executing.load(Ordering::SeqCst) || self.moving.load(Ordering::SeqCst) {
            self.abort.store(true, Ordering::SeqCst);
        }
    }

    fn find(&self, name: &str) -> (Pose, bool) {
        match self.lock().model.object_pose(name) {
            Some(pose) => (pose, true),
            None => (Pose::identity(), false),
        }
    }

    fn say(&self, text: &str) {
        self.emit(RobotEvent::Say(text.to_string()));
    }

    fn open_hand(&self) -> GripperEvent {
        let event = {
            let mut inner = self.lock();
            inner.model.gripper = Gripper::Open;
            let released = inner.model.held_object.take();
            inner.model.held_offset = Vec3::default();
            GripperEvent { action: GripperAction::Open, object: released }
        };
        self.emit(RobotEvent::Gripper(event.clone()));
        event
    }

    fn close_hand(&self) -> GripperEvent {
        let event = {
            let mut inner = self.lock();
            let model = &mut inner.model;
            if model.gripper == Gripper::Open {
                model.gripper = Gripper::Closed;
                if let Some(name) = model.nearest_graspable() {
                    model.held_offset = model.objects[&name].pose.position.sub(model.ee_pose.position);
                    model.held_object = Some(name);
                }
            }
            GripperEvent { action: GripperAction::Close, object: model.held_object.clone() }
        };
        self.emit(RobotEvent::Gripper(event.clone()));
        event
    }
}
