#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use lmpvc_core::codegen::{MockClient, MockFixture};
use lmpvc_core::policy::load_registry;
use lmpvc_core::script::{ExecOptions, ExecutionLimits};
use lmpvc_core::session::{Session, SessionParts};
use lmpvc_core::world::{load_world, SimWorld};
use serde_json::Value;
use tempfile::TempDir;

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixture(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

/// A writable copy of the bundled policy bank without the `exclude`d
/// policies.
pub struct Bank {
    pub dir: TempDir,
    pub registry: PathBuf,
}

pub fn policy_bank(exclude: &[&str]) -> Bank {
    let dir = tempfile::tempdir().unwrap();
    let src = fixture("policies");
    let mut reg: Value = serde_json::from_str(&read_fixture("policies/registry.json")).unwrap();
    let entries = reg["policies"].as_array_mut().unwrap();
    entries.retain(|e| !exclude.contains(&e["name"].as_str().unwrap()));
    for e in entries.iter() {
        let file = e["file"].as_str().unwrap();
        std::fs::copy(src.join(file), dir.path().join(file)).unwrap();
    }
    let registry = dir.path().join("registry.json");
    std::fs::write(&registry, serde_json::to_string_pretty(&reg).unwrap()).unwrap();
    Bank { dir, registry }
}

pub fn mock_fixture(files: &[&str]) -> MockFixture {
    let mut f = MockFixture::default();
    for file in files {
        f.merge(MockFixture::load(fixture(file)).unwrap());
    }
    f
}

pub fn fast_exec() -> ExecOptions {
    ExecOptions { limits: ExecutionLimits::default(), time_dilation: 0.0 }
}

/// Session on the pump world with a mock client. The client is returned
/// too so tests can inspect the prompts it received.
pub fn session_with(bank: &Bank, fixture: MockFixture, exec: ExecOptions) -> (Session, Arc<MockClient>) {
    let world = Arc::new(SimWorld::new(load_world(fixture_path_world()).unwrap()));
    let registry = load_registry(&bank.registry).unwrap();
    let client = Arc::new(MockClient::new(fixture));
    let mut parts = SessionParts::new(world, registry, client.clone());
    parts.exec = exec;
    (Session::new(parts).unwrap(), client)
}

pub fn fixture_path_world() -> PathBuf {
    fixture("world/pump.json")
}

pub fn mock_session(bank: &Bank, files: &[&str]) -> (Session, Arc<MockClient>) {
    session_with(bank, mock_fixture(files), fast_exec())
}
