use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{parse_policy_file, sanitize_name, Policy, PolicyError};
use crate::script::ast::FunctionDef;
use crate::script::{parse_program, Bindings};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub name: String,
    /// As written in the registry file; relative paths are resolved against
    /// the registry's directory.
    pub file: PathBuf,
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub learned: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegistryFile {
    policies: Vec<RegistryEntry>,
}

/// A registry entry that could not be loaded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EntryError {
    pub name: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct PolicyRegistry {
    path: Option<PathBuf>,
    base_dir: PathBuf,
    entries: Vec<RegistryEntry>,
    loaded: HashMap<String, Policy>,
    errors: Vec<EntryError>,
}

/// Reads a registry file and every enabled policy it lists. A broken policy
/// file is recorded in [`PolicyRegistry::errors`] and does not stop the rest
/// from loading.
pub fn load_registry(path: impl AsRef<Path>) -> Result<PolicyRegistry, PolicyError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| PolicyError::Io { path: path.to_path_buf(), source })?;
    let file: RegistryFile = serde_json::from_str(&text)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut registry = PolicyRegistry { path: Some(path.to_path_buf()), base_dir, ..Default::default() };
    let mut names = HashSet::new();
    for entry in file.policies {
        if !names.insert(entry.name.clone()) {
            registry.errors.push(EntryError { name: entry.name.clone(), message: "duplicate registry entry".into() });
            continue;
        }
        registry.entries.push(entry.clone());
        if entry.enabled {
            if let Err(e) = registry.load_entry(&entry.name) {
                registry.errors.push(EntryError { name: entry.name.clone(), message: e.to_string() });
            }
        }
    }
    Ok(registry)
}

impl PolicyRegistry {
    /// An empty registry that will be saved to `path`.
    pub fn empty(path: Option<PathBuf>) -> Self {
        let base_dir = path.as_ref().and_then(|p| p.parent()).map(Path::to_path_buf).unwrap_or_default();
        Self { path, base_dir, ..Default::default() }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&RegistryEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn errors(&self) -> &[EntryError] {
        &self.errors
    }

    pub fn get(&self, name: &str) -> Option<&Policy> {
        self.loaded.get(name)
    }

    pub fn resolve(&self, file: &Path) -> PathBuf {
        if file.is_absolute() {
            file.to_path_buf()
        } else {
            self.base_dir.join(file)
        }
    }

    fn load_entry(&mut self, name: &str) -> Result<(), PolicyError> {
        let entry = self.entry(name).ok_or_else(|| PolicyError::Unknown(name.to_string()))?.clone();
        let path = self.resolve(&entry.file);
        let text = std::fs::read_to_string(&path).map_err(|source| PolicyError::Io { path: path.clone(), source })?;
        let mut policy = parse_policy_file(&text)?;
        policy.name = entry.name.clone();
        policy.learned = entry.learned;
        policy.source_path = Some(path);
        self.loaded.insert(entry.name, policy);
        Ok(())
    }

    /// Enabled, successfully loaded policies in registration order.
    pub fn enabled(&self) -> impl Iterator<Item = &Policy> {
        self.entries.iter().filter(|e| e.enabled).filter_map(|e| self.loaded.get(&e.name))
    }

    /// The prompt-visible part of the bank: deduplicated import lines, then
    /// each enabled policy's hint block.
    pub fn prompt_extension(&self) -> String {
        let mut imports: Vec<&str> = Vec::new();
        for p in self.enabled() {
            for m in &p.imports {
                if !imports.contains(&m.as_str()) {
                    imports.push(m);
                }
            }
        }
        let mut sections = Vec::new();
        if !imports.is_empty() {
            sections.push(imports.iter().map(|m| format!("import {m}")).collect::<Vec<_>>().join("\n"));
        }
        sections.extend(self.enabled().map(Policy::hint_block));
        sections.join("\n\n")
    }

    /// Every callable name the enabled policies provide.
    pub fn known_names(&self) -> HashSet<String> {
        self.enabled().flat_map(Policy::function_names).collect()
    }

    /// Function definitions for the interpreter, keyed by name.
    pub fn execution_bindings(&self) -> Result<Bindings, PolicyError> {
        let mut owner: HashMap<String, String> = HashMap::new();
        let mut bindings = Bindings::new();
        for p in self.enabled() {
            let alias = parse_program(&p.alias_source()).map_err(PolicyError::Body)?;
            let defs: Vec<&FunctionDef> = p.body().functions.values().chain(alias.functions.values()).collect();
            for def in defs {
                if let Some(first) = owner.get(&def.name) {
                    return Err(PolicyError::Conflict {
                        function: def.name.clone(),
                        first: first.clone(),
                        second: p.name.clone(),
                    });
                }
                owner.insert(def.name.clone(), p.name.clone());
                bindings.insert(def.name.clone(), Arc::new(def.clone()));
            }
        }
        Ok(bindings)
    }

    /// Checks that `policy` could be enabled next to the other enabled
    /// policies without a function-name clash.
    fn check_conflicts(&self, policy: &Policy) -> Result<(), PolicyError> {
        let names: HashSet<String> = policy.function_names().into_iter().collect();
        for other in self.enabled().filter(|o| o.name != policy.name) {
            if let Some(f) = other.function_names().into_iter().find(|f| names.contains(f)) {
                return Err(PolicyError::Conflict { function: f, first: other.name.clone(), second: policy.name.clone() });
            }
        }
        Ok(())
    }

    /// Writes `policy` to `file` and registers it enabled. Fails if the name
    /// is taken or the policy clashes with an enabled one.
    pub fn add(&mut self, mut policy: Policy, file: PathBuf) -> Result<(), PolicyError> {
        sanitize_name(&policy.name)?;
        if self.entry(&policy.name).is_some() {
            return Err(PolicyError::NameTaken(policy.name));
        }
        self.check_conflicts(&policy)?;
        let path = self.resolve(&file);
        write_policy(&path, &policy)?;
        policy.source_path = Some(path);
        self.entries.push(RegistryEntry { name: policy.name.clone(), file, enabled: true, learned: policy.learned });
        self.loaded.insert(policy.name.clone(), policy);
        self.save()
    }

    /// Replaces an existing policy's text, or adds a new hand-written one at
    /// `default_file`.
    pub fn put(&mut self, name: &str, text: &str, default_file: PathBuf) -> Result<(), PolicyError> {
        let mut policy = parse_policy_file(text)?;
        policy.name = name.to_string();
        let Some(entry) = self.entry(name).cloned() else {
            return self.add(policy, default_file);
        };
        policy.learned = entry.learned;
        if entry.enabled {
            self.check_conflicts(&policy)?;
        }
        let path = self.resolve(&entry.file);
        write_policy(&path, &policy)?;
        policy.source_path = Some(path);
        self.loaded.insert(name.to_string(), policy);
        self.errors.retain(|e| e.name != name);
        self.save()
    }

    /// Drops the registry entry. The policy file itself is left in place.
    pub fn remove(&mut self, name: &str) -> Result<Policy, PolicyError> {
        let idx = self.entries.iter().position(|e| e.name == name).ok_or_else(|| PolicyError::Unknown(name.into()))?;
        self.entries.remove(idx);
        self.errors.retain(|e| e.name != name);
        let removed = self.loaded.remove(name);
        self.save()?;
        removed.ok_or_else(|| PolicyError::Unknown(name.into()))
    }

    pub fn set_enabled(&mut self, name: &str, enabled: bool) -> Result<(), PolicyError> {
        let idx = self.entries.iter().position(|e| e.name == name).ok_or_else(|| PolicyError::Unknown(name.into()))?;
        if enabled && !self.entries[idx].enabled {
            if !self.loaded.contains_key(name) {
                self.load_entry(name)?;
            }
            let policy = self.loaded[name].clone();
            self.check_conflicts(&policy)?;
        }
        self.entries[idx].enabled = enabled;
        self.save()
    }

    /// Writes the registry file, if this registry has one.
    pub fn save(&self) -> Result<(), PolicyError> {
        let Some(path) = &self.path else { return Ok(()) };
        let file = RegistryFile { policies: self.entries.clone() };
        let text = serde_json::to_string_pretty(&file)? + "\n";
        std::fs::write(path, text).map_err(|source| PolicyError::Io { path: path.clone(), source })
    }

    /// Loaded policies keyed by name, in registration order.
    pub fn policies(&self) -> IndexMap<&str, &Policy> {
        self.entries.iter().filter_map(|e| self.loaded.get(&e.name).map(|p| (e.name.as_str(), p))).collect()
    }
}

fn write_policy(path: &Path, policy: &Policy) -> Result<(), PolicyError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| PolicyError::Io { path: dir.to_path_buf(), source })?;
    }
    std::fs::write(path, policy.serialize()).map_err(|source| PolicyError::Io { path: path.to_path_buf(), source })
}
