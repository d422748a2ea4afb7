//! Fixture store plus the replay and recording backends built on it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, CallCounter, CompletionRequest, CompletionResponse};

/// One stored exchange, serialized as `<content-hash>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub request: CompletionRequest,
    pub response: CompletionResponse,
}

/// Directory of recorded exchanges keyed by request content hash.
///
/// Reads are concurrent; writes take an exclusive lock and go through a
/// temporary file so a crash never leaves a half-written fixture.
#[derive(Debug)]
pub struct FixtureStore {
    dir: Option<PathBuf>,
    entries: RwLock<BTreeMap<String, Fixture>>,
    write_lock: Mutex<()>,
}

impl FixtureStore {
    /// Loads every `*.json` fixture under `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, BackendError> {
        let dir = dir.as_ref();
        let mut entries = BTreeMap::new();
        let listing = fs::read_dir(dir).map_err(|e| store_err(dir, e))?;
        for entry in listing {
            let path = entry.map_err(|e| store_err(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Some(key) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
                continue;
            };
            let bytes = fs::read(&path).map_err(|e| store_err(&path, e))?;
            let fixture: Fixture = serde_json::from_slice(&bytes)
                .map_err(|e| BackendError::Store(format!("{}: {e}", path.display())))?;
            let actual = fixture.request.hash();
            if actual != key {
                return Err(BackendError::Store(format!(
                    "{}: file name does not match request hash {actual}",
                    path.display()
                )));
            }
            entries.insert(key, fixture);
        }
        Ok(FixtureStore { dir: Some(dir.to_path_buf()), entries: RwLock::new(entries), write_lock: Mutex::new(()) })
    }

    /// Opens `dir` for recording, creating it when absent.
    pub fn create(dir: impl AsRef<Path>) -> Result<Self, BackendError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| store_err(dir, e))?;
        Self::open(dir)
    }

    /// A store that lives only in memory.
    pub fn in_memory() -> Self {
        FixtureStore { dir: None, entries: RwLock::new(BTreeMap::new()), write_lock: Mutex::new(()) }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("fixture store lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn keys(&self) -> Vec<String> {
        self.entries.read().expect("fixture store lock poisoned").keys().cloned().collect()
    }

    pub fn get(&self, key: &str) -> Option<Fixture> {
        self.entries.read().expect("fixture store lock poisoned").get(key).cloned()
    }

    /// Stores `response` for `request` and returns the fixture key.
    ///
    /// Recording over an existing key replaces it; a changed response is
    /// logged as a warning.
    pub fn record(&self, request: &CompletionRequest, response: &CompletionResponse) -> Result<String, BackendError> {
        let _guard = self.write_lock.lock().expect("fixture store lock poisoned");
        let key = request.hash();
        let fixture = Fixture { request: request.clone(), response: response.clone() };

        if let Some(previous) = self.get(&key) {
            if previous.response.text != response.text {
                log::warn!("fixture {key} re-recorded with a different response; keeping the newest");
            }
        }

        if let Some(dir) = &self.dir {
            let mut body = serde_json::to_string_pretty(&fixture)
                .map_err(|e| BackendError::Store(format!("serialize fixture {key}: {e}")))?;
            body.push('\n');
            let path = dir.join(format!("{key}.json"));
            let tmp = dir.join(format!("{key}.json.tmp"));
            fs::write(&tmp, body).map_err(|e| store_err(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| store_err(&path, e))?;
        }

        self.entries.write().expect("fixture store lock poisoned").insert(key.clone(), fixture);
        Ok(key)
    }
}

fn store_err(path: &Path, e: std::io::Error) -> BackendError {
    BackendError::Store(format!("{}: {e}", path.display()))
}

/// Answers requests from a fixture store and never touches the network.
#[derive(Debug)]
pub struct ReplayBackend {
    store: Arc<FixtureStore>,
    calls: CallCounter,
}

impl ReplayBackend {
    pub fn new(store: Arc<FixtureStore>) -> Self {
        ReplayBackend { store, calls: CallCounter::default() }
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self, BackendError> {
        Ok(Self::new(Arc::new(FixtureStore::open(dir)?)))
    }

    pub fn store(&self) -> &FixtureStore {
        &self.store
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        self.calls.bump();
        request.validate()?;
        let hash = request.hash();
        self.store
            .get(&hash)
            .map(|f| f.response)
            .ok_or(BackendError::MissingFixture { hash })
    }

    fn id(&self) -> String {
        "replay".to_string()
    }

    fn calls(&self) -> u64 {
        self.calls.get()
    }
}

/// Forwards to an inner backend and records every successful exchange.
pub struct RecordingBackend<B> {
    inner: B,
    store: Arc<FixtureStore>,
    calls: CallCounter,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B, store: Arc<FixtureStore>) -> Self {
        RecordingBackend { inner, store, calls: CallCounter::default() }
    }

    pub fn store(&self) -> &FixtureStore {
        &self.store
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        self.calls.bump();
        let response = self.inner.complete(request)?;
        self.store.record(request, &response)?;
        Ok(response)
    }

    fn id(&self) -> String {
        format!("record:{}", self.inner.id())
    }

    fn calls(&self) -> u64 {
        self.calls.get()
    }

    fn network_calls(&self) -> u64 {
        self.inner.network_calls()
    }
}
