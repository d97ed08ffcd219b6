//! Service configuration: one TOML file with `[router]`, `[retrieval]`,
//! `[deep]`, `[green]`, `[profiles.*]` and `[backends.*]` sections.
//! Secrets (API keys, the optional bearer token) are named by environment
//! variable, never stored in the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, HttpBackend, HttpBackendConfig, MockBackend, MockScript};
use crate::deep::DeepConfig;
use crate::energy::HardwareProfile;
use crate::error::{Error, Result};
use crate::green::GreenConfig;
use crate::router::RouterConfig;
use crate::store::RetrievalConfig;
use crate::sweep::SweepCosts;

/// How one named backend is reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// OpenAI-compatible HTTP backend.
    Http(HttpBackendConfig),
    /// Scripted mock backend, loaded from a script file by key.
    Mock { script_file: PathBuf, key: String },
}

/// Full gateway configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen: String,
    pub ledger_path: PathBuf,
    /// Corpus snapshot to load at startup and refresh after ingestion.
    pub store_snapshot_path: Option<PathBuf>,
    /// Fixed token-equivalent charged per query for the router forward pass.
    pub router_overhead_tokens: u64,
    /// Whether dry-run routing (`/v1/route`) also meters router overhead.
    pub meter_dry_run_routing: bool,
    /// Append deep traces that were not returned inline to an audit log.
    pub audit_traces: bool,
    /// Audit log location; defaults to `<ledger_path>.traces.jsonl`.
    pub trace_audit_path: Option<PathBuf>,
    /// Environment variable holding the static bearer token, when auth is on.
    pub auth_token_env: Option<String>,
    pub router: RouterConfig,
    pub retrieval: RetrievalConfig,
    pub deep: DeepConfig,
    pub green: GreenConfig,
    pub sweep_costs: SweepCosts,
    pub profiles: BTreeMap<String, HardwareProfile>,
    pub backends: BTreeMap<String, BackendSpec>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let mut profiles = BTreeMap::new();
        profiles.insert("green".to_string(), HardwareProfile::new("green-quantized", 1.2, 300.0, 200.0, 400.0));
        profiles.insert("deep".to_string(), HardwareProfile::new("deep-full", 1.2, 400.0, 60.0, 400.0));
        profiles.insert("router".to_string(), HardwareProfile::new("router-encoder", 1.2, 150.0, 4000.0, 400.0));
        let mut backends = BTreeMap::new();
        backends.insert(
            "green".to_string(),
            BackendSpec::Http(HttpBackendConfig {
                base_url: "http://127.0.0.1:8001".into(),
                model: "small-quantized".into(),
                api_key_env: None,
                timeout_ms: 30_000,
                max_in_flight: 16,
                retries: 2,
                retry_backoff_ms: 100,
            }),
        );
        backends.insert(
            "deep".to_string(),
            BackendSpec::Http(HttpBackendConfig {
                base_url: "http://127.0.0.1:8002".into(),
                model: "large-reasoner".into(),
                api_key_env: None,
                timeout_ms: 120_000,
                max_in_flight: 8,
                retries: 2,
                retry_backoff_ms: 100,
            }),
        );
        ServiceConfig {
            listen: "127.0.0.1:8080".into(),
            ledger_path: PathBuf::from("ledger.jsonl"),
            store_snapshot_path: None,
            router_overhead_tokens: 128,
            meter_dry_run_routing: false,
            audit_traces: true,
            trace_audit_path: None,
            auth_token_env: None,
            router: RouterConfig::default(),
            retrieval: RetrievalConfig::default(),
            deep: DeepConfig::default(),
            green: GreenConfig::default(),
            sweep_costs: SweepCosts::default(),
            profiles,
            backends,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml_str(body: &str) -> Result<ServiceConfig> {
        let cfg: ServiceConfig =
            toml::from_str(body).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<ServiceConfig> {
        let body = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.as_ref().display()))
        })?;
        Self::from_toml_str(&body)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.router.validate()?;
        self.retrieval.validate()?;
        self.deep.validate()?;
        for name in ["green", "deep", "router"] {
            let profile = self
                .profiles
                .get(name)
                .ok_or_else(|| Error::Config(format!("missing [profiles.{name}] section")))?;
            profile.validate()?;
        }
        for name in ["green", "deep"] {
            if !self.backends.contains_key(name) {
                return Err(Error::Config(format!("missing [backends.{name}] section")));
            }
        }
        Ok(())
    }

    pub fn profile(&self, name: &str) -> &HardwareProfile {
        self.profiles.get(name).expect("validated at construction")
    }
}

/// Instantiates one configured backend.
pub fn build_backend(id: &str, spec: &BackendSpec) -> Result<Arc<dyn Backend>> {
    match spec {
        BackendSpec::Http(cfg) => Ok(Arc::new(HttpBackend::new(id, cfg.clone()))),
        BackendSpec::Mock { script_file, key } => {
            let script = MockScript::from_file(script_file, key)?;
            Ok(Arc::new(MockBackend::new(id, script)))
        }
    }
}
