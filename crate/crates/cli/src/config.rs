//! Layered configuration: defaults, then a flat TOML file, then `TREEGEN_*`
//! environment variables, then command-line flags. Every layer is checked
//! against the same key table, so a typo fails loudly wherever it appears.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;
use toml::Value;
use treegen::agents::{AgentKind, Temperatures};
use treegen::orchestrator::{Budget, EngineConfig};
use treegen::{ExecLimits, SandboxConfig, TreeCaps};

pub const ENV_PREFIX: &str = "TREEGEN_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown configuration key `{key}` (from {origin})")]
    UnknownKey { key: String, origin: String },
    #[error("`{name}` is required in {mode} mode")]
    MissingRequired { name: &'static str, mode: TransportMode },
    #[error("invalid value for `{key}` (from {origin}): {reason}")]
    InvalidValue {
        key: String,
        origin: String,
        reason: String,
    },
    #[error("cannot read config file {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config file {} is not valid TOML: {reason}", path.display())]
    Parse { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportMode {
    Live,
    Record,
    Replay,
}

impl std::fmt::Display for TransportMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TransportMode::Live => "live",
            TransportMode::Record => "record",
            TransportMode::Replay => "replay",
        })
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Str,
    Int,
    Float,
    Bool,
}

struct Key {
    name: &'static str,
    kind: Kind,
    default: Option<fn() -> Value>,
}

macro_rules! key {
    ($name:literal, $kind:ident) => {
        Key {
            name: $name,
            kind: Kind::$kind,
            default: None,
        }
    };
    ($name:literal, $kind:ident, $default:expr) => {
        Key {
            name: $name,
            kind: Kind::$kind,
            default: Some(|| Value::from($default)),
        }
    };
}

const KEYS: &[Key] = &[
    key!("transport_mode", Str, "live"),
    key!("endpoint_url", Str),
    key!("api_key_env", Str, "TREEGEN_API_KEY"),
    key!("model_name", Str, "gpt-3.5-turbo"),
    key!("max_tokens", Int, 2048),
    key!("request_timeout", Float, 120.0),
    key!("max_retries", Int, 3),
    key!("transcript_path", Str),
    key!("temperature_generalist_decompose", Float, 0.7),
    key!("temperature_code_leaf", Float, 0.2),
    key!("temperature_code_compose", Float, 0.2),
    key!("temperature_critic", Float, 0.2),
    key!("temperature_tester", Float, 0.2),
    key!("decompose_retries", Int, 3),
    key!("attempts_per_node", Int, 4),
    key!("critic_rounds_per_attempt", Int, 1),
    key!("total_llm_calls_cap", Int, 200),
    key!("depth_cap", Int, 3),
    key!("branch_cap", Int, 7),
    key!("timeout", Float, 10.0),
    key!("max_output_bytes", Int, 65536),
    key!("interpreter_cmd", Str, "python3"),
    key!("keep_artifacts", Bool, false),
    key!("output_dir", Str, "treegen-out"),
    key!("jobs", Int, 1),
    key!("samples_per_task", Int, 1),
];

fn lookup(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

/// Command-line settings: `(key, raw value)` pairs, already named after
/// config keys.
pub type FlagLayer = Vec<(String, String)>;

fn invalid(key: &str, origin: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        origin: origin.to_string(),
        reason: reason.into(),
    }
}

fn parse_text(key: &Key, raw: &str, origin: &str) -> Result<Value, ConfigError> {
    let raw = raw.trim();
    match key.kind {
        Kind::Str => Ok(Value::String(raw.to_string())),
        Kind::Int => raw
            .parse::<i64>()
            .map(Value::Integer)
            .map_err(|e| invalid(key.name, origin, format!("{raw:?}: {e}"))),
        Kind::Float => raw
            .parse::<f64>()
            .map(Value::Float)
            .map_err(|e| invalid(key.name, origin, format!("{raw:?}: {e}"))),
        Kind::Bool => match raw.to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" | "on" => Ok(Value::Boolean(true)),
            "false" | "0" | "no" | "off" => Ok(Value::Boolean(false)),
            _ => Err(invalid(key.name, origin, format!("{raw:?} is not a boolean"))),
        },
    }
}

fn check_typed(key: &Key, value: Value, origin: &str) -> Result<Value, ConfigError> {
    match (key.kind, value) {
        (Kind::Str, v @ Value::String(_)) => Ok(v),
        (Kind::Int, v @ Value::Integer(_)) => Ok(v),
        (Kind::Float, v @ Value::Float(_)) => Ok(v),
        (Kind::Float, Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Kind::Bool, v @ Value::Boolean(_)) => Ok(v),
        (_, v) => Err(invalid(key.name, origin, format!("unexpected {}", v.type_str()))),
    }
}

/// Reads a flat TOML file into a layer.
pub fn file_layer(path: &Path) -> Result<toml::Table, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.parse::<toml::Table>().map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub transport_mode: TransportMode,
    pub endpoint_url: Option<String>,
    pub api_key_env: String,
    pub model_name: String,
    pub max_tokens: u32,
    pub request_timeout: Duration,
    pub max_retries: u32,
    pub transcript_path: Option<PathBuf>,
    pub temperatures: Temperatures,
    pub budget: Budget,
    pub caps: TreeCaps,
    pub limits: ExecLimits,
    pub interpreter_cmd: String,
    pub keep_artifacts: bool,
    pub output_dir: PathBuf,
    pub jobs: usize,
    pub samples_per_task: u32,
    /// Every key with its resolved value, for echoing.
    pub resolved: toml::Table,
}

/// Merges the layers (flags > env > file > defaults) and validates.
///
/// `env` holds the process environment; only `TREEGEN_`-prefixed variables
/// are read, except the variable named by `api_key_env`, which holds a
/// secret rather than a setting.
pub fn load_config(
    file: Option<&toml::Table>,
    env: &BTreeMap<String, String>,
    flags: &FlagLayer,
) -> Result<Config, ConfigError> {
    let mut merged: BTreeMap<&'static str, Value> = BTreeMap::new();
    for key in KEYS {
        if let Some(default) = key.default {
            merged.insert(key.name, default());
        }
    }
    if let Some(table) = file {
        for (name, value) in table {
            let key = lookup(name).ok_or_else(|| ConfigError::UnknownKey {
                key: name.clone(),
                origin: "config file".into(),
            })?;
            merged.insert(key.name, check_typed(key, value.clone(), "config file")?);
        }
    }

    // The secret's variable name may itself be configured; resolve it first
    // so that it is not mistaken for an unknown setting.
    let env_name = |key: &str| format!("{ENV_PREFIX}{}", key.to_ascii_uppercase());
    let api_key_env = flags
        .iter()
        .rev()
        .find(|(k, _)| k == "api_key_env")
        .map(|(_, v)| v.clone())
        .or_else(|| env.get(&env_name("api_key_env")).cloned())
        .or_else(|| merged.get("api_key_env").and_then(|v| v.as_str().map(String::from)))
        .unwrap_or_default();
    for (var, raw) in env {
        let Some(rest) = var.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        if *var == api_key_env {
            continue;
        }
        let origin = format!("environment variable {var}");
        let key = lookup(&rest.to_ascii_lowercase()).ok_or_else(|| ConfigError::UnknownKey {
            key: var.clone(),
            origin: "environment".into(),
        })?;
        merged.insert(key.name, parse_text(key, raw, &origin)?);
    }
    for (name, raw) in flags {
        let key = lookup(name).ok_or_else(|| ConfigError::UnknownKey {
            key: name.clone(),
            origin: "command line".into(),
        })?;
        merged.insert(key.name, parse_text(key, raw, "command line")?);
    }
    build(merged)
}

fn build(merged: BTreeMap<&'static str, Value>) -> Result<Config, ConfigError> {
    let s = |k: &str| merged.get(k).and_then(|v| v.as_str()).map(String::from);
    let f = |k: &str| merged.get(k).and_then(Value::as_float).unwrap_or_default();
    let b = |k: &str| merged.get(k).and_then(Value::as_bool).unwrap_or_default();
    let positive = |k: &str| -> Result<u64, ConfigError> {
        match merged.get(k).and_then(Value::as_integer) {
            Some(i) if i > 0 => Ok(i as u64),
            other => Err(invalid(
                k,
                "resolved config",
                format!("must be a positive integer, got {other:?}"),
            )),
        }
    };
    let small = |k: &str| -> Result<u32, ConfigError> {
        u32::try_from(positive(k)?).map_err(|_| invalid(k, "resolved config", "too large"))
    };

    let transport_mode = match s("transport_mode").as_deref() {
        Some("live") => TransportMode::Live,
        Some("record") => TransportMode::Record,
        Some("replay") => TransportMode::Replay,
        other => {
            return Err(invalid(
                "transport_mode",
                "resolved config",
                format!("{other:?} is not one of live, record, replay"),
            ))
        }
    };
    let endpoint_url = s("endpoint_url").filter(|u| !u.trim().is_empty());
    let transcript_path = s("transcript_path").filter(|p| !p.trim().is_empty()).map(PathBuf::from);
    if transport_mode != TransportMode::Replay && endpoint_url.is_none() {
        return Err(ConfigError::MissingRequired {
            name: "endpoint_url",
            mode: transport_mode,
        });
    }
    if transport_mode != TransportMode::Live && transcript_path.is_none() {
        return Err(ConfigError::MissingRequired {
            name: "transcript_path",
            mode: transport_mode,
        });
    }

    let mut temperatures = Temperatures::default();
    for kind in AgentKind::ALL {
        let name = format!("temperature_{}", kind.as_str());
        let t = f(&name);
        if !(t.is_finite() && t >= 0.0) {
            return Err(invalid(
                &name,
                "resolved config",
                format!("{t} is not a valid temperature"),
            ));
        }
        temperatures.set(kind, t);
    }
    let timeout = f("timeout");
    if !(timeout.is_finite() && timeout > 0.0) {
        return Err(invalid(
            "timeout",
            "resolved config",
            "must be a positive number of seconds",
        ));
    }
    let request_timeout = f("request_timeout");
    if !(request_timeout.is_finite() && request_timeout > 0.0) {
        return Err(invalid(
            "request_timeout",
            "resolved config",
            "must be a positive number of seconds",
        ));
    }
    let max_retries = match merged.get("max_retries").and_then(Value::as_integer) {
        Some(i) if (0..=u32::MAX as i64).contains(&i) => i as u32,
        other => return Err(invalid("max_retries", "resolved config", format!("{other:?}"))),
    };
    let caps = TreeCaps::new(positive("depth_cap")? as usize, positive("branch_cap")? as usize)
        .map_err(|e| invalid("depth_cap", "resolved config", e.to_string()))?;

    Ok(Config {
        transport_mode,
        endpoint_url,
        api_key_env: s("api_key_env").unwrap_or_default(),
        model_name: s("model_name").unwrap_or_default(),
        max_tokens: small("max_tokens")?,
        request_timeout: Duration::from_secs_f64(request_timeout),
        max_retries,
        transcript_path,
        temperatures,
        budget: Budget {
            decompose_retries: small("decompose_retries")?,
            attempts_per_node: small("attempts_per_node")?,
            critic_rounds_per_attempt: small("critic_rounds_per_attempt")?,
            total_llm_calls_cap: small("total_llm_calls_cap")?,
        },
        caps,
        limits: ExecLimits {
            wall_timeout: Duration::from_secs_f64(timeout),
            max_output_bytes: positive("max_output_bytes")? as usize,
        },
        interpreter_cmd: s("interpreter_cmd").unwrap_or_default(),
        keep_artifacts: b("keep_artifacts"),
        output_dir: PathBuf::from(s("output_dir").unwrap_or_default()),
        jobs: positive("jobs")? as usize,
        samples_per_task: small("samples_per_task")?,
        resolved: merged.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    })
}

impl Config {
    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            model_name: self.model_name.clone(),
            max_tokens: self.max_tokens,
            temperatures: self.temperatures,
            budget: self.budget,
            caps: self.caps,
            limits: self.limits,
            jobs: self.jobs,
            sample: 0,
        }
    }

    pub fn sandbox(&self) -> SandboxConfig {
        SandboxConfig {
            interpreter_cmd: self.interpreter_cmd.clone(),
            workspace_root: None,
            keep_artifacts: self.keep_artifacts,
        }
    }

    /// The resolved settings as TOML. No secrets are stored in the config
    /// itself (only the name of the variable holding the API key).
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.resolved).expect("flat table serializes")
    }

    /// The resolved settings without the transport keys, suitable as a
    /// file layer for replaying a recorded session.
    pub fn replayable(&self) -> toml::Table {
        let mut t = self.resolved.clone();
        for k in ["transport_mode", "transcript_path", "endpoint_url", "api_key_env"] {
            t.remove(k);
        }
        t
    }
}
