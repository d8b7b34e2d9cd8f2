//! Run configuration files: one flat JSON object holding the
//! hyperparameters plus the paths and backbone settings of a run.

use std::path::{Path, PathBuf};

use medcoop::prompt_gen::LlmEndpointConfig;
use medcoop::{Error, Result, RunConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Everything in a config file that is not a hyperparameter. Paths are
/// relative to the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunFiles {
    pub dataset: String,
    pub catalog: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    /// Encoded prompt bank, class-major `C*N x D`.
    pub bank_cache: Option<PathBuf>,
    pub image_cache: Option<PathBuf>,
    pub image_index: Option<PathBuf>,
    /// Raw feature rows for the synthetic vision encoder.
    pub image_features: Option<PathBuf>,
    pub image_features_index: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Support-set seeds; defaults to `[seed]`.
    pub seeds: Option<Vec<u64>>,
    /// Evaluate the mean prompt ensemble instead of a context.
    pub zero_shot_ensemble: bool,
    pub text_seed: u64,
    pub token_width: usize,
    pub embedding_dim: usize,
    pub vision_seed: u64,
    pub vision_bias: bool,
    pub llm_base_url: Option<String>,
    pub llm_api_key_env: Option<String>,
    pub llm_model: Option<String>,
    pub llm_timeout_secs: Option<u64>,
    pub llm_max_retries: Option<usize>,
    pub llm_max_in_flight: Option<usize>,
    pub llm_temperature: Option<f64>,
    /// Existing bank used instead of calling the endpoint.
    pub offline_bank: Option<PathBuf>,
}

impl Default for RunFiles {
    fn default() -> Self {
        Self {
            dataset: "dataset".to_string(),
            catalog: None,
            manifest: None,
            bank: None,
            bank_cache: None,
            image_cache: None,
            image_index: None,
            image_features: None,
            image_features_index: None,
            output_dir: PathBuf::from("out"),
            seeds: None,
            zero_shot_ensemble: false,
            text_seed: 0,
            token_width: 64,
            embedding_dim: 32,
            vision_seed: 0,
            vision_bias: true,
            llm_base_url: None,
            llm_api_key_env: None,
            llm_model: None,
            llm_timeout_secs: None,
            llm_max_retries: None,
            llm_max_in_flight: None,
            llm_temperature: None,
            offline_bank: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub run: RunConfig,
    pub files: RunFiles,
    /// Directory relative paths resolve against.
    pub base_dir: PathBuf,
    /// SHA-256 of the canonical resolved configuration.
    pub digest: String,
}

fn field_error(key: &str, e: serde_json::Error) -> Error {
    Error::Config(format!("key `{key}`: {e}"))
}

/// Parses a `key=value` override. The value is read as JSON when it parses,
/// otherwise as a bare string.
pub fn parse_override(spec: &str) -> Result<(String, Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    if !RunConfig::KEYS.contains(&key) {
        return Err(Error::UnknownKey(key.to_string()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn file_keys() -> Vec<String> {
    match serde_json::to_value(RunFiles::default()).expect("defaults serialize") {
        Value::Object(m) => m.keys().cloned().collect(),
        _ => unreachable!(),
    }
}

/// Splits a config object into hyperparameters and file settings, applies
/// overrides, and fills defaults. Unknown keys and type errors name the key.
pub fn parse_config_value(value: Value, overrides: &[String], base_dir: &Path) -> Result<LoadedConfig> {
    let Value::Object(object) = value else {
        return Err(Error::Config("config must be a JSON object".into()));
    };
    let files_keys = file_keys();
    let mut run_map = Map::new();
    let mut files_map = Map::new();
    for (k, v) in object {
        if RunConfig::KEYS.contains(&k.as_str()) {
            run_map.insert(k, v);
        } else if files_keys.contains(&k) {
            files_map.insert(k, v);
        } else {
            return Err(Error::UnknownKey(k));
        }
    }
    for o in overrides {
        let (k, v) = parse_override(o)?;
        run_map.insert(k, v);
    }
    // one key at a time so a type error can name its key
    for (k, v) in &run_map {
        let single: Map<String, Value> = [(k.clone(), v.clone())].into_iter().collect();
        serde_json::from_value::<RunConfig>(Value::Object(single)).map_err(|e| field_error(k, e))?;
    }
    for (k, v) in &files_map {
        let single: Map<String, Value> = [(k.clone(), v.clone())].into_iter().collect();
        serde_json::from_value::<RunFiles>(Value::Object(single)).map_err(|e| field_error(k, e))?;
    }
    let run: RunConfig = serde_json::from_value(Value::Object(run_map)).map_err(|e| Error::Config(e.to_string()))?;
    let files: RunFiles = serde_json::from_value(Value::Object(files_map)).map_err(|e| Error::Config(e.to_string()))?;
    run.validate()?;
    if files.token_width == 0 || files.embedding_dim == 0 {
        return Err(Error::Config(
            "`token_width` and `embedding_dim` must be positive".into(),
        ));
    }
    let digest = config_digest(&run, &files);
    Ok(LoadedConfig {
        run,
        files,
        base_dir: base_dir.to_path_buf(),
        digest,
    })
}

pub fn parse_config(path: &Path, overrides: &[String]) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_value(value, overrides, &base)
}

/// Digest of the fully resolved configuration; independent of key order,
/// formatting, and where the file lives.
pub fn config_digest(run: &RunConfig, files: &RunFiles) -> String {
    let mut canonical = Map::new();
    canonical.insert("run".into(), serde_json::to_value(run).expect("config serializes"));
    canonical.insert("files".into(), serde_json::to_value(files).expect("config serializes"));
    canonical.insert("epochs_resolved".into(), run.epochs().into());
    let text = serde_json::to_string(&Value::Object(canonical)).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Resolved path of a required file setting.
    pub fn path(&self, key: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        value
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Config(format!("`{key}` must be set for this command")))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.files.output_dir)
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.files.seeds.clone().unwrap_or_else(|| vec![self.run.seed])
    }

    pub fn short_digest(&self) -> &str {
        &self.digest[..16]
    }

    pub fn llm(&self) -> LlmEndpointConfig {
        let d = LlmEndpointConfig::default();
        let f = &self.files;
        LlmEndpointConfig {
            base_url: f.llm_base_url.clone().unwrap_or(d.base_url),
            api_key_env_var: f.llm_api_key_env.clone().unwrap_or(d.api_key_env_var),
            model: f.llm_model.clone().unwrap_or(d.model),
            timeout_secs: f.llm_timeout_secs.unwrap_or(d.timeout_secs),
            max_retries: f.llm_max_retries.unwrap_or(d.max_retries),
            max_in_flight: f.llm_max_in_flight.unwrap_or(d.max_in_flight),
            temperature: f.llm_temperature.or(d.temperature),
        }
    }
}
