//! TOML configuration file: run knobs, model endpoints, language profiles.
//!
//! ```toml
//! language = "python"
//!
//! [run]
//! max_iterations = 30
//! mode = "full"
//!
//! [roles.generator]
//! base_url = "http://localhost:8000/v1"
//! model = "gpt-3.5-turbo"
//! api_key_env = "OPENAI_API_KEY"
//!
//! [embedding]
//! base_url = "http://localhost:8001/v1"
//! model = "instructor-xl"
//!
//! [[profiles]]
//! name = "python"
//! file_extension = "py"
//! run_cmd = ["python3", "{file}"]
//! ```
//!
//! Roles without their own section reuse the generator's settings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::Profiles;
use crate::executor::LanguageProfile;
use crate::llm::{Gateway, HttpChatBackend, ModelRole, PromptSet, RoleConfig, TemplateError};
use crate::pipeline::{Engine, RunConfig};
use crate::retrieval::{DenseRetriever, HttpEmbeddingClient};
use crate::tokens::SharedCounter;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("no [roles.generator] section")]
    NoGenerator,
    #[error("environment variable {0} is not set")]
    MissingKey(String),
    #[error("duplicate profile {0}")]
    DuplicateProfile(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub instruction: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileConfig {
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub roles: BTreeMap<ModelRole, RoleConfig>,
    #[serde(default)]
    pub embedding: Option<EmbeddingConfig>,
    #[serde(default)]
    pub profiles: Vec<LanguageProfile>,
    /// Directory overriding the built-in prompt templates.
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    /// Language named in snippet-seeding prompts.
    #[serde(default)]
    pub language: Option<String>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            run: RunConfig::default(),
            roles: BTreeMap::new(),
            embedding: None,
            profiles: Vec::new(),
            templates_dir: None,
            language: None,
            workers: default_workers(),
        }
    }
}

fn api_key(var: &Option<String>) -> Result<Option<String>, ConfigError> {
    match var {
        None => Ok(None),
        Some(name) => std::env::var(name)
            .map(Some)
            .map_err(|_| ConfigError::MissingKey(name.clone())),
    }
}

/// `python` (python3) and `sh` profiles.
pub fn builtin_profiles() -> Profiles {
    let python = LanguageProfile {
        name: "python".into(),
        file_extension: "py".into(),
        compile_cmd: None,
        run_cmd: vec!["python3".into(), "{file}".into()],
        timeout_s: 10.0,
        error_line_pattern: r"line (\d+)".into(),
    };
    let sh = LanguageProfile {
        name: "sh".into(),
        file_extension: "sh".into(),
        compile_cmd: None,
        run_cmd: vec!["sh".into(), "{file}".into()],
        timeout_s: 10.0,
        error_line_pattern: r"main\.sh: (?:line )?(\d+):".into(),
    };
    [python, sh].into_iter().map(|p| (p.name.clone(), p)).collect()
}

impl FileConfig {
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let cfg: FileConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        cfg.profiles()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Relative template directories resolve against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(dir) = &self.templates_dir {
            if dir.is_relative() {
                self.templates_dir = Some(base.join(dir));
            }
        }
    }

    /// Built-in profiles overlaid with the configured ones.
    pub fn profiles(&self) -> Result<Profiles, ConfigError> {
        let mut out = builtin_profiles();
        let mut seen = std::collections::HashSet::new();
        for p in &self.profiles {
            if !seen.insert(p.name.as_str()) {
                return Err(ConfigError::DuplicateProfile(p.name.clone()));
            }
            out.insert(p.name.clone(), p.clone());
        }
        Ok(out)
    }

    /// Settings for every role, with gaps filled from the generator.
    pub fn role_configs(&self) -> Result<BTreeMap<ModelRole, RoleConfig>, ConfigError> {
        let generator = self.roles.get(&ModelRole::Generator).ok_or(ConfigError::NoGenerator)?;
        Ok(ModelRole::ALL
            .iter()
            .map(|r| (*r, self.roles.get(r).unwrap_or(generator).clone()))
            .collect())
    }

    pub fn prompts(&self) -> Result<PromptSet, ConfigError> {
        Ok(match &self.templates_dir {
            Some(dir) => PromptSet::from_dir(dir)?,
            None => PromptSet::builtin(),
        })
    }

    /// Gateway talking to the configured HTTP endpoints. API keys are read
    /// from the environment here.
    pub fn http_gateway(&self, counter: SharedCounter) -> Result<Gateway, ConfigError> {
        let mut gateway = Gateway::new(counter);
        for (role, cfg) in self.role_configs()? {
            let backend = HttpChatBackend::new(&cfg.base_url, api_key(&cfg.api_key_env)?);
            gateway = gateway.with_role(role, cfg, Arc::new(backend));
        }
        Ok(gateway)
    }

    pub fn dense_retriever(&self) -> Result<Option<DenseRetriever>, ConfigError> {
        let Some(e) = &self.embedding else {
            return Ok(None);
        };
        let client = HttpEmbeddingClient::new(&e.base_url, &e.model, api_key(&e.api_key_env)?);
        Ok(Some(DenseRetriever::new(Arc::new(client), e.instruction.clone())))
    }

    pub fn engine(&self, counter: SharedCounter) -> Result<Engine, ConfigError> {
        let mut engine = Engine::new(Arc::new(self.http_gateway(counter)?)).with_prompts(self.prompts()?);
        if let Some(dense) = self.dense_retriever()? {
            engine = engine.with_dense(Arc::new(dense));
        }
        Ok(engine)
    }
}
