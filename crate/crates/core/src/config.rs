//! Experiment configuration (TOML).
//!
//! Relative paths are resolved against the directory of the config file.
//! [`ExperimentConfig::resolved`] inlines the prompt fragments and mock
//! script so the copy written beside the outputs is self-contained.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{default_patterns, ChatClient, Decision, MockEndpoint, MockScript, ModelEndpoint, Responder, API_KEY_ENV};
use crate::prompt::{LengthRegime, PromptFragments, ThoughtKind};
use crate::scenario::{preset_scene, ContextGrid, ObservableContext, Scene, ScenarioId, VisualAsset};

/// File name of the provenance copy inside a results directory.
pub const CONFIG_COPY: &str = "experiment.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EndpointConfig {
    #[serde(default)]
    pub kind: EndpointKind,
    /// Environment variable holding the API key; defaults to `CARE_API_KEY`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(flatten)]
    pub settings: ModelEndpoint,
}

/// Override or definition of one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub scenario_id: ScenarioId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visuals: Option<Vec<VisualAsset>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<ObservableContext>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenConfig {
    pub scenario: ScenarioId,
    pub models: Vec<String>,
    /// Strategies run with the full reason set.
    pub strategies: Vec<ThoughtKind>,
    /// Strategies run without reasons (the role-only condition); empty
    /// skips that condition.
    pub role_only_strategies: Vec<ThoughtKind>,
    /// No default: must come from here or the command line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length: Option<LengthRegime>,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        ScreenConfig {
            scenario: ScenarioId::Baseline,
            models: vec!["gpt-4.1".into(), "gpt-4.1-mini".into(), "gpt-4.1-nano".into()],
            strategies: vec![ThoughtKind::NoThought, ThoughtKind::ChainOfThought, ThoughtKind::TreeOfThought],
            role_only_strategies: vec![ThoughtKind::NoThought],
            length: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustConfig {
    /// Defaults to the endpoint model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub strategies: Vec<ThoughtKind>,
    pub scenarios: Vec<ScenarioId>,
    pub lengths: Vec<LengthRegime>,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            model: None,
            strategies: vec![ThoughtKind::ChainOfThought, ThoughtKind::TreeOfThought],
            scenarios: ScenarioId::PRESETS.to_vec(),
            lengths: vec![LengthRegime::NoLimit, LengthRegime::FewSentences],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub strategy: ThoughtKind,
    pub scenario: ScenarioId,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            model: None,
            strategy: ThoughtKind::TreeOfThought,
            scenario: ScenarioId::Oncoming,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    /// Substring patterns, or regular expressions prefixed with `re:`.
    /// An empty list disables the legality check.
    pub patterns: Vec<String>,
    /// Cells whose acknowledgment rate falls below this are flagged.
    pub threshold: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            patterns: default_patterns(),
            threshold: 1.0,
        }
    }
}

fn default_expert() -> BTreeMap<ScenarioId, Decision> {
    BTreeMap::from([(ScenarioId::Baseline, Decision::Overtake)])
}

fn default_repetitions() -> u32 {
    30
}

fn default_concurrency() -> usize {
    4
}

fn default_parse_retries() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Re-queries of a slot whose reply has no decision line.
    #[serde(default = "default_parse_retries")]
    pub parse_retries: u32,
    /// Directory visual asset paths are relative to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset_root: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_file: Option<PathBuf>,
    #[serde(default)]
    pub endpoint: EndpointConfig,
    /// Expert reference decision per scenario, used for alignment counts.
    #[serde(default = "default_expert")]
    pub expert: BTreeMap<ScenarioId, Decision>,
    #[serde(default)]
    pub grid: ContextGrid,
    #[serde(default)]
    pub screen: ScreenConfig,
    #[serde(default)]
    pub robust: RobustConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub validation: ValidationConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scenes: Vec<SceneSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PromptFragments>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockScript>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Loads a config file and resolves it against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let config = Self::from_toml(&read_text(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolved(base)
    }

    /// Inlines referenced files and anchors the asset root, then validates.
    pub fn resolved(mut self, base: &Path) -> Result<Self> {
        let anchor = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        if let Some(file) = self.prompts_file.take() {
            if self.prompts.is_some() {
                return Err(Error::Config("give either prompts_file or [prompts], not both".into()));
            }
            self.prompts = Some(toml::from_str(&read_text(&anchor(&file))?)?);
        }
        if let Some(file) = self.mock_file.take() {
            if self.mock.is_some() {
                return Err(Error::Config("give either mock_file or [mock], not both".into()));
            }
            self.mock = Some(toml::from_str(&read_text(&anchor(&file))?)?);
        }
        self.asset_root = Some(match self.asset_root.take() {
            Some(root) => anchor(&root),
            None => base.to_path_buf(),
        });
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be >= 1".into()));
        }
        if self.concurrency == 0 {
            return Err(Error::Config("concurrency must be >= 1".into()));
        }
        let e = &self.endpoint.settings;
        if !(e.temperature.is_finite() && e.temperature >= 0.0) || !(e.top_p > 0.0 && e.top_p <= 1.0) {
            return Err(Error::Config("temperature must be >= 0 and top_p in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.validation.threshold) {
            return Err(Error::Config("validation threshold must lie in [0, 1]".into()));
        }
        self.grid.validate()?;
        if let Some(mock) = &self.mock {
            mock.validate()?;
        }
        for spec in &self.scenes {
            if !spec.scenario_id.is_preset() && (spec.visuals.is_none() || spec.context.is_none()) {
                return Err(Error::Config(format!(
                    "custom scene '{}' needs both visuals and context",
                    spec.scenario_id
                )));
            }
            if let Some(ctx) = &spec.context {
                ctx.validate()?;
            }
        }
        Ok(())
    }

    pub fn fragments(&self) -> PromptFragments {
        self.prompts.clone().unwrap_or_default()
    }

    /// Scene for `id`: the preset with any configured overrides, or a
    /// configured custom scene.
    pub fn scene(&self, id: &ScenarioId) -> Result<Scene> {
        let spec = self.scenes.iter().find(|s| &s.scenario_id == id);
        let mut scene = match (spec, id.is_preset()) {
            (_, true) => preset_scene(id)?,
            (Some(s), false) => Scene {
                scenario_id: id.clone(),
                visuals: Vec::new(),
                context: s.context.clone().expect("validated"),
            },
            (None, false) => {
                return Err(Error::Config(format!("scenario '{id}' is neither a preset nor configured")))
            }
        };
        if let Some(spec) = spec {
            if let Some(visuals) = &spec.visuals {
                scene.visuals = visuals.clone();
            }
            if let Some(context) = &spec.context {
                scene.context = context.clone();
            }
        }
        scene.context.validate()?;
        Ok(scene)
    }

    pub fn model_endpoint(&self) -> &ModelEndpoint {
        &self.endpoint.settings
    }

    pub fn robust_model(&self) -> String {
        self.robust.model.clone().unwrap_or_else(|| self.endpoint.settings.model_name.clone())
    }

    pub fn sweep_model(&self) -> String {
        self.sweep.model.clone().unwrap_or_else(|| self.endpoint.settings.model_name.clone())
    }

    /// Builds the responder named by `endpoint.kind`.
    pub fn responder(&self) -> Result<Box<dyn Responder>> {
        match self.endpoint.kind {
            EndpointKind::Mock => {
                let script = self.mock.clone().ok_or_else(|| {
                    Error::Config("endpoint kind is mock but no [mock] script or mock_file given".into())
                })?;
                Ok(Box::new(MockEndpoint::new(script)?))
            }
            EndpointKind::Http => {
                let var = self.endpoint.api_key_env.as_deref().unwrap_or(API_KEY_ENV);
                let key = std::env::var(var).ok();
                if key.is_none() {
                    log::warn!("{var} is not set; sending requests without authorization");
                }
                let root = self.asset_root.clone().unwrap_or_else(|| PathBuf::from("."));
                Ok(Box::new(ChatClient::new(&self.endpoint.settings, key, root)))
            }
        }
    }
}
