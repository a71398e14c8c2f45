//! Run configuration for `track`: a JSON file whose fields command-line
//! flags override.

use std::path::{Path, PathBuf};

use anyhow::Context;
use opera_follow::control::{ControlParams, GateConfig};
use opera_follow::detectors::DebounceParams;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Classify, CmdResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelPaths {
    pub applause: Option<PathBuf>,
    pub music: Option<PathBuf>,
    pub speech: Option<PathBuf>,
}

impl ModelPaths {
    pub fn all(&self) -> Option<[&Path; 3]> {
        Some([self.applause.as_deref()?, self.music.as_deref()?, self.speech.as_deref()?])
    }

    pub fn any(&self) -> bool {
        self.applause.is_some() || self.music.is_some() || self.speech.is_some()
    }

    /// `applause.model`, `music.model` and `speech.model` in `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        let p = |k: &str| Some(dir.join(format!("{k}.model")));
        Self { applause: p("applause"), music: p("music"), speech: p("speech") }
    }

    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.applause, &mut self.music, &mut self.speech].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Total width of the alignment search window in seconds.
    pub window_s: f64,
    pub gates: GateConfig,
    pub debounce: DebounceParams,
    pub transition_window_s: f64,
    pub voice_timeout_s: f64,
    pub models: ModelPaths,
    /// Feed audio at wall-clock speed instead of as fast as possible.
    pub realtime: bool,
    /// Keep every n-th trace row.
    pub trace_every: usize,
    /// Bound of each hand-off queue between pipeline stages.
    pub queue_len: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let c = ControlParams::default();
        Self {
            window_s: 40.0,
            gates: GateConfig::ALL,
            debounce: c.debounce,
            transition_window_s: c.transition_window_s,
            voice_timeout_s: c.voice_timeout_s,
            models: ModelPaths::default(),
            realtime: false,
            trace_every: 1,
            queue_len: 64,
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative model paths are taken from the file's
    /// directory.
    pub fn load(path: &Path) -> CmdResult<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display())).data_err()?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display())).usage_err()?;
        cfg.models.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn validate(&self) -> CmdResult<()> {
        if !(self.window_s.is_finite() && self.window_s > 0.0) {
            return usage(format!("window_s must be positive, got {}", self.window_s));
        }
        if !(self.transition_window_s >= 0.0 && self.voice_timeout_s > 0.0) {
            return usage("transition_window_s must be >= 0 and voice_timeout_s > 0");
        }
        let d = &self.debounce;
        if d.hop_ms != 20 || !(0.0..=1.0).contains(&d.threshold) {
            return usage("debounce hop_ms must be 20 and threshold within 0..1");
        }
        if self.trace_every == 0 || self.queue_len == 0 {
            return usage("trace_every and queue_len must be at least 1");
        }
        Ok(())
    }

    pub fn control_params(&self) -> ControlParams {
        ControlParams {
            window_radius: ControlParams::radius_for_window(self.window_s),
            debounce: self.debounce,
            transition_window_s: self.transition_window_s,
            voice_timeout_s: self.voice_timeout_s,
            ..ControlParams::default()
        }
    }
}
