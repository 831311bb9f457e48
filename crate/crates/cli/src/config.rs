use std::path::{Path, PathBuf};

use serde::Deserialize;

/// Pipeline settings read from `--config`. Every field is optional; a value
/// present here replaces the matching command-line flag.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub mask: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub roomtype_params: Option<PathBuf>,
    pub denoiser_params: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub split_tolerance: Option<f64>,
    pub min_length: Option<f64>,
    pub wall_eps: Option<f64>,
    pub raster_size: Option<[usize; 2]>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub discrete_steps: Option<usize>,
    pub max_rooms: Option<usize>,
    #[serde(rename = "macro")]
    pub macro_average: Option<bool>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("split_tolerance", self.split_tolerance),
            ("min_length", self.min_length),
            ("wall_eps", self.wall_eps),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(format!("config: {name} must be positive, got {v}"));
                }
            }
        }
        for (name, v) in [("steps", self.steps), ("max_rooms", self.max_rooms)] {
            if v == Some(0) {
                return Err(format!("config: {name} must be positive"));
            }
        }
        if let Some([w, h]) = self.raster_size {
            if w == 0 || h == 0 {
                return Err("config: raster_size must be positive".into());
            }
        }
        Ok(())
    }
}

/// `config` value when present, else the flag value.
pub fn pick<T>(config: Option<T>, flag: T) -> T {
    config.unwrap_or(flag)
}

/// Like [`pick`] for flags that may be absent; errors when neither is set.
pub fn require<T>(config: Option<T>, flag: Option<T>, name: &str) -> Result<T, String> {
    config.or(flag).ok_or_else(|| {
        format!(
            "missing --{name} (or \"{}\" in --config)",
            name.replace('-', "_")
        )
    })
}
