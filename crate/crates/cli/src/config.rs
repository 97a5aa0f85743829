use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::Value;
use xattn::pipeline::ExperimentConfig;

/// Named starting points for a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Four layers, width 128, 3000 steps.
    Desk,
    /// Two layers, width 64, 2000 steps.
    Quick,
}

impl Preset {
    fn config(self) -> ExperimentConfig {
        match self {
            Preset::Desk => ExperimentConfig::default(),
            Preset::Quick => ExperimentConfig::quick(),
        }
    }
}

/// Preset, then the JSON file merged over it, then `key=value` overrides.
pub fn resolve(preset: Preset, file: Option<&Path>, sets: &[String]) -> Result<ExperimentConfig> {
    let mut value = serde_json::to_value(preset.config())?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let overlay: Value =
            serde_json::from_str(&text).with_context(|| format!("config {} is not valid JSON", path.display()))?;
        if !overlay.is_object() {
            bail!("config {} must be a JSON object", path.display());
        }
        merge(&mut value, overlay);
    }
    for s in sets {
        let (key, raw) = s.split_once('=').with_context(|| format!("override `{s}` is not key=value"))?;
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut value, key, parsed)?;
    }
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("invalid config at `{path}`: {}", e.into_inner())
    })?;
    cfg.validate().context("invalid config")?;
    Ok(cfg)
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn set_path(root: &mut Value, dotted: &str, v: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .with_context(|| format!("`{}` is not an object", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), v);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_in_order() {
        let cfg = resolve(Preset::Quick, None, &["train.lr=0.01".into(), "mix=instance".into()]).unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.mix, xattn::worldgen::MixMode::Instance);
        assert_eq!(cfg.model.d_model, 64);
    }

    #[test]
    fn errors_name_the_key() {
        let err = resolve(Preset::Desk, None, &["train.lr=\"fast\"".into()]).unwrap_err();
        assert!(format!("{err:#}").contains("train.lr"), "{err:#}");
        let err = resolve(Preset::Desk, None, &["model.width=3".into()]).unwrap_err();
        assert!(format!("{err:#}").contains("width"), "{err:#}");
    }

    #[test]
    fn file_merges_over_preset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"model": {"n_layers": 3}}"#).unwrap();
        let cfg = resolve(Preset::Quick, Some(&p), &[]).unwrap();
        assert_eq!(cfg.model.n_layers, 3);
        assert_eq!(cfg.model.d_model, 64);
    }
}
