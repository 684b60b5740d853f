//! Inline `key=val` configuration.

use std::collections::BTreeMap;

use groupedmixer::grouping::{GroupOrder, GroupScheme, SpatialPattern};
use groupedmixer::model::{MixerOrder, ModelConfig, RelPosMode};

use crate::Failure;

/// Keys describing the model; everything else is command specific.
const MODEL_KEYS: &[&str] = &[
    "preset",
    "depth",
    "dim",
    "heads",
    "ffn_ratio",
    "channels",
    "hyper_channels",
    "slices",
    "pattern",
    "order",
    "mixer_order",
    "relpos",
    "latent_bound",
    "hyper_bound",
];

/// Parsed pairs. Arguments may hold several pairs separated by commas.
#[derive(Debug, Default)]
pub struct Pairs(BTreeMap<String, String>);

impl Pairs {
    pub fn parse(args: &[String], extra_keys: &[&str]) -> Result<Self, Failure> {
        let mut map = BTreeMap::new();
        for piece in args.iter().flat_map(|a| a.split(',')).map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = piece
                .split_once('=')
                .ok_or_else(|| Failure::usage(format!("expected key=val, got {piece:?}")))?;
            let k = k.trim().to_string();
            if !MODEL_KEYS.contains(&k.as_str()) && !extra_keys.contains(&k.as_str()) {
                return Err(Failure::usage(format!("unknown config key {k:?}")));
            }
            if map.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Failure::usage(format!("config key {k:?} given twice")));
            }
        }
        Ok(Self(map))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>, Failure> {
        self.get(key)
            .map(|v| v.parse().map_err(|_| Failure::usage(format!("{key}={v} is not a non-negative integer"))))
            .transpose()
    }

    fn has_model_keys(&self) -> bool {
        self.0.keys().any(|k| MODEL_KEYS.contains(&k.as_str()))
    }

    /// Model configuration from the inline pairs, starting from the `preset`
    /// (`toy` unless given).
    pub fn model_config(&self) -> Result<ModelConfig, Failure> {
        let mut cfg = match self.get("preset").unwrap_or("toy") {
            "toy" => ModelConfig::toy(),
            "base" => ModelConfig::base(),
            p => return Err(Failure::usage(format!("unknown preset {p:?}"))),
        };
        let set = |dst: &mut usize, key: &str| -> Result<(), Failure> {
            if let Some(v) = self.usize(key)? {
                *dst = v;
            }
            Ok(())
        };
        set(&mut cfg.depth, "depth")?;
        set(&mut cfg.dim, "dim")?;
        set(&mut cfg.heads, "heads")?;
        set(&mut cfg.ffn_ratio, "ffn_ratio")?;
        set(&mut cfg.latent_channels, "channels")?;
        set(&mut cfg.hyper_channels, "hyper_channels")?;
        let mut slices = cfg.scheme.channel_slices();
        set(&mut slices, "slices")?;
        let pattern = match self.get("pattern") {
            Some(p) => SpatialPattern::parse(p)?,
            None => cfg.scheme.pattern(),
        };
        let order = match self.get("order") {
            Some(o) => GroupOrder::parse(o)?,
            None => cfg.scheme.order(),
        };
        cfg.scheme = GroupScheme::new(slices, pattern, order)?;
        if let Some(m) = self.get("mixer_order") {
            cfg.mixer_order = MixerOrder::parse(m)?;
        }
        if let Some(r) = self.get("relpos") {
            cfg.relpos = RelPosMode::parse(r)?;
        }
        for (dst, key) in [(&mut cfg.latent_bound, "latent_bound"), (&mut cfg.hyper_bound, "hyper_bound")] {
            if let Some(v) = self.usize(key)? {
                *dst = u32::try_from(v).map_err(|_| Failure::usage(format!("{key}={v} is too large")))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Picks the weight-file config, warning on stderr about every inline
    /// model key it overrides.
    pub fn reconcile(&self, file: &ModelConfig) -> Result<(), Failure> {
        if !self.has_model_keys() {
            return Ok(());
        }
        let inline = self.model_config()?;
        for (key, a, b) in differences(&inline, file) {
            if self.get(key).is_some() || self.get("preset").is_some() {
                eprintln!("warning: config {key}={a} conflicts with the weight file ({key}={b}); using the weight file");
            }
        }
        Ok(())
    }
}

fn differences(a: &ModelConfig, b: &ModelConfig) -> Vec<(&'static str, String, String)> {
    let fields = |c: &ModelConfig| -> [(&'static str, String); 13] {
        [
            ("depth", c.depth.to_string()),
            ("dim", c.dim.to_string()),
            ("heads", c.heads.to_string()),
            ("ffn_ratio", c.ffn_ratio.to_string()),
            ("channels", c.latent_channels.to_string()),
            ("hyper_channels", c.hyper_channels.to_string()),
            ("slices", c.scheme.channel_slices().to_string()),
            ("pattern", c.scheme.pattern().name().to_string()),
            ("order", c.scheme.order().name().to_string()),
            ("mixer_order", c.mixer_order.name().to_string()),
            ("relpos", c.relpos.name().to_string()),
            ("latent_bound", c.latent_bound.to_string()),
            ("hyper_bound", c.hyper_bound.to_string()),
        ]
    };
    fields(a)
        .into_iter()
        .zip(fields(b))
        .filter(|(x, y)| x.1 != y.1)
        .map(|((k, x), (_, y))| (k, x, y))
        .collect()
}

/// `key=value` lines describing a model configuration.
pub fn describe(cfg: &ModelConfig) -> String {
    let rows = [
        ("depth", cfg.depth.to_string()),
        ("dim", cfg.dim.to_string()),
        ("heads", cfg.heads.to_string()),
        ("ffn_ratio", cfg.ffn_ratio.to_string()),
        ("channels", cfg.latent_channels.to_string()),
        ("hyper_channels", cfg.hyper_channels.to_string()),
        ("slices", cfg.scheme.channel_slices().to_string()),
        ("pattern", cfg.scheme.pattern().name().to_string()),
        ("order", cfg.scheme.order().name().to_string()),
        ("groups", cfg.groups().to_string()),
        ("mixer_order", cfg.mixer_order.name().to_string()),
        ("relpos", cfg.relpos.name().to_string()),
        ("latent_bound", cfg.latent_bound.to_string()),
        ("hyper_bound", cfg.hyper_bound.to_string()),
    ];
    rows.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(s: &[&str]) -> Result<Pairs, Failure> {
        Pairs::parse(&s.iter().map(|x| x.to_string()).collect::<Vec<_>>(), &["groups"])
    }

    #[test]
    fn parses_pairs_and_overrides_preset() {
        let p = pairs(&["depth=1,dim=16", "heads=2", "slices=2", "pattern=quad4", "channels=8"]).unwrap();
        let cfg = p.model_config().unwrap();
        assert_eq!((cfg.depth, cfg.dim, cfg.heads, cfg.latent_channels), (1, 16, 2, 8));
        assert_eq!(cfg.groups(), 8);
        assert_eq!(pairs(&["preset=base"]).unwrap().model_config().unwrap(), ModelConfig::base());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(pairs(&["depth"]).is_err());
        assert!(pairs(&["colour=red"]).is_err());
        assert!(pairs(&["depth=1", "depth=2"]).is_err());
        assert!(pairs(&["depth=x"]).unwrap().model_config().is_err());
        assert!(pairs(&["dim=10", "heads=3"]).unwrap().model_config().is_err());
    }

    #[test]
    fn lists_differences() {
        let a = ModelConfig::toy();
        let b = ModelConfig { depth: 5, ..a.clone() };
        let d = differences(&a, &b);
        assert_eq!(d, vec![("depth", "2".to_string(), "5".to_string())]);
    }
}
