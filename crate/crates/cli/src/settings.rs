//! Config assembly: defaults, then the `key=value` file, then `--set` pairs,
//! then dedicated flags.

use std::collections::BTreeSet;
use std::path::PathBuf;

use altdetect::eval::ExperimentConfig;
use altdetect::{Error, Result};
use clap::Args;

/// Patch sizes the command line accepts.
pub const PATCH_SIZES: [usize; 2] = [64, 128];

const ARCH_KEYS: [&str; 6] = ["patch_size", "conv_channels", "residual_depth", "fc_width", "residual", "shortcut_pool"];

fn parse_patch_size(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(p) if PATCH_SIZES.contains(&p) => Ok(p),
        _ => Err(format!("patch size must be 64 or 128, got `{s}`")),
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Plain-text config file with one key=value per line.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_patch_size)]
    pub patch_size: Option<usize>,
    /// Drop the shortcut branch.
    #[arg(long, global = true)]
    pub no_residual: bool,
    #[arg(long, global = true)]
    pub epochs: Option<u32>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    /// Split scheme: 1, 2, 3, generated or manifest.
    #[arg(long, global = true)]
    pub protocol: Option<String>,
    /// threshold, svm or both.
    #[arg(long, global = true)]
    pub aggregation: Option<String>,
}

/// The merged config plus the keys the user set explicitly.
#[derive(Debug, Clone)]
pub struct Settings {
    pub cfg: ExperimentConfig,
    pub explicit: BTreeSet<String>,
}

impl Settings {
    pub fn load(args: &ConfigArgs) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        if let Some(path) = &args.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    Error::Config(format!("{}:{}: expected key=value, got `{line}`", path.display(), i + 1))
                })?;
                pairs.push((k.trim().into(), v.trim().into()));
            }
        }
        for o in &args.overrides {
            let (k, v) =
                o.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
            pairs.push((k.trim().into(), v.trim().into()));
        }
        let flags: [(&str, Option<String>); 7] = [
            ("seed", args.seed.map(|v| v.to_string())),
            ("patch_size", args.patch_size.map(|v| v.to_string())),
            ("residual", args.no_residual.then(|| "false".into())),
            ("epochs", args.epochs.map(|v| v.to_string())),
            ("learning_rate", args.learning_rate.map(|v| v.to_string())),
            ("batch_size", args.batch_size.map(|v| v.to_string())),
            ("split", args.protocol.clone()),
        ];
        pairs.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
        if let Some(a) = &args.aggregation {
            pairs.push(("aggregation".into(), a.clone()));
        }

        let mut cfg = ExperimentConfig::default();
        let mut explicit = BTreeSet::new();
        for (k, v) in pairs {
            cfg.set(&k, &v)?;
            explicit.insert(k);
        }
        if !PATCH_SIZES.contains(&cfg.arch.patch_size) {
            return Err(Error::Config(format!("patch_size must be 64 or 128, got {}", cfg.arch.patch_size)));
        }
        cfg.validate()?;
        Ok(Self { cfg, explicit })
    }

    pub fn sets_arch(&self) -> bool {
        ARCH_KEYS.iter().any(|k| self.explicit.contains(*k))
    }
}
