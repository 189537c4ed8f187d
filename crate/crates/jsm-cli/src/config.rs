//! Flat `key=value` config files, merged underneath explicit flags.

use std::collections::HashMap;
use std::path::PathBuf;

use jsm_restore::degrade::KernelKind;
use jsm_restore::nlsm::NlsmParams;
use jsm_restore::{Error, Result};

use crate::{usage, ResolvedRestore, RestoreArgs};

const KNOWN_KEYS: &[&str] = &[
    "in",
    "out",
    "mask",
    "kernel",
    "sigma",
    "mu-tilde",
    "iters",
    "truth",
    "block",
    "stride",
    "window",
    "group-size",
    "lsm-iters",
    "tol",
    "shrink",
    "telemetry",
    "summary",
];

fn parse_file(path: &PathBuf) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.clone(),
        source,
    })?;
    let mut map = HashMap::new();
    for (number, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            usage(format!(
                "{}:{}: expected key=value, got `{line}`",
                path.display(),
                number + 1
            ))
        })?;
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(usage(format!(
                "{}:{}: unknown config key `{key}`",
                path.display(),
                number + 1
            )));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parsed<T: std::str::FromStr>(map: &HashMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("config key `{key}`: cannot parse `{raw}`"))),
    }
}

/// Flags win over config values; defaults fill whatever remains.
pub(crate) fn resolve(args: RestoreArgs) -> Result<ResolvedRestore> {
    let file = match &args.config {
        Some(path) => parse_file(path)?,
        None => HashMap::new(),
    };

    let input = args
        .input
        .or(parsed::<PathBuf>(&file, "in")?)
        .ok_or_else(|| usage("restore requires --in"))?;
    let output = args
        .output
        .or(parsed::<PathBuf>(&file, "out")?)
        .ok_or_else(|| usage("restore requires --out"))?;
    let mu_tilde = args
        .mu_tilde
        .or(parsed(&file, "mu-tilde")?)
        .ok_or_else(|| usage("restore requires --mu-tilde"))?;
    let iters = args
        .iters
        .or(parsed(&file, "iters")?)
        .ok_or_else(|| usage("restore requires --iters"))?;

    let kernel = match args.kernel.or(parsed(&file, "kernel")?) {
        Some(name) => Some(name.parse::<KernelKind>()?),
        None => None,
    };
    let shrink = match args.shrink.or(parsed(&file, "shrink")?) {
        Some(name) => name.parse()?,
        None => Default::default(),
    };

    let defaults = NlsmParams::default();
    Ok(ResolvedRestore {
        input,
        output,
        mask: args.mask.or(parsed(&file, "mask")?),
        kernel,
        sigma: args.sigma.or(parsed(&file, "sigma")?),
        mu_tilde,
        iters,
        truth: args.truth.or(parsed(&file, "truth")?),
        nlsm: NlsmParams {
            block: args.block.or(parsed(&file, "block")?).unwrap_or(defaults.block),
            stride: args
                .stride
                .or(parsed(&file, "stride")?)
                .unwrap_or(defaults.stride),
            window: args
                .window
                .or(parsed(&file, "window")?)
                .unwrap_or(defaults.window),
            group_size: args
                .group_size
                .or(parsed(&file, "group-size")?)
                .unwrap_or(defaults.group_size),
        },
        lsm_iters: args.lsm_iters.or(parsed(&file, "lsm-iters")?).unwrap_or(10),
        tol: args.tol.or(parsed(&file, "tol")?),
        shrink,
        telemetry: args.telemetry.or(parsed(&file, "telemetry")?),
        summary: args.summary.or(parsed(&file, "summary")?),
    })
}
