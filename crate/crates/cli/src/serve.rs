use std::collections::BTreeMap;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use gsal_core::data::{load_csv, DataError, LoadOptions};
use gsal_core::engine::RunConfig;
use gsal_core::Dataset;
use gsal_service::AppState;

use crate::{read_config, RenderHint};

#[derive(Args, Debug, Clone)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Dataset to offer, as NAME=PATH; repeatable
    #[arg(long = "data", value_name = "NAME=PATH", required = true)]
    pub datasets: Vec<String>,
    /// Ground-truth column, used when present
    #[arg(long, default_value = "label")]
    pub label_column: String,
    /// Class count for a dataset, as NAME=C; repeatable
    #[arg(long = "num-classes", value_name = "NAME=C")]
    pub num_classes: Vec<String>,
    /// Image shape for a dataset, as NAME=HxW; repeatable
    #[arg(long = "render-hint", value_name = "NAME=HxW")]
    pub render_hints: Vec<String>,
    /// Default JSON run configuration for new sessions
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Save sessions here and reload them on startup
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

fn split_pair<'a>(flag: &str, value: &'a str) -> Result<(&'a str, &'a str)> {
    value
        .split_once('=')
        .filter(|(name, rest)| !name.is_empty() && !rest.is_empty())
        .ok_or_else(|| anyhow!("--{flag} {value:?} is not NAME=VALUE"))
}

fn per_dataset<T>(flag: &str, values: &[String], parse: impl Fn(&str) -> Result<T>) -> Result<BTreeMap<String, T>> {
    let mut map = BTreeMap::new();
    for value in values {
        let (name, rest) = split_pair(flag, value)?;
        map.insert(name.to_string(), parse(rest)?);
    }
    Ok(map)
}

/// Load a dataset for labeling. The label column is optional here: without
/// it sessions run fine, they just report no true-correct counts.
fn load_for_serving(path: &PathBuf, options: LoadOptions) -> Result<Dataset> {
    match load_csv(path, &options) {
        Err(DataError::MissingLabelColumn(_)) => load_csv(
            path,
            &LoadOptions {
                label_column: None,
                ..options
            },
        ),
        other => other,
    }
    .with_context(|| format!("loading {}", path.display()))
}

pub fn build_state(args: &ServeArgs) -> Result<AppState> {
    let classes = per_dataset("num-classes", &args.num_classes, |v| {
        v.parse::<usize>().map_err(|_| anyhow!("--num-classes {v:?} is not a count"))
    })?;
    let hints = per_dataset("render-hint", &args.render_hints, |v| v.parse::<RenderHint>().map_err(|e| anyhow!(e)))?;
    let mut datasets = BTreeMap::new();
    for entry in &args.datasets {
        let (name, path) = split_pair("data", entry)?;
        let options = LoadOptions {
            label_column: Some(args.label_column.clone()),
            num_classes: classes.get(name).copied(),
            render_hint: hints.get(name).map(|&RenderHint(h, w)| (h, w)),
        };
        let dataset = load_for_serving(&PathBuf::from(path), options)?;
        if datasets.insert(name.to_string(), Arc::new(dataset)).is_some() {
            bail!("dataset {name:?} given twice");
        }
    }
    for name in classes.keys().chain(hints.keys()) {
        if !datasets.contains_key(name) {
            bail!("option given for unknown dataset {name:?}");
        }
    }
    let config = match &args.config {
        Some(path) => read_config(path)?,
        None => RunConfig::default(),
    };
    config.validate().context("default session config")?;
    let state = AppState::new(datasets, config);
    match &args.checkpoint_dir {
        Some(dir) => Ok(state.with_checkpoints(dir)?),
        None => Ok(state),
    }
}

pub async fn cmd_serve(args: &ServeArgs) -> Result<()> {
    let state = Arc::new(build_state(args)?);
    let listener = gsal_service::bind(SocketAddr::new(args.host, args.port)).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    gsal_service::serve(listener, state).await?;
    Ok(())
}
