//! Train/serve/watch subcommands. These own the tokio runtime; everything
//! else in the binary is synchronous.

use std::net::{IpAddr, SocketAddr};
use std::path::Path;
use std::time::Duration;

use hutil_serve::{
    notify_channel, parse_gate, read_artifact_file, run_watcher, start_service,
    train_validate_test, write_artifact_atomic, ServiceConfig, ServiceState, SplitFractions,
    WatchConfig,
};

use crate::error::CliError;
use crate::ops::{read_formula, read_table};

pub fn parse_split(text: &str) -> Result<SplitFractions, CliError> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::Config(format!(
            "split {text:?} must be three comma-separated fractions (train,validation,test)"
        )));
    }
    let mut values = [0.0f64; 3];
    for (slot, part) in values.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("split fraction {part:?} is not a number")))?;
    }
    let split = SplitFractions {
        train: values[0],
        validation: values[1],
        test: values[2],
    };
    split.validate()?;
    Ok(split)
}

fn parse_addr(host: &str, port: u16) -> Result<SocketAddr, CliError> {
    let ip: IpAddr = host
        .parse()
        .map_err(|_| CliError::Config(format!("host {host:?} must be an IP address")))?;
    Ok(SocketAddr::new(ip, port))
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Config(format!("cannot start async runtime: {e}")))
}

pub fn train(
    input: &Path,
    formula_path: &Path,
    split_text: &str,
    seed: u64,
    manifest_hash: &str,
    out: &Path,
) -> Result<(), CliError> {
    let table = read_table(input)?;
    let formula = read_formula(formula_path)?;
    let split = parse_split(split_text)?;
    let (_model, artifact) = train_validate_test(&table, &formula, &split, seed, manifest_hash)?;
    write_artifact_atomic(out, &artifact)?;
    let m = &artifact.train_metrics;
    println!(
        "validation: auc {:.4}, accuracy {:.4}, log-loss {:.4} ({} rows)",
        m.validation.auc, m.validation.accuracy, m.validation.log_loss, m.validation.n_rows
    );
    println!(
        "test:       auc {:.4}, accuracy {:.4}, log-loss {:.4} ({} rows)",
        m.test.auc, m.test.accuracy, m.test.log_loss, m.test.n_rows
    );
    println!("wrote {} (checksum {})", out.display(), artifact.content_checksum);
    Ok(())
}

pub fn serve(
    artifact: &Path,
    host: &str,
    port: u16,
    admin_token: Option<String>,
) -> Result<(), CliError> {
    // Fail fast on a broken artifact; the service itself tolerates a missing
    // one, but an explicit `serve <path>` should not start dark silently.
    read_artifact_file(artifact)?;
    let addr = parse_addr(host, port)?;
    let state = ServiceState::new(ServiceConfig {
        artifact_path: artifact.to_path_buf(),
        admin_token,
    });
    runtime()?.block_on(async move {
        let (bound, handle) = start_service(state, addr).await?;
        println!("serving on http://{bound}");
        handle
            .await
            .map_err(|e| CliError::Config(format!("service task failed: {e}")))?;
        Ok(())
    })
}

#[allow(clippy::too_many_arguments)]
pub fn watch(
    manifest: &Path,
    config: &Path,
    artifact: &Path,
    audit: &Path,
    interval_secs: u64,
    gate_text: &str,
    min_test_rows: usize,
    host: &str,
    port: u16,
    admin_token: Option<String>,
) -> Result<(), CliError> {
    if interval_secs == 0 {
        return Err(CliError::Config("poll interval must be at least 1 second".into()));
    }
    let mut gate = parse_gate(gate_text)?;
    gate.min_test_rows = min_test_rows;
    let addr = parse_addr(host, port)?;
    let watch_config = WatchConfig {
        manifest_path: manifest.to_path_buf(),
        interval: Duration::from_secs(interval_secs),
        pipeline_config_path: config.to_path_buf(),
        gate,
        artifact_path: artifact.to_path_buf(),
        audit_path: audit.to_path_buf(),
    };
    let state = ServiceState::new(ServiceConfig {
        artifact_path: artifact.to_path_buf(),
        admin_token,
    });
    runtime()?.block_on(async move {
        let (tx, rx) = notify_channel();
        state.attach_notify(tx);
        let (bound, handle) = start_service(state.clone(), addr).await?;
        println!("serving on http://{bound}, watching {}", manifest.display());
        let watcher = tokio::spawn(run_watcher(state, watch_config, rx));
        let result = handle
            .await
            .map_err(|e| CliError::Config(format!("service task failed: {e}")));
        watcher.abort();
        result?;
        Ok(())
    })
}
