use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use super::grade::{compute_metric, grade_item, metric_name};
use super::shim::ShimClient;
use super::{BenchmarkItem, EvalError, EvalReport, ItemResult};
use crate::config::EngineConfig;
use crate::engine::run_query;
use crate::gateway::Gateway;

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub parallelism: usize,
    pub shim: Option<ShimClient>,
    pub code_timeout_s: f64,
}

impl BenchOptions {
    pub fn from_config(config: &EngineConfig) -> Self {
        Self {
            parallelism: config.eval.parallelism,
            shim: ShimClient::new(config.eval.shim_command.clone()).ok(),
            code_timeout_s: config.eval.code_timeout_s,
        }
    }
}

/// Runs every item through the engine on up to `parallelism` threads and
/// grades the final answers. Engine failures count as incorrect items; a
/// missing or broken shim aborts the benchmark.
pub fn run_bench<F>(items: &[BenchmarkItem], config: &EngineConfig, make_gateway: F, options: &BenchOptions) -> Result<EvalReport, EvalError>
where
    F: Fn(&BenchmarkItem) -> Gateway + Sync,
{
    if items.is_empty() {
        return Err(EvalError::EmptyItems);
    }
    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<ItemResult>> = Mutex::new(Vec::with_capacity(items.len()));
    let fatal: Mutex<Option<EvalError>> = Mutex::new(None);
    let workers = options.parallelism.clamp(1, items.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if fatal.lock().unwrap().is_some() {
                    return;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { return };
                match evaluate_item(item, config, &make_gateway, options) {
                    Ok(row) => rows.lock().unwrap().push(row),
                    Err(e) => {
                        fatal.lock().unwrap().get_or_insert(e);
                        return;
                    }
                }
            });
        }
    });

    if let Some(e) = fatal.into_inner().unwrap() {
        return Err(e);
    }
    let name = metric_name(items[0].kind);
    compute_metric(&rows.into_inner().unwrap(), name)
}

fn evaluate_item<F>(item: &BenchmarkItem, config: &EngineConfig, make_gateway: &F, options: &BenchOptions) -> Result<ItemResult, EvalError>
where
    F: Fn(&BenchmarkItem) -> Gateway,
{
    let started = Instant::now();
    let mut cfg = config.clone();
    cfg.task_kind = item.kind;
    let gateway = make_gateway(item);
    let (predicted, error) = match run_query(&cfg, &gateway, &item.prompt) {
        Ok(report) => (report.outcome.final_answer, None),
        Err(failure) => {
            log::warn!("item {}: {}", item.id, failure.error);
            (String::new(), Some(failure.error.to_string()))
        }
    };
    let correct = error.is_none() && grade_item(item, &predicted, options.shim.as_ref(), options.code_timeout_s)?;
    log::info!("item {}: {}", item.id, if correct { "correct" } else { "incorrect" });
    Ok(ItemResult {
        id: item.id.clone(),
        stratum: item.stratum.clone(),
        predicted,
        correct,
        runtime_s: started.elapsed().as_secs_f64(),
        error,
    })
}
