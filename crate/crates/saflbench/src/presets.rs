//! Built-in scenario configs, selectable from the CLI by name.

use crate::config::RunConfig;
use crate::error::Result;
use crate::protocol::Strategy;

/// The `gap-demo` scenario: 20 clients on heavily skewed per-client Dirichlet
/// splits of a 10-class synthetic set, semi-asynchronous with K=5, strong
/// log-normal latency jitter. Running it under both aggregation strategies
/// shows gradient aggregation converging faster and drifting less than weight
/// aggregation once staleness enters the buffer.
pub const GAP_DEMO: &str = r#"
[run]
mode = "safl"
strategy = "fedsgd"
rounds = 200
active = 5
eta = 0.2

[model]
architecture = "softmax_linear"

[data]
classes = 10
dim = 16
per_class = 500
spread = 0.3
test_fraction = 0.2

[partition]
scheme = "hetero_dirichlet"
clients = 20
alpha = 0.1

[client]
epochs = 2
batch_size = 16
eta = 0.05

[latency]
base_seconds_per_epoch = 1.0
jitter_sigma = 1.0
network_delay_seconds = 0.0

[seeds]
data_seed = 1
run_seed = 1

[metrics]
target_accuracy = 0.83
oscillation_thresholds = [0.02, 0.05]
"#;

/// The gap-demo run config (gradient-aggregation member).
pub fn gap_demo_run() -> Result<RunConfig> {
    RunConfig::parse(GAP_DEMO)
}

/// Both gap-demo members, ready for a comparison run.
pub fn gap_demo_members() -> Result<Vec<(String, RunConfig)>> {
    let sgd = gap_demo_run()?;
    let mut avg = sgd.clone();
    avg.run.strategy = Strategy::FedAvg;
    Ok(vec![
        ("safl-fedsgd".to_string(), sgd),
        ("safl-fedavg".to_string(), avg),
    ])
}

/// Look a preset up by CLI name.
pub fn run_preset(name: &str) -> Option<Result<RunConfig>> {
    match name {
        "gap-demo" => Some(gap_demo_run()),
        _ => None,
    }
}

/// Compare-flavored preset lookup.
pub fn compare_preset(name: &str) -> Option<Result<Vec<(String, RunConfig)>>> {
    match name {
        "gap-demo" => Some(gap_demo_members()),
        _ => None,
    }
}
