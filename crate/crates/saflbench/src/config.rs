//! Declarative run configuration.
//!
//! A run is described by one TOML document with `[run]`, `[model]`, `[data]`,
//! `[partition]`, `[client]`, `[latency]`, `[seeds]`, and `[metrics]`
//! sections. Unknown keys are rejected so a typo cannot silently fall back to
//! a default. Per-client knobs accept either one scalar (applied to every
//! client) or an array with exactly one entry per client.
//!
//! The resolved document has a canonical serialization whose SHA-256 hex
//! digest is echoed into every artifact, so outputs can always be traced back
//! to the exact configuration that produced them. Seed overrides are applied
//! before the digest is taken.

use crate::data::{generate_synthetic, load_dataset, train_test_split, Dataset};
use crate::error::{Error, Result};
use crate::metrics::memory_proxy;
use crate::model::ModelSpec;
use crate::partition::{partition, PartitionSpec, Scheme};
use crate::protocol::{ClientParams, LatencyProfile, Mode, RunPlan, Strategy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// One value for every client, or one value per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrVec<T> {
    Scalar(T),
    PerClient(Vec<T>),
}

impl<T: Copy> ScalarOrVec<T> {
    /// Expand to exactly `n` per-client values.
    pub fn resolve(&self, n: usize, field: &str) -> Result<Vec<T>> {
        match self {
            ScalarOrVec::Scalar(v) => Ok(vec![*v; n]),
            ScalarOrVec::PerClient(v) if v.len() == n => Ok(v.clone()),
            ScalarOrVec::PerClient(v) => Err(Error::invalid_config(
                field,
                format!("expected {} per-client entries, got {}", n, v.len()),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub mode: Mode,
    pub strategy: Strategy,
    /// Number of aggregations to simulate (T).
    pub rounds: usize,
    /// Clients activated per synchronous round, or the buffer threshold (K).
    pub active: usize,
    /// Server learning rate; consumed only by the gradient strategy.
    pub eta: f64,
    /// Optional L2 clipping bound applied to gradient payloads.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    /// Accumulate gradient payloads at round-start weights instead of along
    /// the local trajectory.
    #[serde(default)]
    pub fedsgd_at_start: bool,
    /// Extra metadata bytes charged to each weights upload.
    #[serde(default)]
    pub weights_overhead_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    SoftmaxLinear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub architecture: ArchKind,
    /// Hidden layer width; required iff architecture = "mlp".
    #[serde(default)]
    pub hidden_width: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "default_source")]
    pub source: DataSource,
    /// Dataset file path; required iff source = "file".
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Synthetic generator knobs; required iff source = "synthetic".
    #[serde(default)]
    pub classes: Option<usize>,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub per_class: Option<usize>,
    /// Within-class noise standard deviation.
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_source() -> DataSource {
    DataSource::Synthetic
}

fn default_spread() -> f64 {
    1.0
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Iid,
    Shards,
    UnbalancedDirichlet,
    HeteroDirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    pub scheme: SchemeKind,
    pub clients: usize,
    /// Dirichlet concentration; required by both Dirichlet schemes.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Distinct labels per client; required by the shards scheme.
    #[serde(default)]
    pub labels_per_client: Option<usize>,
    /// Log-normal sigma for client sizes; required by unbalanced_dirichlet.
    #[serde(default)]
    pub size_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSection {
    /// Local epochs per round (E).
    pub epochs: ScalarOrVec<usize>,
    pub batch_size: ScalarOrVec<usize>,
    /// Client learning rate.
    pub eta: ScalarOrVec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencySection {
    #[serde(default = "default_base_seconds")]
    pub base_seconds_per_epoch: ScalarOrVec<f64>,
    #[serde(default = "default_zero")]
    pub jitter_sigma: ScalarOrVec<f64>,
    #[serde(default = "default_zero")]
    pub network_delay_seconds: ScalarOrVec<f64>,
}

fn default_base_seconds() -> ScalarOrVec<f64> {
    ScalarOrVec::Scalar(1.0)
}

fn default_zero() -> ScalarOrVec<f64> {
    ScalarOrVec::Scalar(0.0)
}

impl Default for LatencySection {
    fn default() -> Self {
        LatencySection {
            base_seconds_per_epoch: default_base_seconds(),
            jitter_sigma: default_zero(),
            network_delay_seconds: default_zero(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsSection {
    /// Drives data generation, the train/test split, and partitioning.
    pub data_seed: u64,
    /// Drives initialization, selection, shuffles, and latency jitter.
    pub run_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    /// Target accuracy for convergence epochs (fraction in (0, 1]).
    pub target_accuracy: f64,
    /// Drop sizes counted as severe oscillations (fraction scale).
    #[serde(default = "default_thresholds")]
    pub oscillation_thresholds: Vec<f64>,
}

fn default_thresholds() -> Vec<f64> {
    vec![0.05]
}

/// A full declarative run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub model: ModelSection,
    pub data: DataSection,
    pub partition: PartitionSection,
    pub client: ClientSection,
    #[serde(default)]
    pub latency: LatencySection,
    pub seeds: SeedsSection,
    pub metrics: MetricsSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::invalid_config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text)
    }

    /// Canonical serialization; input formatting quirks do not survive.
    pub fn canonical_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid_config("config", e.to_string()))
    }

    /// SHA-256 hex digest of the canonical serialization.
    pub fn digest(&self) -> Result<String> {
        let canon = self.canonical_toml()?;
        let mut hasher = Sha256::new();
        hasher.update(canon.as_bytes());
        let out = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in out {
            use std::fmt::Write as _;
            write!(hex, "{byte:02x}").expect("writing to a String cannot fail");
        }
        Ok(hex)
    }

    /// Cross-field checks that do not need the dataset.
    pub fn validate(&self) -> Result<()> {
        match self.model.architecture {
            ArchKind::Mlp => {
                let width = self.model.hidden_width.unwrap_or(0);
                if width == 0 {
                    return Err(Error::invalid_config(
                        "model.hidden_width",
                        "mlp architecture needs a positive hidden width",
                    ));
                }
            }
            ArchKind::SoftmaxLinear => {
                if self.model.hidden_width.is_some() {
                    return Err(Error::invalid_config(
                        "model.hidden_width",
                        "only meaningful for the mlp architecture",
                    ));
                }
            }
        }
        match self.data.source {
            DataSource::Synthetic => {
                if self.data.path.is_some() {
                    return Err(Error::invalid_config(
                        "data.path",
                        "only meaningful for source = \"file\"",
                    ));
                }
                for (name, value) in [
                    ("data.classes", self.data.classes),
                    ("data.dim", self.data.dim),
                    ("data.per_class", self.data.per_class),
                ] {
                    if value.is_none() {
                        return Err(Error::invalid_config(name, "required for synthetic data"));
                    }
                }
            }
            DataSource::File => {
                if self.data.path.is_none() {
                    return Err(Error::invalid_config("data.path", "required for source = \"file\""));
                }
                if self.data.classes.is_some() || self.data.dim.is_some() || self.data.per_class.is_some() {
                    return Err(Error::invalid_config(
                        "data",
                        "classes/dim/per_class are synthetic-only knobs",
                    ));
                }
            }
        }
        if let Some(c) = self.run.clip_norm {
            if !c.is_finite() || c <= 0.0 {
                return Err(Error::invalid_config("run.clip_norm", "must be > 0 when set"));
            }
        }
        if !(self.metrics.target_accuracy > 0.0 && self.metrics.target_accuracy <= 1.0) {
            return Err(Error::invalid_config(
                "metrics.target_accuracy",
                "must lie in (0, 1]",
            ));
        }
        if self.metrics.oscillation_thresholds.is_empty() {
            return Err(Error::invalid_config(
                "metrics.oscillation_thresholds",
                "need at least one threshold",
            ));
        }
        for &t in &self.metrics.oscillation_thresholds {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid_config(
                    "metrics.oscillation_thresholds",
                    "thresholds must be positive and finite",
                ));
            }
        }
        self.partition_spec()?.validate()
    }

    pub fn partition_spec(&self) -> Result<PartitionSpec> {
        let require = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| Error::invalid_config(name, "required by the chosen scheme"))
        };
        let scheme = match self.partition.scheme {
            SchemeKind::Iid => {
                if self.partition.alpha.is_some()
                    || self.partition.labels_per_client.is_some()
                    || self.partition.size_sigma.is_some()
                {
                    return Err(Error::invalid_config("partition", "iid takes no extra knobs"));
                }
                Scheme::IidBalanced
            }
            SchemeKind::Shards => Scheme::Shards {
                labels_per_client: self.partition.labels_per_client.ok_or_else(|| {
                    Error::invalid_config("partition.labels_per_client", "required by the shards scheme")
                })?,
            },
            SchemeKind::UnbalancedDirichlet => Scheme::UnbalancedDirichlet {
                alpha: require("partition.alpha", self.partition.alpha)?,
                sigma: require("partition.size_sigma", self.partition.size_sigma)?,
            },
            SchemeKind::HeteroDirichlet => Scheme::HeteroDirichlet {
                alpha: require("partition.alpha", self.partition.alpha)?,
            },
        };
        Ok(PartitionSpec {
            scheme,
            num_clients: self.partition.clients,
        })
    }

    /// Produce (or load) the full dataset, before the train/test split.
    pub fn load_full_dataset(&self) -> Result<Dataset> {
        match self.data.source {
            DataSource::Synthetic => generate_synthetic(
                self.data.classes.expect("validated"),
                self.data.dim.expect("validated"),
                self.data.per_class.expect("validated"),
                self.data.spread,
                self.seeds.data_seed,
            ),
            DataSource::File => load_dataset(self.data.path.as_ref().expect("validated")),
        }
    }

    fn model_spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        match self.model.architecture {
            ArchKind::SoftmaxLinear => ModelSpec::softmax_linear(input_dim, num_classes),
            ArchKind::Mlp => ModelSpec::mlp(
                input_dim,
                self.model.hidden_width.expect("validated"),
                num_classes,
            ),
        }
    }

    /// Parameter count of the model this config resolves to. Loads the
    /// dataset, since its dimensions size the model.
    pub fn resolved_parameter_count(&self) -> Result<usize> {
        self.validate()?;
        let full = self.load_full_dataset()?;
        Ok(self.model_spec(full.dim, full.num_classes).parameter_count())
    }

    /// Resolve everything into an executable plan: generate or load the data,
    /// split it, partition the training side, and expand per-client knobs.
    pub fn build_plan(&self) -> Result<RunPlan> {
        self.validate()?;
        let config_digest = self.digest()?;
        let full = self.load_full_dataset()?;
        let (train, test) = train_test_split(&full, self.data.test_fraction, self.seeds.data_seed)?;
        let shards = partition(&train, &self.partition_spec()?, self.seeds.data_seed)?;
        let model = self.model_spec(full.dim, full.num_classes);
        let n = self.partition.clients;
        let epochs = self.client.epochs.resolve(n, "client.epochs")?;
        let batch = self.client.batch_size.resolve(n, "client.batch_size")?;
        let eta = self.client.eta.resolve(n, "client.eta")?;
        let base = self
            .latency
            .base_seconds_per_epoch
            .resolve(n, "latency.base_seconds_per_epoch")?;
        let jitter = self.latency.jitter_sigma.resolve(n, "latency.jitter_sigma")?;
        let delay = self
            .latency
            .network_delay_seconds
            .resolve(n, "latency.network_delay_seconds")?;
        let clients = (0..n)
            .map(|i| ClientParams {
                local_epochs: epochs[i],
                batch_size: batch[i],
                eta: eta[i],
                latency: LatencyProfile {
                    base_seconds_per_epoch: base[i],
                    jitter_sigma: jitter[i],
                    network_delay_seconds: delay[i],
                },
            })
            .collect();
        let plan = RunPlan {
            model,
            train,
            test,
            shards,
            clients,
            strategy: self.run.strategy,
            mode: self.run.mode,
            server_eta: self.run.eta,
            k: self.run.active,
            rounds: self.run.rounds,
            run_seed: self.seeds.run_seed,
            clip_norm: self.run.clip_norm,
            fedsgd_at_start: self.run.fedsgd_at_start,
            weights_overhead: self.run.weights_overhead_bytes,
            config_digest,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Analytic memory footprint of a resolved plan.
    pub fn plan_memory_proxy(&self, plan: &RunPlan) -> u64 {
        memory_proxy(
            plan.num_clients(),
            plan.model.parameter_count(),
            plan.k,
            plan.train.approx_bytes() + plan.test.approx_bytes(),
        )
    }
}

/// A labelled set of runs to execute side by side.
///
/// Members must agree on the data seed, the data section, the partition
/// section, and the metrics section, so every row of the comparison table is
/// measured against the same task and the same targets.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    #[serde(rename = "member")]
    pub members: Vec<CompareMember>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareMember {
    pub label: String,
    /// Run config path, relative to the spec file's directory.
    pub config: PathBuf,
}

/// Load a compare spec and its member configs, verifying the shared fields.
pub fn load_compare(path: &Path) -> Result<Vec<(String, RunConfig)>> {
    let text = std::fs::read_to_string(path)?;
    let spec: CompareSpec =
        toml::from_str(&text).map_err(|e| Error::invalid_config("compare", e.to_string()))?;
    if spec.members.len() < 2 {
        return Err(Error::CompareMismatch(format!(
            "need at least 2 members, got {}",
            spec.members.len()
        )));
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut members = Vec::with_capacity(spec.members.len());
    for m in &spec.members {
        let cfg = RunConfig::load(&dir.join(&m.config))?;
        members.push((m.label.clone(), cfg));
    }
    verify_shared(&members)?;
    Ok(members)
}

/// Shared-field agreement between compare members.
pub fn verify_shared(members: &[(String, RunConfig)]) -> Result<()> {
    for window in members.windows(2) {
        let (a_label, a) = &window[0];
        let (b_label, b) = &window[1];
        if a_label == b_label {
            return Err(Error::CompareMismatch(format!("duplicate label `{a_label}`")));
        }
        let pairs: [(&str, bool); 4] = [
            ("seeds.data_seed", a.seeds.data_seed == b.seeds.data_seed),
            ("data", a.data == b.data),
            ("partition", a.partition == b.partition),
            ("metrics", a.metrics == b.metrics),
        ];
        for (field, equal) in pairs {
            if !equal {
                return Err(Error::CompareMismatch(format!(
                    "members `{a_label}` and `{b_label}` disagree on `{field}`"
                )));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SMOKE: &str = r#"
[run]
mode = "sfl"
strategy = "fedsgd"
rounds = 2
active = 2
eta = 0.1

[model]
architecture = "softmax_linear"

[data]
classes = 3
dim = 4
per_class = 30
spread = 0.5

[partition]
scheme = "iid"
clients = 3

[client]
epochs = 1
batch_size = 8
eta = 0.1

[seeds]
data_seed = 11
run_seed = 21

[metrics]
target_accuracy = 0.5
"#;

    #[test]
    fn smoke_config_parses_and_builds() {
        let cfg = RunConfig::parse(SMOKE).unwrap();
        assert_eq!(cfg.run.mode, Mode::Synchronous);
        assert_eq!(cfg.run.strategy, Strategy::FedSgd);
        assert_eq!(cfg.data.test_fraction, 0.2);
        assert_eq!(cfg.metrics.oscillation_thresholds, vec![0.05]);
        let plan = cfg.build_plan().unwrap();
        assert_eq!(plan.num_clients(), 3);
        assert_eq!(plan.model.parameter_count(), 3 * 4 + 3);
        assert_eq!(plan.clients[0].latency.base_seconds_per_epoch, 1.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = SMOKE.replace("[metrics]", "typo_key = 1\n[metrics]");
        let err = RunConfig::parse(&text).unwrap_err();
        assert!(err.is_config_error(), "{err}");
        let text = SMOKE.replace("rounds = 2", "rounds = 2\nrnouds = 3");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn per_client_arrays_must_match_client_count() {
        let text = SMOKE.replace("eta = 0.1\n\n[seeds]", "eta = [0.1, 0.2]\n\n[seeds]");
        let cfg = RunConfig::parse(&text).unwrap();
        let err = cfg.build_plan().unwrap_err();
        assert!(err.to_string().contains("client.eta"), "{err}");

        let text = SMOKE.replace("eta = 0.1\n\n[seeds]", "eta = [0.1, 0.2, 0.3]\n\n[seeds]");
        let plan = RunConfig::parse(&text).unwrap().build_plan().unwrap();
        assert_eq!(plan.clients[2].eta, 0.3);
        assert_eq!(plan.clients[0].eta, 0.1);
    }

    #[test]
    fn digest_is_stable_and_seed_sensitive() {
        let a = RunConfig::parse(SMOKE).unwrap();
        let b = RunConfig::parse(SMOKE).unwrap();
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        assert_eq!(a.digest().unwrap().len(), 64);

        // Formatting does not matter, values do.
        let spaced = SMOKE.replace("rounds = 2", "rounds   =   2");
        assert_eq!(RunConfig::parse(&spaced).unwrap().digest().unwrap(), a.digest().unwrap());
        let mut c = RunConfig::parse(SMOKE).unwrap();
        c.seeds.run_seed += 1;
        assert_ne!(c.digest().unwrap(), a.digest().unwrap());
    }

    #[test]
    fn scheme_knobs_are_validated() {
        let text = SMOKE.replace("scheme = \"iid\"", "scheme = \"hetero_dirichlet\"");
        let err = RunConfig::parse(&text).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("alpha"), "{err}");

        let text = SMOKE.replace("scheme = \"iid\"", "scheme = \"hetero_dirichlet\"\nalpha = 0.5");
        RunConfig::parse(&text).unwrap().validate().unwrap();

        let text = SMOKE.replace("scheme = \"iid\"", "scheme = \"iid\"\nalpha = 0.5");
        assert!(RunConfig::parse(&text).unwrap().validate().is_err());

        let text = SMOKE.replace("scheme = \"iid\"", "scheme = \"shards\"");
        assert!(RunConfig::parse(&text).unwrap().validate().is_err());
    }

    #[test]
    fn mlp_needs_hidden_width() {
        let text = SMOKE.replace("architecture = \"softmax_linear\"", "architecture = \"mlp\"");
        assert!(RunConfig::parse(&text).unwrap().validate().is_err());
        let text = SMOKE.replace(
            "architecture = \"softmax_linear\"",
            "architecture = \"mlp\"\nhidden_width = 8",
        );
        let plan = RunConfig::parse(&text).unwrap().build_plan().unwrap();
        assert_eq!(plan.model.parameter_count(), 8 * 4 + 8 + 3 * 8 + 3);
    }

    #[test]
    fn compare_verification_checks_shared_fields() {
        let a = RunConfig::parse(SMOKE).unwrap();
        let mut b = a.clone();
        b.run.strategy = Strategy::FedAvg;
        verify_shared(&[("ss".into(), a.clone()), ("sa".into(), b.clone())]).unwrap();

        let mut c = b.clone();
        c.seeds.data_seed += 1;
        let err = verify_shared(&[("ss".into(), a.clone()), ("sa".into(), c)]).unwrap_err();
        assert!(err.to_string().contains("data_seed"), "{err}");

        let mut d = b.clone();
        d.partition.clients = 4;
        assert!(verify_shared(&[("ss".into(), a.clone()), ("sa".into(), d)]).is_err());

        let err = verify_shared(&[("x".into(), a.clone()), ("x".into(), b)]).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }
}
