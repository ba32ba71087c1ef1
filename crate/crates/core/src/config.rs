//! Fully resolved experiment configuration.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{self, SplitModel, SplitSpec};
use crate::network::Network;
use crate::privacy::PrivacyConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Plain U-shaped split learning, one body per client.
    Ufsl,
    /// UFSL with Gaussian noise on client inputs.
    UfslDp,
    /// UFSL with k-anonymous microaggregation of smashed data.
    UfslKa,
    /// Both mechanisms.
    KdUfsl,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ufsl, Method::UfslDp, Method::UfslKa, Method::KdUfsl];

    pub fn uses_dp(self) -> bool {
        matches!(self, Method::UfslDp | Method::KdUfsl)
    }

    pub fn uses_ka(self) -> bool {
        matches!(self, Method::UfslKa | Method::KdUfsl)
    }

    /// The method with the same grouping behaviour but no input noise.
    pub fn without_dp(self) -> Method {
        match self {
            Method::Ufsl | Method::UfslDp => Method::Ufsl,
            Method::UfslKa | Method::KdUfsl => Method::UfslKa,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Method::Ufsl => "ufsl",
            Method::UfslDp => "ufsl_dp",
            Method::UfslKa => "ufsl_ka",
            Method::KdUfsl => "kd_ufsl",
        }
    }

    /// Noise variance used when a config does not set one.
    pub fn default_sigma2(self) -> f64 {
        match self {
            Method::UfslDp => 0.2,
            Method::KdUfsl => 0.1,
            Method::Ufsl | Method::UfslKa => 0.0,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Convnet,
    Resnet,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Architecture,
    /// Residual block count (2 or 3); ignored for the ConvNet.
    pub blocks: usize,
    /// Name of the head cut point, e.g. `block2` or `RB2`.
    pub cut: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Architecture::Convnet,
            blocks: 3,
            cut: "block2".into(),
        }
    }
}

impl ModelConfig {
    /// Cut point name for head depth `depth` (1-based) on this architecture.
    pub fn cut_for_depth(arch: Architecture, depth: usize) -> String {
        match arch {
            Architecture::Convnet => format!("block{depth}"),
            Architecture::Resnet => format!("RB{depth}"),
        }
    }

    pub fn default_cut(arch: Architecture) -> String {
        Self::cut_for_depth(arch, 2)
    }

    /// Cut point names a head may end at.
    pub fn head_cuts(&self) -> Vec<String> {
        match self.arch {
            Architecture::Convnet => (1..=4).map(|d| Self::cut_for_depth(self.arch, d)).collect(),
            Architecture::Resnet => std::iter::once("stem".to_string())
                .chain((1..=self.blocks).map(|d| Self::cut_for_depth(self.arch, d)))
                .collect(),
        }
    }

    /// Zero-initialized full network for the given image shape.
    pub fn build(&self, image_shape: &[usize], classes: usize) -> Result<Network> {
        match self.arch {
            Architecture::Convnet => models::build_convnet(image_shape, classes),
            Architecture::Resnet => models::build_small_resnet(image_shape, classes, self.blocks),
        }
    }

    pub fn build_split(&self, image_shape: &[usize], classes: usize) -> Result<(Network, SplitModel)> {
        let net = self.build(image_shape, classes)?;
        let spec = SplitSpec::at(&net, &self.cut)?;
        let split = models::split(&net, spec)?;
        Ok((net, split))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Procedural 28×28 digit glyphs.
    SyntheticDigits { train: usize, test: usize },
    /// Separable class patterns.
    Blobs {
        classes: usize,
        train: usize,
        test: usize,
        shape: [usize; 3],
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Cifar { train: Vec<PathBuf>, test: Vec<PathBuf> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Fraction of the training split used, sampled per class.
    pub fraction: f64,
    /// Fraction of the test split used before it is halved into attacker and evaluation sets.
    pub test_fraction: f64,
    /// Seed for generation, subsetting, partitioning and attacker carving.
    /// Falls back to the run seed, so sweeps that pin it share one dataset.
    pub seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::SyntheticDigits { train: 2000, test: 1000 },
            fraction: 1.0,
            test_fraction: 1.0,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSettings {
    pub enabled: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Victim client. Its shard is left out of the peers its images are
    /// grouped with when the attack is evaluated under k-anonymity.
    pub target_client: usize,
    /// Number of reconstructed images exported alongside the metrics.
    pub dump_images: usize,
}

impl Default for AttackSettings {
    fn default() -> Self {
        AttackSettings {
            enabled: true,
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.01,
            target_client: 0,
            dump_images: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub clients: usize,
    pub seed: u64,
    pub privacy: PrivacyConfig,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub attack: AttackSettings,
    /// Record wall-clock time per round. Off by default so that outputs are
    /// byte-reproducible.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_method(Method::KdUfsl)
    }
}

impl ExperimentConfig {
    /// Defaults with privacy toggles and noise level matching `method`.
    pub fn for_method(method: Method) -> Self {
        ExperimentConfig {
            method,
            rounds: 30,
            local_epochs: 1,
            batch_size: 32,
            learning_rate: 0.001,
            clients: 10,
            seed: 0,
            privacy: PrivacyConfig {
                sigma2: method.default_sigma2(),
                k: 3,
                dp_enabled: method.uses_dp(),
                ka_enabled: method.uses_ka(),
                ..PrivacyConfig::default()
            },
            model: ModelConfig::default(),
            data: DataConfig::default(),
            attack: AttackSettings::default(),
            timing: false,
        }
    }

    /// Switches method and the privacy toggles together.
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self.privacy.dp_enabled = method.uses_dp();
        self.privacy.ka_enabled = method.uses_ka();
        self
    }

    /// Noise variance applied to client batches.
    pub fn sigma2(&self) -> f64 {
        if self.method.uses_dp() {
            self.privacy.sigma2
        } else {
            0.0
        }
    }

    /// Minimum group size (1 means no microaggregation).
    pub fn group_k(&self) -> usize {
        if self.method.uses_ka() {
            self.privacy.k
        } else {
            1
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }

    /// FNV-1a of the canonical JSON form, as 16 hex digits.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", crate::seed::hash_parts(0, &[&json]))
    }

    /// Checks numeric ranges only. Degenerate privacy settings (`k = 1`,
    /// `sigma2 = 0` under a private method) are accepted here so the engine
    /// can be compared against its non-private counterpart; [`Self::validate`]
    /// rejects them.
    pub fn validate_ranges(&self) -> Result<()> {
        let bad = |key: &str, message: String| Err(Error::config(key, message));
        if self.clients == 0 {
            return bad("clients", "must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1".into());
        }
        if self.local_epochs == 0 {
            return bad("local_epochs", "must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(self.privacy.sigma2 >= 0.0 && self.privacy.sigma2.is_finite()) {
            return bad("privacy.sigma2", format!("must be finite and >= 0, got {}", self.privacy.sigma2));
        }
        if self.privacy.k == 0 {
            return bad("privacy.k", "must be >= 1".into());
        }
        if self.method.uses_ka() && self.privacy.k > self.clients {
            return bad(
                "privacy.k",
                format!("k = {} exceeds the number of clients ({})", self.privacy.k, self.clients),
            );
        }
        if self.attack.target_client >= self.clients {
            return bad(
                "attack.target_client",
                format!("client {} does not exist among {}", self.attack.target_client, self.clients),
            );
        }
        if self.attack.batch_size == 0 {
            return bad("attack.batch_size", "must be >= 1".into());
        }
        for (key, f) in [("data.fraction", self.data.fraction), ("data.test_fraction", self.data.test_fraction)] {
            if !(f > 0.0 && f <= 1.0) {
                return bad(key, format!("must lie in (0, 1], got {f}"));
            }
        }
        if self.model.arch == Architecture::Resnet && !(2..=3).contains(&self.model.blocks) {
            return bad("model.blocks", format!("residual net supports 2 or 3 blocks, got {}", self.model.blocks));
        }
        let cuts = self.model.head_cuts();
        if !cuts.contains(&self.model.cut) {
            return bad("model.cut", format!("unknown cut `{}`, expected one of {cuts:?}", self.model.cut));
        }
        Ok(())
    }

    /// Full consistency check: ranges, method/toggle agreement and the
    /// privacy invariants.
    pub fn validate(&self) -> Result<()> {
        self.validate_ranges()?;
        if self.privacy.dp_enabled != self.method.uses_dp() {
            return Err(Error::config(
                "privacy.dp_enabled",
                format!("must be {} for method {}", self.method.uses_dp(), self.method),
            ));
        }
        if self.privacy.ka_enabled != self.method.uses_ka() {
            return Err(Error::config(
                "privacy.ka_enabled",
                format!("must be {} for method {}", self.method.uses_ka(), self.method),
            ));
        }
        if self.privacy.dp_enabled && self.privacy.sigma2 <= 0.0 {
            return Err(Error::config("privacy.sigma2", "must be > 0 when dp_enabled"));
        }
        if self.privacy.ka_enabled && self.privacy.k < 2 {
            return Err(Error::config("privacy.k", "must be >= 2 when ka_enabled"));
        }
        if let Some(eps) = self.privacy.epsilon {
            crate::privacy::calibrate_sigma(eps, self.privacy.delta, self.privacy.sensitivity)
                .map_err(|e| Error::config("privacy.epsilon", e.to_string()))?;
        }
        Ok(())
    }
}
