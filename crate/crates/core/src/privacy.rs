//! Data-level Gaussian noise, k-anonymous client grouping and
//! microaggregation of smashed representations.
//!
//! The noise scale is calibrated with the classical Gaussian-mechanism bound
//! `σ ≥ Δf·√(2 ln(1.25/δ)) / ε`, which bounds the standard deviation.
//! [`PrivacyConfig::sigma2`] is always a variance: noise is drawn from
//! `N(0, sigma2)` per element.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type ClientId = usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyConfig {
    /// Per-element noise variance (pixel units²).
    pub sigma2: f64,
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub sensitivity: f64,
    pub k: usize,
    pub dp_enabled: bool,
    pub ka_enabled: bool,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        PrivacyConfig {
            sigma2: 0.0,
            epsilon: None,
            delta: 1e-5,
            sensitivity: 1.0,
            k: 3,
            dp_enabled: false,
            ka_enabled: false,
        }
    }
}

impl PrivacyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Privacy(format!("sigma2 must be >= 0, got {}", self.sigma2)));
        }
        if self.dp_enabled && self.sigma2 <= 0.0 {
            return Err(Error::Privacy("dp_enabled requires sigma2 > 0".into()));
        }
        if self.ka_enabled && self.k < 2 {
            return Err(Error::Privacy(format!("ka_enabled requires k >= 2, got {}", self.k)));
        }
        if self.k == 0 {
            return Err(Error::Privacy("k must be >= 1".into()));
        }
        if let Some(eps) = self.epsilon {
            calibrate_sigma(eps, self.delta, self.sensitivity)?;
        }
        Ok(())
    }

    /// Variance of the noise actually applied (0 when DP is off).
    pub fn effective_sigma2(&self) -> f64 {
        if self.dp_enabled {
            self.sigma2
        } else {
            0.0
        }
    }

    /// Group size used for microaggregation (1 when k-anonymity is off).
    pub fn effective_k(&self) -> usize {
        if self.ka_enabled {
            self.k
        } else {
            1
        }
    }
}

/// Smallest noise standard deviation giving (ε, δ)-DP for sensitivity `Δf`.
pub fn calibrate_sigma(epsilon: f64, delta: f64, sensitivity: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Privacy(format!("epsilon must be > 0, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Privacy(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(sensitivity > 0.0 && sensitivity.is_finite()) {
        return Err(Error::Privacy(format!("sensitivity must be > 0, got {sensitivity}")));
    }
    Ok(sensitivity * (2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

/// `batch + N(0, sigma2·I)`, fresh noise per call. `sigma2 == 0` returns the input unchanged.
pub fn gaussian_mechanism(batch: &Tensor, sigma2: f64, rng: &mut impl Rng) -> Result<Tensor> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::Privacy(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    if sigma2 == 0.0 {
        return Ok(batch.clone());
    }
    let sigma = sigma2.sqrt() as f32;
    let mut out = batch.clone();
    for v in out.data_mut() {
        let z: f32 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub round: usize,
    /// Groups ordered by their smallest member; members sorted by client id.
    pub groups: Vec<Vec<ClientId>>,
}

impl GroupAssignment {
    /// Every client in its own group, in id order.
    pub fn singletons(client_ids: &[ClientId], round: usize) -> Self {
        let mut ids = client_ids.to_vec();
        ids.sort_unstable();
        GroupAssignment {
            round,
            groups: ids.into_iter().map(|c| vec![c]).collect(),
        }
    }

    pub fn group_of(&self, client: ClientId) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&client))
    }
}

/// Random partition into `⌊n/k⌋` groups; the `n mod k` leftover clients are
/// dealt round-robin onto the groups, so sizes are `k` or `k+1` whenever
/// `n mod k ≤ ⌊n/k⌋` and in every case differ by at most one and are `≥ k`.
pub fn group_clients(client_ids: &[ClientId], k: usize, round: usize, rng: &mut impl Rng) -> Result<GroupAssignment> {
    let n = client_ids.len();
    if k == 0 || n < k {
        return Err(Error::TooFewClients { clients: n, k });
    }
    let mut ids = client_ids.to_vec();
    ids.shuffle(rng);
    let count = n / k;
    let mut groups: Vec<Vec<ClientId>> = ids[..count * k].chunks(k).map(<[_]>::to_vec).collect();
    for (i, &c) in ids[count * k..].iter().enumerate() {
        groups[i % count].push(c);
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort_unstable_by_key(|g| g[0]);
    Ok(GroupAssignment { round, groups })
}

/// Element-wise mean of the members' smashed tensors.
pub fn microaggregate(smashed: &[(ClientId, &Tensor)]) -> Result<Tensor> {
    let (_, first) = smashed.first().ok_or(Error::Empty("microaggregation group"))?;
    let offenders: Vec<ClientId> = smashed
        .iter()
        .filter(|(_, t)| t.shape() != first.shape())
        .map(|(c, _)| *c)
        .collect();
    if !offenders.is_empty() {
        return Err(Error::GroupShapeMismatch {
            expected: first.shape().to_vec(),
            offenders,
        });
    }
    let mut out = (*first).clone();
    for (_, t) in &smashed[1..] {
        out.add_assign(t);
    }
    let n = smashed.len() as f32;
    if smashed.len() > 1 {
        out.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}
