use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Adam, Network};
use crate::privacy::ClientId;
use crate::tensor::Tensor;

/// Who a server-side body belongs to for the current round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BodyOwner {
    Client(ClientId),
    Group(usize),
}

/// One tensor that entered a body network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crossing {
    pub round: usize,
    pub epoch: usize,
    pub step: usize,
    pub owner: BodyOwner,
    pub shape: Vec<usize>,
    /// FNV-1a of the tensor's bit pattern.
    pub fingerprint: u64,
}

pub fn fingerprint(t: &Tensor) -> u64 {
    let mut h = FnvHasher::default();
    for &d in t.shape() {
        h.write_u64(d as u64);
    }
    for v in t.data() {
        h.write_u32(v.to_bits());
    }
    h.finish()
}

/// The training server: body networks and their optimizers. It only ever
/// receives smashed tensors and, at aggregation time, body weights.
#[derive(Clone, Debug, Default)]
pub struct ServerState {
    bodies: Vec<(BodyOwner, Network, Adam)>,
    audit: Vec<Crossing>,
    audit_enabled: bool,
}

impl ServerState {
    pub fn new(audit_enabled: bool) -> Self {
        ServerState {
            audit_enabled,
            ..Default::default()
        }
    }

    /// One fresh copy of `body` per owner, each with a new optimizer.
    pub(crate) fn reset(&mut self, owners: &[BodyOwner], body: &Network, learning_rate: f32) {
        self.bodies = owners
            .iter()
            .map(|&o| (o, body.clone(), Adam::new(learning_rate)))
            .collect();
    }

    pub fn owners(&self) -> impl Iterator<Item = BodyOwner> + '_ {
        self.bodies.iter().map(|(o, _, _)| *o)
    }

    pub fn body(&self, owner: BodyOwner) -> Option<&Network> {
        self.bodies.iter().find(|(o, _, _)| *o == owner).map(|(_, n, _)| n)
    }

    pub(crate) fn body_mut(&mut self, owner: BodyOwner) -> Result<(&mut Network, &mut Adam)> {
        self.bodies
            .iter_mut()
            .find(|(o, _, _)| *o == owner)
            .map(|(_, n, a)| (n, a))
            .ok_or_else(|| Error::Aggregation(format!("no body network for {owner:?}")))
    }

    pub(crate) fn bodies(&self) -> impl Iterator<Item = &Network> {
        self.bodies.iter().map(|(_, n, _)| n)
    }

    pub(crate) fn observe(&mut self, round: usize, epoch: usize, step: usize, owner: BodyOwner, smashed: &Tensor) {
        if self.audit_enabled {
            self.audit.push(Crossing {
                round,
                epoch,
                step,
                owner,
                shape: smashed.shape().to_vec(),
                fingerprint: fingerprint(smashed),
            });
        }
    }

    /// Every tensor that entered a body network, in order.
    pub fn audit(&self) -> &[Crossing] {
        &self.audit
    }
}
