use crate::data::Dataset;
use crate::error::Result;
use crate::models::SplitModel;
use crate::network::{Adam, Network};
use crate::privacy::ClientId;
use crate::tensor::Tensor;

/// One client: its private shard plus its copies of the head and tail.
/// Labels are read only through [`ClientState::labels`], which the round
/// engine passes straight to the client-side loss.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: ClientId,
    shard: Dataset,
    pub head: Network,
    pub tail: Network,
    pub(crate) head_opt: Adam,
    pub(crate) tail_opt: Adam,
}

impl ClientState {
    pub fn new(id: ClientId, shard: Dataset, model: &SplitModel, learning_rate: f32) -> Self {
        ClientState {
            id,
            shard,
            head: model.head.clone(),
            tail: model.tail.clone(),
            head_opt: Adam::new(learning_rate),
            tail_opt: Adam::new(learning_rate),
        }
    }

    pub fn shard(&self) -> &Dataset {
        &self.shard
    }

    pub fn shard_len(&self) -> usize {
        self.shard.len()
    }

    /// Starts a round from the global head and tail with fresh optimizer state.
    pub(crate) fn reset(&mut self, global: &SplitModel, learning_rate: f32) -> Result<()> {
        self.head.load_params(&global.head.params())?;
        self.tail.load_params(&global.tail.params())?;
        self.head_opt = Adam::new(learning_rate);
        self.tail_opt = Adam::new(learning_rate);
        Ok(())
    }

    pub(crate) fn images(&self, indices: &[usize]) -> Tensor {
        self.shard.images().select_batch(indices)
    }

    pub(crate) fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.shard.labels()[i]).collect()
    }
}
