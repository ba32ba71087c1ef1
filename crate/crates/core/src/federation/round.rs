use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::loss::cross_entropy;
use crate::network::{Network, ParamSet};
use crate::privacy::{gaussian_mechanism, microaggregate, ClientId};
use crate::seed;
use crate::tensor::Tensor;

use super::server::BodyOwner;
use super::Federation;

/// A group member's client-side segments.
pub struct Segments<'a> {
    pub id: ClientId,
    pub head: &'a mut Network,
    pub tail: &'a mut Network,
}

/// Gradients of one lockstep step of a group sharing one body.
#[derive(Clone, Debug)]
pub struct GroupGradients {
    pub heads: Vec<ParamSet>,
    pub body: ParamSet,
    pub tails: Vec<ParamSet>,
    pub losses: Vec<f32>,
    /// The microaggregated tensor fed to the body.
    pub body_input: Tensor,
}

/// Forward and backward pass for one group.
///
/// Every member's head output is averaged into a single body input; the
/// body output goes back to every member's tail, which scores it against
/// that member's labels. The objective is the sum of member losses, so the
/// body receives the sum of the tails' gradients and each head receives the
/// body's input gradient times `1/|g|`, the Jacobian of the mean.
pub fn group_gradients(
    members: &mut [Segments<'_>],
    body: &mut Network,
    inputs: &[Tensor],
    labels: &[Vec<usize>],
) -> Result<GroupGradients> {
    let n = members.len();
    if n == 0 {
        return Err(Error::Empty("group"));
    }
    if inputs.len() != n || labels.len() != n {
        return Err(Error::Aggregation(format!(
            "group of {n} members got {} input batches and {} label batches",
            inputs.len(),
            labels.len()
        )));
    }
    let mut smashed = Vec::with_capacity(n);
    let mut head_caches = Vec::with_capacity(n);
    for (m, x) in members.iter_mut().zip(inputs) {
        let (s, cache) = m.head.forward(x, Mode::Train)?;
        smashed.push(s);
        head_caches.push(cache);
    }
    let pairs: Vec<(ClientId, &Tensor)> = members.iter().map(|m| m.id).zip(&smashed).collect();
    let body_input = microaggregate(&pairs)?;
    let (body_out, body_cache) = body.forward(&body_input, Mode::Train)?;

    let mut grad_body_out = Tensor::zeros(body_out.shape());
    let mut tails = Vec::with_capacity(n);
    let mut losses = Vec::with_capacity(n);
    for (m, y) in members.iter_mut().zip(labels) {
        let (logits, cache) = m.tail.forward(&body_out, Mode::Train)?;
        let (loss, grad_logits) = cross_entropy(&logits, y)?;
        let (grad_in, grads) = m.tail.backward(&cache, &grad_logits)?;
        grad_body_out.add_assign(&grad_in);
        tails.push(grads);
        losses.push(loss);
    }
    let (mut grad_smashed, body_grads) = body.backward(&body_cache, &grad_body_out)?;
    if n > 1 {
        grad_smashed.scale(1.0 / n as f32);
    }
    let mut heads = Vec::with_capacity(n);
    for (m, cache) in members.iter().zip(&head_caches) {
        heads.push(m.head.backward(cache, &grad_smashed)?.1);
    }
    Ok(GroupGradients {
        heads,
        body: body_grads,
        tails,
        losses,
        body_input,
    })
}

impl Federation {
    /// Runs one global round and returns the mean member loss.
    pub(super) fn train_round(&mut self, round: usize) -> Result<f64> {
        let cfg = &self.config;
        let lr = cfg.learning_rate;
        let groups = self.assign_groups(round)?;
        let owners: Vec<BodyOwner> = if cfg.method.uses_ka() {
            (0..groups.groups.len()).map(BodyOwner::Group).collect()
        } else {
            groups.groups.iter().map(|g| BodyOwner::Client(g[0])).collect()
        };
        for c in &mut self.clients {
            c.reset(&self.global, lr)?;
        }
        self.server.reset(&owners, &self.global.body, lr);

        let batch = cfg.batch_size;
        let min_shard = self.clients.iter().map(|c| c.shard_len()).min().unwrap_or(0);
        let steps = min_shard / batch;
        if steps == 0 {
            return Err(Error::Data(format!(
                "smallest shard has {min_shard} samples, fewer than one batch of {batch}"
            )));
        }
        let sigma2 = cfg.sigma2();
        let master = cfg.seed;
        let mut loss_sum = 0.0f64;
        let mut loss_count = 0usize;
        for epoch in 0..cfg.local_epochs {
            let orders: Vec<Vec<usize>> = self
                .clients
                .iter()
                .map(|c| {
                    let mut order: Vec<usize> = (0..c.shard_len()).collect();
                    order.shuffle(&mut seed::stream(master, "batches", &[round as u64, epoch as u64, c.id as u64]));
                    order
                })
                .collect();
            for step in 0..steps {
                for (g, members) in groups.groups.iter().enumerate() {
                    let owner = owners[g];
                    let mut inputs = Vec::with_capacity(members.len());
                    let mut labels = Vec::with_capacity(members.len());
                    for &c in members {
                        let idx = &orders[c][step * batch..(step + 1) * batch];
                        let client = &self.clients[c];
                        let mut x = client.images(idx);
                        if sigma2 > 0.0 {
                            let mut rng = seed::stream(
                                master,
                                "noise",
                                &[round as u64, epoch as u64, step as u64, c as u64],
                            );
                            x = gaussian_mechanism(&x, sigma2, &mut rng)?;
                        }
                        inputs.push(x);
                        labels.push(client.labels(idx));
                    }
                    let (body, body_opt) = self.server.body_mut(owner)?;
                    let mut segs: Vec<Segments<'_>> = self
                        .clients
                        .iter_mut()
                        .filter(|c| members.binary_search(&c.id).is_ok())
                        .map(|c| Segments {
                            id: c.id,
                            head: &mut c.head,
                            tail: &mut c.tail,
                        })
                        .collect();
                    let at = |e: Error| Error::Client {
                        client: members[0],
                        batch: step,
                        source: Box::new(e),
                    };
                    let grads = group_gradients(&mut segs, body, &inputs, &labels).map_err(at)?;
                    body_opt.step(body, &grads.body).map_err(at)?;
                    drop(segs);
                    self.server.observe(round, epoch, step, owner, &grads.body_input);
                    for (i, &c) in members.iter().enumerate() {
                        let client = &mut self.clients[c];
                        client.head_opt.step(&mut client.head, &grads.heads[i]).map_err(at)?;
                        client.tail_opt.step(&mut client.tail, &grads.tails[i]).map_err(at)?;
                    }
                    loss_sum += grads.losses.iter().map(|&l| l as f64).sum::<f64>();
                    loss_count += grads.losses.len();
                }
            }
        }
        self.aggregate()?;
        Ok(loss_sum / loss_count as f64)
    }
}
