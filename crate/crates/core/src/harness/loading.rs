use crate::config::{DataSource, ExperimentConfig};
use crate::data::{
    carve_attacker, load_cifar_binary, load_idx, partition_iid, subset_fraction, synthetic_blobs, synthetic_digits,
    BlobOptions, Dataset, SplitTag,
};
use crate::error::{Error, Result};
use crate::federation::FederatedData;
use crate::seed;

/// Everything a run needs: client shards, the evaluation set and the
/// attacker's auxiliary set, all index-disjoint.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub federated: FederatedData,
    pub attacker: Dataset,
}

/// Raw train and test splits of the configured source.
pub fn load_source(source: &DataSource, data_seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = match source {
        DataSource::SyntheticDigits { train, test } => (
            synthetic_digits(*train, seed::derive(data_seed, "digits", &[0]))?,
            synthetic_digits(*test, seed::derive(data_seed, "digits", &[1]))?,
        ),
        DataSource::Blobs {
            classes,
            train,
            test,
            shape,
        } => {
            // One draw so both splits share the class patterns.
            let all = synthetic_blobs(
                *classes,
                train + test,
                shape,
                seed::derive(data_seed, "blobs", &[]),
                BlobOptions::default(),
            )?;
            let idx: Vec<usize> = (0..train + test).collect();
            (all.select(&idx[..*train]), all.select(&idx[*train..]))
        }
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => (load_idx(train_images, train_labels)?, load_idx(test_images, test_labels)?),
        DataSource::Cifar { train, test } => (load_cifar_binary(train)?, load_cifar_binary(test)?),
    };
    if train.image_shape() != test.image_shape() {
        return Err(Error::Data(format!(
            "train images are {:?} but test images are {:?}",
            train.image_shape(),
            test.image_shape()
        )));
    }
    let classes = train.classes().max(test.classes());
    Ok((
        train.with_classes(classes)?.with_split(SplitTag::Train),
        test.with_classes(classes)?.with_split(SplitTag::Test),
    ))
}

/// Loads, subsamples, partitions and carves the datasets of `config`.
pub fn load_data(config: &ExperimentConfig) -> Result<ExperimentData> {
    let ds = config.data_seed();
    let (train, test) = load_source(&config.data.source, ds)?;
    let train = subset_fraction(&train, config.data.fraction, &mut seed::stream(ds, "subset", &[0]))?;
    let test = subset_fraction(&test, config.data.test_fraction, &mut seed::stream(ds, "subset", &[1]))?;
    let plan = partition_iid(train.len(), config.clients, seed::derive(ds, "partition", &[]))?;
    let shards: Vec<Dataset> = plan.shards.iter().map(|s| train.select(s)).collect();
    if let Some(small) = shards.iter().map(Dataset::len).min() {
        if small < config.batch_size {
            return Err(Error::config(
                "batch_size",
                format!("a client shard has only {small} samples, fewer than one batch of {}", config.batch_size),
            ));
        }
    }
    let (attacker, eval) = carve_attacker(&test, &mut seed::stream(ds, "carve", &[]))?;
    Ok(ExperimentData {
        federated: FederatedData { shards, test: eval },
        attacker,
    })
}
