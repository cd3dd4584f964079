//! Datasets, model fitting and batch attack experiments.

mod dataset;
mod experiment;
mod pgm;
mod toy;

pub use dataset::{
    load_idx, minmax_normalize, write_idx, Dataset, Split, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
    TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS,
};
pub use experiment::{
    l2_statistics, run_experiment, run_experiment_with, sample_seed, select_correct, Execution,
    Experiment, ExperimentConfig, ExperimentReport, SampleSummary, Selection, DEFAULT_SAMPLES,
};
pub use pgm::{decode_pgm, encode_pgm, export_image};
pub use toy::{render_digit, toy_digits, ToyConfig, TOY_CLASSES, TOY_SIDE};

use rayon::prelude::*;

use crate::classifier::ClassifierModel;
use crate::encoder::{train, EncoderParams, PresenceMode, TrainConfig};
use crate::error::{Error, Result};

/// A trained surrogate with both k-means classifiers and their test accuracy.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub encoder: EncoderParams,
    pub prior: ClassifierModel,
    pub posterior: ClassifierModel,
    pub prior_accuracy: f64,
    pub posterior_accuracy: f64,
}

impl TrainedModels {
    pub fn classifier(&self, mode: PresenceMode) -> &ClassifierModel {
        match mode {
            PresenceMode::Prior => &self.prior,
            PresenceMode::Posterior => &self.posterior,
        }
    }

    pub fn accuracy(&self, mode: PresenceMode) -> f64 {
        match mode {
            PresenceMode::Prior => self.prior_accuracy,
            PresenceMode::Posterior => self.posterior_accuracy,
        }
    }
}

/// Presence vectors of every image in `dataset`.
pub fn presences(
    encoder: &EncoderParams,
    dataset: &Dataset,
    mode: PresenceMode,
) -> Result<Vec<Vec<f64>>> {
    dataset
        .images
        .par_iter()
        .map(|x| encoder.presence_for(x, mode))
        .collect()
}

/// Trains the encoder with one capsule per class, fits a k-means classifier
/// per presence mode on the training presences (`k` = class count, seeded by
/// `config.seed`) and scores both on `test`.
pub fn fit_models(
    config: &TrainConfig,
    train_set: &Dataset,
    test: &Dataset,
) -> Result<TrainedModels> {
    if train_set.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = train_set.classes.max(test.classes);
    let encoder = train(config, &train_set.images, &train_set.labels, classes)?;
    let fit = |mode| -> Result<(ClassifierModel, f64)> {
        let points = presences(&encoder, train_set, mode)?;
        let model = ClassifierModel::fit(&points, &train_set.labels, classes, mode, config.seed)?;
        let accuracy = model.accuracy(&presences(&encoder, test, mode)?, &test.labels)?;
        Ok((model, accuracy))
    };
    let (prior, prior_accuracy) = fit(PresenceMode::Prior)?;
    let (posterior, posterior_accuracy) = fit(PresenceMode::Posterior)?;
    Ok(TrainedModels {
        encoder,
        prior,
        posterior,
        prior_accuracy,
        posterior_accuracy,
    })
}
