//! Descriptor extraction from a trained checkpoint.

use std::path::Path;

use rayon::prelude::*;

use super::{Checkpoint, HarnessError, TrainConfig};
use crate::arch::{build, ForwardMode, Network};
use crate::data::{normalize_pixels, WordSample};
use crate::diffcore::Tape;
use crate::phoc::PhocConfig;
use crate::retrieval::{DescriptorEntry, DescriptorSet};

/// Rebuild the configured architecture and bind the checkpoint to it.
/// Fails with `ArchMismatch` when the checkpoint belongs to a different
/// graph (architecture, PHOC dimension, or channel layout).
pub fn load_network(
    config: &TrainConfig,
    checkpoint: impl AsRef<Path>,
) -> Result<(Network, u64), HarnessError> {
    let phoc = config.phoc_config()?;
    let graph = build(config.arch_kind()?, phoc.dim());
    let (network, _adam, iteration) = Checkpoint::load(checkpoint)?.into_network(graph)?;
    Ok((network, iteration))
}

/// Run every sample through the network in eval phase (dropout inactive,
/// so extraction is deterministic) and collect sigmoid attribute vectors
/// keyed by sample id with normalized transcriptions.
pub fn extract_descriptors(
    network: &Network,
    phoc: &PhocConfig,
    samples: &[WordSample],
) -> Result<DescriptorSet, HarnessError> {
    let entries: Vec<DescriptorEntry> = samples
        .par_iter()
        .map(|sample| {
            let image = normalize_pixels(&sample.image);
            let mut tape = Tape::new();
            let (output, _) = network.forward(&mut tape, image, ForwardMode::Eval)?;
            Ok(DescriptorEntry {
                sample_id: sample.sample_id.clone(),
                transcription: phoc.normalize(&sample.transcription),
                descriptor: tape.value(output).data().to_vec(),
            })
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(DescriptorSet::new(entries)?)
}
