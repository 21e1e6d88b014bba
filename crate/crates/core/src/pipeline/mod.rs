//! Two-stage synthesis: stage-one identities, stage-two identity-preserving
//! renders conditioned on warped line maps, corpus manifests, and the
//! real-analog corpus the models learn from.

mod corpus;
mod manifest;
mod real;
mod reference;
mod synth;

pub use corpus::{atomic_dir, build_corpus, record_path, CorpusConfig, CorpusModels};
pub use manifest::{DatasetManifest, ManifestRecord, Source};
pub use real::{generate_real_corpus, Capture, RealCorpusConfig};
pub use reference::{
    identity_preservation, reference_schedule, synthesize_reference, train_reference, PreservationReport, ReferenceConfig, ReferenceModels,
    SyntheticSet,
};
pub use synth::{quality_label, render_identities, render_variations, synthesize_identities, QualityPolicy, Render, SynthIdentity};
