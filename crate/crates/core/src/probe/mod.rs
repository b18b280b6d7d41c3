//! Linear-probe evaluation of frozen embeddings: F1, bootstraps, Welch
//! tests, and person-dependent / person-independent protocols.

mod eval;
mod exchange;
mod linear;
mod metrics;

pub use eval::{
    active_aus, embed_frames, eval_person_dependent, eval_person_independent, EmbeddingSource, FoldDescriptor,
    ProbeResult, SplitDescriptor,
};
pub use exchange::{EmbeddingRow, EmbeddingTable, EMBEDDING_FORMAT};
pub use linear::{fit_probe, ProbeConfig, ProbeModel};
pub use metrics::{bootstrap_f1, compare_models, f1_score, percentile, BootstrapSummary};
