//! Instruction-conditioned contrastive embedding training and multimodal
//! retrieval evaluation.
//!
//! The crate covers prompt rendering, source-balanced batch sampling, the
//! InfoNCE loss with a gradient cache, a small MLP encoder with a low-rank
//! adapter, exact cosine retrieval with Hit@1 / NDCG@k, report aggregation
//! and the on-disk formats used by the `mmembed` binary.

pub mod contrastive;
pub mod dataio;
pub mod encoder;
pub mod error;
pub mod formatting;
pub mod retrieval;
pub mod sampler;
pub mod selftest;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use contrastive::{
    direct_backprop, grad_cache_run, info_nce_backward, info_nce_forward, mask_false_negatives,
    ContrastiveBatch, EmbeddingModel, HardNegativePolicy, LossConfig, LossOutput, TrainingBatch,
};
pub use encoder::{
    merge_adapter, EncoderGrads, LowRankAdapter, Optimizer, OptimizerKind, ToyEncoder,
};
pub use error::{Error, Result};
pub use formatting::{
    render_query, render_target, sample_frame_indices, Modality, ModalityCode, TemplateTable,
    VisualTokenTable,
};
pub use retrieval::{
    aggregate, emit_report, evaluate_task, hit_at_1, ndcg_at_k, rank_candidates, CandidatePool,
    CategoryMap, EvalReport, Pools, ReportFormat, TaskResult,
};
pub use sampler::{BatchSampler, BatchSpec, SamplingPlan, SourceTable};
pub use tensor::{
    cosine_sim, l2_normalize, log_sum_exp, similarity_matrix, DenseMatrix, RowVector,
};
pub use train::{train, FeatureSource, TrainConfig, TrainOutcome};
