//! Evaluation metrics and embedding-quality tools.

pub mod clustering;
pub mod embedding;
pub mod intrinsic;
pub mod neighbors;
pub mod ranking;
pub mod report;

pub use clustering::{kmeans, nmi, KMeans};
pub use embedding::{
    extract_code_embeddings, format_embeddings, parse_embeddings, read_embeddings, write_embeddings,
    CodeEmbeddings,
};
pub use intrinsic::{score_embeddings, EmbeddingScores, KMEANS_MAX_ITERS};
pub use neighbors::{nearest, neighbor_sets, nns_accuracy_at_k, Distance};
pub use ranking::{mean_precision_at_k, pr_auc, precision_at_k, rank_categories};
pub use report::{MetricReport, NNS_KS, PRECISION_KS, REPORT_VERSION};
