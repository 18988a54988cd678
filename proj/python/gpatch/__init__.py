"""Graph-based cold-start recommendation: GWarmer and patching networks."""

from ._gpatch import (  # noqa: F401
    BprConfig,
    DataError,
    EmbeddingTable,
    Error,
    FeatureTable,
    FitResult,
    Graph,
    LayerReps,
    ModelParams,
    ModelShape,
    NumericError,
    Scorer,
    Side,
    Split,
    SplitConfig,
    SyntheticData,
    TaskMode,
    TrainConfig,
    UsageError,
    WalkConfig,
    __version__,
    auc,
    evaluate,
    fit,
    make_split,
    make_synthetic,
    metrics_at_n,
    paired_ttest,
    precompute,
    recommend,
    run_embed,
    run_eval,
    run_precompute,
    run_split,
    run_train,
    sample_walks,
    train_bpr_mf,
)
