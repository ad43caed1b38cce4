"""Semi-Markov CRF event transcription toolkit."""

from ._core import (  # noqa: F401
    InfeasibleError,
    IntervalScores,
    ValidationError,
    evaluate,
    gradcheck_suite,
    ideal_score_matrix,
    interval_marginals,
    learning_rate,
    log_likelihood,
    log_partition,
    map_decode,
    numerical_rank,
    quantile_clip,
    rank_factorize,
    read_scores,
    scaled_inner_product_scores,
    split_and_stitch,
    total_score,
    verify_expressiveness,
)
