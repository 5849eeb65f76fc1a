"""Generalized residual vector quantization toolkit.

Lossy compression of high-dimensional vectors into short additive codes,
plus approximate nearest-neighbor search that runs entirely over the
compressed form. Residual quantization, product quantization and plain
k-means fall out as special cases of one training loop.
"""

__version__ = "0.1.0"

from .analysis import (
    MutualInfoMatrix,
    encoding_entropy,
    error_vs_stages,
    mutual_info_matrix,
    mutual_information,
)
from .clustering import (
    EpsPenalty,
    KMeansConfig,
    TransitionSchedule,
    kmeans,
    pca_basis,
    regularized_assign,
    transition_cluster,
)
from .dataio import (
    gen_synthetic,
    read_codes,
    read_model,
    read_vecs,
    write_codes,
    write_model,
    write_vecs,
)
from .encode import (
    CrossDotTables,
    build_cross_tables,
    encode_dataset,
    eps_quantizer_fit,
    epsilons_from_tables,
    exhaustive_encode,
    exhaustive_encode_batch,
    multipath_encode,
    regularized_encode,
    update_cross_tables,
)
from .model import (
    CodeMatrix,
    EpsQuantizer,
    QuantModel,
    codebook_variances,
    epsilon_of,
    quantization_error,
    reconstruct,
    reconstruct_batch,
    reorder_by_variance,
    residuals,
)
from .search import (
    QueryTable,
    SearchResult,
    adc_distance,
    adc_scores,
    build_query_table,
    exhaustive_search,
    ground_truth,
    recall_at_r,
    search_batch,
)
from .train import (
    EpsRegularization,
    TrainConfig,
    TrainReport,
    grvq_train,
    online_update,
    pq_train,
    rvq_train,
    train_eps_eliminated,
)
