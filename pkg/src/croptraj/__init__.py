"""Latent-space growth trajectories for time-lapse crop feature vectors.

The pipeline: backbone feature vectors go through a small pretext-trained
encoder, the latent codes are projected to 2D, per-track motion in that
plane is summarized as position-velocity samples, and a Gaussian mixture
over those samples is conditioned and integrated to forecast growth.
"""

from .embedding import (
    EmbedConfig,
    PlanarEmbedding,
    curve_params,
    fit_embedding,
    fit_planar_embedding,
    fuzzy_weights,
    knn_graph,
    load_embedding,
    save_embedding,
    transform_new,
)
from .evaluation import (
    EvalReport,
    eval_heads,
    eval_unseen_classes,
    format_report_table,
    mae_days,
    percent_agreement,
)
from .features import (
    FeatureRecord,
    FeatureSet,
    Scale,
    SpatialTag,
    normalize_time,
    split_train_test,
)
from .pretext import (
    HeadConfig,
    PretextModel,
    TrainConfig,
    build_model,
    encode,
    forward,
    load_model,
    predict,
    save_model,
    total_loss,
    train,
)
from .synthetic import SynthConfig, gen_synthetic
from .tltf import read_features, read_features_file, write_features, write_features_file
from .trajectory import (
    ConditionalVelocity,
    GaussianMixture,
    PVSample,
    Track,
    compute_velocities,
    condition_velocity,
    fit_bgmm,
    fit_group_mixtures,
    load_mixture,
    rollout,
    save_mixture,
)

__version__ = "0.1.0"
