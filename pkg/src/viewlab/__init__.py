"""Desk-scale laboratory for adversarial camera viewpoints.

Pipeline: procedural 3D objects rendered by an analytic volume renderer,
classified by a small trainable network, attacked by a black-box method
that learns a Gaussian-mixture distribution over worst-case viewpoints,
and defended by alternating adversarial training over that distribution.
"""

from .classifier import (
    Architecture,
    ClassifierParams,
    LossOracle,
    TrainBatch,
    accuracy,
    cross_entropy,
    forward,
    forward_batch,
    init_classifier,
    load_classifier,
    save_classifier,
    train_step,
)
from .errors import (
    DegenerateBounds,
    DegenerateWeight,
    LabelOutOfRange,
    NonFiniteInput,
    OutOfBounds,
    ShapeMismatch,
    ViewLabError,
)
from .evalbench import (
    BenchReport,
    LandscapeGrid,
    attack_comparison_suite,
    attack_success_rate,
    consistency_eval,
    emit_dataset,
    landscape_similarity,
    loss_landscape_grid,
    random_search_attack,
    training_comparison_suite,
)
from .geometry import (
    CameraIntrinsics,
    CameraPose,
    Viewpoint,
    ViewpointBounds,
    camera_pose,
    default_bounds,
    generate_rays,
    inverse_transform,
    make_bounds,
    rotation_matrix,
    tanh_transform,
)
from .gmvfool import (
    AttackConfig,
    AttackResult,
    ComponentSample,
    EntropyEstimate,
    MixtureParams,
    entropy_estimate,
    gmvfool_attack,
    init_mixture,
    log_density_v,
    nes_gradients,
    reparam_sample,
    sample_gamma,
    update_params,
)
from .renderer import (
    Primitive,
    RenderedImage,
    SceneField,
    field_eval,
    load_scene,
    make_object_library,
    render_image,
    render_ray,
    render_rays,
    render_viewpoint,
    save_png,
    save_scene,
)
from .viat import (
    TrainConfig,
    TrainState,
    make_training_batch,
    pretrain_classifier,
    share_distribution,
    stochastic_inner_update,
    viat_train,
)

__version__ = "0.1.0"
