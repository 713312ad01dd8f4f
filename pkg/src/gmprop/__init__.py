"""gmprop: train networks by propagating Gaussian moments forward and
running layer-wise Gaussian conditional inference backward, with no
gradients anywhere."""

from .errors import (
    ConfigError,
    DataError,
    GmpropError,
    NumericError,
    SequencingError,
)
from .gaussian import (
    Activation,
    ActivationLinearization,
    GaussianVector,
    IDENTITY,
    LEAKY_RELU,
    MixtureStats,
    RELU,
    SIGMOID,
    TANH,
    gaussian_product_moments,
    linear_combination_moments,
    linearize_activation,
    mixture_reduce,
)
from .layers import (
    CrossCov,
    LayerCache,
    LayerKind,
    LayerParams,
    LayerSpec,
    avg_pool_forward,
    batch_norm_forward,
    conv_forward,
    cross_cov_normalized,
    fc_forward,
    layer_norm_forward,
    transposed_conv_forward,
)
from .inference import (
    InferenceStats,
    ObservationModel,
    ParameterStore,
    decay_noise,
    infer_minibatch,
    output_update,
    smooth_layer,
)
from .network import (
    InitPolicy,
    Network,
    NetworkConfig,
    build,
    classify,
    encode_target,
    format_config,
    insert_normalization,
    parse_config,
    preset,
    preset_names,
)

__version__ = "0.1.0"
