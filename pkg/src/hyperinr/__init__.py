"""Hypernetwork-generated sine-network representations with latent-space
conditioning diagnostics and downstream evaluation."""
import os as _os

# Pin BLAS worker pools before numpy/torch load them; overridable via env.
_os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
_os.environ.setdefault("OMP_NUM_THREADS", "1")
_os.environ.setdefault("MKL_NUM_THREADS", "1")

from .arch import (  # noqa: E402
    HyperNetArch,
    HyperNetParams,
    MainNetArch,
    MainNetWeights,
    flatten_hyper,
    flatten_main,
    unflatten_hyper,
    unflatten_main,
)
from .adam import AdamState, adam_step  # noqa: E402
from .errors import (  # noqa: E402
    ConfigError,
    FormatError,
    NumericError,
    ShapeError,
    StateError,
    TrainingError,
)
from .loss import SampleBatch, mse_from_loss, recon_loss, total_loss  # noqa: E402
from .nets import (  # noqa: E402
    hyper_backward,
    hyper_forward,
    hyper_jacobian_z,
    init_weights,
    main_backward,
    main_forward,
    main_jvp,
)
from .bundle import ModelBundle, load_bundle, save_bundle  # noqa: E402
from .eigen import eigen_symmetric  # noqa: E402
from .training import (  # noqa: E402
    TrainingData,
    TrainLog,
    TrainResult,
    TrainSettings,
    infer_latents,
    train_joint,
)

__version__ = "0.1.0"
