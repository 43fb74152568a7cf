"""effcxr: compound-scaled convolutional classifiers for chest X-ray screening.

The package covers the full loop at library level: architecture synthesis with
exact cost reports, a from-scratch autodiff kernel set, binary weight files
with a transfer workflow, dataset assembly with reproducible augmentation,
flat and hierarchical classification with activation maps, and an Adam /
reduce-on-plateau training stack.  The ``effcxr`` command exposes the same
capabilities from the shell.
"""

from .arch import (
    ArchSpec,
    HeadSpec,
    ScalingConfig,
    StageSpec,
    VARIANTS,
    build_arch,
    build_scaled_arch,
    parse_arch,
    round_channels,
    round_repeats,
    scale,
    serialize_arch,
    toy_arch,
)
from .classify import (
    CLASSES,
    FlatModel,
    HierModel,
    LEAF_CLASSES,
    Prediction,
    ROOT_CLASSES,
    activation_map,
    predict_flat,
    predict_hier,
)
from .cost import CostReport, cost_report, count_macs, count_params, estimate_memory
from .data import (
    AugRecipe,
    AugSpec,
    DatasetConfig,
    Image,
    ImageLoader,
    ManifestEntry,
    apply_config,
    augment,
    build_covidx,
    hierarchical_relabel,
    load_image,
    normalize,
    read_manifest,
    resize,
    write_manifest,
)
from .evaluate import (
    CompareRow,
    ConfusionMatrix,
    EvalResult,
    MetricsReport,
    compare_report,
    compute_metrics,
    evaluate,
)
from .gradcheck import GradCheckReport, check_gradients
from .network import Network
from .ops import LayerKind, LayerParams
from .tensor import Tensor
from .train import AdamState, TrainConfig, adam_step, lr_trace, train
from .weights import (
    ParamStore,
    TransferPlan,
    apply_transfer,
    identity_transfer_plan,
    init_store,
    load_weights,
    save_weights,
)

__version__ = "0.1.0"
