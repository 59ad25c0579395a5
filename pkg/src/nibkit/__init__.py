"""nibkit: deterministic bottleneck-path attribution for dual-encoder
image-text models, with the stochastic-bottleneck and input-gradient
baselines it is evaluated against."""

from .attribution import (
    AttributionMap,
    PathSpec,
    SaliencyImage,
    implementation_invariance_probe,
    narrowed_score,
    nib_attribute,
    upsample_bilinear,
)
from .baselines import (
    M2IBConfig,
    MethodId,
    compute_attribution,
    fast_ig,
    gradcam_layer,
    integrated_gradients,
    m2ib_attribute,
    random_attribution,
    saliency_map,
)
from .bundle import read_bundle, read_bundle_file, write_bundle, write_bundle_file
from .encoder import (
    DualEncoderModel,
    HiddenState,
    ModelConfig,
    encode_image,
    encode_image_prefix,
    encode_image_suffix,
    encode_text,
    encode_text_prefix,
    encode_text_suffix,
    init_toy,
    similarity,
    weight_schema,
)
from .errors import NibkitError
from .evaluation import (
    MetricReport,
    Sample,
    apply_image_mask,
    apply_text_mask,
    beta_sweep,
    build_report,
    confidence_drop,
    confidence_increase,
    seed_variance,
    throughput,
)
from .info_theory import (
    GaussianDiag,
    JointPMF,
    kl_gaussian,
    mutual_info_discrete,
    sup_mi_bound,
    verify_narrowing,
)
from .model_io import load_dataset, load_model, save_dataset, save_model
from .tensor import Graph, Tensor, finite_diff_grad

__version__ = "0.1.0"
