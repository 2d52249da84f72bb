"""Physics-informed degradation simulation for single-lens infrared
imaging: PSF synthesis, spatially varying blur, sensor noise, blur-index
and gate maps, a bridge-block reference forward pass, and paired
dataset generation."""

from .blurmap import (
    BlurIndexMap,
    GateMaps,
    GateParams,
    build_blur_index_map,
    compute_gate_maps,
    psf_blur_factor,
)
from .bridge import (
    BridgeWeights,
    NormParams,
    bridge_forward,
    identity_weights,
    pals_branches,
    random_weights,
    se_reweight,
)
from .config import PipelineConfig, parse_config, serialize_config
from .dataset import (
    Annotation,
    MetricReport,
    SampleRecord,
    build_dataset,
    image_metrics,
    rescale_annotations,
)
from .degrade import (
    BlendWeights,
    DegradationConfig,
    apply_noise,
    degrade_image,
    make_blend_weights,
)
from .optics import (
    PsfGrid,
    PsfKernel,
    PupilSpec,
    WavefrontField,
    build_psf_grid,
    build_pupil,
    psf_from_pupil,
    resample_psf_to_detector,
    zernike_wavefront,
)

__version__ = "0.1.0"
