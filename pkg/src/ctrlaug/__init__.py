"""Class-balanced generative augmentation for semantic segmentation datasets.

The pipeline plans which real images to regenerate for which classes, builds
caption+class prompts and blended edge/boundary control images, dispatches
them to a controllable generation backend, and merges the synthetic samples
back into the dataset with balance statistics.
"""

from .blend import BlendWeights, blend_priors, export_control_image
from .dataset import (
    ClassId,
    DatasetIndex,
    DatasetError,
    LabelMask,
    SegSample,
    classes_of,
    decode_mask,
    encode_mask,
    load_index,
    write_sample,
)
from .generation import (
    GenerationRequest,
    GenerationResult,
    HttpBackend,
    MockBackend,
    execute_plan,
)
from .metrics import (
    class_counts,
    confusion_matrix,
    entropy,
    imbalance_ratio,
    merge_datasets,
    miou,
)
from .pipeline import PipelineConfig, run_pipeline
from .planner import GenerationPlan, PlanEntry, auto_n_balance, make_plan
from .priors import CannyParams, PriorImage, canny_edges, external_prior, mask_boundaries
from .prompts import PromptBundle, append_class_prompt, resolve_caption, simple_class_prompt

__version__ = "0.1.0"
