"""Sparse active-patch vision transformer for event-camera streams.

Pipeline: event recordings -> voxel-grid frames -> active-patch selection
-> variable-length transformer -> logits, with a closed-form compute-cost
model, a small training loop, and CPU throughput benchmarks.
"""

from ._backend import BACKEND_NAME, HAVE_NATIVE
from .costmodel import (
    CostReport,
    cost_report,
    crossover_n,
    mlp_flops,
    model_flops,
    model_macs,
    msa_flops,
    reconcile,
)
from .events import (
    EVENT_DTYPE,
    Event,
    EventRecording,
    parse_text_recording,
    read_binary,
    read_recording,
    synth_recording,
    write_binary,
    write_recording,
    write_text_recording,
)
from .kernels import OpCounter
from .patches import (
    PatchGrid,
    PatchSet,
    active_histogram,
    compute_active_ratio,
    flatten_patches,
    sample_threshold_mixed,
    scatter_patches,
    select_active,
)
from .train import TrainConfig, adamw_step, evaluate, fit, train_epoch
from .vit import (
    PAPER_CONFIG,
    TOY_CONFIG,
    ComponentCounters,
    ViTConfig,
    ViTParams,
    forward,
    init_params,
    load_checkpoint,
    loss_and_gradients,
    read_checkpoint,
    save_checkpoint,
    write_checkpoint,
)
from .voxel import (
    augment,
    build_voxel_grid,
    normalize_nonzero,
    read_grid,
    resize_pad,
    write_grid,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
