from .export import (
    ChecksumError,
    ExportedModel,
    ExportError,
    export_target,
    from_bytes,
    graph_descriptor,
    load_exported,
    save_exported,
    to_bytes,
)
from .layers import FAMILIES, AugBatchNorm, AugConv, AugDWConv, AugFC, AugLayer, HWSContext, aug_channels
from .model import ArchSpec, AugModel, Block, BlockSpec, ChannelGroup
from .reorder import AlignmentError, apply_permutation, channel_importance, importance_order, reorder_weights
from .train import (
    EpochRecord,
    TrainConfig,
    TrainState,
    apply_mutation,
    evaluate,
    flip_schedule,
    init_state,
    joint_step,
    make_optimizer,
    run_epoch,
    train,
)
