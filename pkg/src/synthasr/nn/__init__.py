from synthasr.nn.autograd import GradientError, backward, numerical_gradient
from synthasr.nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from synthasr.nn.layers import (
    ConformerBlock,
    MultiHeadAttention,
    Postnet,
    TransformerBlock,
    TransformerStack,
    ZoneoutLSTMCell,
    sequence_mask,
    zoneout_lstm_step,
)
from synthasr.nn.optim import (
    ASR_SCHEDULE,
    DIFFUSION_SCHEDULE,
    TTS_SCHEDULE,
    LrSchedule,
    Optimizer,
    OptimizerConfig,
    lr_at,
    optimizer_step,
)

__all__ = [
    "ASR_SCHEDULE", "DIFFUSION_SCHEDULE", "TTS_SCHEDULE", "CheckpointError", "ConformerBlock",
    "GradientError", "LrSchedule", "MultiHeadAttention", "Optimizer", "OptimizerConfig", "Postnet",
    "TransformerBlock", "TransformerStack", "ZoneoutLSTMCell", "backward", "load_checkpoint",
    "lr_at", "numerical_gradient", "optimizer_step", "save_checkpoint", "sequence_mask",
    "zoneout_lstm_step",
]
