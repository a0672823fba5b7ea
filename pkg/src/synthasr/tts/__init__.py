from synthasr.tts.mas import AlignmentError, mas_align, monotonic_alignment
from synthasr.tts.model import (
    VARIANTS,
    DecoderConfig,
    SamplingConfig,
    TTSConfig,
    TTSModel,
    load_tts,
    parameter_breakdown,
    save_tts,
    synthesize_utterance,
)
from synthasr.tts.trunk import TrunkConfig, TrunkError, round_durations, upsample

__all__ = [
    "VARIANTS", "AlignmentError", "DecoderConfig", "SamplingConfig", "TTSConfig", "TTSModel",
    "TrunkConfig", "TrunkError", "load_tts", "mas_align", "monotonic_alignment",
    "parameter_breakdown", "round_durations", "save_tts", "synthesize_utterance", "upsample",
]
