from synthasr.asr.ctc import CTCError, ctc_loss, greedy_decode
from synthasr.asr.decode import DecodeError, LexiconTrie, beam_decode, prefix_search
from synthasr.asr.lexicon import AsrVocab, Lexicon, LexiconError
from synthasr.asr.lm import NGramLM
from synthasr.asr.model import AsrConfig, AsrModel, load_asr, save_asr
from synthasr.asr.specaug import MaskSpec, specaugment
from synthasr.asr.train import AsrTrainSettings, train_asr

__all__ = [
    "AsrConfig", "AsrModel", "AsrTrainSettings", "AsrVocab", "CTCError", "DecodeError", "Lexicon",
    "LexiconError", "LexiconTrie", "MaskSpec", "NGramLM", "beam_decode", "ctc_loss",
    "greedy_decode", "load_asr", "prefix_search", "save_asr", "specaugment", "train_asr",
]
