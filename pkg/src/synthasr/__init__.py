"""Synthetic-data pipeline: duration-based TTS with interchangeable decoders,
a CTC conformer recognizer trained on its output, and the evaluation protocol."""

__version__ = "0.1.0"
