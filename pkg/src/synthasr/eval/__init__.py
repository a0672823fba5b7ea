from synthasr.eval.conditions import SynthesisCondition, SynthesisJob, build_condition
from synthasr.eval.corpus import CorpusManifest, CvSplit, Utterance, cv_split, load_manifest
from synthasr.eval.metrics import EditCounts, WerResult, bootstrap_ci, wer
from synthasr.eval.mos import MosClient, MosClientConfig, MosError, mos_score
from synthasr.eval.report import MetricRow, from_csv, render_report, to_csv

__all__ = [
    "CorpusManifest", "CvSplit", "EditCounts", "MetricRow", "MosClient", "MosClientConfig",
    "MosError", "SynthesisCondition", "SynthesisJob", "Utterance", "WerResult", "bootstrap_ci",
    "build_condition", "cv_split", "from_csv", "load_manifest", "mos_score", "render_report",
    "to_csv", "wer",
]
