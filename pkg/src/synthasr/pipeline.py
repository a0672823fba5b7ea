"""Pipeline stages behind the command line.

Artifact layout under the output directory::

    align/       durations.bin, flow.ckpt, vocoder.ckpt (learned vocoder only)
    tts/<v>/     model.ckpt
    synth/<v>/<cond>/   manifest.tsv, wav/, png/       (<v> may be "control")
    synth/<v>/cv/       synthesized held-out set for sWER and MOS
    asr/<sys>/   model.ckpt, lm.json                   (<sys> = "<v>-<cond>" or "real")
    eval/<sys>/  metrics.json, hyp_<test set>.tsv
    report/      summary.txt, conditions.txt, metrics.csv

Every stage writes ``run.json`` next to its outputs: command, config hash,
seed and sha256 of every input and output file.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from synthasr import dsp
from synthasr.asr.decode import LexiconTrie, beam_decode
from synthasr.asr.lexicon import AsrVocab, Lexicon, spelling_g2p, words_to_symbols
from synthasr.asr.lm import NGramLM
from synthasr.asr.model import AsrConfig, load_asr, save_asr
from synthasr.asr.train import AsrTrainSettings, train_asr
from synthasr.config import ConfigError, config_digest
from synthasr.eval.conditions import SynthesisCondition, build_condition
from synthasr.eval.corpus import CorpusManifest, Utterance, cv_split, load_manifest, load_speakers
from synthasr.eval.metrics import wer
from synthasr.eval.mos import MosClient, MosClientConfig, mos_score, mos_summary
from synthasr.eval.report import MetricRow, render_report
from synthasr.nn.optim import DIFFUSION_SCHEDULE
from synthasr.tts.archive import load_durations, save_durations
from synthasr.tts.model import (
    DecoderConfig,
    SamplingConfig,
    TTSConfig,
    TTSModel,
    load_tts,
    save_tts,
    synthesize_utterance,
)
from synthasr.tts.train import TTSItem, TTSTrainSettings, extract_durations, train_tts
from synthasr.tts.trunk import TrunkConfig
from synthasr.vocoder import VocoderConfig, load_vocoder, save_vocoder, train_vocoder

log = logging.getLogger(__name__)

CONTROL = "control"


class MissingArtifact(FileNotFoundError):
    def __init__(self, path, producer: str):
        super().__init__(f"missing artifact {path}; produce it with `{producer}`")
        self.path, self.producer = Path(path), producer


class NumericalFailure(RuntimeError):
    pass


# ---------------------------------------------------------------- helpers

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(path, producer: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(path, producer)
    return path


def _files(paths) -> list[Path]:
    out = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            out += sorted(q for q in p.rglob("*") if q.is_file() and q.name != "run.json")
        elif p.exists():
            out.append(p)
    return out


def write_run_manifest(directory, command: str, cfg: dict, inputs, outputs, out_root,
                       extra: dict | None = None) -> Path:
    root = Path(out_root).resolve()

    def rel(p):
        p = Path(p).resolve()
        try:
            return str(p.relative_to(root))
        except ValueError:
            return str(p)

    record = {
        "command": command,
        "config_hash": config_digest(cfg),
        "seed": cfg["seed"],
        "inputs": {rel(p): sha256_file(p) for p in _files(inputs)},
        "outputs": {rel(p): sha256_file(p) for p in _files(outputs)},
    }
    record.update(extra or {})
    path = Path(directory) / "run.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def feature_config(cfg: dict, which: str) -> dsp.FeatureConfig:
    """``features.tts`` / ``features.asr`` from the config, or the built-in defaults."""
    section = cfg.get("features", {}).get(which)
    if section is not None:
        return dsp.FeatureConfig(**section)
    return dsp.TTS_FEATURES if which == "tts" else dsp.ASR_FEATURES


class Context:
    """Corpus-level objects shared by all stages."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        paths = cfg["paths"]
        self.speakers = load_speakers(paths["speakers"])
        self.manifest = load_manifest(paths["train_manifest"], self.speakers)
        self.lexicon = Lexicon.load(paths["lexicon"])
        self.split = cv_split(self.manifest, cfg.get("split", {}).get("cv_per_speaker", 1), cfg["seed"])
        self.vocab = AsrVocab(tuple(self.lexicon.phonemes()))
        self.tts_symbols = self.vocab.symbols[1:]
        self.g2p = spelling_g2p() if cfg.get("lexicon", {}).get("g2p_fallback", True) else None
        self.tts_features = feature_config(cfg, "tts")
        self.asr_features = feature_config(cfg, "asr")

    def phoneme_ids(self, text: str) -> list[int]:
        """TTS input ids: recognizer symbols without the blank."""
        return [i - 1 for i in self.vocab.encode(words_to_symbols(text.split(), self.lexicon, self.g2p))]

    def new_texts(self) -> list[str]:
        path = self.cfg["paths"].get("new_text")
        if not path:
            return []
        return [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]

    def tts_item(self, utt: Utterance, manifest: CorpusManifest) -> TTSItem:
        wav = dsp.read_wav(manifest.audio(utt))
        mel = dsp.log_mel(wav, self.tts_features).frames
        return TTSItem(utt.utt_id, self.phoneme_ids(utt.text), self.speakers.index(utt.speaker), mel)

    def trunk_config(self) -> TrunkConfig:
        return TrunkConfig(vocab_size=len(self.tts_symbols), num_speakers=len(self.speakers),
                           n_mels=self.tts_features.n_mels, **self.cfg.get("trunk", {}))


def _seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % (2 ** 32))


def _decoder_config(cfg: dict, variant: str, section: str = "decoder") -> DecoderConfig:
    dec = dict(cfg.get("decoder", {}))
    dec.update(cfg.get(section, {}) if section != "decoder" else {})
    dec["variant"] = variant
    return DecoderConfig(**dec)


def _tts_settings(cfg: dict, section: dict, variant: str) -> TTSTrainSettings:
    section = dict(section)
    diffusion_schedule = section.pop("diffusion_schedule", None)
    if variant == "diffusion":
        section["schedule"] = diffusion_schedule or DIFFUSION_SCHEDULE
    section.setdefault("seed", cfg["seed"])
    return TTSTrainSettings(**section)


def _checked(losses, what: str):
    if not losses or not np.all(np.isfinite(losses)):
        raise NumericalFailure(f"non-finite loss while training {what}")
    return losses


# ---------------------------------------------------------------- align

def run_align(cfg: dict, out: Path) -> Path:
    """Train the flow decoder with alignment search and write the duration archive."""
    _seed_everything(cfg["seed"])
    ctx = Context(cfg)
    out_dir = Path(out) / "align"
    out_dir.mkdir(parents=True, exist_ok=True)
    items = [ctx.tts_item(u, ctx.manifest) for u in ctx.split.train.utterances]
    section = cfg.get("align", {})
    model = TTSModel(TTSConfig(ctx.trunk_config(), _decoder_config(cfg, "flow", "align_decoder")))
    settings = _tts_settings(cfg, section.get("training", {}), "flow")
    losses = _checked(train_tts(model, items, settings, align=True), "the aligner")
    durations = extract_durations(model, items)
    save_durations(out_dir / "durations.bin", durations, ctx.tts_symbols)
    save_tts(out_dir / "flow.ckpt", model, meta={"final_loss": losses[-1]}, epoch=settings.epochs)
    voc = cfg.get("vocoder", {})
    if voc.get("mode", "pseudo_inverse") == "learned":
        pairs = []
        for u in ctx.split.train.utterances:
            wav = dsp.read_wav(ctx.manifest.audio(u))
            pairs.append((dsp.log_mel(wav, ctx.tts_features).frames,
                          np.abs(dsp.stft(wav, ctx.tts_features))))
        learned = voc.get("learned", {})
        net = train_vocoder(pairs, ctx.tts_features,
                            VocoderConfig(ctx.tts_features.n_mels, ctx.tts_features.n_freqs,
                                          learned.get("hidden", 256), learned.get("layers", 1)),
                            steps=learned.get("steps", 200), seed=cfg["seed"])
        save_vocoder(out_dir / "vocoder.ckpt", net)
    inputs = [cfg["paths"]["train_manifest"], cfg["paths"]["lexicon"]]
    inputs += [ctx.manifest.audio(u) for u in ctx.split.train.utterances]
    write_run_manifest(out_dir, "align", cfg, inputs, [out_dir], out)
    return out_dir / "durations.bin"


# ---------------------------------------------------------------- train-tts

def run_train_tts(cfg: dict, out: Path, variant: str) -> Path:
    _seed_everything(cfg["seed"])
    ctx = Context(cfg)
    archive = _require(Path(out) / "align" / "durations.bin", "align")
    durations = load_durations(archive, ctx.tts_symbols)
    out_dir = Path(out) / "tts" / variant
    out_dir.mkdir(parents=True, exist_ok=True)
    items = [ctx.tts_item(u, ctx.manifest) for u in ctx.split.train.utterances]
    model = TTSModel(TTSConfig(ctx.trunk_config(), _decoder_config(cfg, variant)))
    settings = _tts_settings(cfg, cfg.get("tts_training", {}), variant)
    losses = _checked(train_tts(model, items, settings, durations=durations), f"the {variant} TTS")
    save_tts(out_dir / "model.ckpt", model, meta={"final_loss": losses[-1], "variant": variant},
             epoch=settings.epochs)
    (out_dir / "losses.json").write_text(json.dumps([round(x, 6) for x in losses]))
    write_run_manifest(out_dir, "train-tts", cfg, [archive], [out_dir], out, {"variant": variant})
    return out_dir / "model.ckpt"


# ---------------------------------------------------------------- synthesize

def _control_model(cfg: dict, ctx: Context, variant: str) -> TTSModel:
    """Randomly initialised TTS with normalisation statistics of the training audio."""
    torch.manual_seed(cfg["seed"])
    model = TTSModel(TTSConfig(ctx.trunk_config(), _decoder_config(cfg, variant)))
    model.fit_normalisation([ctx.tts_item(u, ctx.manifest).mel for u in ctx.split.train.utterances])
    model.eval()
    return model


def _vocoder(cfg: dict, out: Path):
    voc = cfg.get("vocoder", {})
    mode = voc.get("mode", "pseudo_inverse")
    model = None
    if mode == "learned":
        model = load_vocoder(_require(Path(out) / "align" / "vocoder.ckpt", "align"))
    return mode, model, voc.get("griffin_lim_iterations", 32), voc.get("momentum", 0.99), \
        voc.get("nnls_iterations", 300)


def _synthesize_jobs(cfg, ctx: Context, model: TTSModel, jobs, out_dir: Path, out_root: Path,
                     workers: int, durations: dict | None = None) -> Path:
    sampling = SamplingConfig(**{**cfg.get("sampling", {}), "seed": cfg["seed"]})
    mode, vmodel, gl_iters, momentum, nnls_iters = _vocoder(cfg, out_root)
    wav_dir, png_dir = out_dir / "wav", out_dir / "png"
    wav_dir.mkdir(parents=True, exist_ok=True)
    png_dir.mkdir(parents=True, exist_ok=True)
    n_png = cfg.get("evaluation", {}).get("png_examples", 2)

    def one(index_job):
        index, job = index_job
        ids = ctx.phoneme_ids(job.text)
        spk = ctx.speakers.index(job.speaker)
        dur = durations.get(job.utt_id) if durations is not None else None
        frames = synthesize_utterance(model, ids, spk, sampling, job.utt_id, durations=dur)
        if not np.all(np.isfinite(frames)):
            raise NumericalFailure(f"non-finite spectrogram for {job.utt_id}")
        mel = dsp.MelSpectrogram(frames, ctx.tts_features)
        lin = dsp.mel_to_linear(mel, mode, vmodel, nnls_iters)
        wav = dsp.griffin_lim(lin, gl_iters, momentum)
        dsp.write_wav(wav_dir / f"{job.utt_id}.wav", wav)
        if index < n_png:
            dsp.save_spectrogram_png(png_dir / f"{job.utt_id}.png", mel)
        return Utterance(job.utt_id, job.speaker, job.text, f"wav/{job.utt_id}.wav")

    indexed = list(enumerate(jobs))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            utts = list(pool.map(one, indexed))
    else:
        utts = [one(j) for j in indexed]
    CorpusManifest(utts, ctx.speakers, out_dir).save(out_dir / "manifest.tsv")
    return out_dir / "manifest.tsv"


def run_synthesize(cfg: dict, out: Path, variant: str, condition: str, workers: int = 1,
                   control: bool = False) -> Path:
    """Synthesize the training set under a condition, plus the held-out set if not present yet.

    The untrained control (``control=True``) uses the aligned durations of
    the training utterances, so only condition a is available for it.
    """
    _seed_everything(cfg["seed"])
    ctx = Context(cfg)
    out = Path(out)
    new_texts = ()
    if condition in ("c", "c_new_text"):
        new_texts = ctx.new_texts()
        if len(new_texts) < len(ctx.split.train):
            raise ConfigError(f"new-text source has {len(new_texts)} lines, "
                             f"need {len(ctx.split.train)}")
        new_texts = new_texts[:len(ctx.split.train)]
    cond = SynthesisCondition(condition, seed=cfg["seed"], new_texts=new_texts)
    jobs = build_condition(ctx.split.train, cond)
    if control:
        if cond.kind != "a":
            raise ConfigError("the untrained control is only defined for condition a")
        archive = _require(out / "align" / "durations.bin", "align")
        durations = load_durations(archive, ctx.tts_symbols)
        model, name, inputs = _control_model(cfg, ctx, variant), CONTROL, [archive]
    else:
        ckpt = _require(out / "tts" / variant / "model.ckpt", f"train-tts --variant {variant}")
        model, name, inputs, durations = load_tts(ckpt), variant, [ckpt], None
    out_dir = out / "synth" / name / cond.kind
    manifest = _synthesize_jobs(cfg, ctx, model, jobs, out_dir, out, workers, durations)
    write_run_manifest(out_dir, "synthesize", cfg, inputs, [out_dir], out,
                       {"variant": name, "condition": cond.kind})
    cv_dir = out / "synth" / name / "cv"
    if not (cv_dir / "manifest.tsv").exists() and not control:
        cv_jobs = build_condition(ctx.split.cv, SynthesisCondition("a"))
        _synthesize_jobs(cfg, ctx, model, cv_jobs, cv_dir, out, workers)
        write_run_manifest(cv_dir, "synthesize", cfg, inputs, [cv_dir], out,
                           {"variant": name, "condition": "cv"})
    return manifest


# ---------------------------------------------------------------- train-asr

def _asr_features(ctx: Context, manifest: CorpusManifest, utt: Utterance) -> np.ndarray:
    return dsp.log_mel(dsp.read_wav(manifest.audio(utt)), ctx.asr_features).frames


def asr_system_name(variant: str | None, condition: str | None) -> str:
    return "real" if variant is None else f"{variant}-{condition}"


def run_train_asr(cfg: dict, out: Path, variant: str | None, condition: str | None) -> Path:
    """Train a recognizer on synthesized data (``variant``/``condition``) or on real data (``variant=None``)."""
    _seed_everything(cfg["seed"])
    ctx = Context(cfg)
    out = Path(out)
    if variant is None:
        manifest = ctx.split.train
        inputs = [cfg["paths"]["train_manifest"]] + [manifest.audio(u) for u in manifest.utterances]
    else:
        mpath = _require(out / "synth" / variant / condition / "manifest.tsv",
                         f"synthesize --variant {variant} --condition {condition}")
        manifest = load_manifest(mpath, ctx.speakers)
        inputs = [mpath.parent]
    name = asr_system_name(variant, condition)
    out_dir = out / "asr" / name
    out_dir.mkdir(parents=True, exist_ok=True)
    section = cfg.get("asr", {})
    acfg = AsrConfig(phonemes=ctx.vocab.phonemes, n_mels=ctx.asr_features.n_mels,
                     **section.get("model", {}))
    train_section = dict(section.get("training", {}))
    train_section.setdefault("seed", cfg["seed"])
    settings = AsrTrainSettings(**train_section)
    corpus = [(_asr_features(ctx, manifest, u), u.words) for u in manifest.utterances]
    result = train_asr(acfg, corpus, ctx.lexicon, settings, g2p=ctx.g2p)
    _checked(result.losses, f"the {name} recognizer")
    save_asr(out_dir / "model.ckpt", result.model,
             meta={"final_loss": result.losses[-1], "skipped": result.skipped})
    dec = section.get("decoding", {})
    lm = NGramLM.train([u.words for u in manifest.utterances], order=dec.get("lm_order", 2),
                       k=dec.get("lm_k", 0.1), vocab=ctx.lexicon.words())
    lm.save(out_dir / "lm.json")
    (out_dir / "losses.json").write_text(json.dumps([round(x, 6) for x in result.losses]))
    write_run_manifest(out_dir, "train-asr", cfg, inputs, [out_dir], out, {"system": name})
    return out_dir / "model.ckpt"


# ---------------------------------------------------------------- evaluate

def recognize(ctx: Context, asr_dir: Path, manifest: CorpusManifest, decoding: dict,
              workers: int = 1) -> dict[str, list[str]]:
    model = load_asr(asr_dir / "model.ckpt")
    lm = NGramLM.load(asr_dir / "lm.json") if (asr_dir / "lm.json").exists() else None
    trie = LexiconTrie(ctx.lexicon, ctx.vocab)
    beam, lm_weight = decoding.get("beam", 8), decoding.get("lm_weight", 0.5)

    def one(u):
        lp = model.log_probs(_asr_features(ctx, manifest, u))
        return u.utt_id, beam_decode(lp, ctx.lexicon, lm, beam, lm_weight, ctx.vocab, trie)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return dict(pool.map(one, manifest.utterances))
    return dict(one(u) for u in manifest.utterances)


def _references(manifest: CorpusManifest) -> dict[str, list[str]]:
    return {u.utt_id: u.words for u in manifest.utterances}


def swer(ctx: Context, references: CorpusManifest, audio: CorpusManifest, scorer_dir: Path,
         decoding: dict, workers: int = 1) -> float:
    """WER of the scorer recognizer on ``audio`` against the texts of ``references``.

    Utterances are matched by id, so synthesized copies of held-out
    utterances must keep their ids.
    """
    scorer_dir = Path(scorer_dir)
    _require(scorer_dir / "model.ckpt", "train-asr --real")
    hyps = recognize(ctx, scorer_dir, audio, decoding, workers)
    return wer(hyps, _references(references)).rate


def run_evaluate(cfg: dict, out: Path, variant: str | None, condition: str | None,
                 workers: int = 1) -> Path:
    """WER on every real test set, sWER and (if configured) MOS on the held-out set."""
    ctx = Context(cfg)
    out = Path(out)
    name = asr_system_name(variant, condition)
    asr_dir = out / "asr" / name
    producer = "train-asr --real" if variant is None else \
        f"train-asr --variant {variant} --condition {condition}"
    inputs = [_require(asr_dir / "model.ckpt", producer)]
    out_dir = out / "eval" / name
    out_dir.mkdir(parents=True, exist_ok=True)
    decoding = cfg.get("asr", {}).get("decoding", {})
    rates, details = {}, {}
    for set_name, path in cfg["paths"].get("test_sets", {}).items():
        manifest = load_manifest(path, ctx.speakers)
        hyps = recognize(ctx, asr_dir, manifest, decoding, workers)
        res = wer(hyps, _references(manifest))
        rates[set_name] = res.rate
        details[set_name] = {"counts": asdict(res.counts), "ref_words": res.ref_words,
                             "missing": res.missing}
        (out_dir / f"hyp_{set_name}.tsv").write_text(
            "".join(f"{k}\t{' '.join(hyps[k])}\n" for k in sorted(hyps)))
        inputs.append(path)
    # held-out audio: synthesized by this TTS, or real for the reference system
    if variant is None:
        cv_manifest = ctx.split.cv
    else:
        cv_path = out / "synth" / variant / "cv" / "manifest.tsv"
        cv_manifest = load_manifest(cv_path, ctx.speakers) if cv_path.exists() else None
    swer_value = None
    if cv_manifest is not None and len(cv_manifest):
        swer_value = swer(ctx, ctx.split.cv, cv_manifest, out / "asr" / "real", decoding, workers)
    mos_mean = mos_ci = None
    mos_cfg = cfg.get("evaluation", {}).get("mos")
    if mos_cfg and cv_manifest is not None and len(cv_manifest):
        client = MosClient(MosClientConfig(**mos_cfg))
        scores = mos_score({u.utt_id: str(cv_manifest.audio(u)) for u in cv_manifest.utterances}, client)
        mos_mean, mos_ci = mos_summary(scores, cfg.get("evaluation", {}).get("bootstrap_resamples", 1000),
                                       cfg["seed"])
    row = MetricRow(variant or "real", condition or "", rates, swer_value, mos_mean, mos_ci)
    record = {"row": {**asdict(row), "mos_ci": list(row.mos_ci) if row.mos_ci else None},
              "details": details}
    (out_dir / "metrics.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    write_run_manifest(out_dir, "evaluate", cfg, inputs, [out_dir], out, {"system": name})
    return out_dir / "metrics.json"


# ---------------------------------------------------------------- report

def load_metric_row(path) -> MetricRow:
    data = json.loads(Path(path).read_text())["row"]
    ci = tuple(data["mos_ci"]) if data.get("mos_ci") else None
    return MetricRow(data["system"], data["condition"], data["wer"], data["swer"], data["mos_mean"], ci)


SYSTEM_ORDER = ("transformer", "nar_lstm", "ar_lstm", "flow", "diffusion", CONTROL)


def run_report(cfg: dict, out: Path) -> Path:
    out = Path(out)
    eval_root = _require(out / "eval", "evaluate")
    rows, reference, inputs = [], None, []
    for path in sorted(eval_root.glob("*/metrics.json")):
        inputs.append(path)
        row = load_metric_row(path)
        if row.system == "real":
            reference = MetricRow("Reference", "", row.wer, row.swer, row.mos_mean, row.mos_ci)
        else:
            rows.append(row)
    if not rows:
        raise MissingArtifact(eval_root / "<system>" / "metrics.json", "evaluate")

    def order(r):
        rank = SYSTEM_ORDER.index(r.system) if r.system in SYSTEM_ORDER else len(SYSTEM_ORDER)
        return rank, r.system, r.condition

    rows.sort(key=order)
    out_dir = out / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in render_report(rows, reference).items():
        (out_dir / name).write_text(text)
    write_run_manifest(out_dir, "report", cfg, inputs, [out_dir], out)
    return out_dir

