"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are collected in ``RESULTS`` and printed in the terminal summary
(see ``conftest.py``), so ``pytest -v`` output ends with one verdict per
criterion whatever the order the tests ran in.
"""

import functools
import itertools
import math
import time
from collections import Counter
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
import torch

from conftest import CONFIGS, TOY
from oracles import ctc_brute_nll, gaussian_reverse_moments, mas_brute, ncc
from synthasr import dsp
from synthasr.asr.ctc import ctc_loss, min_frames
from synthasr.cli import EXIT_OK, main
from synthasr.config import load_config
from synthasr.eval.conditions import SynthesisCondition, build_condition
from synthasr.eval.corpus import CorpusManifest, Utterance, load_manifest
from synthasr.eval.metrics import align_words, wer
from synthasr.nn.optim import ASR_SCHEDULE, TTS_SCHEDULE, LrSchedule, lr_at
from synthasr.pipeline import CONTROL, _decoder_config, sha256_file
from synthasr.tts.diffusion import NoiseSchedule, linear_schedule, reverse_diffusion
from synthasr.tts.flow import FlowDecoder
from synthasr.tts.mas import mas_align
from synthasr.tts.model import VARIANTS, TTSConfig, TTSModel, parameter_breakdown
from synthasr.tts.trunk import TrunkConfig

RESULTS: dict[int, str] = {}


@contextmanager
def criterion(number: int, title: str):
    """Record a PASS/FAIL verdict for the enclosed checks; ``notes`` collects measured values."""
    notes: list[str] = []
    start = time.perf_counter()
    try:
        yield notes
    except BaseException as exc:
        detail = "; ".join(notes + [f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"])
        RESULTS[number] = f"criterion {number:2d} FAIL  {title} ({detail})"
        print(RESULTS[number])
        raise
    elapsed = time.perf_counter() - start
    RESULTS[number] = f"criterion {number:2d} PASS  {title} ({'; '.join(notes + [f'{elapsed:.1f}s'])})"
    print(RESULTS[number])


# ---- 1. CTC


def test_criterion_01_ctc_oracle():
    with criterion(1, "CTC loss vs brute-force paths, gradient vs finite differences") as notes:
        rng = np.random.default_rng(2024)
        start = time.perf_counter()
        worst, cases = 0.0, 0
        while cases < 200:
            t, v = int(rng.integers(1, 6)), int(rng.integers(2, 5))
            labels = [int(x) for x in rng.integers(1, v, size=int(rng.integers(0, 4)))]
            if min_frames(labels) > t:
                continue
            logits = rng.standard_normal((t, v)) * 2
            log_probs = logits - np.logaddexp.reduce(logits, axis=1, keepdims=True)
            got = float(ctc_loss(torch.tensor(log_probs, dtype=torch.float64), labels))
            worst = max(worst, abs(got - ctc_brute_nll(np.exp(log_probs), labels)))
            cases += 1
        notes.append(f"max |loss - brute| = {worst:.1e} over {cases} cases")
        assert worst < 1e-6

        worst_grad = 0.0
        for _ in range(20):
            t, v = int(rng.integers(2, 6)), int(rng.integers(2, 5))
            labels = [int(x) for x in rng.integers(1, v, size=int(rng.integers(1, 3)))]
            if min_frames(labels) > t:
                continue
            logits = torch.tensor(rng.standard_normal((t, v)), requires_grad=True)

            def loss(x):
                return ctc_loss(torch.log_softmax(x, -1), labels)

            loss(logits).backward()
            analytic = logits.grad.numpy()
            numeric = np.zeros_like(analytic)
            eps = 1e-6
            for idx in np.ndindex(*analytic.shape):
                e = torch.zeros_like(logits)
                e[idx] = eps
                with torch.no_grad():
                    numeric[idx] = (float(loss(logits + e)) - float(loss(logits - e))) / (2 * eps)
            rel = np.abs(analytic - numeric).max() / max(np.abs(numeric).max(), 1e-12)
            worst_grad = max(worst_grad, rel)
        notes.append(f"max gradient relative error {worst_grad:.1e}")
        assert worst_grad < 1e-3
        assert time.perf_counter() - start < 60


# ---- 2. alignment search


def gaussian_loglik(means, frames):
    return np.array([[-0.5 * float(np.sum((f - m) ** 2)) for f in frames] for m in means])


def test_criterion_02_mas_oracle():
    with criterion(2, "alignment search vs exhaustive segmentation search") as notes:
        rng = np.random.default_rng(7)
        start = time.perf_counter()
        tied = 0
        # tie rule: among equal scores the later tokens receive the fewest frames
        tie_key = lambda d: tuple(reversed(d))  # noqa: E731
        for case in range(100):
            n = int(rng.integers(1, 5))
            t = int(rng.integers(n, 9))
            if case % 2:
                means, frames = rng.integers(-1, 2, (n, 2)).astype(float), rng.integers(-1, 2, (t, 2)).astype(float)
            else:
                means, frames = rng.standard_normal((n, 3)), rng.standard_normal((t, 3))
            ll = gaussian_loglik(means, frames)
            best, score = mas_brute(ll, tie_key)
            tied += sum(_segment_score(ll, c) == score for c in itertools.combinations(range(1, t), n - 1)) > 1
            assert tuple(mas_align(means, frames)) == best, (case, ll)
        notes.append(f"100 instances, {tied} with tied optima")
        assert time.perf_counter() - start < 60


def _segment_score(ll, cuts):
    bounds = (0,) + tuple(cuts) + (ll.shape[1],)
    tok = np.repeat(np.arange(ll.shape[0]), np.diff(bounds))
    return float(ll[tok, np.arange(ll.shape[1])].sum())


# ---- 3. flow


def random_flow(seed: int, n_mels: int, blocks: int, dtype=torch.float64) -> FlowDecoder:
    torch.manual_seed(seed)
    dec = FlowDecoder(6, 4, n_mels=n_mels, blocks=blocks, hidden=8, wn_layers=2).to(dtype).eval()
    with torch.no_grad():
        for p in dec.parameters():
            p.add_(0.2 * torch.randn_like(p))
    return dec


def test_criterion_03_flow_contract():
    with criterion(3, "flow round trip and log-determinant") as notes:
        rng = np.random.default_rng(3)
        worst_trip = worst_logdet = 0.0
        for seed in range(50):
            n_mels = int(rng.choice([2, 4, 8]))
            frames = int(rng.choice([2, 4, 6]))
            dec = random_flow(seed, n_mels, int(rng.integers(1, 4)), torch.float32)
            spk = torch.randn(1, 4)
            x = torch.randn(1, frames, n_mels)
            mask = torch.ones(1, frames, dtype=torch.bool)
            with torch.no_grad():
                z, zmask, _ = dec.flow_forward(x, mask, spk)
                back = dec.flow_inverse(z, zmask, spk)
            worst_trip = max(worst_trip, (back - x).abs().max().item())

            if seed < 20:
                # two frames of two bins squeeze into a single 4-dim latent
                dec64 = random_flow(seed, 2, 2)
                spk64 = torch.randn(1, 4, dtype=torch.float64)
                x64 = torch.randn(1, 2, 2, dtype=torch.float64)
                mask2 = torch.ones(1, 2, dtype=torch.bool)
                with torch.no_grad():
                    logdet = dec64.flow_forward(x64, mask2, spk64)[2].item()
                jac = _central_jacobian(dec64, x64, mask2, spk64)
                assert jac.shape == (4, 4)
                dense = np.linalg.slogdet(jac)[1]
                worst_logdet = max(worst_logdet, abs(logdet - dense))
        notes.append(f"max round-trip error {worst_trip:.1e} (float32)")
        notes.append(f"max logdet error {worst_logdet:.1e}")
        assert worst_trip < 1e-4 and worst_logdet < 1e-3


def _central_jacobian(dec, x, mask, spk, eps=1e-6):
    flat = x.reshape(-1)
    cols = []
    with torch.no_grad():
        for i in range(flat.numel()):
            e = torch.zeros_like(flat)
            e[i] = eps
            hi = dec.flow_forward((flat + e).view_as(x), mask, spk)[0].reshape(-1)
            lo = dec.flow_forward((flat - e).view_as(x), mask, spk)[0].reshape(-1)
            cols.append(((hi - lo) / (2 * eps)).numpy())
    return np.stack(cols, axis=1)


# ---- 4. diffusion sampler


def test_criterion_04_diffusion_sampler():
    with criterion(4, "reverse recursion with exact score vs closed-form mean") as notes:
        data_mean, data_var, prior_mean, tau = 1.5, 0.25, -0.5, 0.7
        beta_min, beta_max = 0.05, 20.0

        def score(x, t):
            a = math.exp(-0.5 * (beta_min * t + 0.5 * (beta_max - beta_min) * t * t))
            return -(x - (a * data_mean + (1 - a) * prior_mean)) / (a * a * data_var + 1 - a * a)

        for steps in (10, 50):
            sched = linear_schedule(steps, beta_min, beta_max)
            x0 = prior_mean + math.sqrt(tau) * np.random.default_rng(steps).standard_normal(10_000)
            out = reverse_diffusion(x0, prior_mean, score, sched)
            mean, var = gaussian_reverse_moments(data_mean, data_var, prior_mean, tau, sched.betas,
                                                 sched.times, beta_min, beta_max)
            z = (out.mean() - mean) / math.sqrt(var / out.size)
            notes.append(f"{steps} steps: mean {out.mean():.4f} vs {mean:.4f} ({z:+.2f} SE)")
            assert abs(z) < 3

        x0 = np.random.default_rng(0).standard_normal(10_000)
        frozen = reverse_diffusion(x0, prior_mean, score, NoiseSchedule(np.zeros(50), linear_schedule(50).times))
        assert np.array_equal(frozen, x0)
        notes.append("zero noise schedule leaves the state bit-identical")


# ---- 5. schedules


def test_criterion_05_schedule_fidelity():
    with criterion(5, "learning-rate schedule breakpoints") as notes:
        assert lr_at(TTS_SCHEDULE, 0) == 5e-5
        assert lr_at(TTS_SCHEDULE, 100) == 5e-4
        assert lr_at(TTS_SCHEDULE, 400) == 5e-7
        assert lr_at(ASR_SCHEDULE, 20) == 7e-4
        assert max(lr_at(ASR_SCHEDULE, e / 4) for e in range(4 * 80 + 1)) == 7e-4
        # the full-size configs carry the same schedules
        base = load_config(CONFIGS / "full.yaml", check_paths=False)
        tts = LrSchedule(**base["tts_training"]["schedule"])
        asr = LrSchedule(**base["asr"]["training"]["schedule"])
        assert [lr_at(tts, e) for e in (0, 100, 400)] == [5e-5, 5e-4, 5e-7]
        assert lr_at(asr, asr.warmup_epochs) == 7e-4
        notes.append("TTS 5e-5/5e-4/5e-7 at epochs 0/100/400, ASR peak 7e-4")


# ---- 6. DSP


def test_criterion_06_dsp():
    with criterion(6, "Griffin-Lim on a sine, log-mel width") as notes:
        cfg = dsp.FeatureConfig(sample_rate=16000, n_mels=80, frame_shift_ms=12.5, window_ms=50.0, fft_size=1024)
        t = np.arange(8000) / 16000
        sine = dsp.AudioSignal(0.5 * np.sin(2 * np.pi * 440.0 * t), 16000)
        mag = np.abs(dsp.stft(sine, cfg))
        out = dsp.griffin_lim(dsp.LinearSpectrogram(mag, cfg), 32, 0.99)
        score = ncc(np.abs(dsp.stft(out, cfg))[: len(mag)], mag)
        notes.append(f"magnitude correlation {score:.4f}")
        assert score > 0.99
        assert dsp.log_mel(sine, cfg).frames.shape[1] == 80
        asr_cfg = dsp.FeatureConfig(sample_rate=16000, n_mels=80, frame_shift_ms=10.0, window_ms=50.0, fft_size=1024)
        assert dsp.log_mel(sine, asr_cfg).frames.shape[1] == 80


# ---- 7. synthesis conditions


def check_protocol(m: CorpusManifest, seed: int):
    pairs = [(u.text, u.speaker) for u in m.utterances]
    a = build_condition(m, SynthesisCondition("a", seed))
    assert [(j.text, j.speaker) for j in a] == pairs
    b = build_condition(m, SynthesisCondition("b", seed))
    assert Counter(j.speaker for j in b) == Counter(s for _, s in pairs)
    assert [j.text for j in b] == [t for t, _ in pairs]
    if len({s for _, s in pairs}) > 1:
        assert sum(j.speaker != s for j, (_, s) in zip(b, pairs)) >= 1
    c = build_condition(m, SynthesisCondition("c", seed, [f"other text {i}" for i in range(len(m))]))
    assert len(c) == len(m)


def test_criterion_07_protocol_integrity():
    with criterion(7, "conditions a/b/c on the toy corpus and 1000 random manifests") as notes:
        toy = load_manifest(TOY / "train.tsv")
        check_protocol(toy, 0)
        rng = np.random.default_rng(77)
        for trial in range(1000):
            n = int(rng.integers(1, 40))
            speakers = [f"spk{int(k)}" for k in rng.integers(0, int(rng.integers(1, 8)), n)]
            utts = [Utterance(f"u{i:04d}", s, f"text {i}") for i, s in enumerate(speakers)]
            check_protocol(CorpusManifest(utts), trial)
        notes.append(f"toy corpus ({len(toy)} utterances) and 1000 random manifests")


# ---- 8. WER


@functools.lru_cache(maxsize=None)
def path_outcomes(ref: tuple, hyp: tuple) -> frozenset:
    """(substitutions, insertions, deletions) of every edit path from ``ref`` to ``hyp``."""
    if not ref:
        return frozenset({(0, len(hyp), 0)})
    if not hyp:
        return frozenset({(0, 0, len(ref))})
    cost = int(ref[0] != hyp[0])
    out = {(s + cost, i, d) for s, i, d in path_outcomes(ref[1:], hyp[1:])}
    out |= {(s, i, d + 1) for s, i, d in path_outcomes(ref[1:], hyp)}
    out |= {(s, i + 1, d) for s, i, d in path_outcomes(ref, hyp[1:])}
    return frozenset(out)


def test_criterion_08_wer_oracle():
    with criterion(8, "WER vs edit-path enumeration, all pairs up to length 5") as notes:
        words = ("x", "y", "z")
        seqs = [s for k in range(6) for s in itertools.product(words, repeat=k)]
        pairs = 0
        for ref in seqs:
            for hyp in seqs:
                outcomes = path_outcomes(ref, hyp)
                best = min(s + i + d for s, i, d in outcomes)
                counts = align_words(ref, hyp)
                assert counts.errors == best, (ref, hyp)
                assert (counts.substitutions, counts.insertions, counts.deletions) in outcomes
                if ref:
                    assert wer({"u": list(hyp)}, {"u": list(ref)}).rate == best / len(ref)
                pairs += 1
            if ref:
                assert wer({"u": list(ref)}, {"u": list(ref)}).rate == 0
        notes.append(f"{pairs} pairs")
        path_outcomes.cache_clear()


# ---- 9 and 10. end-to-end toy runs

RUN_ARGS = ["run-all", "--config", str(CONFIGS / "toy.yaml"), "--all-conditions-for", "transformer"]
CPU_BUDGET_S = 30 * 60
REPORT_FILES = ("summary.txt", "conditions.txt", "metrics.csv")


def toy_run(out: Path) -> dict:
    cpu, wall = time.process_time(), time.perf_counter()
    code = main(RUN_ARGS + ["--out", str(out)])
    return {"code": code, "out": out, "cpu": time.process_time() - cpu,
            "wall": time.perf_counter() - wall}


@pytest.fixture(scope="module")
def first_run(tmp_path_factory):
    return toy_run(tmp_path_factory.mktemp("toy_run_1"))


def read_rows(out: Path) -> dict[tuple[str, str], dict[str, float]]:
    import csv

    rows = {}
    with open(out / "report" / "metrics.csv") as f:
        for rec in csv.DictReader(f):
            rows[(rec["system"], rec["condition"])] = {k[4:]: float(v) for k, v in rec.items()
                                                       if k.startswith("wer:") and v}
    return rows


def test_criterion_09_end_to_end(first_run):
    with criterion(9, "toy pipeline for every decoder beats the untrained control") as notes:
        notes.append(f"CPU {first_run['cpu'] / 60:.1f} min, wall {first_run['wall'] / 60:.1f} min")
        assert first_run["code"] == EXIT_OK
        rows = read_rows(first_run["out"])
        control = rows[(CONTROL, "a")]
        notes.append("control " + "/".join(f"{control[s]:.0%}" for s in sorted(control)))
        failures = []
        for variant in VARIANTS:
            got = rows[(variant, "a")]
            ratios = {s: got[s] / control[s] for s in control}
            notes.append(f"{variant} " + "/".join(f"{got[s]:.0%}" for s in sorted(got)))
            failures += [f"{variant} {s} ratio {r:.2f}" for s, r in ratios.items() if not r < 0.5]
        assert not failures, failures

        grid = (first_run["out"] / "report" / "conditions.txt").read_text().splitlines()
        cells = [[c.strip() for c in line.split("|")] for line in grid if not line.startswith("-")]
        sets = sorted(control)
        assert cells[0][1:] == [s for s in sets for _ in range(3)]
        assert cells[1][1:] == ["a)", "b)", "c)"] * len(sets)
        body = {row[0]: row[1:] for row in cells[2:]}
        assert "-" not in body["transformer"]
        assert all(body[v].count("-") == 2 * len(sets) for v in VARIANTS if v != "transformer")
        assert cells[-1][0] == "Reference" and list(body)[-2] == CONTROL
        notes.append("condition grid rendered")
        assert first_run["cpu"] < CPU_BUDGET_S


def test_criterion_10_reproducible_report(first_run, tmp_path_factory):
    with criterion(10, "second run with the same seed gives bit-identical reports") as notes:
        assert first_run["code"] == EXIT_OK
        second = toy_run(tmp_path_factory.mktemp("toy_run_2"))
        assert second["code"] == EXIT_OK
        for name in REPORT_FILES:
            a = (first_run["out"] / "report" / name).read_bytes()
            b = (second["out"] / "report" / name).read_bytes()
            assert a == b, name
        files = [p.relative_to(first_run["out"]) for p in sorted(first_run["out"].rglob("*")) if p.is_file()]
        same = sum(sha256_file(first_run["out"] / p) == sha256_file(second["out"] / p) for p in files)
        notes.append(f"report files identical; {same}/{len(files)} artifacts identical")


# ---- 11. parameter counts (informative)

REFERENCE_PARAMS_M = {"transformer": 24.4, "nar_lstm": 29.3, "ar_lstm": 33.6, "flow": 57.3, "diffusion": 25.5}
# a stressed ARPAbet inventory plus padding, silence and end-of-sentence symbols; speakers of the 100h set
FULL_SIZE_VOCAB, FULL_SIZE_SPEAKERS = 72, 251


def test_criterion_11_parameter_counts():
    with criterion(11, "full-size parameter counts vs reference (informative)") as notes:
        for variant, reference in REFERENCE_PARAMS_M.items():
            cfg = load_config(CONFIGS / f"full-{variant}.yaml", check_paths=False)
            trunk = TrunkConfig(vocab_size=FULL_SIZE_VOCAB, num_speakers=FULL_SIZE_SPEAKERS, **cfg["trunk"])
            model = TTSModel(TTSConfig(trunk, _decoder_config(cfg, variant)))
            parts = parameter_breakdown(model)
            total = sum(parts.values()) / 1e6
            deviation = (total - reference) / reference
            flag = "" if abs(deviation) <= 0.15 else " OUTSIDE 15%"
            notes.append(f"{variant} {total:.1f}M vs {reference}M ({deviation:+.1%}){flag}")
            if flag:
                breakdown = ", ".join(f"{k} {v / 1e6:.2f}M" for k, v in parts.items())
                print(f"  {variant} breakdown: {breakdown}")
