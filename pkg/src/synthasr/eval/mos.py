"""Client for an external automatic MOS predictor.

The scorer is either a command (``{path}`` is replaced by the audio file) or
an HTTP endpoint receiving ``{"path": ...}`` as JSON.  Either way the reply
must be a single decimal number on one line.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from synthasr.eval.metrics import bootstrap_ci


class MosError(RuntimeError):
    """Raised with the scores that did succeed and the files that failed."""

    def __init__(self, message: str, failed: dict[str, str], scores: dict[str, float]):
        super().__init__(message)
        self.failed = failed
        self.scores = scores


class TransientError(RuntimeError):
    pass


class ParseError(ValueError):
    pass


@dataclass
class MosClientConfig:
    command: str | None = None
    url: str | None = None
    timeout_s: float = 60.0
    retries: int = 2
    backoff_s: float = 0.5
    workers: int = 1

    def __post_init__(self):
        if (self.command is None) == (self.url is None):
            raise ValueError("configure exactly one of command or url")


def parse_score(payload: str) -> float:
    lines = [line for line in payload.strip().splitlines() if line.strip()]
    if len(lines) != 1:
        raise ParseError(f"expected one line with a score, got {payload!r}")
    try:
        return float(lines[0])
    except ValueError:
        raise ParseError(f"not a number: {payload!r}") from None


@dataclass
class MosClient:
    config: MosClientConfig
    sleep: callable = field(default=time.sleep, repr=False)

    def _call(self, path: str) -> str:
        cfg = self.config
        if cfg.command is not None:
            args = [a.replace("{path}", path) for a in shlex.split(cfg.command)]
            try:
                proc = subprocess.run(args, capture_output=True, text=True, timeout=cfg.timeout_s)
            except subprocess.TimeoutExpired:
                raise TransientError(f"timeout after {cfg.timeout_s}s") from None
            if proc.returncode != 0:
                raise TransientError(f"exit code {proc.returncode}: {proc.stderr.strip()}")
            return proc.stdout
        req = urllib.request.Request(cfg.url, data=json.dumps({"path": path}).encode(),
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=cfg.timeout_s) as resp:
                return resp.read().decode()
        except (urllib.error.URLError, TimeoutError) as exc:
            raise TransientError(str(exc)) from None

    def score_file(self, path: str) -> float:
        last = None
        for attempt in range(self.config.retries + 1):
            try:
                return parse_score(self._call(path))
            except TransientError as exc:
                last = exc
                if attempt < self.config.retries:
                    self.sleep(self.config.backoff_s * 2 ** attempt)
        raise TransientError(f"gave up after {self.config.retries + 1} attempts: {last}")


def mos_score(files: dict[str, str], client) -> dict[str, float]:
    """Score ``{file_id: path}``; results are ordered by file id.

    ``client`` needs a ``score_file(path) -> float`` method.  Any failure
    raises :class:`MosError` carrying both the failures and the successes.
    """
    ids = sorted(files)
    workers = getattr(getattr(client, "config", None), "workers", 1)

    def one(fid):
        try:
            return fid, client.score_file(files[fid]), None
        except (TransientError, ParseError) as exc:
            return fid, None, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, ids))
    else:
        results = [one(fid) for fid in ids]
    scores = {fid: s for fid, s, err in results if err is None}
    failed = {fid: err for fid, _, err in results if err is not None}
    if failed:
        raise MosError(f"MOS scoring failed for: {', '.join(sorted(failed))}", failed, scores)
    return scores


def mos_summary(scores: dict[str, float], resamples: int = 1000, seed: int = 0):
    values = [scores[k] for k in sorted(scores)]
    mean = sum(values) / len(values)
    return mean, bootstrap_ci(values, 0.95, resamples, seed)
