"""JSON history/proposal files and CSV result tables."""

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, OutOfBounds
from .gp import ObservationSet

HISTORY_SCHEMA = "moeqei.history/1"
PROPOSAL_SCHEMA = "moeqei.proposal/1"

RESULT_COLUMNS = ("policy", "function", "q", "rep", "iteration", "best_value", "regret", "log10_regret", "elapsed_ms")
SUMMARY_COLUMNS = ("policy", "function", "q", "iteration", "reps", "mean_log10_regret", "ci_low", "ci_high")


class FormatError(ValueError):
    """Malformed input file; the message names the offending field."""


@dataclass
class HistoryFile:
    bounds: np.ndarray
    points: np.ndarray
    values: np.ndarray
    pending: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    def observations(self) -> ObservationSet:
        return ObservationSet.create(self.bounds, self.points, self.values)

    def to_dict(self) -> dict:
        out = {
            "schema": HISTORY_SCHEMA,
            "dim": self.dim,
            "bounds": self.bounds.tolist(),
            "points": self.points.tolist(),
            "values": self.values.tolist(),
        }
        if self.pending.size:
            out["pending"] = self.pending.tolist()
        return out

    @classmethod
    def from_dict(cls, doc) -> "HistoryFile":
        if not isinstance(doc, dict):
            raise FormatError("history: top level must be a JSON object")
        if doc.get("schema") != HISTORY_SCHEMA:
            raise FormatError(f"history: schema must be {HISTORY_SCHEMA!r}, got {doc.get('schema')!r}")
        for key in ("dim", "bounds", "points", "values"):
            if key not in doc:
                raise FormatError(f"history: missing field {key!r}")
        d = doc["dim"]
        if not isinstance(d, int) or isinstance(d, bool) or d < 1:
            raise FormatError("history: 'dim' must be a positive integer")
        bounds = _matrix(doc["bounds"], "bounds", 2)
        if bounds.shape[0] != d:
            raise FormatError(f"history: 'bounds' has {bounds.shape[0]} rows, expected dim={d}")
        if np.any(bounds[:, 1] <= bounds[:, 0]):
            raise FormatError("history: every bounds row needs lo < hi")
        points = _matrix(doc["points"], "points", d)
        values = _vector(doc["values"], "values")
        if values.shape[0] != points.shape[0]:
            raise FormatError(f"history: {points.shape[0]} points but {values.shape[0]} values")
        pending = _matrix(doc.get("pending", []), "pending", d)
        for name, arr in (("points", points), ("pending", pending)):
            for i, x in enumerate(arr):
                if np.any(x < bounds[:, 0]) or np.any(x > bounds[:, 1]):
                    raise FormatError(f"history: {name}[{i}] lies outside the bounds")
        return cls(bounds, points, values, pending)

    @classmethod
    def from_observations(cls, obs: ObservationSet, pending=None) -> "HistoryFile":
        pending = np.zeros((0, obs.dim)) if pending is None else np.asarray(pending, dtype=float).reshape(-1, obs.dim)
        return cls(np.array(obs.bounds), np.array(obs.points), np.array(obs.values), pending)


def _matrix(rows, name, width) -> np.ndarray:
    if not isinstance(rows, list):
        raise FormatError(f"history: {name!r} must be a list")
    out = np.zeros((len(rows), width))
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != width:
            raise FormatError(f"history: {name}[{i}] must be a list of {width} numbers")
        for j, v in enumerate(row):
            if not _is_number(v):
                raise FormatError(f"history: {name}[{i}][{j}] is not a finite number")
            out[i, j] = v
    return out


def _vector(vals, name) -> np.ndarray:
    if not isinstance(vals, list):
        raise FormatError(f"history: {name!r} must be a list")
    for i, v in enumerate(vals):
        if not _is_number(v):
            raise FormatError(f"history: {name}[{i}] is not a finite number")
    return np.array(vals, dtype=float)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def read_history(path) -> HistoryFile:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"history: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return HistoryFile.from_dict(doc)


def write_history(path, history: HistoryFile):
    with open(path, "w") as fh:
        json.dump(history.to_dict(), fh, indent=2)
        fh.write("\n")


@dataclass
class ProposalFile:
    batch: np.ndarray
    qei_mean: float
    qei_std_error: Optional[float]
    qei_samples: int
    diagnostics: dict
    config: dict
    seed: int

    def to_dict(self) -> dict:
        return {
            "schema": PROPOSAL_SCHEMA,
            "batch": self.batch.tolist(),
            "estimated_qei": {
                "mean": self.qei_mean,
                "std_error": self.qei_std_error,
                "samples": self.qei_samples,
            },
            "diagnostics": self.diagnostics,
            "config": self.config,
            "seed": self.seed,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc) -> "ProposalFile":
        if not isinstance(doc, dict) or doc.get("schema") != PROPOSAL_SCHEMA:
            raise FormatError(f"proposal: schema must be {PROPOSAL_SCHEMA!r}")
        try:
            est = doc["estimated_qei"]
            return cls(
                np.array(doc["batch"], dtype=float),
                est["mean"],
                est["std_error"],
                est["samples"],
                doc["diagnostics"],
                doc["config"],
                doc["seed"],
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"proposal: missing or malformed field {exc}") from None

    @classmethod
    def loads(cls, text) -> "ProposalFile":
        return cls.from_dict(json.loads(text))


def proposal_file(proposal, cfg, seed) -> ProposalFile:
    est = proposal.estimated_qei
    se = est.std_error if math.isfinite(est.std_error) else None
    return ProposalFile(
        np.array(proposal.batch),
        float(est.mean),
        se,
        int(est.samples),
        _jsonable(proposal.diagnostics),
        _jsonable({k: v for k, v in cfg.to_dict().items() if k != "threads"}),
        int(seed),
    )


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def read_points(path, dim) -> np.ndarray:
    """Batch file: a JSON list of points, or an object with a ``batch`` or ``points`` list."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"points: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if isinstance(doc, dict):
        doc = doc.get("batch", doc.get("points"))
    if not isinstance(doc, list) or not doc:
        raise FormatError("points: expected a non-empty list of points")
    try:
        return _matrix(doc, "points", dim)
    except FormatError as exc:
        raise FormatError(str(exc).replace("history:", "points:")) from None


def check_batch(batch, bounds):
    batch = np.atleast_2d(batch)
    if batch.shape[1] != bounds.shape[0]:
        raise DimensionMismatch("batch dimension does not match bounds")
    if np.any(batch < bounds[:, 0]) or np.any(batch > bounds[:, 1]):
        raise OutOfBounds("batch point outside the bounds")


def _fmt(x) -> str:
    return repr(float(x))


def result_rows(trace, rep):
    for rec in trace.records:
        yield (
            trace.policy.replace("_", "-"),
            trace.function,
            trace.q,
            rep,
            rec.iteration,
            _fmt(rec.best_so_far),
            _fmt(rec.regret),
            _fmt(math.log10(rec.regret + 1e-12)),
            f"{rec.elapsed_ms:.3f}",
        )


def write_results(fh, traces, reps=None, timing=True):
    """One row per (rep, iteration) under the fixed header."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for i, trace in enumerate(traces):
        rep = i if reps is None else reps[i]
        for row in result_rows(trace, rep):
            if not timing:
                row = row[:-1] + ("0.000",)
            w.writerow(row)


def write_summary(fh, table, policy, function, q):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for i, it in enumerate(table.iterations):
        w.writerow(
            (policy.replace("_", "-"), function, q, int(it), table.reps, _fmt(table.mean_log10_regret[i]), _fmt(table.ci_low[i]), _fmt(table.ci_high[i]))
        )
