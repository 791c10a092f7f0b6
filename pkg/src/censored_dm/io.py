"""Readers and writers for observation, pattern, truth, record and manifest files.

Observation file: comma-separated, one day per row, a header
``day,kind_1,value_1,lower_1,upper_1,...``. Empty fields mark absent
entries; exact values fill only ``value``, censored ones only ``lower`` and
``upper`` (``inf`` for an unbounded upper end). Floats are written with
``repr`` so that reading back is exact.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data_model import EXACT, INTERVAL, MISSING, RIGHT, Observation
from .dm_core import DmParams
from .errors import DomainError, ParseError
from .experiments.simulation import CensoringPattern
from .margins import MarginParams

FIELDS = ("kind", "value", "lower", "upper")


def _fmt(x: float) -> str:
    if np.isnan(x):
        return ""
    if np.isposinf(x):
        return "inf"
    return repr(float(x))


def _parse_float(s: str, path, line: int, what: str) -> float:
    if s == "":
        return np.nan
    try:
        return float(s)
    except ValueError:
        raise ParseError(path, line, f"{what}: not a number: {s!r}") from None


def observation_header(d: int) -> list[str]:
    return ["day"] + [f"{f}_{j + 1}" for j in range(d) for f in FIELDS]


def write_observations(path, observations: Sequence[Observation], d: int | None = None):
    """Write observations, one row per day, in the given order."""
    if d is None:
        if not observations:
            raise DomainError("cannot infer the number of stations from an empty dataset")
        d = observations[0].d
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(observation_header(d))
        for o in observations:
            if o.d != d:
                raise DomainError(f"day {o.day}: expected {d} stations")
            row = [str(o.day)]
            for j in range(d):
                k = int(o.kind[j])
                if k == EXACT:
                    row += [str(k), _fmt(o.value[j]), "", ""]
                elif k in (RIGHT, INTERVAL):
                    row += [str(k), "", _fmt(o.lower[j]), _fmt(o.upper[j])]
                else:
                    row += [str(k), "", "", ""]
            w.writerow(row)


def read_observations(path) -> tuple[list[Observation], int]:
    """Parse an observation file; returns ``(observations, d)``.

    Raises :class:`ParseError` naming the offending line.
    """
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty file") from None
        if len(header) < 5 or (len(header) - 1) % 4 or header[0] != "day":
            raise ParseError(path, 1, "header must be 'day' followed by kind,value,lower,upper per station")
        d = (len(header) - 1) // 4
        if header != observation_header(d):
            raise ParseError(path, 1, "unexpected column names")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 1 + 4 * d:
                raise ParseError(path, line, f"expected {1 + 4 * d} fields, got {len(row)}")
            try:
                day = int(row[0])
                kind = np.array([int(row[1 + 4 * j]) for j in range(d)])
            except ValueError:
                raise ParseError(path, line, "day and kinds must be integers") from None
            vals = np.array(
                [[_parse_float(row[1 + 4 * j + i], path, line, header[1 + 4 * j + i]) for i in (1, 2, 3)] for j in range(d)]
            )
            value, lower, upper = vals[:, 0], vals[:, 1], vals[:, 2]
            ex = kind == EXACT
            lower = np.where(ex, value, lower)
            upper = np.where(ex, value, upper)
            try:
                out.append(Observation(day, kind, value, lower, upper))
            except DomainError as e:
                raise ParseError(path, line, str(e)) from None
    return out, d


def write_pattern(path, pattern: CensoringPattern):
    """Pattern file: ``day,bound_1,...``; empty = uncensored, ``NA`` = missing."""
    b = pattern.bounds
    d = b.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day"] + [f"bound_{j + 1}" for j in range(d)])
        for t, row in enumerate(b):
            w.writerow([str(t)] + ["NA" if np.isposinf(x) else _fmt(x) for x in row])


def read_pattern(path) -> CensoringPattern:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "day" or len(header) < 2:
            raise ParseError(path, 1, "header must be 'day' followed by one bound per station")
        d = len(header) - 1
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != d + 1:
                raise ParseError(path, line, f"expected {d + 1} fields, got {len(row)}")
            if row[0] != str(len(rows)):
                raise ParseError(path, line, f"days must be consecutive from 0, got {row[0]!r}")
            rows.append([np.inf if s == "NA" else _parse_float(s, path, line, "bound") for s in row[1:]])
    bounds = np.array(rows, dtype=float).reshape(len(rows), d)
    try:
        return CensoringPattern(bounds)
    except DomainError as e:
        raise ParseError(path, 1, str(e)) from None


def write_truth(path, psi: DmParams, chi: MarginParams):
    with open(path, "w") as fh:
        json.dump({"psi": psi.to_dict(), "chi": chi.to_dict()}, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_truth(path) -> tuple[DmParams, MarginParams]:
    with open(path) as fh:
        data = json.load(fh)
    return DmParams.from_dict(data["psi"]), MarginParams.from_dict(data["chi"])


def dump_record(rec: dict) -> str:
    """One chain record as a single JSON line (keys sorted, floats exact)."""
    return json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n"


def read_records(path) -> list[dict]:
    """Chain records; an unterminated final line (interrupted write) is ignored."""
    out = []
    with open(path) as fh:
        for i, line in enumerate(fh, start=1):
            if not line.endswith("\n"):
                break
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ParseError(path, i, f"invalid record: {e.msg}") from None
    return out


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, config: dict, seeds: dict, outputs: Iterable):
    """Provenance of a run: config hash, seeds and output files."""
    data = {
        "command": command,
        "config_sha256": config_hash(config),
        "seeds": seeds,
        "outputs": sorted(str(Path(p).name) for p in outputs),
    }
    atomic_write_text(path, json.dumps(data, indent=1, sort_keys=True) + "\n")


def atomic_write_bytes(path, blob: bytes):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode())


def write_table(path, columns: dict):
    """Tab-separated table with a header row, columns of equal length."""
    names = list(columns)
    data = [np.asarray(columns[n]) for n in names]
    with open(path, "w") as fh:
        fh.write("\t".join(names) + "\n")
        for row in zip(*data):
            fh.write("\t".join(_fmt(x) if isinstance(x, (float, np.floating)) else str(x) for x in row) + "\n")


def read_table(path) -> dict:
    with open(path) as fh:
        names = fh.readline().rstrip("\n").split("\t")
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    return {n: np.array([float(r[i]) if r[i] else np.nan for r in rows]) for i, n in enumerate(names)}
