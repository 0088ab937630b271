"""Experiment manifests: INI files with an explicit schema version.

Example::

    [experiment]
    schema_version = 1
    name = es-scaling
    estimator = es
    seed = 1234
    trials = 20000
    workers = 1            ; optional, never affects results
    output = results/es    ; optional

    [grid]
    m = 8, 16, 32, 64

    [report]               ; optional, read by ``lerwlab report``
    kind = power_law
    scale = m
    beta_offset = -2

List values are comma separated; a point is three whitespace-separated
numbers (``x = 0.5 0 0, 0.25 0 0``).  Scales may be written ``2^4.5``.  The
grid is the cartesian product of all list-valued keys, enumerated in the order
the keys appear; cell i gets the trial-index block starting at i * 2^40.
"""

from __future__ import annotations

import configparser
import hashlib
import itertools
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA_VERSION = 1
CELL_STRIDE = 1 << 40

# estimator id -> (required grid keys, optional grid keys)
ESTIMATOR_KEYS = {
    "length": (("m",), ()),
    "one_point": (("m", "x"), ("truncation",)),
    "ball_hit": (("m", "x", "r"), ()),
    "two_point": (("m", "z", "w"), ("mode", "r")),
    "es": (("m",), ()),
    "decompose": (("m", "x"), ()),
    "decoupling": (("m", "shape"), ("x",)),
    "factorization": (("m", "z", "w", "r"), ("x",)),
}
POINT_KEYS = {"x", "z", "w"}
TEXT_KEYS = {"mode", "shape"}
EXPERIMENT_KEYS = {"schema_version", "name", "estimator", "seed", "trials", "workers", "output"}


class ManifestError(ValueError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = f"line {line}" if line else "manifest"
        super().__init__(f"{where}: {field + ': ' if field else ''}{message}")


@dataclass(frozen=True)
class Cell:
    index: int
    params: dict

    @property
    def key(self) -> str:
        return json.dumps(self.params, sort_keys=True, separators=(",", ":"))

    @property
    def offset(self) -> int:
        return self.index * CELL_STRIDE


@dataclass(frozen=True)
class ExperimentManifest:
    name: str
    estimator: str
    seed: int
    trials: int
    grid: tuple  # ((key, (values...)), ...)
    workers: int = 1
    output: str | None = None
    report: dict = field(default_factory=dict)
    source: str | None = None

    def cells(self) -> list[Cell]:
        keys = [k for k, _ in self.grid]
        vals = [v for _, v in self.grid]
        return [Cell(i, dict(zip(keys, combo))) for i, combo in enumerate(itertools.product(*vals))]

    def canonical(self) -> dict:
        # everything that determines results, nothing that does not (workers, output, report)
        return {"schema_version": SCHEMA_VERSION, "name": self.name, "estimator": self.estimator, "seed": self.seed,
                "trials": self.trials, "grid": [[k, list(v)] for k, v in self.grid]}

    @property
    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "ExperimentManifest":
        return ExperimentManifest(self.name, self.estimator, seed, self.trials, self.grid, self.workers, self.output,
                                  self.report, self.source)


def _line_index(text: str) -> dict:
    """(section, key) -> line number, for diagnostics."""
    out: dict = {}
    section = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[(.+)\]$", line)
        if m:
            section = m.group(1).strip()
            out[(section, None)] = i
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", line)
        if m and section is not None:
            out[(section, m.group(1).strip().lower())] = i
    return out


def parse_number(tok: str) -> float:
    tok = tok.strip()
    if "^" in tok:
        b, e = tok.split("^", 1)
        return float(b) ** float(e)
    v = float(tok)
    if not math.isfinite(v):
        raise ValueError(f"non-finite number {tok!r}")
    return v


def _norm(v: float):
    return int(v) if float(v).is_integer() else float(v)


def _parse_list(key: str, raw: str) -> tuple:
    items = [t.strip() for t in raw.split(",") if t.strip()]
    if key in POINT_KEYS:
        out = []
        for it in items:
            parts = it.split()
            if len(parts) != 3:
                raise ValueError(f"point {it!r} needs three coordinates")
            out.append(tuple(float(parse_number(p)) for p in parts))
        return tuple(out)
    if key in TEXT_KEYS:
        return tuple(it if key == "mode" or it == "point" else float(parse_number(it)) for it in items)
    return tuple(_norm(parse_number(it)) for it in items)


def parse_manifest_text(text: str, source: str | None = None) -> ExperimentManifest:
    lines = _line_index(text)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text, source=source or "<manifest>")
    except configparser.Error as e:
        raise ManifestError(str(e).splitlines()[0], getattr(e, "lineno", None)) from None

    def fail(section, key, msg):
        raise ManifestError(msg, lines.get((section, key)) or lines.get((section, None)), key)

    if not cp.has_section("experiment"):
        raise ManifestError("missing [experiment] section")
    ex = cp["experiment"]
    for k in ex:
        if k not in EXPERIMENT_KEYS:
            fail("experiment", k, "unknown key")
    for k in ("schema_version", "name", "estimator", "seed", "trials"):
        if k not in ex:
            fail("experiment", None, f"missing required key {k!r}")
    try:
        version = int(ex["schema_version"])
    except ValueError:
        fail("experiment", "schema_version", "not an integer")
    if version != SCHEMA_VERSION:
        fail("experiment", "schema_version", f"unsupported schema version {version} (expected {SCHEMA_VERSION})")
    est = ex["estimator"].strip()
    if est not in ESTIMATOR_KEYS:
        fail("experiment", "estimator", f"unknown estimator {est!r}; choose from {', '.join(sorted(ESTIMATOR_KEYS))}")
    ints = {}
    for k, lo in (("seed", 0), ("trials", 1), ("workers", 1)):
        if k not in ex:
            continue
        try:
            ints[k] = int(ex[k])
        except ValueError:
            fail("experiment", k, "not an integer")
        if ints[k] < lo or (k == "seed" and ints[k] >= 2**64):
            fail("experiment", k, "out of range")
    required, optional = ESTIMATOR_KEYS[est]
    grid = []
    gsec = cp["grid"] if cp.has_section("grid") else {}
    for k in gsec:
        if k not in required and k not in optional:
            fail("grid", k, f"not a parameter of estimator {est!r}")
    for k in required:
        if k not in gsec:
            fail("grid", None, f"missing grid key {k!r}")
    for k in gsec:
        try:
            grid.append((k, _parse_list(k, gsec[k])))
        except ValueError as e:
            fail("grid", k, str(e))
    for s in cp.sections():
        if s not in ("experiment", "grid", "report"):
            fail(s, None, f"unknown section [{s}]")
    report = dict(cp["report"]) if cp.has_section("report") else {}
    return ExperimentManifest(ex["name"].strip(), est, ints["seed"], ints["trials"], tuple(grid),
                              ints.get("workers", 1), ex.get("output"), report, source)


def load_manifest(path) -> ExperimentManifest:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ManifestError(f"cannot read manifest: {e.strerror}") from None
    return parse_manifest_text(text, str(p))
