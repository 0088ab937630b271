"""The calibrated growth exponent used as the default beta.

The file is written by ``lerwlab calibrate-beta``.  Lookup order: the path in
``$LERWLAB_BETA_FILE``, then the copy shipped in the package data.
"""

from __future__ import annotations

import datetime as _dt
import json
import os
from pathlib import Path

ENV_VAR = "LERWLAB_BETA_FILE"
PACKAGED = Path(__file__).with_name("data") / "beta.json"
BETA_BOUNDS = (1.0, 5.0 / 3.0)


class CalibrationError(RuntimeError):
    pass


def calibration_path() -> Path:
    env = os.environ.get(ENV_VAR)
    return Path(env) if env else PACKAGED


def load_calibration(path=None) -> dict:
    p = Path(path) if path is not None else calibration_path()
    try:
        with open(p) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CalibrationError(f"no calibration file at {p}; run calibrate-beta or pass beta explicitly") from None


def default_beta(path=None) -> float:
    return float(load_calibration(path)["beta"])


def in_bounds(beta: float) -> bool:
    lo, hi = BETA_BOUNDS
    return lo < beta <= hi


def write_calibration(path, beta: float, ci: tuple[float, float], manifest_hash: str, **extra) -> dict:
    rec = {
        "beta": beta,
        "ci": list(ci),
        "manifest_hash": manifest_hash,
        "date": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    rec.update(extra)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    tmp = p.with_suffix(p.suffix + ".tmp")
    tmp.write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
    tmp.replace(p)
    return rec
