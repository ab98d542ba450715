"""File formats: chain results, run manifests and small CSV helpers.

Numbers are written with ``repr`` (shortest round-trip decimal) except
frequencies in MHz, which use six decimals.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chain import Y_COLUMNS, ChainResult
from .errors import InputError


def fmt(x) -> str:
    return repr(float(x))


def fmt_mhz(hz) -> str:
    return f"{float(hz) / 1e6:.6f}"


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputError(f"{path}: empty CSV")
        return header, [row for row in reader if row]


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    return x


def write_json(path, data):
    Path(path).write_text(json.dumps(_json_safe(data), indent=2, sort_keys=True) + "\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- chain results ------------------------------------------------------------

ACCEPTED_CSV = "accepted.csv"
MODE_STATS_CSV = "mode_stats.csv"
SUMMARY_JSON = "summary.json"


def write_chain_result(out_dir, res: ChainResult):
    out = Path(out_dir)
    write_rows(out / ACCEPTED_CSV, Y_COLUMNS, ([fmt(v) for v in row] for row in res.accepted_sample))
    stats = res.spectra_stats if res.n_accepted else np.full((res.freqs.shape[1], 2), np.nan)
    write_rows(out / MODE_STATS_CSV, ["mode", "mean_MHz", "std_MHz"],
               ([m, fmt_mhz(mean), fmt_mhz(std)] for m, (mean, std) in enumerate(stats)))
    moments = res.moments
    summary = {
        "n_cavities": res.n_cavities,
        "n_accepted": res.n_accepted,
        "acceptance_rate": res.acceptance_rate,
        "eval_mode": res.eval_mode,
        "k_cc_mean": moments["k_cc"][0],
        "k_cc_std": moments["k_cc"][1],
        "f_pi_mean_Hz": moments["f_pi"][0],
        "f_pi_std_Hz": moments["f_pi"][1],
        "flatness_mean": moments["flatness"][0] if "flatness" in moments else None,
        "flatness_min": float(res.flatness.min()) if res.flatness is not None and res.n_accepted else None,
        "flatness_histogram": res.flatness_histogram(),
        "rejected": res.failures,
    }
    write_json(out / SUMMARY_JSON, summary)
    return [ACCEPTED_CSV, MODE_STATS_CSV, SUMMARY_JSON]


def read_accepted(path):
    header, rows = read_rows(path)
    if header != Y_COLUMNS:
        raise InputError(f"{path}: unexpected columns")
    return np.array([[float(v) for v in r] for r in rows]).reshape(-1, len(Y_COLUMNS))


# -- manifest ---------------------------------------------------------------------

MANIFEST_JSON = "manifest.json"


@dataclass
class RunManifest:
    command: str
    args: dict
    seed: int
    out: str
    inputs: dict = field(default_factory=dict)       # path -> sha256
    outputs: dict = field(default_factory=dict)      # file name -> sha256
    telemetry: dict = field(default_factory=dict)
    version: str = ""

    def to_dict(self) -> dict:
        return {
            "command": self.command, "args": self.args, "seed": self.seed, "out": self.out,
            "inputs": self.inputs, "outputs": self.outputs, "telemetry": self.telemetry,
            "version": self.version,
        }

    def write(self, out_dir):
        write_json(Path(out_dir) / MANIFEST_JSON, self.to_dict())

    @classmethod
    def read(cls, path) -> "RunManifest":
        try:
            data = json.loads(Path(path).read_text())
            return cls(**{k: data[k] for k in ("command", "args", "seed", "out")},
                       inputs=data.get("inputs", {}), outputs=data.get("outputs", {}),
                       telemetry=data.get("telemetry", {}), version=data.get("version", ""))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise InputError(f"cannot read manifest {path}: {exc}") from None
