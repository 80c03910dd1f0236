"""Artifact files for a run: CSV tables, JSON documents, a summary and a manifest.

Files are staged in memory and written only by :meth:`RunWriter.commit`, so
a run that fails part-way leaves nothing behind.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import os

import numpy as np

from .config import canonical_json, config_hash

MANIFEST_VERSION = 1


def format_value(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    if isinstance(value, complex):
        return "%.17g%+.17gj" % (value.real, value.imag)
    return str(value)


def csv_text(header, rows) -> str:
    buf = io.StringIO(newline="")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(format_value(v) for v in row) + "\n")
    return buf.getvalue()


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


def plain(obj):
    """JSON-safe copy: arrays to lists, numpy scalars to Python, NaN kept."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def json_text(obj) -> str:
    return json.dumps(plain(obj), indent=2, sort_keys=True) + "\n"


class RunWriter:
    def __init__(self, root, command):
        self.root = root
        self.command = command
        self.files = {}

    @property
    def directory(self):
        return os.path.join(self.root, self.command.replace(" ", "-"))

    def csv(self, name, header, rows):
        self.files[name] = csv_text(header, rows).encode()

    def json(self, name, obj):
        self.files[name] = json_text(obj).encode()

    def text(self, name, content):
        self.files[name] = content.encode()

    def binary(self, name, content: bytes):
        self.files[name] = content

    def manifest(self, cfg, args: dict, seed):
        digests = {name: hashlib.sha256(data).hexdigest()
                   for name, data in sorted(self.files.items())}
        return {
            "manifest_version": MANIFEST_VERSION,
            "command": self.command,
            "arguments": plain(args),
            "rng_seed": seed,
            "config": cfg,
            "config_sha256": config_hash(cfg),
            "files": digests,
        }

    def commit(self, cfg, args: dict, seed):
        """Write every staged file plus ``manifest.json``; returns the directory."""
        manifest = self.manifest(cfg, args, seed)
        os.makedirs(self.directory, exist_ok=True)
        for name, data in sorted(self.files.items()):
            with open(os.path.join(self.directory, name), "wb") as fh:
                fh.write(data)
        with open(os.path.join(self.directory, "manifest.json"), "w", encoding="utf-8") as fh:
            fh.write(json_text(manifest))
        return self.directory


def summary_text(title, lines) -> str:
    out = [title, "=" * len(title)]
    for key, value in lines:
        if isinstance(value, float) and math.isfinite(value):
            value = f"{value:.6g}"
        out.append(f"{key}: {value}")
    return "\n".join(out) + "\n"


def digest(obj) -> str:
    return hashlib.sha256(canonical_json(plain(obj)).encode()).hexdigest()
