"""File formats: fseq-csv sequences, CSV grids, PGM heatmaps, pair manifests."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .core import FeatureSequence
from .synth import PairEntry, PairManifest, SequenceRecord


def read_fseq(path) -> FeatureSequence:
    """Load a headerless CSV of T rows x d decimal columns."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if len(rows[-1]) != len(rows[0]):
                raise ValueError(f"{path}:{lineno}: ragged row ({len(rows[-1])} columns, expected {len(rows[0])})")
    if not rows:
        raise ValueError(f"{path}: no frames")
    return FeatureSequence(np.array(rows))


def write_grid(path, grid) -> None:
    """Write a 2-D array as headerless CSV using round-trippable float reprs."""
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in grid:
            writer.writerow([repr(float(v)) for v in row])


def write_fseq(path, F: FeatureSequence) -> None:
    write_grid(path, F.frames)


def to_pgm_bytes(grid) -> bytes:
    """8-bit binary PGM with values scaled so the maximum entry maps to 255."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError("heatmap needs a 2-D grid")
    top = grid.max()
    scaled = np.zeros_like(grid) if top <= 0 else np.clip(grid / top, 0.0, 1.0)
    pixels = np.rint(scaled * 255).astype(np.uint8)
    header = f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode("ascii")
    return header + pixels.tobytes()


def write_pgm(path, grid) -> None:
    Path(path).write_bytes(to_pgm_bytes(grid))


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, dims, maxval, rest = data.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    w, h = (int(v) for v in dims.split())
    return np.frombuffer(rest, dtype=np.uint8).reshape(h, w)


def write_manifest(path, entries) -> None:
    """One JSON object per line: ``{"a": ..., "b": ..., "label": "positive"|"negative"}``."""
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps({"a": e.a, "b": e.b, "label": "positive" if e.label else "negative"}) + "\n")


def read_manifest(path, ground_truth=None) -> PairManifest:
    """Load a manifest; sequence paths are resolved relative to its directory.

    ``ground_truth`` optionally maps a sequence path to its boundaries, step
    ids and procedure id (as written by ``cpa gen``).
    """
    base = Path(path).parent
    manifest = PairManifest()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                label = rec["label"]
                a, b = rec["a"], rec["b"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest record ({exc})") from None
            if label not in ("positive", "negative"):
                raise ValueError(f"{path}:{lineno}: label must be 'positive' or 'negative', got {label!r}")
            for ref in (a, b):
                if ref not in manifest.sequences:
                    gt = (ground_truth or {}).get(ref, {})
                    manifest.sequences[ref] = SequenceRecord(
                        read_fseq(base / ref),
                        tuple(tuple(iv) for iv in gt.get("boundaries", ())),
                        tuple(gt.get("step_ids", ())),
                        int(gt.get("procedure_id", -1)),
                    )
            manifest.entries.append(PairEntry(a, b, label == "positive"))
    return manifest
