"""Readers and writers for the emitted artifacts.

Reports are flat ``key = value`` text under a section header; traces,
samples and fields are comma-delimited columns.  Every writer has a
matching reader and round-trips exactly: floats are rendered with 17
significant digits, which reproduces the double bit pattern.

Report files deliberately contain no wall-clock fields, so a run with a
fixed seed writes byte-identical reports regardless of threading or
machine load; timings live in the trace files.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .latent import BlockLayout, LatentVector


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def parse_value(raw: str):
    text = raw.strip()
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def write_report(path, fields: dict) -> None:
    lines = ["[report]"]
    for key, value in fields.items():
        lines.append(f"{key} = {format_value(value)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_report(path) -> dict:
    fields = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("["):
            continue
        key, _, raw = line.partition("=")
        fields[key.strip()] = parse_value(raw)
    return fields


def write_trace(path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row.get(c, "")) for c in columns])


def read_trace(path) -> list[dict]:
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        return [
            {k: parse_value(v) for k, v in row.items() if v != ""}
            for row in reader
        ]


def write_samples(path, mean: LatentVector, samples: list[LatentVector]) -> None:
    layout = mean.layout
    block_of = np.empty(layout.total_dim, dtype=object)
    for name in layout.names:
        block_of[layout.slice_of(name)] = name
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        header = ["index", "block", "mean"] + [
            f"sample_{i:04d}" for i in range(len(samples))
        ]
        writer.writerow(header)
        for i in range(layout.total_dim):
            row = [i, block_of[i], format_value(mean.values[i])]
            row += [format_value(s.values[i]) for s in samples]
            writer.writerow(row)


def read_samples(path) -> tuple[LatentVector, list[LatentVector]]:
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        n_samples = len(header) - 3
        rows = list(reader)
    blocks: list[tuple[str, int]] = []
    for row in rows:
        name = row[1]
        if blocks and blocks[-1][0] == name:
            blocks[-1] = (name, blocks[-1][1] + 1)
        else:
            blocks.append((name, 1))
    layout = BlockLayout.of(*[(name, (size,)) for name, size in blocks])
    mean = np.array([float(r[2]) for r in rows])
    samples = [
        np.array([float(r[3 + j]) for r in rows]) for j in range(n_samples)
    ]
    return (
        LatentVector(layout, mean),
        [LatentVector(layout, s) for s in samples],
    )


def write_field_csv(path, truth, mean, std) -> None:
    truth = np.asarray(truth, dtype=np.float64).ravel()
    mean = np.asarray(mean, dtype=np.float64).ravel()
    std = np.asarray(std, dtype=np.float64).ravel()
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["index", "truth", "mean", "std"])
        for i in range(mean.size):
            writer.writerow(
                [i, format_value(truth[i]), format_value(mean[i]), format_value(std[i])]
            )


def read_field_csv(path) -> dict:
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        rows = list(reader)
    return {
        key: np.array([float(r[key]) for r in rows])
        for key in ("truth", "mean", "std")
    }
