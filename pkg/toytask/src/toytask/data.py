"""Deterministic synthetic dataset for the toy detection-scoring task.

Two features, binary label from a fixed linear rule with a separation gap;
``difficulty`` controls the label-flip rate (0 means perfectly separable).
The same seed always produces byte-identical files.

Layout under the target directory:

    train.csv   x0,x1,label per line, %.6f features
    val.csv     same format
    meta.json   spec values plus the generating rule
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

TRUE_WEIGHTS = (1.0, -0.8)
TRUE_BIAS = 0.1
SEPARATION_GAP = 0.05


class EmptySplit(ValueError):
    """A split was configured with no samples."""


@dataclass(frozen=True)
class ToyTaskSpec:
    seed: int = 0
    n_train: int = 400
    n_val: int = 200
    difficulty: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 <= self.difficulty <= 1.0:
            raise ValueError("difficulty must be in [0, 1]")


def _sample_rows(rng: random.Random, count: int, difficulty: float) -> list[tuple[float, float, int]]:
    rows = []
    while len(rows) < count:
        x0 = rng.uniform(-1.0, 1.0)
        x1 = rng.uniform(-1.0, 1.0)
        score = TRUE_WEIGHTS[0] * x0 + TRUE_WEIGHTS[1] * x1 + TRUE_BIAS
        if abs(score) < SEPARATION_GAP:
            continue
        label = 1 if score > 0 else 0
        if rng.random() < 0.5 * difficulty:
            label = 1 - label
        rows.append((x0, x1, label))
    return rows


def _write_split(path: Path, rows: list[tuple[float, float, int]]) -> None:
    lines = [f"{x0:.6f},{x1:.6f},{label}" for x0, x1, label in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def generate_toy_data(spec: ToyTaskSpec, out_dir: Path | str) -> Path:
    """Materialize the dataset; returns the directory written."""
    if spec.n_train <= 0:
        raise EmptySplit("n_train must be positive")
    if spec.n_val <= 0:
        raise EmptySplit("n_val must be positive")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(spec.seed)
    _write_split(out / "train.csv", _sample_rows(rng, spec.n_train, spec.difficulty))
    _write_split(out / "val.csv", _sample_rows(rng, spec.n_val, spec.difficulty))
    (out / "meta.json").write_text(
        json.dumps(
            {
                "seed": spec.seed,
                "n_train": spec.n_train,
                "n_val": spec.n_val,
                "difficulty": spec.difficulty,
                "true_weights": list(TRUE_WEIGHTS),
                "true_bias": TRUE_BIAS,
                "separation_gap": SEPARATION_GAP,
            },
            indent=2,
            sort_keys=True,
        ),
        encoding="utf-8",
    )
    return out


def load_split(path: Path | str) -> list[tuple[float, float, int]]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        x0, x1, label = line.split(",")
        rows.append((float(x0), float(x1), int(label)))
    return rows
