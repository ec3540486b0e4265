"""Candidate pipeline sources for the toy task.

Each function returns the full source of a standalone program. ``good``
variants train a linear scorer and honor the engine's contracts; the other
three violate one contract each, on purpose, to exercise the debug loop:
``slow`` outruns the debug timeout, ``crashing`` exits nonzero, ``silent``
finishes cleanly but never prints a metric line.
"""

from __future__ import annotations

_COMMON_HEADER = '''\
import os
import sys
import time


def load(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            a, b, c = line.split(",")
            rows.append((float(a), float(b), int(c)))
    return rows


data_dir = os.environ["SEPDD_DATA_DIR"]
debug = os.environ.get("SEPDD_DEBUG") == "1"
train = load(os.path.join(data_dir, "train.csv"))
val = load(os.path.join(data_dir, "val.csv"))
if debug:
    train = train[::4]
'''

_METRIC_FOOTER = '''\

def _normalized(s):
    return s / (1.0 + abs(s))


total = len(val)
correct = sum(1 for x0, x1, y in val if (score(x0, x1) > 0.0) == (y == 1))
acc = correct / total
margin_accs = []
for step in range(10):
    margin = step * 0.05
    hits = 0
    for x0, x1, y in val:
        s = score(x0, x1)
        if (s > 0.0) == (y == 1) and abs(_normalized(s)) >= margin:
            hits += 1
    margin_accs.append(hits / total)
strict = sum(margin_accs) / len(margin_accs)
print(f"SEPDD_METRIC mAP50={acc:.6f}")
print(f"SEPDD_METRIC mAP50-95={strict:.6f}")
'''

_VARIANT_TRAINERS = {
    # Single-feature threshold on x0: a deliberately weak first draft.
    "v0": '''\

pos = [x0 for x0, x1, y in train if y == 1]
neg = [x0 for x0, x1, y in train if y == 0]
mean_pos = sum(pos) / len(pos)
mean_neg = sum(neg) / len(neg)
threshold = (mean_pos + mean_neg) / 2.0
direction = 1.0 if mean_pos >= mean_neg else -1.0


def score(x0, x1):
    return direction * (x0 - threshold)
''',
    # Perceptron over both features, no bias.
    "v1": '''\

epochs = 1 if debug else 3
w0 = 0.0
w1 = 0.0
for _ in range(epochs):
    for x0, x1, y in train:
        s = w0 * x0 + w1 * x1
        err = y - (1 if s > 0.0 else 0)
        if err:
            w0 += 0.1 * err * x0
            w1 += 0.1 * err * x1


def score(x0, x1):
    return w0 * x0 + w1 * x1
''',
    # Pocket perceptron with bias: keeps the best-on-train weights seen.
    "v2": '''\

def _train_accuracy(w0, w1, bias):
    hits = 0
    for x0, x1, y in train:
        if ((w0 * x0 + w1 * x1 + bias) > 0.0) == (y == 1):
            hits += 1
    return hits / len(train)


epochs = 2 if debug else 6
w0 = 0.0
w1 = 0.0
bias = 0.0
pocket = (w0, w1, bias)
pocket_acc = _train_accuracy(*pocket)
for _ in range(epochs):
    for x0, x1, y in train:
        s = w0 * x0 + w1 * x1 + bias
        err = y - (1 if s > 0.0 else 0)
        if err:
            w0 += 0.1 * err * x0
            w1 += 0.1 * err * x1
            bias += 0.1 * err
    acc = _train_accuracy(w0, w1, bias)
    if acc > pocket_acc:
        pocket = (w0, w1, bias)
        pocket_acc = acc
w0, w1, bias = pocket


def score(x0, x1):
    return w0 * x0 + w1 * x1 + bias
''',
}


def good_candidate(variant: str = "v2") -> str:
    """A working pipeline; variants v0 < v1 < v2 in expected quality."""
    if variant not in _VARIANT_TRAINERS:
        raise ValueError(f"unknown variant {variant!r}")
    return _COMMON_HEADER + _VARIANT_TRAINERS[variant] + _METRIC_FOOTER


def slow_candidate(sleep_seconds: float = 60.0) -> str:
    """Ignores SEPDD_DEBUG and sleeps past any sane debug timeout."""
    return (
        _COMMON_HEADER
        + f'''

deadline = time.time() + {sleep_seconds}
while time.time() < deadline:
    time.sleep(0.1)


def score(x0, x1):
    return 0.0
'''
        + _METRIC_FOOTER
    )


def crashing_candidate() -> str:
    """Fails before producing any metric, with a deterministic message."""
    return (
        _COMMON_HEADER
        + '''

sys.stderr.write("RuntimeError: incompatible loss configuration\\n")
sys.exit(2)
'''
    )


def silent_candidate() -> str:
    """Exits cleanly without ever printing a metric line."""
    return (
        _COMMON_HEADER
        + '''

print("training finished; metrics logged to tensorboard only")
'''
    )
