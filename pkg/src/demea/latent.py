"""Latent-space arithmetic: interpolation, deformation transfer and causal smoothing.

Codes are 1-D float arrays; sequences are 2-D arrays with one code per row.
Nothing here decodes; callers compose these with the autoencoder.
"""
import csv
from pathlib import Path

import numpy as np


class LatentError(ValueError):
    pass


def _code(x, name):
    a = np.asarray(x)
    if a.ndim != 1:
        raise LatentError(f"{name} must be a 1-D latent code, got shape {a.shape}")
    if not np.issubdtype(a.dtype, np.floating):
        a = a.astype(np.float64)
    return a


def _sequence(seq, name):
    a = np.asarray(seq)
    if a.ndim == 1 and a.size == 0 or a.ndim == 2 and len(a) == 0:
        raise LatentError(f"{name} is empty")
    if a.ndim != 2:
        raise LatentError(f"{name} must be a sequence of latent codes, got shape {a.shape}")
    if not np.issubdtype(a.dtype, np.floating):
        a = a.astype(np.float64)
    return a


def interpolate(source, target, alpha):
    """``(1 - alpha) * source + alpha * target``; endpoints are returned exactly."""
    s, t = _code(source, "source"), _code(target, "target")
    if s.shape != t.shape:
        raise LatentError(f"dimension mismatch: {s.shape[0]} vs {t.shape[0]}")
    if alpha == 0:
        return s.copy()
    if alpha == 1:
        return t.copy()
    return (1 - alpha) * s + alpha * t


def transfer(source_sequence, target_first):
    """Shift a sequence by the constant offset that maps its first code onto ``target_first``.

    The first output equals ``target_first`` exactly. Whether the two first
    frames show the same pose is up to the caller.
    """
    m = _sequence(source_sequence, "source sequence")
    t0 = _code(target_first, "target code")
    if m.shape[1] != t0.shape[0]:
        raise LatentError(f"dimension mismatch: {m.shape[1]} vs {t0.shape[0]}")
    d = t0 - m[0]
    out = m + d
    out[0] = t0
    return out


def smooth(sequence, alpha):
    """Causal exponential average ``D'_i = alpha D_i + (1 - alpha) D'_{i-1}``, ``D'_0 = D_0``."""
    d = _sequence(sequence, "sequence")
    if not 0 <= alpha <= 1:
        raise LatentError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1:
        return d.copy()
    out = np.empty_like(d)
    out[0] = d[0]
    for i in range(1, len(d)):
        out[i] = alpha * d[i] + (1 - alpha) * out[i - 1]
    return out


def write_latents(path, codes):
    codes = np.atleast_2d(np.asarray(codes))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in codes:
            w.writerow([repr(float(v)) for v in row])


def read_latents(path):
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise LatentError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise LatentError(f"{path}: no latent codes")
    if len({len(r) for r in rows}) != 1:
        raise LatentError(f"{path}: rows have different lengths")
    return np.array(rows)
