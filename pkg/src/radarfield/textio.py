"""Line-oriented text formats for detections, clouds and uncertain clouds.

Numbers are written with nine significant digits, space separated.
"""

from __future__ import annotations

import numpy as np

from .detect import PolarDetection
from .errors import FileFormatError
from .radar_model import PolarCoord


def _fmt(values) -> str:
    return " ".join(f"{float(v):.9g}" for v in values)


def _read_rows(path, widths) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in widths:
                raise FileFormatError(
                    f"{path}:{lineno}: expected {' or '.join(map(str, widths))} columns, got {len(parts)}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise FileFormatError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        return np.zeros((0, min(widths)))
    if len({len(r) for r in rows}) > 1:
        raise FileFormatError(f"{path}: inconsistent column counts")
    return np.array(rows)


def format_detections(dets, residuals=None) -> str:
    lines = []
    for i, d in enumerate(dets):
        vals = [d.coord.r, d.coord.alpha, d.coord.beta, d.intensity, d.doppler]
        if residuals is not None:
            vals.append(residuals[i])
        lines.append(_fmt(vals))
    return "".join(line + "\n" for line in lines)


def write_detections(path, dets, residuals=None) -> None:
    with open(path, "w") as fh:
        fh.write(format_detections(dets, residuals))


def read_detections(path) -> list[PolarDetection]:
    """Reads ``r alpha beta intensity doppler`` rows; a sixth residual column is ignored."""
    rows = _read_rows(path, (5, 6))
    return [PolarDetection(PolarCoord(r, a, b), i, d) for r, a, b, i, d in rows[:, :5]]


def format_cloud(points) -> str:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    return "".join(_fmt(p) + "\n" for p in pts)


def write_cloud(path, points) -> None:
    with open(path, "w") as fh:
        fh.write(format_cloud(points))


def read_cloud(path) -> np.ndarray:
    """Reads ``x y z`` rows; uncertain-cloud files are accepted and reduced to means."""
    return _read_rows(path, (3, 9))[:, :3].reshape(-1, 3)


_UPPER = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


def format_uncertain_cloud(means, covs) -> str:
    means = np.asarray(means, dtype=float).reshape(-1, 3)
    covs = np.asarray(covs, dtype=float).reshape(-1, 3, 3)
    return "".join(
        _fmt([*m, *(c[i, j] for i, j in _UPPER)]) + "\n" for m, c in zip(means, covs)
    )


def write_uncertain_cloud(path, means, covs) -> None:
    with open(path, "w") as fh:
        fh.write(format_uncertain_cloud(means, covs))


def read_uncertain_cloud(path) -> tuple[np.ndarray, np.ndarray]:
    rows = _read_rows(path, (9,))
    covs = np.zeros((rows.shape[0], 3, 3))
    for k, (i, j) in enumerate(_UPPER):
        covs[:, i, j] = rows[:, 3 + k]
        covs[:, j, i] = rows[:, 3 + k]
    return rows[:, :3].copy(), covs
