"""Result bundles on disk and SVG rendering of 2-D results."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from types import SimpleNamespace
from typing import Optional

import numpy as np

from . import dataset as ds
from .config import SynthesisConfig
from .cpa import CpaFunction, read_boundary_csv, read_w_values
from .exceptions import SchemaError
from .geometry import Triangulation
from .verify import check_theorem1

REQUIRED = ("w_values.csv", "gamma.csv", "xi.csv", "vertices.csv", "simplices.csv", "config.json", "certificate.json")


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_bundle(result, out_dir, source: Optional[dict] = None, seed: Optional[int] = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.tri.to_csv(out)
    result.W.to_csv(out)
    _write_rows(out / "gamma.csv", ["simplex_id", "gamma"],
                [[i, repr(float(g))] for i, g in enumerate(result.gamma)])
    _write_rows(out / "xi.csv", ["simplex_id", "xi"], [[i, int(k) + 1] for i, k in enumerate(result.xi)])
    cert = result.certificate.to_dict() if result.certificate is not None else {"passed": False}
    cert["b"] = result.b
    (out / "certificate.json").write_text(json.dumps(cert, indent=2))
    cfg = {"synthesis": result.config.to_dict(), "source": source or {}, "seed": seed}
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    with open(out / "runlog.jsonl", "w") as fh:
        for rec in result.runlog:
            fh.write(json.dumps(rec) + "\n")
    result.dataset.save(out / "dataset.csv")
    n = result.tri.dim
    _write_rows(out / "inserted_points.csv", ["round", "kind"] + [f"x{k + 1}" for k in range(n)],
                [[p["round"], p["kind"]] + [repr(float(v)) for v in p["point"]] for p in result.inserted_points])
    summary = {
        "feasible": bool(result.feasible),
        "area": result.area,
        "b": result.b,
        "worst_simplices": result.worst_simplices,
        "stats": {k: v for k, v in result.stats.items() if k != "wall_s"},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return out


@dataclass
class Bundle:
    path: Path
    tri: Triangulation
    values: np.ndarray
    gamma: np.ndarray
    xi: np.ndarray  # 0-based
    b: float
    config: SynthesisConfig
    source: dict
    certificate: dict

    def function(self) -> CpaFunction:
        return CpaFunction(self.tri, self.values, self.config.epsilon, self.config.norm)

    def dataset(self) -> Optional[ds.Dataset]:
        p = self.path / "dataset.csv"
        return ds.load(p) if p.exists() else None

    def verify(self, dataset: Optional[ds.Dataset] = None):
        dataset = dataset if dataset is not None else self.dataset()
        if dataset is None:
            raise SchemaError(f"bundle {self.path} has no dataset.csv and none was given")
        return check_theorem1(self.values, self.gamma, self.b, dataset, self.tri, self.config)

    def as_result(self, dataset: Optional[ds.Dataset] = None) -> SimpleNamespace:
        """Duck-typed stand-in for a SynthesisResult, enough for the audits."""
        dataset = dataset if dataset is not None else self.dataset()
        return SimpleNamespace(W=self.function(), gamma=self.gamma, b=self.b, xi=self.xi, tri=self.tri,
                               dataset=dataset, config=self.config, certificate=self.verify(dataset))


def _read_column(path: Path, header: list, cast) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != header:
        raise SchemaError(f"{path.name}: expected header {header}")
    try:
        return np.array([cast(r[1]) for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise SchemaError(f"{path.name}: {exc}") from None


def read_bundle(path) -> Bundle:
    path = Path(path)
    if not path.is_dir():
        raise SchemaError(f"{path} is not a bundle directory")
    missing = [f for f in REQUIRED if not (path / f).exists()]
    if missing:
        raise SchemaError(f"bundle {path} is missing {', '.join(missing)}")
    tri = Triangulation.from_csv(path)
    values = read_w_values(path / "w_values.csv")
    gamma = _read_column(path / "gamma.csv", ["simplex_id", "gamma"], float)
    xi = _read_column(path / "xi.csv", ["simplex_id", "xi"], int) - 1
    try:
        cfg = json.loads((path / "config.json").read_text())
        cert = json.loads((path / "certificate.json").read_text())
        config = SynthesisConfig.from_dict(cfg["synthesis"])
        b = float(cert["b"])
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaError(f"bundle {path}: bad config or certificate ({exc})") from None
    if values.shape[0] != tri.n_vertices or gamma.shape[0] != tri.n_simplices or xi.shape[0] != tri.n_simplices:
        raise SchemaError(f"bundle {path}: value counts do not match the mesh")
    return Bundle(path, tri, values, gamma, xi, b, config, cfg.get("source", {}), cert)


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------


def _frame(tri: Triangulation, pad: float = 0.02):
    lo, hi = tri.vertices.min(axis=0), tri.vertices.max(axis=0)
    span = hi - lo
    m = pad * float(span.max())
    x0, y0 = float(lo[0] - m), float(lo[1] - m)
    w, h = float(span[0] + 2 * m), float(span[1] + 2 * m)
    # the group flips y so that point coordinates are written in data units
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="600" height="{600 * h / w:.0f}" '
            f'viewBox="{x0!r} {-(y0 + h)!r} {w!r} {h!r}">\n<g transform="scale(1,-1)">\n')


def _fmt(v: float) -> str:
    return repr(float(v))


def render_safe_set_svg(tri: Triangulation, segments, path) -> None:
    parts = [_frame(tri)]
    parts.append('<g fill="none" stroke="#bbbbbb" stroke-width="1" vector-effect="non-scaling-stroke">\n')
    V = tri.vertices
    for a, b in sorted(tri.edges()):
        parts.append(f'<line x1="{_fmt(V[a, 0])}" y1="{_fmt(V[a, 1])}" x2="{_fmt(V[b, 0])}" y2="{_fmt(V[b, 1])}" '
                     f'vector-effect="non-scaling-stroke"/>\n')
    parts.append("</g>\n")
    parts.append('<g id="boundary" fill="none" stroke="#1f77b4" stroke-width="2">\n')
    for p, q in segments:
        parts.append(f'<polyline points="{_fmt(p[0])},{_fmt(p[1])} {_fmt(q[0])},{_fmt(q[1])}" '
                     f'vector-effect="non-scaling-stroke"/>\n')
    parts.append("</g>\n</g>\n</svg>\n")
    Path(path).write_text("".join(parts))


def gamma_color(g: float, lo: float, hi: float) -> str:
    t = 0.0 if hi <= lo else (g - lo) / (hi - lo)
    t = min(max(t, 0.0), 1.0)
    c = int(round(255 * t))
    return f"#{c:02x}{c:02x}00"


def render_gamma_svg(tri: Triangulation, gamma, path) -> None:
    gamma = np.asarray(gamma, dtype=float)
    lo, hi = float(gamma.min()), float(gamma.max())
    parts = [_frame(tri), f"<desc>gamma min={lo!r} max={hi!r}</desc>\n"]
    V = tri.vertices
    for i, s in enumerate(tri.simplices):
        pts = " ".join(f"{_fmt(V[v, 0])},{_fmt(V[v, 1])}" for v in s)
        parts.append(f'<polygon points="{pts}" fill="{gamma_color(gamma[i], lo, hi)}" data-gamma="{float(gamma[i])!r}"/>\n')
    parts.append("</g>\n</svg>\n")
    Path(path).write_text("".join(parts))


def export_bundle(bundle: Bundle, out_dir, fmt: str = "svg") -> list:
    """Write figures (svg) or the underlying tables (csv) for a 2-D bundle."""
    if bundle.tri.dim != 2:
        raise ValueError("export needs a 2-D bundle")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    f = bundle.function()
    written = []
    boundary_path = bundle.path / "boundary.csv"
    segments = read_boundary_csv(boundary_path) if boundary_path.exists() else f.zero_level_set()
    if fmt == "svg":
        render_safe_set_svg(bundle.tri, segments, out / "safe_set.svg")
        render_gamma_svg(bundle.tri, bundle.gamma, out / "gamma_heatmap.svg")
        written += [out / "safe_set.svg", out / "gamma_heatmap.svg"]
    elif fmt != "csv":
        raise ValueError(f"unknown export format {fmt!r}")
    if out.resolve() != bundle.path.resolve():
        f.to_csv(out)
        _write_rows(out / "gamma.csv", ["simplex_id", "gamma"],
                    [[i, repr(float(g))] for i, g in enumerate(bundle.gamma)])
    written += [out / "w_values.csv", out / "gradients.csv", out / "boundary.csv", out / "gamma.csv"]
    return written
