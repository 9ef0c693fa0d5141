"""The four figure kinds, each a pure function of one input CSV."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

from metamoran_figures.csvio import SchemaError, read_table, require_columns
from metamoran_figures.svg import PALETTE, Frame, Scene, pad_range

KINDS = ("weight-trajectories", "chaos-decay", "moment-check", "particle-histogram")


@dataclass
class FigureSpec:
    """One figure request: input CSV, kind, output image path, labels."""

    kind: str
    input: str
    output: str
    labels: Optional[List[str]] = None
    title: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"figure kind must be one of {KINDS}, got {self.kind!r}")


def _write(scene: Scene, out) -> None:
    out = Path(out)
    text = scene.render()
    if out.suffix.lower() == ".svg":
        out.write_text(text, encoding="utf-8")
    elif out.suffix.lower() == ".png":
        from metamoran_figures.png import rasterize

        rasterize(scene, out)
    else:
        raise ValueError(f"unsupported image format {out.suffix!r}; use .svg or .png")


def plot_weights(csv_path, out, labels: Optional[Sequence[str]] = None, title: str = "") -> None:
    """Weight-trajectory plot: one curve per trait weight column vs time.

    Expects the replicator schema ``t, wbar1, ..., wbarn``.  Legend labels
    default to the column names; pass ``labels`` (e.g. trait values) to
    override.  The drawn endpoints are affine images of the CSV values:
    this layer adds no numerics.
    """
    header, columns = read_table(csv_path)
    if header[0] != "t" or len(header) < 2:
        raise SchemaError(f"{csv_path}: expected header 't,<weight columns...>', got {header}")
    t = columns[0]
    curves = columns[1:]
    names = list(labels) if labels else header[1:]
    if len(names) != len(curves):
        raise SchemaError(f"{csv_path}: {len(curves)} curves but {len(names)} labels")
    ymin = min(0.0, min(min(c) for c in curves))
    ymax = max(1.0, max(max(c) for c in curves))
    xmin, xmax = pad_range(min(t), max(t))
    frame = Frame(xmin=xmin, xmax=xmax, ymin=ymin, ymax=ymax,
                  xlabel="t", ylabel="mean weight", title=title)
    scene = Scene(frame)
    entries = []
    for k, curve in enumerate(curves):
        color = PALETTE[k % len(PALETTE)]
        scene.polyline(t, curve, label=names[k], color=color)
        entries.append((names[k], color))
    scene.legend(entries)
    _write(scene, out)


def plot_chaos_decay(csv_path, out, title: str = "") -> None:
    """Log-x plot of |correlation| vs K with standard-error bars.

    Expects the chaos-scan schema ``K, estimate, stderr``.
    """
    header, columns = read_table(csv_path)
    require_columns(csv_path, header, ["K", "estimate", "stderr"])
    ks = columns[header.index("K")]
    est = [abs(v) for v in columns[header.index("estimate")]]
    se = columns[header.index("stderr")]
    if any(k <= 0 for k in ks):
        raise SchemaError(f"{csv_path}: K values must be positive for the log axis")
    xmin, xmax = min(ks), max(ks)
    if xmin == xmax:
        xmin, xmax = xmin / 2.0, xmax * 2.0
    ymax = max(e + s for e, s in zip(est, se))
    frame = Frame(xmin=xmin, xmax=xmax, ymin=0.0, ymax=max(ymax * 1.1, 1e-6),
                  xscale="log10", xlabel="K", ylabel="|correlation|", title=title)
    scene = Scene(frame)
    color = PALETTE[0]
    order = sorted(range(len(ks)), key=lambda i: ks[i])
    scene.polyline([ks[i] for i in order], [est[i] for i in order],
                   label="corr", color=color)
    for i in order:
        scene.error_bar(ks[i], max(est[i] - se[i], 0.0), est[i] + se[i], color)
        scene.point(ks[i], est[i], color)
    _write(scene, out)


def plot_moments(csv_path, out, title: str = "") -> None:
    """Moment-check plot for the canonical regime: per-coordinate mean and
    variance vs time (schema ``t, mean_x0.., var_x0..``)."""
    header, columns = read_table(csv_path)
    if header[0] != "t" or not any(h.startswith("mean_") for h in header):
        raise SchemaError(f"{csv_path}: expected header 't,mean_x0..,var_x0..', got {header}")
    t = columns[0]
    values = [v for col in columns[1:] for v in col]
    ymin, ymax = pad_range(min(values), max(values))
    xmin, xmax = pad_range(min(t), max(t))
    frame = Frame(xmin=xmin, xmax=xmax, ymin=ymin, ymax=ymax,
                  xlabel="t", ylabel="moment", title=title)
    scene = Scene(frame)
    entries = []
    for k, name in enumerate(header[1:]):
        color = PALETTE[k % len(PALETTE)]
        scene.polyline(t, columns[k + 1], label=name, color=color)
        entries.append((name, color))
    scene.legend(entries)
    _write(scene, out)


def plot_particle_histogram(csv_path, out, bins: int = 40, coordinate: int = 0,
                            title: str = "") -> None:
    """Histogram of the terminal-snapshot particle coordinate (schema
    ``t, particle, x0..``)."""
    header, columns = read_table(csv_path)
    name = f"x{coordinate}"
    require_columns(csv_path, header, ["t", "particle", name])
    t = columns[0]
    xs_all = columns[header.index(name)]
    t_last = max(t)
    xs = [x for ti, x in zip(t, xs_all) if ti == t_last]
    lo, hi = pad_range(min(xs), max(xs))
    width = (hi - lo) / bins
    counts = [0] * bins
    for x in xs:
        k = min(int((x - lo) / width), bins - 1)
        counts[k] += 1
    total = len(xs)
    density = [c / (total * width) for c in counts]
    frame = Frame(xmin=lo, xmax=hi, ymin=0.0, ymax=max(density) * 1.05,
                  xlabel=name, ylabel="density", title=title)
    scene = Scene(frame)
    for k, d in enumerate(density):
        if d > 0:
            scene.rect(lo + k * width, lo + (k + 1) * width, 0.0, d, PALETTE[0])
    _write(scene, out)


_DISPATCH = {
    "weight-trajectories": lambda spec: plot_weights(
        spec.input, spec.output, labels=spec.labels, title=spec.title
    ),
    "chaos-decay": lambda spec: plot_chaos_decay(spec.input, spec.output, title=spec.title),
    "moment-check": lambda spec: plot_moments(spec.input, spec.output, title=spec.title),
    "particle-histogram": lambda spec: plot_particle_histogram(
        spec.input, spec.output, title=spec.title
    ),
}


def render(spec: FigureSpec) -> None:
    _DISPATCH[spec.kind](spec)
