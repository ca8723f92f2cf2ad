"""Diagnostics over decode traces and checkpoints, plus CSV/SVG export.

CSV is the source of truth; the SVG emitter is a deliberately tiny line-chart
and heat-strip writer so the package stays dependency-light.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .decoder import DecodeTrace
from .denoiser import Denoiser
from .masking import log_softmax
from .vocab import Vocab


@dataclass
class OverflowReport:
    rows: list[dict] = field(default_factory=list)
    # per-position diagnostics keyed by (label, max_length)
    profiles: dict = field(default_factory=dict)
    order_maps: dict = field(default_factory=dict)

    def add_row(self, max_length: int, mean_res_length: float, accuracy: float,
                eos_first50: float, label: str = "") -> None:
        self.rows.append({
            "label": label,
            "max_length": max_length,
            "mean_res_length": mean_res_length,
            "accuracy": accuracy,
            "eos_first50_ratio": eos_first50,
        })


def eos_first50_ratio(trace: DecodeTrace, v: Vocab) -> float:
    """Fraction of <eos> among the first ceil(N/2) revealed tokens."""
    revealed = [tok for _, tok in trace.revealed_in_order()]
    n = len(revealed)
    half = math.ceil(n / 2)
    first = revealed[:half]
    return sum(1 for t in first if t == v.eos_id) / half if half else 0.0


def initial_confidence_profile(
    model: Denoiser, prompt: list[int], L: int, v: Vocab
) -> dict[str, np.ndarray]:
    """p(eos) and max-over-pads probability per position, from one forward pass
    on the fully masked generation region."""
    pl = len(prompt)
    if not pl < L:
        raise ValueError(f"prompt_len {pl} must be < L={L}")
    canvas = np.full(L, v.mask_id, dtype=np.int64)
    canvas[:pl] = prompt
    probs = np.exp(log_softmax(model.forward(canvas)))
    return {
        "p_eos": probs[:, v.eos_id],
        "p_pad_max": probs[:, list(v.pad_ids)].max(-1),
    }


def mean_profile(profiles: list[dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    return {
        key: np.mean([p[key] for p in profiles], axis=0)
        for key in ("p_eos", "p_pad_max")
    }


def decode_order_map(traces: list[DecodeTrace]) -> np.ndarray:
    """Mean reveal-step index per position. Prompt positions get step -1."""
    if not traces:
        raise ValueError("no traces")
    L = len(traces[0].final_tokens)
    pl = traces[0].prompt_len
    for tr in traces:
        if len(tr.final_tokens) != L or tr.prompt_len != pl:
            raise ValueError("traces must share L and prompt_len")
    acc = np.full(L, -1.0)
    for j in range(pl, L):
        acc[j] = float(np.mean([tr.reveal_step()[j] for tr in traces]))
    return acc


# -- export ------------------------------------------------------------------


def write_report_csv(report: OverflowReport, path, header_comment: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["label", "max_length", "mean_res_length", "accuracy",
                    "eos_first50_ratio"])
        for r in report.rows:
            w.writerow([r["label"], r["max_length"], f"{r['mean_res_length']:.4f}",
                        f"{r['accuracy']:.4f}", f"{r['eos_first50_ratio']:.4f}"])


def write_profile_csv(profile: dict[str, np.ndarray], path, header_comment: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["position", "p_eos", "p_pad_max"])
        for j, (pe, pp) in enumerate(zip(profile["p_eos"], profile["p_pad_max"])):
            w.writerow([j, f"{pe:.6f}", f"{pp:.6f}"])


def write_order_map_csv(order_map: np.ndarray, path, header_comment: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["position", "mean_reveal_step"])
        for j, s in enumerate(order_map):
            w.writerow([j, f"{s:.4f}"])


# -- minimal SVG -------------------------------------------------------------

_W, _H, _PAD = 640, 360, 45


def _polyline(xs, ys, color):
    pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>'


def line_chart_svg(series: dict[str, np.ndarray], path, title: str = "",
                   y_max: float | None = None) -> None:
    """Plot each named series over its index. Axis box, linear scales."""
    colors = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"]
    all_y = np.concatenate([np.asarray(v, dtype=float) for v in series.values()])
    ymax = y_max if y_max is not None else max(float(all_y.max()), 1e-9)
    n = max(len(v) for v in series.values())
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_PAD}" y="{_PAD}" width="{_W - 2 * _PAD}" '
        f'height="{_H - 2 * _PAD}" fill="none" stroke="black"/>',
        f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{_PAD - 5}" y="{_PAD}" text-anchor="end" font-size="10">{ymax:.3g}</text>',
        f'<text x="{_PAD - 5}" y="{_H - _PAD}" text-anchor="end" font-size="10">0</text>',
        f'<text x="{_W - _PAD}" y="{_H - _PAD + 15}" text-anchor="end" font-size="10">{n - 1}</text>',
    ]
    for ci, (name, ys) in enumerate(series.items()):
        ys = np.asarray(ys, dtype=float)
        xs = _PAD + np.arange(len(ys)) / max(len(ys) - 1, 1) * (_W - 2 * _PAD)
        yy = _H - _PAD - np.clip(ys / ymax, 0, 1) * (_H - 2 * _PAD)
        color = colors[ci % len(colors)]
        parts.append(_polyline(xs, yy, color))
        parts.append(
            f'<text x="{_W - _PAD - 5}" y="{_PAD + 15 + 14 * ci}" text-anchor="end" '
            f'font-size="11" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


def heat_strip_svg(values: np.ndarray, path, title: str = "") -> None:
    """One-row heatmap; darker = smaller value (earlier decode step)."""
    values = np.asarray(values, dtype=float)
    valid = values >= 0
    vmax = float(values[valid].max()) if valid.any() else 1.0
    vmax = max(vmax, 1e-9)
    n = len(values)
    cell = (_W - 2 * _PAD) / n
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="120">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]
    for j, val in enumerate(values):
        if val < 0:
            color = "#dddddd"  # prompt region
        else:
            shade = int(235 * val / vmax)
            color = f"rgb({shade},{shade},{shade})"
        parts.append(
            f'<rect x="{_PAD + j * cell:.2f}" y="40" width="{cell + 0.5:.2f}" '
            f'height="40" fill="{color}"/>'
        )
    parts.append(
        f'<text x="{_PAD}" y="100" font-size="10">0</text>'
        f'<text x="{_W - _PAD}" y="100" text-anchor="end" font-size="10">{n - 1}</text>'
        "</svg>"
    )
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
