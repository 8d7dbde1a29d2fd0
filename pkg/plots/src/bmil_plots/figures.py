"""Deterministic figures over the bmil CSV/JSON outputs.

Strictly read-only: every plotted number is parsed from an input file; this
package computes no statistics.  Each renderer returns the sha256 of the
arrays it actually plotted so callers can verify them against the CSVs.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

EXPECTED_SCHEMA_VERSION = "1"

HEADERS = {
    "survival": "level,R,attempted,survived,cond_prob,stderr,cum_log_prob",
    "tails": "delta,count_below,n,log_prob,stderr",
    "spectrum": "a,k,N_k,zero_cells",
    "percolation": "trial,survived,depth,count_at_depth",
    "fits": "target,slope,stderr,intercept,r2,window_lo,window_hi",
}

KINDS = ("survival", "tail", "spectrum", "perc-overlay")


class SchemaError(ValueError):
    """Input file does not match the pinned schema (names the offender)."""


@dataclass
class FigureSpec:
    kind: str
    inputs: list
    predict: str | None = None
    out: str = "figure.png"
    style: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}")
        for f in self.inputs:
            if not Path(f).exists():
                raise SchemaError(f"input file does not exist: {f}")
        if self.predict is not None and not Path(self.predict).exists():
            raise SchemaError(f"predict file does not exist: {self.predict}")


def _hash_array(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a, dtype=np.float64).tobytes()).hexdigest()


def read_csv(path, schema: str):
    """Parse one pinned-schema CSV into named float columns."""
    text = Path(path).read_text().splitlines()
    if not text:
        raise SchemaError(f"{path}: empty file (missing header)")
    header = text[0].strip()
    expected = HEADERS[schema]
    if header != expected:
        got = set(header.split(","))
        want = set(expected.split(","))
        missing = sorted(want - got)
        extra = sorted(got - want)
        name = (missing + extra + ["header"])[0]
        raise SchemaError(f"{path}: column {name!r} does not match schema {schema!r}")
    names = expected.split(",")
    rows = [line.split(",") for line in text[1:] if line.strip()]
    cols: dict = {}
    for j, name in enumerate(names):
        if schema == "fits" and name == "target":
            cols[name] = [r[j] for r in rows]
        else:
            try:
                cols[name] = np.array([float(r[j]) for r in rows])
            except (ValueError, IndexError) as e:
                raise SchemaError(f"{path}: column {name!r}: {e}") from e
    return cols


def read_predict(path) -> dict:
    data = json.loads(Path(path).read_text())
    if data.get("schema_version") != EXPECTED_SCHEMA_VERSION:
        raise SchemaError(
            f"{path}: schema_version {data.get('schema_version')!r} != {EXPECTED_SCHEMA_VERSION!r}"
        )
    if data.get("kind") != "predict":
        raise SchemaError(f"{path}: not a predict summary")
    return data["results"]


def _classify_inputs(inputs):
    by_schema = {}
    for f in inputs:
        name = Path(f).name
        if name.endswith(".txt"):
            by_schema.setdefault("txt", []).append(f)
            continue
        header = Path(f).read_text().split("\n", 1)[0].strip()
        for schema, expected in HEADERS.items():
            if header == expected:
                by_schema.setdefault(schema, []).append(f)
                break
        else:
            got = header.split(",")
            best, overlap = None, -1
            for schema, expected in HEADERS.items():
                o = len(set(got) & set(expected.split(",")))
                if o > overlap:
                    best, overlap = schema, o
            want = HEADERS[best].split(",")
            offending = [c for c in got if c not in want] + [
                c for c in want if c not in got
            ]
            raise SchemaError(
                f"{f}: column {offending[0]!r} does not match the {best!r} schema"
            )
    return by_schema


def _style_axes(ax):
    ax.grid(True, which="both", alpha=0.3, linewidth=0.5)
    ax.tick_params(labelsize=8)


def _finish(fig, out):
    fig.savefig(out, dpi=110, metadata={"Software": "bmil-plot"})
    plt.close(fig)


def render(spec: FigureSpec) -> dict:
    """Render the figure; returns {'out': path, 'hashes': {label: sha256}}."""
    by = _classify_inputs(spec.inputs)
    pred = read_predict(spec.predict) if spec.predict else None
    if spec.kind == "survival":
        return _render_survival(spec, by, pred)
    if spec.kind == "tail":
        return _render_tail(spec, by, pred)
    if spec.kind == "spectrum":
        return _render_spectrum(spec, by, pred)
    return _render_perc_overlay(spec, by)


def _render_survival(spec, by, pred):
    if "survival" not in by:
        raise SchemaError("survival figure needs a survival.csv input")
    hashes = {}
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for f in by["survival"]:
        cols = read_csv(f, "survival")
        x = np.log(cols["R"])
        y = cols["cum_log_prob"]
        keep = np.isfinite(x) & np.isfinite(y)
        ax.errorbar(
            x[keep], y[keep], yerr=cols["stderr"][keep], fmt="o-", ms=3,
            lw=0.8, capsize=2, label=Path(f).parent.name or Path(f).name,
        )
        hashes[f"{f}:R"] = _hash_array(cols["R"])
        hashes[f"{f}:cum_log_prob"] = _hash_array(cols["cum_log_prob"])
        anchor = (x[keep][0], y[keep][0]) if np.any(keep) else (0.0, 0.0)
    for f in by.get("fits", []):
        cols = read_csv(f, "fits")
        for t, slope, inter in zip(cols["target"], cols["slope"], cols["intercept"]):
            xs = np.linspace(*ax.get_xlim(), 16)
            ax.plot(xs, slope * xs + inter, "--", lw=1.0, label=f"fit {t}")
            hashes[f"{f}:{t}"] = _hash_array(np.array([slope, inter]))
    if pred is not None and isinstance(pred.get("xi"), (int, float)):
        xi = float(pred["xi"])
        xs = np.linspace(*ax.get_xlim(), 16)
        ax.plot(
            xs, anchor[1] - xi * (xs - anchor[0]), ":", lw=1.2, color="k",
            label=f"reference slope -{xi:.4g}",
        )
    ax.set_xlabel("log R")
    ax.set_ylabel("log survival probability")
    ax.legend(fontsize=7)
    _style_axes(ax)
    _finish(fig, spec.out)
    return {"out": spec.out, "hashes": hashes}


def _render_tail(spec, by, pred):
    if "tails" not in by:
        raise SchemaError("tail figure needs a tails.csv input")
    hashes = {}
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for f in by["tails"]:
        cols = read_csv(f, "tails")
        x = np.log(cols["delta"])
        y = cols["log_prob"]
        ax.errorbar(
            x, y, yerr=cols["stderr"], fmt="s-", ms=3, lw=0.8, capsize=2,
            label=Path(f).parent.name or Path(f).name,
        )
        hashes[f"{f}:delta"] = _hash_array(cols["delta"])
        hashes[f"{f}:log_prob"] = _hash_array(cols["log_prob"])
        anchor = (x[0], y[0]) if len(x) else (0.0, 0.0)
    for f in by.get("fits", []):
        cols = read_csv(f, "fits")
        for t, slope, inter in zip(cols["target"], cols["slope"], cols["intercept"]):
            xs = np.linspace(*ax.get_xlim(), 16)
            ax.plot(xs, slope * xs + inter, "--", lw=1.0, label=f"fit {t}")
            hashes[f"{f}:{t}"] = _hash_array(np.array([slope, inter]))
    if pred is not None and isinstance(pred.get("tail_slope"), (int, float)):
        ts = float(pred["tail_slope"])
        xs = np.linspace(*ax.get_xlim(), 16)
        ax.plot(
            xs, anchor[1] + ts * (xs - anchor[0]), ":", lw=1.2, color="k",
            label=f"reference slope {ts:.4g}",
        )
    ax.set_xlabel("log delta")
    ax.set_ylabel("log empirical probability")
    ax.legend(fontsize=7)
    _style_axes(ax)
    _finish(fig, spec.out)
    return {"out": spec.out, "hashes": hashes}


def _render_spectrum(spec, by, pred):
    if "spectrum" not in by:
        raise SchemaError("spectrum figure needs a spectrum.csv input")
    hashes = {}
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.6, 3.6))
    f = by["spectrum"][0]
    cols = read_csv(f, "spectrum")
    hashes[f"{f}:N_k"] = _hash_array(cols["N_k"])
    a_vals = np.unique(cols["a"])
    for a in a_vals:
        sel = cols["a"] == a
        ks = cols["k"][sel]
        counts = cols["N_k"][sel]
        pos = counts > 0
        ax1.plot(ks[pos], np.log2(counts[pos]), "o-", ms=3, lw=0.8, label=f"a={a:g}")
    ax1.set_xlabel("scale k")
    ax1.set_ylabel("log2 thin-cell count")
    ax1.legend(fontsize=6)
    _style_axes(ax1)

    for f2 in by.get("fits", []):
        cols2 = read_csv(f2, "fits")
        av, fv, ev = [], [], []
        for t, slope, se in zip(cols2["target"], cols2["slope"], cols2["stderr"]):
            if t.startswith("f_hat(a="):
                av.append(float(t[len("f_hat(a=") : -1]))
                fv.append(slope)
                ev.append(se)
        if av:
            order = np.argsort(av)
            av = np.asarray(av)[order]
            fv = np.asarray(fv)[order]
            ev = np.asarray(ev)[order]
            ax2.errorbar(av, fv, yerr=ev, fmt="o", ms=4, capsize=2, label="empirical slopes")
            hashes[f"{f2}:f_hat"] = _hash_array(fv)
    if pred is not None and "spectrum_table" in pred:
        tab = pred["spectrum_table"]
        a = np.asarray(tab["a"], dtype=float)
        fa = np.asarray(tab["f"], dtype=float)
        ax2.plot(a, fa, "-", lw=1.2, color="k", label="closed form")
        hashes["predict:spectrum_f"] = _hash_array(fa)
    ax2.set_xlabel("a")
    ax2.set_ylabel("f(a)")
    ax2.legend(fontsize=7)
    _style_axes(ax2)
    _finish(fig, spec.out)
    return {"out": spec.out, "hashes": hashes}


def _render_perc_overlay(spec, by):
    if "txt" not in by:
        raise SchemaError("perc-overlay needs a serialized tree (.txt) input")
    hashes = {}
    fig, ax = plt.subplots(figsize=(4.6, 4.6))
    colors = ["#4477aa", "#cc3311"]
    for ci, f in enumerate(by["txt"][:2]):
        rows = []
        for line in Path(f).read_text().splitlines():
            parts = line.split()
            if len(parts) < 3:
                raise SchemaError(f"{f}: bad tree line {line!r}")
            rows.append([int(v) for v in parts])
        arr = np.asarray(rows, dtype=np.int64)
        deepest = arr[:, 0].max()
        cells = arr[arr[:, 0] == deepest][:, 1:3]
        side = 2.0**-deepest
        for cx, cy in cells:
            ax.add_patch(
                plt.Rectangle(
                    (cx * side, cy * side), side, side,
                    facecolor=colors[ci % 2], alpha=0.5 if ci else 0.8, edgecolor="none",
                )
            )
        hashes[f"{f}:cells"] = _hash_array(cells.astype(float))
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_aspect("equal")
    _style_axes(ax)
    _finish(fig, spec.out)
    return {"out": spec.out, "hashes": hashes}
