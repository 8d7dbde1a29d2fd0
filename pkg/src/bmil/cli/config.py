"""Experiment configuration: parsing, defaults, and full validation.

Configs are JSON documents.  Validation returns a list of issues with field
paths instead of raising, so the CLI can report every problem at once.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from ..errors import ConfigError
from ..paths import PacketSpec

KINDS = (
    "predict",
    "hitting",
    "exponent",
    "joint",
    "conditioned",
    "tail-lower",
    "tail-upper",
    "annulus",
    "percolation",
    "spectrum",
    "ilt-validate",
)


@dataclass(frozen=True)
class ValidationIssue:
    path: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"


@dataclass
class ExperimentConfig:
    kind: str
    d: int
    master_seed: int
    workers: int
    out_dir: str
    packet: PacketSpec
    R: float | None
    params: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def canonical(self) -> str:
        """Canonical JSON of the validated config (hash input).

        The output directory and worker count do not affect any data file
        and are excluded, so the hash identifies the scientific content.
        """
        doc = {k: v for k, v in self.raw.items() if k not in ("out", "workers")}
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))


_DEFAULTS = {
    "hitting": {"n": 100_000, "block": 64, "triples": None},
    "exponent": {
        "levels": None,
        "max_R": 128.0,
        "n_per_level": 4096,
        "dt0": 1e-4,
        "kappa": 2.0,
        "fit_window": [4.0, None],
        "direct_check_R": None,
        "direct_n": 8192,
    },
    "joint": {
        "levels": None,
        "max_R": 128.0,
        "n_per_level": 2048,
        "dt0": 1e-4,
        "kappa": 2.0,
        "fit_window": [4.0, None],
    },
    "conditioned": {"n": 100, "dt_divisor": 40.0, "r": None, "b": None, "c": None},
    "tail-lower": {
        "n": 100_000,
        "eps": 0.08,
        "cap": 0.5,
        "delta_grid": [2.0**-e for e in range(1, 15)],
    },
    "tail-upper": {"n": 20_000, "eps": 0.3, "quantile_grid": 12, "synthetic": None},
    "annulus": {"n": 10_000, "eps": 0.08, "delta_grid": [2.0**-e for e in range(1, 5)]},
    "percolation": {
        "gamma": 1.0,
        "depth": 12,
        "n_trees": 10_000,
        "box_window": [4, 12],
        "box_trees": 100,
        "hit_cell_level": 4,
        "hit_trees": 10_000,
    },
    "spectrum": {
        "dt": None,
        "n_pairs": 24,
        "k_grid": [2, 3, 4, 5, 6, 7],
        "a_grid": [2.0, 2.5, 3.0, 4.0, 5.0, 8.0],
        "horizon_eps": 0.05,
        "kill_R": 8.0,
        "anchor_gap": 0.02,
        "perc_a": 2.5,
        "perc_gamma_offsets": [-0.4, 0.4],
        "perc_trees": 400,
        "perc_pairs": 8,
        "perc_depth": None,
        "pointwise_points": 100,
        "pointwise_scales": None,
    },
    "ilt-validate": {
        "checks": ["cross", "scaling"],
        "n_pairs": 100,
        "eps": 0.1,
        "h": 0.025,
        "R": 2.0,
        "scaling_n": 1000,
        "scaling_r": 0.5,
        "scaling_eps": 0.16,
    },
}


def _issue(issues, path, msg):
    issues.append(ValidationIssue(path, msg))


def validate_config(doc) -> tuple[ExperimentConfig | None, list]:
    """Validate a config document (JSON text or dict).

    Returns (config, issues); config is None when issues are fatal.
    """
    issues: list[ValidationIssue] = []
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as e:
            _issue(issues, "$", f"invalid JSON: {e}")
            return None, issues
    if not isinstance(doc, dict):
        _issue(issues, "$", "config must be a JSON object")
        return None, issues

    kind = doc.get("kind")
    if kind not in KINDS:
        _issue(issues, "kind", f"unknown kind {kind!r}; expected one of {KINDS}")
        return None, issues

    d = doc.get("d", 2)
    if d not in (2, 3):
        _issue(issues, "d", "d must be 2 or 3")

    R = doc.get("R", None)
    if isinstance(R, str):
        if R.lower() in ("inf", "infinity"):
            R = math.inf
        else:
            _issue(issues, "R", f"unparseable radius {R!r}")
    if R is not None and not isinstance(R, (int, float)):
        _issue(issues, "R", "R must be a number, 'inf', or null")
    if R is not None and isinstance(R, (int, float)):
        if math.isinf(R):
            R = None
        elif R <= 1:
            _issue(issues, "R", "R must exceed 1 when finite")
    if d == 2 and R is None and kind in (
        "tail-lower",
        "tail-upper",
        "annulus",
        "ilt-validate",
    ):
        _issue(issues, "R", "R finite whenever d = 2")

    seed = doc.get("master_seed", 0)
    if not isinstance(seed, int):
        _issue(issues, "master_seed", "master_seed must be an integer")
    workers = doc.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        _issue(issues, "workers", "workers must be a positive integer")

    pk_doc = doc.get("packet", {})
    M = pk_doc.get("M", 1)
    N = pk_doc.get("N", 1)
    sizes = pk_doc.get("sizes")
    try:
        if sizes is not None:
            packet = PacketSpec(M=sizes[0], N=sizes[1], p=len(sizes), sizes=tuple(sizes))
        else:
            packet = PacketSpec(M=M, N=N)
    except (ConfigError, IndexError, TypeError) as e:
        _issue(issues, "packet", str(e))
        packet = PacketSpec(M=1, N=1)

    params = dict(_DEFAULTS.get(kind, {}))
    user_params = doc.get("params", {})
    if not isinstance(user_params, dict):
        _issue(issues, "params", "params must be an object")
        user_params = {}
    unknown = set(user_params) - set(params) if params else set()
    for key in sorted(unknown):
        _issue(issues, f"params.{key}", "unknown parameter for this kind")
    params.update({k: v for k, v in user_params.items() if k in params or not params})

    _validate_kind_params(kind, d, packet, params, issues)

    if issues:
        return None, issues
    cfg = ExperimentConfig(
        kind=kind,
        d=d,
        master_seed=seed,
        workers=workers,
        out_dir=doc.get("out", "runs/" + kind),
        packet=packet,
        R=R,
        params=params,
        raw=doc,
    )
    return cfg, issues


def _validate_kind_params(kind, d, packet, p, issues):
    if kind == "hitting":
        triples = p.get("triples")
        if not triples or not isinstance(triples, list):
            _issue(issues, "params.triples", "need a nonempty list of [r, r1, r2]")
            return
        for i, t in enumerate(triples):
            entry = t[:3] if isinstance(t, list) else None
            if not entry or len(entry) != 3:
                _issue(issues, f"params.triples[{i}]", "expected [r, r1, r2]")
                continue
            r, r1, r2 = entry
            if not (0 < r1 <= r <= r2):
                _issue(issues, f"params.triples[{i}]", "need 0 < r1 <= r <= r2")
            if isinstance(t, list) and len(t) == 4 and t[3] < 20:
                _issue(issues, f"params.triples[{i}]", "dt divisor must be >= 20")
        if p.get("n", 0) < 100:
            _issue(issues, "params.n", "need n >= 100")
    elif kind in ("exponent", "joint"):
        levels = p.get("levels")
        if levels is None:
            max_R = p.get("max_R", 0)
            if not max_R or max_R < 8:
                _issue(issues, "params.max_R", "need max_R >= 8 (at least 4 levels)")
        else:
            if not isinstance(levels, list) or len(levels) < 4 or levels[0] != 1:
                _issue(
                    issues,
                    "params.levels",
                    "levels must start at 1 and give >= 3 fit levels above it",
                )
        if p.get("n_per_level", 0) < 2:
            _issue(issues, "params.n_per_level", "need n_per_level >= 2")
        if p.get("dt0", 0) <= 0:
            _issue(issues, "params.dt0", "dt0 must be positive")
        w = p.get("fit_window")
        if w is not None and (not isinstance(w, list) or len(w) != 2):
            _issue(issues, "params.fit_window", "fit_window must be [lo, hi]")
        if kind == "joint":
            if packet.p < 2:
                _issue(issues, "packet.sizes", "joint runs need p >= 2 packets")
            if packet.p > 2 and d != 2:
                _issue(issues, "d", "joint runs with p > 2 are planar (d = 2)")
    elif kind == "conditioned":
        r, b, c = p.get("r"), p.get("b"), p.get("c")
        if r is None or not (0 < r < 1):
            _issue(issues, "params.r", "need 0 < r < 1")
        if b is None or c is None or not (b > 1 > c > 0):
            _issue(issues, "params.b", "need b > 1 > c > 0")
        if p.get("n", 0) < 1:
            _issue(issues, "params.n", "need n >= 1")
    elif kind in ("tail-lower", "annulus"):
        grid = p.get("delta_grid")
        if not grid or len(grid) < 3:
            _issue(issues, "params.delta_grid", "need >= 3 grid points")
        elif kind == "annulus" and (max(grid) >= 1 or min(grid) <= 0):
            _issue(issues, "params.delta_grid", "annulus grid must lie in (0, 1)")
        if kind == "tail-lower" and grid and p.get("cap") is not None:
            if max(grid) > p["cap"]:
                _issue(issues, "params.delta_grid", "grid exceeds the abort cap")
        if p.get("n", 0) < 100:
            _issue(issues, "params.n", "need n >= 100")
    elif kind == "tail-upper":
        if p.get("n", 0) < 100:
            _issue(issues, "params.n", "need n >= 100")
        syn = p.get("synthetic")
        if syn is not None and (not isinstance(syn, dict) or syn.get("theta", 0) <= 0):
            _issue(issues, "params.synthetic", "synthetic needs positive theta")
    elif kind == "percolation":
        g = p.get("gamma", -1)
        if not (0 <= g <= d):
            _issue(issues, "params.gamma", f"gamma must lie in [0, {d}]")
        if p.get("depth", 0) < 1:
            _issue(issues, "params.depth", "depth must be >= 1")
        w = p.get("box_window")
        if w and (w[0] < 0 or w[1] > p.get("depth", 0) or w[1] - w[0] < 2):
            _issue(issues, "params.box_window", "window must fit the depth with >= 3 levels")
    elif kind == "spectrum":
        ks = p.get("k_grid", [])
        if len(ks) < 3:
            _issue(issues, "params.k_grid", "need >= 3 scales")
        if len(p.get("a_grid", [])) < 2:
            _issue(issues, "params.a_grid", "need >= 2 thinness levels")
        if p.get("n_pairs", 0) < 1:
            _issue(issues, "params.n_pairs", "need n_pairs >= 1")
    elif kind == "ilt-validate":
        checks = p.get("checks", [])
        bad = set(checks) - {"cross", "scaling", "eps-stability"}
        if bad:
            _issue(issues, "params.checks", f"unknown checks {sorted(bad)}")
        if p.get("n_pairs", 0) < 4:
            _issue(issues, "params.n_pairs", "need n_pairs >= 4")
