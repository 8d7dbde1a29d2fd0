"""Experiment dispatch and stable file outputs.

Every experiment writes CSV data files with pinned headers, a summary.json
mirroring the config plus results, and a manifest with the config hash and
per-file checksums.  Data files are byte-identical across reruns of the same
(config, seed) for any worker count: work is cut into fixed chunks whose
streams derive from (master_seed, tag, chunk index), and reductions happen
in chunk order.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .. import __version__, SCHEMA_VERSION, analytic, ilt, paths, percolation, rare, rng, spectrum, tails
from ..errors import ConfigError, ExtinctionError, InfeasibleError
from ..fitting import weighted_line_fit
from ..regions import Ball, Box, Sphere
from .config import ExperimentConfig

SURVIVAL_HEADER = "level,R,attempted,survived,cond_prob,stderr,cum_log_prob"
TAILS_HEADER = "delta,count_below,n,log_prob,stderr"
SPECTRUM_HEADER = "a,k,N_k,zero_cells"
PERC_HEADER = "trial,survived,depth,count_at_depth"
FITS_HEADER = "target,slope,stderr,intercept,r2,window_lo,window_hi"


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return f"{float(x):.17g}"


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _json_default(o):
    if isinstance(o, Fraction):
        return str(o)
    if isinstance(o, analytic.Interval):
        return {"interval": [o.lo, o.hi]}
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if o is math.inf:
        return "inf"
    raise TypeError(f"not serializable: {type(o)}")


@dataclass(frozen=True)
class RunManifest:
    config_hash: str
    code_version: str
    started: str
    finished: str
    files: dict


def _pmap(fn, tasks, workers: int):
    """Ordered map over task tuples; same result for any worker count."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=1))


# ---------------------------------------------------------------------------
# per-kind implementations (chunk functions are top level for picklability)

_HIT_TAG = 11
_PERC_TAG = 21
_SPEC_TAG = 31
_VAL_TAG = 41


def _hitting_chunk(args):
    d, r, r1, r2, n, dt, seed, ti, ci = args
    g = rng.stream(seed, _HIT_TAG, ti, ci)
    freq, _ = paths.inner_hit_frequency(d, r, r1, r2, n, dt, g)
    return round(freq * n)


def _run_hitting(cfg: ExperimentConfig, out: Path):
    p = cfg.params
    n = int(p["n"])
    chunk_size = 25_000
    rows = []
    worst = 0.0
    for ti, trip in enumerate(p["triples"]):
        r, r1, r2 = (float(v) for v in trip[:3])
        div = float(trip[3]) if len(trip) > 3 else 40.0
        dt = paths.hitting_dt_rule(r1, div)
        sizes = [chunk_size] * (n // chunk_size)
        if n % chunk_size:
            sizes.append(n % chunk_size)
        tasks = [
            (cfg.d, r, r1, r2, m, dt, cfg.master_seed, ti, ci)
            for ci, m in enumerate(sizes)
        ]
        hits = sum(_pmap(_hitting_chunk, tasks, cfg.workers))
        freq = hits / n
        se = math.sqrt(max(freq * (1 - freq), 1e-12) / n)
        f = analytic.hitting_prob_f(analytic.HittingQuery(d=cfg.d, r=r, r1=r1, r2=r2))
        worst = max(worst, abs(freq - f))
        rows.append((cfg.d, r, r1, r2, n, freq, se, f, abs(freq - f)))
    _write_csv(out / "hitting.csv", "d,r,r1,r2,n,freq,stderr,f_analytic,abs_err", rows)
    summary = {
        "worst_abs_err": worst,
        "rows": [
            dict(zip("d r r1 r2 n freq stderr f_analytic abs_err".split(), row))
            for row in rows
        ],
    }
    return summary, "ok"


def _prediction_payload(d, packet):
    pred = analytic.predict_bundle(d, packet)
    payload = {
        "d": d,
        "packet": {"M": packet.M, "N": packet.N, "p": packet.p, "sizes": list(packet.sizes)},
        "xi": pred.xi,
        "xi_exact": str(pred.xi_exact) if pred.xi_exact is not None else None,
        "xi_joint": pred.xi_joint if packet.p == 2 else None,
        "xi_joint_known": packet.p == 2,
        "tail_slope": pred.tail_slope,
        "a_typical": pred.a_typical,
        "a_max": pred.a_max if not isinstance(pred.a_max, Fraction) else str(pred.a_max),
        "theta_known": pred.theta_known,
    }
    if d == 2:
        a_lo = float(pred.a_typical)
        a_hi = float(pred.a_max) if pred.a_max != math.inf else 4 * a_lo
        a_grid = np.linspace(a_lo, a_hi, 41)
        payload["spectrum_table"] = {
            "a": [float(a) for a in a_grid],
            "f": [analytic.spectrum_f(d, float(pred.xi), float(a)) for a in a_grid],
        }
    return payload


def _run_predict(cfg: ExperimentConfig, out: Path):
    return _prediction_payload(cfg.d, cfg.packet), "ok"


def _survival_rows(curve):
    return [
        (s.level, s.R, s.attempted, s.survived, s.cond_prob, s.stderr, s.cum_log_prob)
        for s in curve.levels
    ]


def _fit_row(name, fit):
    return (
        name,
        fit.slope,
        fit.slope_stderr,
        fit.intercept,
        fit.r_squared,
        fit.window[0],
        fit.window[1],
    )


def _levels_from_params(p):
    if p.get("levels"):
        return [float(x) for x in p["levels"]]
    return rare.default_levels(float(p["max_R"]))


def _run_exponent(cfg: ExperimentConfig, out: Path, joint: bool):
    p = cfg.params
    levels = _levels_from_params(p)
    kw = dict(
        d=cfg.d,
        levels=levels,
        n_per_level=int(p["n_per_level"]),
        seed=cfg.master_seed,
        dt0=float(p["dt0"]),
        kappa=float(p["kappa"]),
    )
    if joint:
        curve = rare.joint_nonintersect_curve(sizes=cfg.packet.sizes, **kw)
    else:
        curve = rare.nonintersect_curve(packet=cfg.packet, **kw)
    _write_csv(out / "survival.csv", SURVIVAL_HEADER, _survival_rows(curve))
    summary = {
        "mode": curve.mode,
        "extinct": curve.extinct,
        "levels": len(curve.levels),
        "dt0": curve.dt0,
        "kappa": curve.kappa,
    }
    fit_rows = []
    window = tuple(p.get("fit_window") or (4.0, None))
    try:
        fit = rare.fit_exponent(curve, window=window)
        fit_rows.append(_fit_row("cum_log_prob_vs_log_R", fit))
        summary["xi_hat"] = -fit.slope
        summary["xi_stderr"] = fit.slope_stderr
        summary["fit_r2"] = fit.r_squared
    except ConfigError as e:
        summary["fit_error"] = str(e)
    if cfg.d == 2 and cfg.packet.p == 2:
        summary["xi_analytic"] = analytic.xi2(cfg.packet.M, cfg.packet.N)
    elif cfg.d == 3:
        known = analytic.xi3_known(cfg.packet.M, cfg.packet.N)
        if isinstance(known, analytic.Interval):
            summary["xi_bracket"] = known.as_tuple()
            if "xi_hat" in summary:
                summary["xi_hat_in_bracket"] = summary["xi_hat"] in known
        elif known is not None:
            summary["xi_analytic"] = float(known)

    if not joint and p.get("direct_check_R"):
        d_levels = [R for R in levels if R <= float(p["direct_check_R"])]
        direct = rare.nonintersect_curve(
            packet=cfg.packet,
            d=cfg.d,
            levels=d_levels,
            n_per_level=int(p["direct_n"]),
            seed=cfg.master_seed + 1,
            dt0=float(p["dt0"]),
            kappa=float(p["kappa"]),
            splitting=False,
        )
        _write_csv(out / "direct_survival.csv", SURVIVAL_HEADER, _survival_rows(direct))
        comp = []
        for s_d in direct.levels:
            match = [s for s in curve.levels if s.R == s_d.R and s.level > 0]
            if not match or s_d.level == 0 or s_d.survived == 0:
                continue
            s_s = match[0]
            log_split = s_s.cum_log_prob
            log_direct = s_d.cum_log_prob
            se_split = curve.cum_stderrs()[s_s.level]
            se_direct = direct.cum_stderrs()[s_d.level]
            comb = math.hypot(se_split, se_direct)
            comp.append(
                {
                    "R": s_d.R,
                    "log_p_split": log_split,
                    "log_p_direct": log_direct,
                    "combined_se": comb,
                    "z": (log_split - log_direct) / comb if comb > 0 else 0.0,
                }
            )
        summary["direct_check"] = comp
        summary["direct_check_max_abs_z"] = max((abs(c["z"]) for c in comp), default=0.0)
    if fit_rows:
        _write_csv(out / "fits.csv", FITS_HEADER, fit_rows)
    status = "extinct" if curve.extinct else "ok"
    return summary, status


def _run_conditioned(cfg: ExperimentConfig, out: Path):
    p = cfg.params
    spec = rare.ConditionedRunSpec(r=float(p["r"]), b=float(p["b"]), c=float(p["c"]), n=int(p["n"]))
    res = rare.conditioned_nonintersect(spec, cfg.d, cfg.master_seed, dt_divisor=float(p["dt_divisor"]))
    res["accept_rate_analytic_pair"] = res["accept_rate_analytic"] ** 2
    return res, "ok"


def _run_tail_lower(cfg: ExperimentConfig, out: Path):
    p = cfg.params
    sample = tails.sample_ell_unit(
        cfg.packet,
        cfg.d,
        cfg.R,
        int(p["n"]),
        cfg.master_seed,
        eps=float(p["eps"]),
        cap=float(p["cap"]) if p.get("cap") is not None else None,
    )
    fit = tails.lower_tail_fit(sample, np.asarray(p["delta_grid"], dtype=float))
    rows = [
        (dlt, c, fit.n, lp, math.sqrt((1 - math.exp(lp)) / c))
        for dlt, c, lp in zip(fit.delta_grid, fit.counts, fit.empirical_log_prob)
    ]
    _write_csv(out / "tails.csv", TAILS_HEADER, rows)
    _write_csv(out / "fits.csv", FITS_HEADER, [_fit_row("lower_tail_log_prob_vs_log_delta", fit.fit)])
    xi = analytic.xi2(cfg.packet.M, cfg.packet.N) if cfg.d == 2 else None
    summary = {
        "slope_magnitude": fit.slope_magnitude,
        "slope_stderr": fit.fit.slope_stderr,
        "truncated": fit.truncated,
        "n_aborted": int(sample.aborted.sum()),
        "analytic_slope": analytic.tail_slope(cfg.d, xi) if xi else None,
    }
    return summary, "ok"


def _run_tail_upper(cfg: ExperimentConfig, out: Path):
    p = cfg.params
    summary = {}
    rows = []
    fit_rows = []
    if p.get("synthetic"):
        theta = float(p["synthetic"]["theta"])
        n = int(p["synthetic"].get("n", p["n"]))
        g = rng.stream(cfg.master_seed, 33)
        vals = (g.exponential(size=n) / theta) ** 2
        sample = tails.TailSample(
            values=vals,
            aborted=np.zeros(n, bool),
            packet=cfg.packet,
            d=cfg.d,
            R=cfg.R,
            eps=0.0,
            dt=0.0,
            ball_radius=1.0,
            cap=None,
        )
        grid = np.quantile(vals, 1 - np.geomspace(0.4, 40 / n, int(p["quantile_grid"])))
        fit = tails.upper_tail_fit(sample, grid)
        summary["synthetic"] = {
            "theta_true": theta,
            "theta_hat": fit.theta_hat,
            "stderr": fit.fit.slope_stderr,
            "model_comparison": fit.model_comparison,
        }
        for dlt, c, lp in zip(fit.delta_grid, fit.counts, fit.empirical_log_prob):
            rows.append((dlt, c, n, lp, math.sqrt((1 - math.exp(lp)) / c)))
        fit_rows.append(_fit_row("synthetic_upper_tail_vs_sqrt_a", fit.fit))
    else:
        sample = tails.sample_ell_unit(
            cfg.packet, cfg.d, cfg.R, int(p["n"]), cfg.master_seed, eps=float(p["eps"])
        )
        vals = sample.values
        grid = np.quantile(vals, 1 - np.geomspace(0.4, 40 / len(vals), int(p["quantile_grid"])))
        fit = tails.upper_tail_fit(sample, grid)
        summary["theta_hat"] = fit.theta_hat
        summary["theta_positive"] = bool(fit.theta_hat > 0)
        summary["model_comparison"] = fit.model_comparison
        for dlt, c, lp in zip(fit.delta_grid, fit.counts, fit.empirical_log_prob):
            rows.append((dlt, c, sample.n, lp, math.sqrt((1 - math.exp(lp)) / c)))
        fit_rows.append(_fit_row("upper_tail_log_prob_vs_sqrt_a", fit.fit))
    _write_csv(out / "tails.csv", TAILS_HEADER, rows)
    _write_csv(out / "fits.csv", FITS_HEADER, fit_rows)
    return summary, "ok"


def _run_annulus(cfg: ExperimentConfig, out: Path):
    p = cfg.params
    fit = tails.annulus_zero_prob(
        np.asarray(p["delta_grid"], dtype=float),
        cfg.packet,
        cfg.d,
        cfg.R,
        int(p["n"]),
        cfg.master_seed,
        eps=float(p["eps"]),
    )
    rows = [
        (dlt, c, fit.n, lp, math.sqrt(max(1 - math.exp(lp), 1e-12) / c))
        for dlt, c, lp in zip(fit.delta_grid, fit.counts, fit.empirical_log_prob)
    ]
    _write_csv(out / "tails.csv", TAILS_HEADER, rows)
    _write_csv(out / "fits.csv", FITS_HEADER, [_fit_row("annulus_zero_log_prob_vs_log_delta", fit.fit)])
    xi = analytic.xi2(cfg.packet.M, cfg.packet.N) if cfg.d == 2 else None
    return {
        "slope_magnitude": fit.slope_magnitude,
        "slope_stderr": fit.fit.slope_stderr,
        "xi_analytic": xi,
        "one_sided_ok": bool(xi is None or fit.slope_magnitude <= xi + 2 * fit.fit.slope_stderr + 0.2),
    }, "ok"


def _perc_chunk(args):
    d, gamma, depth, seed, ci, m = args
    counts = np.empty(m, dtype=np.int64)
    for i in range(m):
        g = rng.stream(seed, _PERC_TAG, ci, i)
        tree = percolation.generate_percolation(d, gamma, depth, g)
        counts[i] = len(tree.retained[depth])
    return counts


def _run_percolation(cfg: ExperimentConfig, out: Path):
    p = cfg.params
    gamma, depth = float(p["gamma"]), int(p["depth"])
    n_trees = int(p["n_trees"])
    chunk = 500
    sizes = [chunk] * (n_trees // chunk)
    if n_trees % chunk:
        sizes.append(n_trees % chunk)
    tasks = [(cfg.d, gamma, depth, cfg.master_seed, ci, m) for ci, m in enumerate(sizes)]
    counts = np.concatenate(_pmap(_perc_chunk, tasks, cfg.workers))
    rows = [(i, int(c > 0), depth, int(c)) for i, c in enumerate(counts)]
    _write_csv(out / "percolation.csv", PERC_HEADER, rows)
    surv = float((counts > 0).mean())
    oracle = percolation.survival_prob_oracle(cfg.d, gamma)
    summary = {
        "gamma": gamma,
        "depth": depth,
        "n_trees": n_trees,
        "survival_freq": surv,
        "survival_se": math.sqrt(max(surv * (1 - surv), 1e-12) / n_trees),
        "survival_oracle": oracle,
    }

    # box dimension over surviving trees
    if p.get("box_trees"):
        if gamma > cfg.d - 0.2:
            raise InfeasibleError(
                "survival conditioning too close to criticality; raise the tree budget",
                {"gamma": gamma, "limit": cfg.d - 0.2},
            )
        dims = []
        got, attempts = 0, 0
        while got < int(p["box_trees"]) and attempts < 100 * int(p["box_trees"]):
            g = rng.stream(cfg.master_seed, _PERC_TAG, 900, attempts)
            tree = percolation.generate_percolation(cfg.d, gamma, depth, g)
            attempts += 1
            if not tree.survived:
                continue
            est = percolation.box_dimension(tree, tuple(p["box_window"]))
            dims.append(est.implied_dimension)
            if got == 0:
                (out / "tree_sample.txt").write_text(percolation.serialize_tree(tree))
            got += 1
        dims = np.asarray(dims)
        summary["box_dimension_mean"] = float(dims.mean())
        summary["box_dimension_se"] = float(dims.std(ddof=1) / math.sqrt(len(dims)))
        fit_rows = [
            (
                "box_dimension_mean",
                float(dims.mean()),
                float(dims.std(ddof=1) / math.sqrt(len(dims))),
                0.0,
                1.0,
                p["box_window"][0],
                p["box_window"][1],
            )
        ]
        _write_csv(out / "fits.csv", FITS_HEADER, fit_rows)

    # fixed single-cell chain retention
    lvl = int(p["hit_cell_level"])
    cell = np.array([[(2**lvl) // 3] * cfg.d], dtype=np.int64)
    hits = 0
    n_hit_trees = int(p["hit_trees"])
    for i in range(n_hit_trees):
        g = rng.stream(cfg.master_seed, _PERC_TAG, 901, i)
        tree = percolation.generate_percolation(cfg.d, gamma, lvl, g)
        if percolation.hit_test(tree, lvl, cell)["overall"]:
            hits += 1
    freq = hits / n_hit_trees
    expected = 2.0 ** (-gamma * lvl)
    summary["single_cell"] = {
        "level": lvl,
        "freq": freq,
        "expected": expected,
        "se": math.sqrt(max(expected * (1 - expected), 1e-12) / n_hit_trees),
    }
    return summary, "ok"


def _spectrum_pair(args):
    (d, seed, idx, k_grid, a_grid, anchor_lo, horizon_eps, kill_R, dt) = args
    g = rng.stream(seed, _SPEC_TAG, idx)
    cfg = paths.SimConfig(d=d, dt=dt, T=1.0, R=kill_R)
    bnd = [Sphere(np.zeros(d), kill_R)]
    t1 = paths.sample_path(cfg, np.zeros(d), boundaries=bnd, t_max=1.0, rng=g)
    t2 = paths.sample_path(cfg, np.zeros(d), boundaries=bnd, t_max=1.0, rng=g)
    anchor = Box(np.asarray(anchor_lo), np.asarray(anchor_lo) + 1.0)
    fld = ilt.ilt_field(t1, t2, k_grid, anchor, horizon=1.0 - horizon_eps)
    grid = spectrum.coarse_thin_counts(fld, a_grid, k_grid)
    return grid, fld, (t1, t2)


def _run_spectrum(cfg: ExperimentConfig, out: Path):
    p = cfg.params
    k_grid = [int(k) for k in p["k_grid"]]
    a_grid = [float(a) for a in p["a_grid"]]
    k_max = max(k_grid)
    dt = p.get("dt") or 4.0 ** (-k_max) / (64 * cfg.d)
    anchor_lo = np.full(cfg.d, 0.0)
    anchor_lo[0] = float(p["anchor_gap"])
    anchor_lo[1:] = -0.5

    grids = []
    perc_results = []
    pointwise = []
    n_pairs = int(p["n_pairs"])
    perc_pairs = int(p["perc_pairs"])
    gammas = None
    xi = analytic.xi2(2, 2)
    f_a = analytic.spectrum_f(2, xi, float(p["perc_a"])) if cfg.d == 2 else None
    for idx in range(n_pairs):
        grid, fld, trajs = _spectrum_pair(
            (
                cfg.d,
                cfg.master_seed,
                idx,
                k_grid,
                a_grid,
                anchor_lo,
                float(p["horizon_eps"]),
                float(p["kill_R"]),
                dt,
            )
        )
        grids.append(grid)
        if cfg.d == 2 and idx < perc_pairs:
            depth = int(p.get("perc_depth") or k_max)
            cells = spectrum.thin_cells(fld, float(p["perc_a"]), min(k_max, depth))
            gammas = [max(f_a + off, 0.05) for off in p["perc_gamma_offsets"]]
            res = spectrum.hit_frequency_coupled(
                cells, cfg.d, gammas, depth, int(p["perc_trees"]), rng.derive_key(cfg.master_seed, _SPEC_TAG, 500, idx)
            )
            perc_results.append(res)
            if idx == 0 and cells.count:
                lines = [
                    f"{cells.k} " + " ".join(str(int(v)) for v in row)
                    for row in cells.cells
                ]
                (out / "thin_cells.txt").write_text("\n".join(lines) + "\n")
        if p.get("pointwise_points") and idx < n_pairs:
            pointwise.extend(_pointwise_sample(cfg, p, fld, trajs, idx))

    agg = spectrum.aggregate_spectra(grids)
    agg = spectrum.fit_spectrum(
        agg, seed=cfg.master_seed, prediction_xi=(xi if cfg.d == 2 else None)
    )
    rows = []
    for ja, a in enumerate(agg.a_grid):
        for jk, k in enumerate(agg.k_grid):
            rows.append((a, int(k), agg.counts[ja, jk], agg.zero_counts[jk]))
    _write_csv(out / "spectrum.csv", SPECTRUM_HEADER, rows)
    fit_rows = [
        _fit_row(f"f_hat(a={float(a)})", agg.fits[float(a)])
        for a in agg.a_grid
        if float(a) in agg.fits
    ]
    if fit_rows:
        _write_csv(out / "fits.csv", FITS_HEADER, fit_rows)

    summary = {
        "n_pairs": n_pairs,
        "dt": dt,
        "a_grid": list(map(float, agg.a_grid)),
        "k_grid": [int(k) for k in agg.k_grid],
        "f_hat": agg.f_hat,
        "f_hat_stderr": agg.f_hat_stderr,
        "prediction": agg.prediction,
        "mean_counts": agg.counts,
        "zero_counts": agg.zero_counts,
        "hit_counts": agg.hit_counts,
    }
    if cfg.d == 2:
        am = analytic.a_max(2, Fraction(35, 12))
        summary["endpoints_exact"] = {
            "f_at_typical": str(
                analytic.spectrum_f_exact(2, Fraction(35, 12), Fraction(2))
            ),
            "a_max": str(am),
            "f_at_a_max": str(analytic.spectrum_f_exact(2, Fraction(35, 12), am)),
        }
    nonempty = [r for r in perc_results if not r["empty_cells"]]
    if nonempty:
        pooled = {
            str(g0): float(np.mean([r["freqs"][g0] for r in nonempty]))
            for g0 in sorted(gammas)
        }
        diffs = [list(r["paired_diffs"].values())[0]["mean"] for r in nonempty]
        ses = [list(r["paired_diffs"].values())[0]["stderr"] for r in nonempty]
        mean_diff = float(np.mean(diffs))
        se_diff = float(np.sqrt(np.sum(np.square(ses))) / len(ses))
        summary["percolation_hit"] = {
            "a": float(p["perc_a"]),
            "f_of_a": f_a,
            "gammas": sorted(gammas),
            "freqs": pooled,
            "n_pairs_used": len(nonempty),
            "ordering_diff_mean": mean_diff,
            "ordering_diff_se": se_diff,
            "ordering_ok_2sigma": bool(mean_diff > -2 * se_diff),
            "ordering_strict": bool(mean_diff > 2 * se_diff),
        }
    if pointwise:
        mins = np.asarray([pw["min_two_point"] for pw in pointwise])
        ls = np.asarray([pw["ls_slope"] for pw in pointwise])
        ratios = np.asarray([pw["min_log_ratio"] for pw in pointwise])
        thr = (4 - cfg.d) - 0.5
        summary["pointwise"] = {
            "n_points": len(pointwise),
            "min_two_point_min": float(mins.min()),
            "min_two_point_q05": float(np.quantile(mins, 0.05)),
            "min_log_ratio_min": float(ratios.min()),
            "min_log_ratio_q05": float(np.quantile(ratios, 0.05)),
            "ls_median": float(np.median(ls)),
            "threshold": thr,
            "no_thick_ok": bool(ratios.min() >= thr),
        }
    return summary, "ok"


def _pointwise_sample(cfg, p, fld, trajs, idx):
    """Sampled points in finest both-hit cubes; nested ball-mass slopes on a
    shared fine lattice (mass-weighted and unweighted picks)."""
    k_grid = [int(k) for k in p["k_grid"]]
    scales = sorted(int(k) for k in (p.get("pointwise_scales") or k_grid[1:]))
    k_fine = max(scales)
    lev = fld.level(k_fine)
    pos = np.nonzero(lev.masses > 0)[0]
    if len(pos) == 0:
        return []
    # oversample: points whose shared-lattice chain hits a zero mass are
    # dropped, which loses up to half the picks
    per_pair = 2 * -(-int(p["pointwise_points"]) // int(p["n_pairs"])) + 1
    g = rng.stream(cfg.master_seed, _SPEC_TAG, 600, idx)
    w = lev.masses[pos] / lev.masses[pos].sum()
    n_w = min(per_pair - per_pair // 2, len(pos))
    n_u = min(per_pair // 2, len(pos))
    picks = list(g.choice(len(pos), size=n_w, replace=False, p=w))
    picks += list(g.choice(len(pos), size=n_u, replace=False))
    side = 2.0**-k_fine
    from ..ilt import occupation_grid, unpack_cells

    h = side / 8.0
    margin = 2.0 ** -min(scales)
    reg = Box(fld.anchor.lo - margin, fld.anchor.hi + margin)
    g1 = occupation_grid(trajs[0], h, origin=fld.anchor.lo, region=reg)
    g2 = occupation_grid(trajs[1], h, origin=fld.anchor.lo, region=reg)
    radii = [2.0**-k for k in scales]
    out = []
    cells = unpack_cells(lev.cube_keys[pos[np.asarray(picks, dtype=int)]], fld.d)
    for c in cells:
        x = fld.anchor.lo + (c + 0.5) * side
        pw = spectrum.pointwise_dimension_from_grids(g1, g2, x, radii)
        if not pw.infinite:
            out.append(
                {
                    "min_two_point": pw.min_two_point,
                    "max_two_point": pw.max_two_point,
                    "ls_slope": pw.ls_slope,
                    "min_log_ratio": pw.min_log_ratio,
                }
            )
    return out


def _valpair_chunk(args):
    d, R, dt, seed, idx = args
    g = rng.stream(seed, _VAL_TAG, idx)
    cfg = paths.SimConfig(d=d, dt=dt, R=R)
    bnd = [Sphere(np.zeros(d), R)]
    t1 = paths.sample_path(cfg, np.zeros(d), boundaries=bnd, rng=g)
    t2 = paths.sample_path(cfg, np.zeros(d), boundaries=bnd, rng=g)
    return t1, t2


def _run_ilt_validate(cfg: ExperimentConfig, out: Path):
    p = cfg.params
    summary = {}
    checks = p["checks"]
    R = float(p["R"]) if cfg.R is None else cfg.R
    if "cross" in checks:
        eps = float(p["eps"])
        dt = eps * eps / (16.0 * cfg.d)
        tasks = [(cfg.d, R, dt, cfg.master_seed, i) for i in range(int(p["n_pairs"]))]
        pairs = _pmap(_valpair_chunk, tasks, cfg.workers)
        res = ilt.cross_validate_estimators(
            pairs, Ball(np.zeros(cfg.d), 1.0), eps=eps, h=float(p["h"])
        )
        summary["cross_validation"] = res
    if "scaling" in checks:
        r = float(p["scaling_r"])
        eps0 = float(p["scaling_eps"])
        n = int(p["scaling_n"])
        pk = cfg.packet
        small = tails.sample_ell_unit(
            pk, cfg.d, R, n, cfg.master_seed + 7, eps=eps0 * r,
            dt=(eps0 * r) ** 2 / (16 * cfg.d), ball_radius=r,
        )
        big = tails.sample_ell_unit(
            pk, cfg.d, R / r, n, cfg.master_seed + 8, eps=eps0,
            dt=eps0**2 / (16 * cfg.d), ball_radius=1.0,
        )
        rescaled = small.values * r ** (cfg.d - 4)
        ks = sps.ks_2samp(rescaled, big.values)
        _write_csv(
            out / "scaling_small.csv",
            "replica,value",
            list(enumerate(rescaled)),
        )
        _write_csv(
            out / "scaling_unit.csv",
            "replica,value",
            list(enumerate(big.values)),
        )
        summary["scaling_identity"] = {
            "r": r,
            "R": R,
            "n": n,
            "ks_statistic": float(ks.statistic),
            "p_value": float(ks.pvalue),
            "pass_p_gt_0.001": bool(ks.pvalue > 0.001),
        }
    if "eps-stability" in checks:
        eps = float(p["eps"])
        dt = (eps / 2) ** 2 / (16.0 * cfg.d)
        vals = {}
        for fac in (1.0, 0.5):
            acc = []
            for i in range(int(p["n_pairs"])):
                t1, t2 = _valpair_chunk((cfg.d, R, dt, cfg.master_seed, i))
                acc.append(
                    ilt.ilt_paircount(t1, t2, Ball(np.zeros(cfg.d), 1.0), eps * fac).value
                )
            vals[fac] = np.asarray(acc)
        diff = vals[1.0].mean() - vals[0.5].mean()
        se = math.hypot(
            vals[1.0].std(ddof=1) / math.sqrt(len(vals[1.0])),
            vals[0.5].std(ddof=1) / math.sqrt(len(vals[0.5])),
        )
        summary["eps_stability"] = {
            "mean_full": float(vals[1.0].mean()),
            "mean_half": float(vals[0.5].mean()),
            "combined_se": se,
            "within_3sigma": bool(abs(diff) <= 3 * se),
        }
    return summary, "ok"


# ---------------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig) -> tuple[RunManifest, dict, str]:
    """Execute one experiment; returns (manifest, summary, status)."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    status = "ok"
    summary: dict = {}
    try:
        if cfg.kind == "predict":
            summary, status = _run_predict(cfg, out)
        elif cfg.kind == "hitting":
            summary, status = _run_hitting(cfg, out)
        elif cfg.kind == "exponent":
            summary, status = _run_exponent(cfg, out, joint=False)
        elif cfg.kind == "joint":
            summary, status = _run_exponent(cfg, out, joint=True)
        elif cfg.kind == "conditioned":
            summary, status = _run_conditioned(cfg, out)
        elif cfg.kind == "tail-lower":
            summary, status = _run_tail_lower(cfg, out)
        elif cfg.kind == "tail-upper":
            summary, status = _run_tail_upper(cfg, out)
        elif cfg.kind == "annulus":
            summary, status = _run_annulus(cfg, out)
        elif cfg.kind == "percolation":
            summary, status = _run_percolation(cfg, out)
        elif cfg.kind == "spectrum":
            summary, status = _run_spectrum(cfg, out)
        elif cfg.kind == "ilt-validate":
            summary, status = _run_ilt_validate(cfg, out)
        else:
            raise ConfigError(f"unknown kind {cfg.kind!r}")
    except InfeasibleError as e:
        summary = {"error": {"type": "infeasible", "message": str(e), "detail": e.detail}}
        status = "infeasible"
    except ExtinctionError as e:
        summary = {"error": {"type": "extinction", "message": str(e)}}
        status = "extinct"

    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": cfg.kind,
        "config": cfg.raw,
        "status": status,
        "results": summary,
    }
    (out / "summary.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"
    )
    finished = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    files = {
        f.name: _sha256(f)
        for f in sorted(out.iterdir())
        if f.suffix in (".csv", ".json") and f.name != "manifest.json"
    }
    manifest = RunManifest(
        config_hash=hashlib.sha256(cfg.canonical().encode()).hexdigest(),
        code_version=__version__,
        started=started,
        finished=finished,
        files=files,
    )
    (out / "manifest.json").write_text(
        json.dumps(manifest.__dict__, indent=2, sort_keys=True) + "\n"
    )
    return manifest, payload, status
