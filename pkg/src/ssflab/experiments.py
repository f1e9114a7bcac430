"""Experiment drivers shared by the command-line interface and the acceptance suite.

Each driver takes a ScenarioConfig and returns CSV-ready rows (lists of dicts
with plain scalar values). Heavy sweeps parallelize over independent task keys
and merge results in key order, so thread counts never change the output.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import bridge_mc, eigencount, lattice, ssf
from .config import ScenarioConfig
from .errors import ConfigError
from .laplace_convergence import ConsistencyReport, IndexedFamily, laplace_vs_weighted_consistency


def thread_map(fn, items, threads: int = 1):
    """Map preserving item order; results never depend on scheduling."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def build_pair(cfg: ScenarioConfig, L: float, shift=None):
    """Assemble (perturbed, free) operators for one box size."""
    grid = lattice.build_grid(cfg.d, L, cfg.h)
    U = cfg.background()
    V = cfg.perturbation()
    if shift is not None:
        V = lattice.shift_potential(V, shift)
    op1 = lattice.assemble_operator(grid, U, V)
    op0 = lattice.assemble_operator(grid, U, None)
    return op1, op0


def probe_grid(cfg: ScenarioConfig) -> np.ndarray:
    lo, hi = cfg.energy_interval
    return np.linspace(lo, hi, cfg.probe_points)


def curve_for(cfg: ScenarioConfig, L: float, shift=None) -> ssf.SSFCurve:
    """Exact curve when the dimension fits the oracle cap, sampled otherwise."""
    op1, op0 = build_pair(cfg, L, shift)
    if op1.dim <= cfg.oracle_cap:
        return ssf.ssf_curve(op1, op0, probe="exact", cap=cfg.oracle_cap)
    return ssf.ssf_curve(op1, op0, probe=probe_grid(cfg), cap=cfg.oracle_cap)


# --- plain dumps ---------------------------------------------------------


def spectrum_rows(cfg: ScenarioConfig) -> list[dict]:
    rows = []
    for L in cfg.L_list:
        op1, op0 = build_pair(cfg, L)
        lam0 = eigencount.dense_spectrum(op0, cap=cfg.oracle_cap)
        lam1 = eigencount.dense_spectrum(op1, cap=cfg.oracle_cap)
        for k in range(len(lam0)):
            rows.append({"L": L, "k": k, "lambda0": lam0[k], "lambda1": lam1[k]})
    return rows


def count_rows(cfg: ScenarioConfig, threads: int = 1) -> list[dict]:
    energies = probe_grid(cfg)
    rows = []
    for L in cfg.L_list:
        op1, op0 = build_pair(cfg, L)

        def one(E):
            n0, f0 = eigencount.count_leq_flagged(op0, float(E))
            n1, f1 = eigencount.count_leq_flagged(op1, float(E))
            return n0, n1, f0 or f1

        counted = thread_map(one, energies, threads)
        for E, (n0, n1, flag) in zip(energies, counted):
            rows.append(
                {"L": L, "E": E, "N0": n0, "N1": n1, "xi": n0 - n1, "coincident": int(flag)}
            )
    return rows


def ssf_rows(cfg: ScenarioConfig) -> list[dict]:
    rows = []
    for L in cfg.L_list:
        curve = curve_for(cfg, L)
        for E, v in zip(curve.energies, curve.values):
            rows.append({"L": L, "mode": curve.mode, "E": E, "value": v})
    return rows


# --- averaged quantities --------------------------------------------------


def sweep_rows(cfg: ScenarioConfig, threads: int = 1) -> list[dict]:
    """Weighted average of the curve against the configured weight, per box size."""
    w = cfg.weight()
    values = thread_map(lambda L: ssf.averaged_ssf(curve_for(cfg, L), w), cfg.L_list, threads)
    rows = []
    prev = None
    for L, val in zip(cfg.L_list, values):
        rows.append(
            {
                "L": L,
                "averaged": val,
                "gap_from_prev": math.nan if prev is None else abs(val - prev),
            }
        )
        prev = val
    return rows


def delta_rows(cfg: ScenarioConfig) -> list[dict]:
    """delta-average table over shrinking windows, on the largest-size curve."""
    L = cfg.L_list[-1]
    curve = curve_for(cfg, L)
    lo, hi = cfg.energy_interval
    deltas = [cfg.delta * f for f in (1.0, 0.5, 0.25, 0.125)]
    energies = np.linspace(lo, hi - max(deltas), 5)
    rows = []
    for E in energies:
        for dl in deltas:
            rows.append(
                {
                    "L": L,
                    "E": float(E),
                    "delta": dl,
                    "delta_average": ssf.delta_average(curve, float(E), dl),
                }
            )
    return rows


def kirsch_rows(cfg: ScenarioConfig, threads: int = 1) -> list[dict]:
    """Running max of the relative count at the scan energy across box sizes."""
    E = cfg.scan_energy
    pairs = thread_map(lambda L: build_pair(cfg, L), cfg.L_list, threads)
    by_L = dict(zip(cfg.L_list, pairs))
    points = ssf.sup_scan(E, cfg.L_list, lambda L: by_L[L])
    return [
        {
            "L": p.L,
            "E": E,
            "xi": p.value,
            "running_max": p.running_max,
            "coincident": int(p.coincident),
        }
        for p in points
    ]


def cesaro_rows(cfg: ScenarioConfig, threads: int = 1) -> list[dict]:
    """Running means of the relative count over the box-size sequence.

    Energies are drawn uniformly from the configured interval with the run
    seed. Energies whose running mean ends above the smoothed largest-size
    reference plus the margin are flagged, not failed: pointwise control is an
    almost-everywhere statement and single energies may legitimately explode.
    """
    rng = np.random.default_rng(cfg.mc.seed)
    lo, hi = cfg.energy_interval
    energies = rng.uniform(lo, hi - cfg.delta, size=20)
    pairs = thread_map(lambda L: build_pair(cfg, L), cfg.L_list, threads)
    ref_curve = curve_for(cfg, cfg.L_list[-1])

    rows = []
    for E in energies:
        vals = [eigencount.relative_count(op1, op0, float(E)) for op1, op0 in pairs]
        means = ssf.cesaro_mean(vals)
        ref = ssf.delta_average(ref_curve, float(E), cfg.delta) + cfg.cesaro_margin
        flagged = int(means[-1] > ref)
        for K, (L, v, mk) in enumerate(zip(cfg.L_list, vals, means), start=1):
            rows.append(
                {
                    "E": float(E),
                    "K": K,
                    "L": L,
                    "xi": v,
                    "running_mean": float(mk),
                    "reference": float(ref),
                    "flagged": flagged,
                }
            )
    return rows


# --- shift uniformity ------------------------------------------------------


@dataclass
class ShiftUniformityResult:
    run_rows: list[dict] = field(default_factory=list)
    summary_rows: list[dict] = field(default_factory=list)
    counting_rows: list[dict] = field(default_factory=list)
    counting_summary: list[dict] = field(default_factory=list)
    consistency: ConsistencyReport | None = None
    reference_laplace: dict = field(default_factory=dict)
    reference_weighted: float = math.nan


def _period_vector(cfg: ScenarioConfig) -> tuple[float, ...]:
    if cfg.U.kind == "cosine-series" and cfg.U.period:
        return cfg.U.period
    return (1.0,) * cfg.d


def shift_sets(cfg: ScenarioConfig) -> dict[float, lattice.ShiftSet]:
    p = _period_vector(cfg)
    D = cfg.security_distance()
    return {
        L: lattice.allowed_shifts(cfg.x0, L, p, cfg.V.ell, D) for L in cfg.L_list
    }


def shift_uniformity(
    cfg: ScenarioConfig,
    threads: int = 1,
    with_counting: bool = True,
    consistency_tol: float = 0.05,
    consistency_tol_weighted: float = 0.15,
) -> ShiftUniformityResult:
    """Per-size sup over allowed shifts of the deviation from the reference.

    Laplace space: every (L, shift) run shares its seed-derived paths with the
    unconfined run, so the deviation of each estimate from the infinite-volume
    reference is measured pairwise on common paths. Counting space: weighted
    averages of exact curves for every shifted pair, compared against the
    largest-size base-point value.
    """
    p = _period_vector(cfg)
    if cfg.U.kind == "cosine-series":
        for L in cfg.L_list:
            if abs(L / cfg.h - round(L / cfg.h)) > 1e-9:
                raise ConfigError(f"config.L_list: L={L} must be an integer multiple of h")
        for pj in p:
            if abs(pj / cfg.h - round(pj / cfg.h)) > 1e-9:
                raise ConfigError("config.U.period: period must be an integer multiple of h")

    sets = shift_sets(cfg)
    U = cfg.background()
    V = cfg.perturbation()
    params = cfg.mc_params()
    res = ShiftUniformityResult()

    for t in cfg.t_list:
        ref_run = bridge_mc.infinite_volume_laplace_mc(U, V, cfg.x0, t, params, threads=threads)
        ref = ref_run.nocut_mean
        res.reference_laplace[t] = ref
        fam_rows = []
        for L in cfg.L_list:
            sset = sets[L]
            if len(sset) == 0:
                raise ConfigError(f"no allowed shifts at L={L}; increase L or relax D")

            def one_shift(y):
                return bridge_mc.finite_volume_laplace_mc(
                    U, V, L, y, cfg.x0, t, params, shift_set=sset
                )

            runs = thread_map(one_shift, list(sset.shifts), threads)
            devs = []
            for y, run in zip(sset.shifts, runs):
                if abs(run.nocut_mean - ref) > 1e-12 * max(1.0, abs(ref)):
                    raise RuntimeError("path coupling broken: unconfined values differ")
                devs.append((tuple(y.tolist()), run))
                res.run_rows.append(
                    {
                        "t": t,
                        "L": L,
                        "shift": "/".join(f"{c:g}" for c in y),
                        "n_samples": run.estimate.n_samples,
                        "m": run.estimate.m_slices,
                        "xi_tilde": run.estimate.mean,
                        "std_error": run.estimate.std_error,
                        "deviation": run.deviation,
                        "deviation_se": run.deviation_se,
                        "seed": params.seed,
                    }
                )
                fam_rows.append((L, "/".join(f"{c:g}" for c in y), run.estimate.mean))
            sup_label, sup_run = max(devs, key=lambda kv: kv[1].deviation)
            means = [run.estimate.mean for _, run in devs]
            res.summary_rows.append(
                {
                    "t": t,
                    "L": L,
                    "n_shifts": len(sset),
                    "sup_deviation": sup_run.deviation,
                    "sup_deviation_se": sup_run.deviation_se,
                    "sup_shift": "/".join(f"{c:g}" for c in sup_label),
                    "spread": max(means) - min(means),
                    "reference": ref,
                }
            )
        res.__dict__.setdefault("_families", {})[t] = IndexedFamily.from_rows(fam_rows)

    if with_counting:
        w = cfg.weight()
        count_fam_rows = []
        for L in cfg.L_list:
            sset = sets[L]

            def one(y):
                return ssf.averaged_ssf(curve_for(cfg, L, shift=y), w)

            vals = thread_map(one, list(sset.shifts), threads)
            for y, val in zip(sset.shifts, vals):
                label = "/".join(f"{c:g}" for c in y)
                res.counting_rows.append({"L": L, "shift": label, "averaged": val})
                count_fam_rows.append((L, label, val))
        base = np.asarray(cfg.x0, dtype=np.float64)
        ref_w = None
        Lmax = cfg.L_list[-1]
        for row in res.counting_rows:
            if row["L"] == Lmax and row["shift"] == "/".join(f"{c:g}" for c in base):
                ref_w = row["averaged"]
        if ref_w is None:
            ref_w = res.counting_rows[-1]["averaged"]
        res.reference_weighted = ref_w
        weighted_fam = IndexedFamily.from_rows(count_fam_rows)
        res.consistency = laplace_vs_weighted_consistency(
            res.__dict__["_families"],
            weighted_fam,
            res.reference_laplace,
            ref_w,
            tol=consistency_tol,
            tol_weighted=consistency_tol_weighted,
        )
        sup_profile = {n: dev for n, dev in res.consistency.weighted_profile}
        for L in cfg.L_list:
            res.counting_summary.append(
                {"L": L, "sup_deviation": sup_profile[L], "reference": ref_w}
            )
    return res


# --- Laplace points --------------------------------------------------------


def mc_laplace_rows(cfg: ScenarioConfig, threads: int = 1) -> tuple[list[dict], list[dict]]:
    """Finite and infinite-volume estimates per t (largest box), plus oracle rows."""
    L = cfg.L_list[-1]
    U = cfg.background()
    V = cfg.perturbation()
    params = cfg.mc_params()
    x0 = cfg.x0
    mc_rows = []
    oracle_rows = []
    op1 = op0 = None
    grid = lattice.build_grid(cfg.d, L, cfg.h)
    if grid.n_points <= cfg.oracle_cap:
        op1, op0 = build_pair(cfg, L, shift=x0 if any(x0) else None)
    for t in cfg.t_list:
        fin = bridge_mc.finite_volume_laplace_mc(U, V, L, x0, x0, t, params, threads=threads)
        inf_run = bridge_mc.infinite_volume_laplace_mc(U, V, x0, t, params, threads=threads)
        for run, L_val in ((fin, L), (inf_run, math.inf)):
            mc_rows.append(
                {
                    "t": t,
                    "L": L_val,
                    "shift": "/".join(f"{c:g}" for c in x0),
                    "n_samples": run.estimate.n_samples,
                    "m": run.estimate.m_slices,
                    "mean": run.estimate.mean,
                    "std_error": run.estimate.std_error,
                    "trunc_tail_bound": run.trunc_tail_bound,
                    "seed": params.seed,
                }
            )
        if op1 is not None:
            pt = bridge_mc.trace_laplace_oracle(op1, op0, t, cap=cfg.oracle_cap)
            oracle_rows.append({"t": t, "L": L, "xi_tilde": pt.xi_tilde})
    return mc_rows, oracle_rows
