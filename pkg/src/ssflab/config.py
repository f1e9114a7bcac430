"""Scenario configuration: parsing, validation, serialization, defaults.

Configs are plain JSON with the field names below; parsing validates every
module precondition it can check statically and reports failures with the
offending field path. parse(serialize(cfg)) is the identity.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

from .bridge_mc import DEFAULT_SEED, MCParams
from .errors import ConfigError
from .lattice import (
    PotentialField,
    box_perturbation,
    bump_perturbation,
    constant_background,
    cosine_background,
    log_half_security,
    zero_background,
)
from .ssf import WeightFunction, constant_weight, exp_weight, poly_weight


@dataclass(frozen=True)
class USpec:
    kind: str = "zero"  # zero | constant | cosine-series
    value: float = 0.0
    period: tuple[float, ...] = ()
    offset: float = 0.0
    terms: tuple[tuple[float, tuple[int, ...]], ...] = ()


@dataclass(frozen=True)
class VSpec:
    kind: str = "box-indicator"  # box-indicator | bump
    amplitude: float = 2.0
    ell: float = 1.0


@dataclass(frozen=True)
class DSpec:
    kind: str = "log-half"  # log-half | linear-fraction
    fraction: float = 0.25


@dataclass(frozen=True)
class WeightSpec:
    kind: str = "const"  # const | poly | exp
    value: float = 1.0
    coeffs: tuple[float, ...] = ()
    rate: float = 0.0


@dataclass(frozen=True)
class MCSpec:
    n_samples: int = 100_000
    m: int | None = 128
    seed: int = DEFAULT_SEED
    trunc_radius: float | None = None
    dx: float = 0.25
    block_size: int = 4096
    antithetic: bool = False


@dataclass(frozen=True)
class ScenarioConfig:
    d: int = 1
    h: float = 0.125
    U: USpec = field(default_factory=USpec)
    V: VSpec = field(default_factory=VSpec)
    x0: tuple[float, ...] = (0.0,)
    D: DSpec = field(default_factory=DSpec)
    L_list: tuple[float, ...] = (12.0, 16.0, 24.0, 32.0, 48.0)
    energy_interval: tuple[float, float] = (0.0, 4.0)
    weight_g: WeightSpec = field(default_factory=WeightSpec)
    delta: float = 0.5
    t_list: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0)
    mc: MCSpec = field(default_factory=MCSpec)
    oracle_cap: int = 4096
    probe_points: int = 400
    scan_energy: float = 9.8696
    cesaro_margin: float = 0.5

    # --- builders -------------------------------------------------------
    def background(self) -> PotentialField | None:
        if self.U.kind == "zero":
            return None
        if self.U.kind == "constant":
            return constant_background(self.U.value, self.U.period or None)
        return cosine_background(self.U.period, list(self.U.terms), offset=self.U.offset)

    def perturbation(self) -> PotentialField:
        if self.V.kind == "box-indicator":
            return box_perturbation(self.V.amplitude, self.V.ell, self.d)
        return bump_perturbation(self.V.amplitude, self.V.ell, self.d)

    def security_distance(self):
        if self.D.kind == "log-half":
            return log_half_security(self.V.ell)
        frac, ell = self.D.fraction, self.V.ell
        return lambda L: frac * 0.5 * (L - ell)

    def weight(self) -> WeightFunction:
        lo, hi = self.energy_interval
        if self.weight_g.kind == "const":
            return constant_weight(lo, hi, self.weight_g.value)
        if self.weight_g.kind == "poly":
            return poly_weight(lo, hi, self.weight_g.coeffs)
        return exp_weight(lo, hi, self.weight_g.rate, self.weight_g.value)

    def mc_params(self) -> MCParams:
        return MCParams(
            n_samples=self.mc.n_samples,
            m=self.mc.m,
            seed=self.mc.seed,
            trunc_radius=self.mc.trunc_radius,
            dx=self.mc.dx,
            block_size=self.mc.block_size,
            antithetic=self.mc.antithetic,
        )

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, mc=replace(self.mc, seed=int(seed)))

    def with_oracle_cap(self, cap: int) -> "ScenarioConfig":
        return replace(self, oracle_cap=int(cap))


def _expect(cond: bool, path: str, msg: str):
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def _get(d: dict, key: str, path: str, default=_expect):
    if key not in d:
        if default is not _expect:
            return default
        raise ConfigError(f"{path}.{key}: missing required field")
    return d[key]


def parse_config(data: dict) -> ScenarioConfig:
    """Validate a JSON dict and build the config; errors carry field paths."""
    if not isinstance(data, dict):
        raise ConfigError("top level: expected a JSON object")
    d = int(_get(data, "d", "config"))
    _expect(d >= 1, "config.d", "dimension must be >= 1")
    h = float(_get(data, "h", "config"))
    _expect(h > 0, "config.h", "mesh width must be positive")

    u_raw = _get(data, "U", "config", {"kind": "zero"})
    u_kind = _get(u_raw, "kind", "config.U")
    _expect(u_kind in ("zero", "constant", "cosine-series"), "config.U.kind", f"unknown kind {u_kind!r}")
    period = tuple(float(p) for p in u_raw.get("period", ()))
    if u_kind == "cosine-series":
        _expect(len(period) == d, "config.U.period", f"need {d} entries")
        _expect(all(p > 0 for p in period), "config.U.period", "entries must be positive")
        terms_raw = _get(u_raw, "terms", "config.U")
        terms = []
        for i, trm in enumerate(terms_raw):
            k = tuple(int(x) for x in _get(trm, "k", f"config.U.terms[{i}]"))
            _expect(len(k) == d, f"config.U.terms[{i}].k", f"need {d} entries")
            terms.append((float(_get(trm, "coeff", f"config.U.terms[{i}]")), k))
        u_spec = USpec(kind=u_kind, period=period, offset=float(u_raw.get("offset", 0.0)), terms=tuple(terms))
    elif u_kind == "constant":
        u_spec = USpec(kind=u_kind, value=float(_get(u_raw, "value", "config.U")), period=period)
    else:
        u_spec = USpec(kind="zero")

    v_raw = _get(data, "V", "config", {"kind": "box-indicator"})
    v_kind = _get(v_raw, "kind", "config.V")
    _expect(v_kind in ("box-indicator", "bump"), "config.V.kind", f"unknown kind {v_kind!r}")
    ell = float(v_raw.get("ell", 1.0))
    _expect(ell > 0, "config.V.ell", "support edge must be positive")
    v_spec = VSpec(kind=v_kind, amplitude=float(v_raw.get("amplitude", 2.0)), ell=ell)

    x0 = tuple(float(x) for x in _get(data, "x0", "config", [0.0] * d))
    _expect(len(x0) == d, "config.x0", f"need {d} entries")
    if u_spec.kind == "cosine-series":
        _expect(
            all(0 <= x0[j] < u_spec.period[j] for j in range(d)),
            "config.x0",
            "base point must lie in the periodicity cell [0, p)",
        )

    d_raw = _get(data, "D", "config", {"kind": "log-half"})
    d_kind = _get(d_raw, "kind", "config.D")
    _expect(d_kind in ("log-half", "linear-fraction"), "config.D.kind", f"unknown kind {d_kind!r}")
    fraction = float(d_raw.get("fraction", 0.25))
    _expect(0 < fraction <= 1, "config.D.fraction", "fraction must be in (0, 1]")
    d_spec = DSpec(kind=d_kind, fraction=fraction)

    L_list = tuple(float(L) for L in _get(data, "L_list", "config"))
    _expect(len(L_list) >= 1, "config.L_list", "need at least one box size")
    _expect(all(L > 0 for L in L_list), "config.L_list", "box sizes must be positive")
    _expect(all(h < L / 2 for L in L_list), "config.L_list", "mesh h must satisfy h < L/2")
    _expect(
        all(L > ell for L in L_list), "config.L_list", "every box must contain the support"
    )

    interval = _get(data, "energy_interval", "config", [0.0, 4.0])
    _expect(len(interval) == 2 and interval[0] < interval[1], "config.energy_interval", "need [lo, hi] with lo < hi")
    energy_interval = (float(interval[0]), float(interval[1]))

    w_raw = _get(data, "weight_g", "config", {"kind": "const", "value": 1.0})
    w_kind = _get(w_raw, "kind", "config.weight_g")
    _expect(w_kind in ("const", "poly", "exp"), "config.weight_g.kind", f"unknown kind {w_kind!r}")
    w_spec = WeightSpec(
        kind=w_kind,
        value=float(w_raw.get("value", 1.0)),
        coeffs=tuple(float(c) for c in w_raw.get("coeffs", ())),
        rate=float(w_raw.get("rate", 0.0)),
    )

    delta = float(_get(data, "delta", "config", 0.5))
    _expect(delta > 0, "config.delta", "delta must be positive")
    t_list = tuple(float(t) for t in _get(data, "t_list", "config", [0.25, 0.5, 1.0, 2.0]))
    _expect(all(t > 0 for t in t_list), "config.t_list", "t values must be positive")

    mc_raw = _get(data, "mc", "config", {})
    n_samples = int(mc_raw.get("n_samples", 100_000))
    _expect(n_samples >= 2, "config.mc.n_samples", "need at least two samples")
    m_val = mc_raw.get("m", 128)
    m = None if m_val is None else int(m_val)
    _expect(m is None or m >= 2, "config.mc.m", "need at least two slices")
    dx = float(mc_raw.get("dx", 0.25))
    _expect(dx > 0, "config.mc.dx", "dx must be positive")
    block = int(mc_raw.get("block_size", 4096))
    _expect(block >= 2, "config.mc.block_size", "block size too small")
    tr = mc_raw.get("trunc_radius")
    _expect(tr is None or float(tr) > 0, "config.mc.trunc_radius", "radius must be positive")
    mc_spec = MCSpec(
        n_samples=n_samples,
        m=m,
        seed=int(mc_raw.get("seed", DEFAULT_SEED)),
        trunc_radius=None if tr is None else float(tr),
        dx=dx,
        block_size=block,
        antithetic=bool(mc_raw.get("antithetic", False)),
    )

    cap = int(_get(data, "oracle_cap", "config", 4096))
    _expect(cap >= 1, "config.oracle_cap", "cap must be positive")
    probe_points = int(_get(data, "probe_points", "config", 400))
    _expect(probe_points >= 2, "config.probe_points", "need at least two probes")
    scan_energy = float(_get(data, "scan_energy", "config", math.pi**2))
    cesaro_margin = float(_get(data, "cesaro_margin", "config", 0.5))

    return ScenarioConfig(
        d=d,
        h=h,
        U=u_spec,
        V=v_spec,
        x0=x0,
        D=d_spec,
        L_list=L_list,
        energy_interval=energy_interval,
        weight_g=w_spec,
        delta=delta,
        t_list=t_list,
        mc=mc_spec,
        oracle_cap=cap,
        probe_points=probe_points,
        scan_energy=scan_energy,
        cesaro_margin=cesaro_margin,
    )


def serialize_config(cfg: ScenarioConfig) -> dict:
    out = {
        "d": cfg.d,
        "h": cfg.h,
        "U": {"kind": cfg.U.kind},
        "V": {"kind": cfg.V.kind, "amplitude": cfg.V.amplitude, "ell": cfg.V.ell},
        "x0": list(cfg.x0),
        "D": {"kind": cfg.D.kind, "fraction": cfg.D.fraction},
        "L_list": list(cfg.L_list),
        "energy_interval": list(cfg.energy_interval),
        "weight_g": {
            "kind": cfg.weight_g.kind,
            "value": cfg.weight_g.value,
            "coeffs": list(cfg.weight_g.coeffs),
            "rate": cfg.weight_g.rate,
        },
        "delta": cfg.delta,
        "t_list": list(cfg.t_list),
        "mc": {
            "n_samples": cfg.mc.n_samples,
            "m": cfg.mc.m,
            "seed": cfg.mc.seed,
            "trunc_radius": cfg.mc.trunc_radius,
            "dx": cfg.mc.dx,
            "block_size": cfg.mc.block_size,
            "antithetic": cfg.mc.antithetic,
        },
        "oracle_cap": cfg.oracle_cap,
        "probe_points": cfg.probe_points,
        "scan_energy": cfg.scan_energy,
        "cesaro_margin": cfg.cesaro_margin,
    }
    if cfg.U.kind == "constant":
        out["U"]["value"] = cfg.U.value
        if cfg.U.period:
            out["U"]["period"] = list(cfg.U.period)
    elif cfg.U.kind == "cosine-series":
        out["U"]["period"] = list(cfg.U.period)
        out["U"]["offset"] = cfg.U.offset
        out["U"]["terms"] = [{"coeff": c, "k": list(k)} for c, k in cfg.U.terms]
    return out


def load_config(path: str) -> ScenarioConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data)


def config_hash(cfg: ScenarioConfig) -> str:
    canon = json.dumps(serialize_config(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def default_d1() -> ScenarioConfig:
    """d=1 default: cosine background of period 1, box perturbation of strength 2."""
    return ScenarioConfig(
        d=1,
        h=0.125,
        U=USpec(kind="cosine-series", period=(1.0,), offset=0.5, terms=((0.5, (1,)),)),
        V=VSpec(kind="box-indicator", amplitude=2.0, ell=1.0),
        x0=(0.0,),
        D=DSpec(kind="log-half"),
        L_list=(12.0, 16.0, 24.0, 32.0, 48.0),
        energy_interval=(0.0, 4.0),
        t_list=(0.25, 0.5, 1.0, 2.0),
        scan_energy=math.pi**2,
    )


def default_d2() -> ScenarioConfig:
    """d=2 default: product cosine background of period (1,1), box perturbation.

    0.5 * (1 + cos(2 pi x1)) * (1 + cos(2 pi x2)) expanded into cosine terms.
    """
    return ScenarioConfig(
        d=2,
        h=0.4,
        U=USpec(
            kind="cosine-series",
            period=(1.0, 1.0),
            offset=0.5,
            terms=((0.5, (1, 0)), (0.5, (0, 1)), (0.5, (1, 1))),
        ),
        V=VSpec(kind="box-indicator", amplitude=2.0, ell=1.0),
        x0=(0.0, 0.0),
        D=DSpec(kind="log-half"),
        L_list=(8.0, 12.0, 16.0, 20.0),
        energy_interval=(0.0, 12.0),
        t_list=(0.5, 1.0),
        scan_energy=math.pi**2,
        probe_points=200,
    )


def kirsch_d2() -> ScenarioConfig:
    """Free background scan scenario: d=2, U=0, integer box sizes 8..40."""
    return ScenarioConfig(
        d=2,
        h=0.4,
        U=USpec(kind="zero"),
        V=VSpec(kind="box-indicator", amplitude=2.0, ell=1.0),
        x0=(0.0, 0.0),
        D=DSpec(kind="log-half"),
        L_list=tuple(float(L) for L in range(8, 41)),
        energy_interval=(0.0, 12.0),
        t_list=(0.5, 1.0),
        scan_energy=math.pi**2,
        probe_points=200,
    )
