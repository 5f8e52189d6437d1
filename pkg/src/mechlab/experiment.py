"""Experiment configs, theoretical ratio bounds and ratio reports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .bounds import solve_cp
from .corrgap import phi
from .errors import DomainError, MechlabError
from .mech import (
    Instance,
    MYERSON,
    VCG,
    PostedPriceMechanism,
    ReserveVCG,
    SPMPolicy,
    build_greedy_spm,
    simulate,
    win_probabilities,
)
from .montecarlo import Estimate, estimate
from .setsys import (
    EXHAUSTIVE_LIMIT,
    ExplicitSystem,
    SetSystem,
    UniformMatroid,
    independence_ratio,
    system_from_config,
    verify_matroid,
)
from .valuation import distribution_from_config, objective_from_name

MECHANISMS = ("myerson", "vcg", "greedy_spm", "vcg_reserves")
BETA_TABLE = {"matroid": math.e / (math.e - 1)}
SIGMAS = 3.0
CSV_COLUMNS = ("criterion", "kind", "n", "k_or_p", "estimate", "stderr", "bound", "pass")

# posted prices and reserves share a stream so their draws coincide
_STREAM_TAGS = {"myerson": 10, "vcg": 11, "greedy_spm": 12, "vcg_reserves": 12}


class ConfigError(MechlabError, ValueError):
    """Invalid experiment config; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# -- configs -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    instance: Instance
    mechanisms: tuple[str, ...] = ("greedy_spm",)
    samples: int = 100_000
    seed: int = 42
    out: str | None = None
    fmt: str = "csv"


def _field(cfg: dict, key: str, path: str):
    if key not in cfg:
        raise ConfigError(f"{path}.{key}" if path else key, "missing field")
    return cfg[key]


def parse_instance(cfg: dict[str, Any]) -> Instance:
    """Instance from JSON: ``system``, ``distributions`` (or one shared ``distribution``), ``objective``."""
    if not isinstance(cfg, dict):
        raise ConfigError("$", "config must be a JSON object")
    sys_cfg = _field(cfg, "system", "")
    try:
        sys = system_from_config(sys_cfg)
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError("system", str(exc)) from None
    if "distributions" in cfg:
        raw = cfg["distributions"]
        if not isinstance(raw, list):
            raise ConfigError("distributions", "must be a list")
        dists = []
        for idx, d in enumerate(raw):
            try:
                dists.append(distribution_from_config(d))
            except (DomainError, TypeError, ValueError, AttributeError) as exc:
                raise ConfigError(f"distributions[{idx}]", str(exc)) from None
    elif "distribution" in cfg:
        try:
            dists = [distribution_from_config(cfg["distribution"])] * sys.n
        except (DomainError, TypeError, ValueError, AttributeError) as exc:
            raise ConfigError("distribution", str(exc)) from None
    else:
        raise ConfigError("distributions", "missing field")
    if len(dists) != sys.n:
        raise ConfigError("distributions", f"expected {sys.n} entries, got {len(dists)}")
    try:
        objective = objective_from_name(cfg.get("objective", "revenue"))
    except DomainError as exc:
        raise ConfigError("objective", str(exc)) from None
    return Instance(tuple(dists), sys, objective)


def parse_config(cfg: dict[str, Any], samples: int | None = None, seed: int | None = None,
                 out: str | None = None, fmt: str | None = None) -> ExperimentConfig:
    """Full experiment config; explicit arguments override fields of ``cfg``."""
    instance = parse_instance(cfg)
    mechs = cfg.get("mechanisms", ["greedy_spm"])
    if not isinstance(mechs, list) or not mechs:
        raise ConfigError("mechanisms", "must be a non-empty list")
    for idx, m in enumerate(mechs):
        if m not in MECHANISMS:
            raise ConfigError(f"mechanisms[{idx}]", f"unknown mechanism {m!r}")
    samples = int(cfg.get("samples", 100_000)) if samples is None else samples
    if samples < 1:
        raise ConfigError("samples", "must be >= 1")
    seed = int(cfg.get("seed", 42)) if seed is None else seed
    fmt = cfg.get("format", "csv") if fmt is None else fmt
    if fmt not in ("csv", "json"):
        raise ConfigError("format", "must be csv or json")
    return ExperimentConfig(instance, tuple(dict.fromkeys(mechs)), samples, seed, out, fmt)


# -- theoretical bounds ----------------------------------------------------------------


def is_matroid(sys: SetSystem) -> bool:
    if sys.is_matroid:
        return True
    if isinstance(sys, ExplicitSystem) and sys.n <= EXHAUSTIVE_LIMIT:
        return verify_matroid(sys)
    return False


def system_kind(sys: SetSystem) -> str:
    return sys.kind


def k_or_p(sys: SetSystem) -> float:
    """``k`` for k-uniform systems, otherwise the independence ratio ``p``."""
    if isinstance(sys, UniformMatroid):
        return float(sys.k)
    if is_matroid(sys):
        return 1.0
    return independence_ratio(sys, exhaustive=sys.n <= EXHAUSTIVE_LIMIT and sys.kind != "miniset")


def theoretical_beta(sys: SetSystem) -> float:
    """Approximation factor of greedy posted prices for this kind of system."""
    if isinstance(sys, UniformMatroid):
        return sys.k / phi(sys.n, sys.k)
    if is_matroid(sys):
        return BETA_TABLE["matroid"]
    return k_or_p(sys) + 1.0


# -- ratio checks ----------------------------------------------------------------------


@dataclass(frozen=True)
class RatioCheck:
    """``opt <= beta * simple`` up to ``3σ`` of the combined Monte-Carlo error."""

    benchmark: str
    simple: str
    ratio: float
    ratio_stderr: float
    beta: float
    slack: float
    passed: bool | None

    @property
    def label(self) -> str:
        return f"{self.benchmark}/{self.simple}"


def ratio_check(opt: Estimate, simple: Estimate, beta: float, benchmark: str = "opt",
                simple_name: str = "spm", sigmas: float = SIGMAS) -> RatioCheck:
    if simple.mean != 0:
        ratio = opt.mean / simple.mean
    else:
        ratio = 1.0 if opt.mean == 0 else math.inf
    finite = math.isfinite(opt.stderr) and math.isfinite(simple.stderr)
    if not finite:
        return RatioCheck(benchmark, simple_name, ratio, math.inf, beta, math.inf, None)
    slack = sigmas * math.hypot(opt.stderr, beta * simple.stderr)
    if opt.mean > 0 and simple.mean > 0:
        r_se = ratio * math.hypot(opt.stderr / opt.mean, simple.stderr / simple.mean)
    else:
        r_se = 0.0
    passed = opt.mean <= beta * simple.mean + slack
    return RatioCheck(benchmark, simple_name, ratio, r_se, beta, slack, bool(passed))


@dataclass(frozen=True, eq=False)
class RatioReport:
    kind: str
    n: int
    k_or_p: float
    beta: float
    seed: int
    samples: int
    estimates: dict[str, Estimate]
    ratios: tuple[RatioCheck, ...]
    marginals: np.ndarray = field(repr=False)
    marginal_source: str = "win_probabilities"

    @property
    def ok(self) -> bool:
        return all(r.passed is not False for r in self.ratios)

    @property
    def infinite_stderr(self) -> bool:
        return any(not math.isfinite(e.stderr) for e in self.estimates.values())

    def rows(self) -> list[dict[str, Any]]:
        out = []
        for name, est in self.estimates.items():
            out.append(dict(criterion=f"estimate:{name}", kind=self.kind, n=self.n, k_or_p=self.k_or_p,
                            estimate=est.mean, stderr=est.stderr, bound=None, passed=None))
        for r in self.ratios:
            out.append(dict(criterion=f"ratio:{r.label}", kind=self.kind, n=self.n, k_or_p=self.k_or_p,
                            estimate=r.ratio, stderr=r.ratio_stderr, bound=r.beta, passed=r.passed))
        return out

    def to_json(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "samples": self.samples,
            "kind": self.kind,
            "n": self.n,
            "k_or_p": self.k_or_p,
            "beta": self.beta,
            "marginal_source": self.marginal_source,
            "marginals": [float(x) for x in self.marginals],
            "estimates": {k: {"mean": e.mean, "stderr": _json_float(e.stderr)} for k, e in self.estimates.items()},
            "ratios": [{"benchmark": r.benchmark, "mechanism": r.simple, "ratio": _json_float(r.ratio),
                        "stderr": _json_float(r.ratio_stderr), "beta": r.beta,
                        "slack": _json_float(r.slack), "pass": r.passed} for r in self.ratios],
            "infinite_stderr": self.infinite_stderr,
            "ok": self.ok,
        }


def _json_float(x: float):
    return x if math.isfinite(x) else str(x)


def run(config: ExperimentConfig, workers: int | None = None) -> RatioReport:
    """Simulate the requested mechanisms and check each against the optimal benchmark.

    Greedy posted prices target the benchmark's win probabilities; for the
    surplus objective, which has no benchmark here, the concave-program
    marginals are used instead.
    """
    inst = config.instance
    obj = inst.objective.kind
    bench = {"revenue": "myerson", "welfare": "vcg"}.get(obj)
    needs_policy = any(m in ("greedy_spm", "vcg_reserves") for m in config.mechanisms)
    policy: SPMPolicy | None = None
    source = "none"
    q = np.zeros(inst.n)
    if needs_policy:
        if bench is not None:
            mech = MYERSON if bench == "myerson" else VCG
            q = win_probabilities(inst, mech, samples=config.samples, seed=config.seed, workers=workers).q
            source = "win_probabilities"
        else:
            q = solve_cp(inst).q_star
            source = "concave_program"
        policy = build_greedy_spm(inst, q)

    names = list(config.mechanisms)
    if bench is not None and bench not in names:
        names.insert(0, bench)
    estimates: dict[str, Estimate] = {}
    for name in names:
        if name == "myerson":
            mech = MYERSON
        elif name == "vcg":
            mech = VCG
        elif name == "greedy_spm":
            mech = PostedPriceMechanism(policy)
        else:
            mech = ReserveVCG(policy)
        out = simulate(inst, mech, config.samples, config.seed, tag=_STREAM_TAGS[name], workers=workers)
        estimates[name] = estimate(out.values)

    beta = theoretical_beta(inst.sys)
    ratios = []
    if bench is not None:
        for name in names:
            if name in ("greedy_spm", "vcg_reserves"):
                ratios.append(ratio_check(estimates[bench], estimates[name], beta, bench, name))
    return RatioReport(system_kind(inst.sys), inst.n, k_or_p(inst.sys), beta, config.seed, config.samples,
                       estimates, tuple(ratios), q, source)


# -- output ------------------------------------------------------------------------------


def fmt_value(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.10g}"


def rows_to_csv(rows: Sequence[dict[str, Any]], header: dict[str, Any]) -> str:
    buf = io.StringIO()
    buf.write("# " + " ".join(f"{k}={v}" for k, v in header.items()) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([fmt_value(r["criterion"]) if not isinstance(r["criterion"], str) else r["criterion"],
                    r["kind"], fmt_value(r["n"]), fmt_value(r["k_or_p"]), fmt_value(r["estimate"]),
                    fmt_value(r["stderr"]), fmt_value(r["bound"]), fmt_value(r["passed"])])
    return buf.getvalue()


def dumps_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"
