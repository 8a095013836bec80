"""Experiment execution and deterministic report assembly."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .. import __version__
from ..errors import ValidationError
from ..harness import (
    COLUMNS,
    SCHEMA_VERSION,
    approximation_stability_probe,
    diagnostics_rows,
    dyadic_checkpoints,
    mangoldt_average_stream,
    moving_average_stream,
    multi_weighted_stream,
    prime_average_stream,
    return_time_experiment,
    rows_to_csv,
    scan_rows,
    uniform_ww_scan,
)
from ..harness.streams import DEFAULT_BUDGET_FRACTION, EXTENDED_FACTOR, MONOTONE_SLACK
from ..primes import PRIMES
from ..spectral import DEFAULT_UNIMODULAR_TOL, GAP_FACTOR, flight_similarity_constant, jdlg_split
from ..superop import CHECK_TOL, validate_ds
from ..tracealg import STRUCTURE_TOL
from ..weights import DEFAULT_WINDOW, MovingWindow
from .scenario import Scenario, resolve, scenario_hash

DISCLOSURES = (
    "finite-dimensional algebra: bilateral almost uniform, almost uniform and norm convergence "
    "coincide; truncated residuals are diagnostics, not a separate convergence mode",
    "limsup window policy: limsup-type seminorms are estimated by the max of running means "
    f"over the last {DEFAULT_WINDOW:g} fraction of the horizon",
    "the reversible/flight split is computed once on L_2 and reused for every p",
    "Hartman coefficients use c(lam) = lim (1/n) sum_k alpha_k conj(lam)^k; the spectral limit is "
    "sum over eigenvalues nu of T of c(conj nu) E(nu) x",
    "'extended:N' limits are the same average evaluated at the longer horizon N",
)


def _num(v):
    if isinstance(v, complex):
        return {"re": _num(v.real), "im": _num(v.imag)}
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if math.isnan(v) else ("inf" if math.isinf(v) else v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (list, tuple)):
        return [_num(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _num(x) for k, x in v.items()}
    return v


@dataclass
class ExperimentOutcome:
    id: str
    kind: str
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)   # weight_id -> verdict


@dataclass
class Context:
    scenario: Scenario
    algebra: Any
    operator: Any
    x: Any
    weights: dict
    checkpoints: list
    n_max: int
    seed: int | None
    epsilon: float
    mode: str
    threshold: float


def build_checkpoints(s: Scenario, n_max: int) -> list[int]:
    if s.checkpoints.policy == "explicit":
        vals = sorted(set(v for v in (s.checkpoints.values or []) if 1 <= v <= n_max))
        if not vals:
            raise ValidationError("explicit checkpoint policy needs values in [1, n_max]")
        return vals
    cps = dyadic_checkpoints(n_max, s.checkpoints.start)
    if not cps:
        raise ValidationError("no dyadic checkpoint fits below n_max")
    return cps


def _window(params: dict) -> MovingWindow:
    w = params.get("window", {})
    return MovingWindow(k_scale=w.get("k_scale", 1.0), k_power=w.get("k_power", 1.0),
                        m_scale=w.get("m_scale", 0.0), m_power=w.get("m_power", 1.0),
                        m_offset=int(w.get("m_offset", 0)))


def _stream_outcome(exp, diags_by_weight: dict, ctx: Context) -> ExperimentOutcome:
    out = ExperimentOutcome(exp.id, exp.kind)
    for wid, d in diags_by_weight.items():
        out.rows += diagnostics_rows(exp.id, wid, d)
        v = d.verdict(ctx.threshold)
        out.verdicts[wid] = v
        out.summary[wid] = {
            "verdict": v,
            "limit_source": d.limit_source,
            "final_residual_to_limit_2": _num(d.residual_to_limit_2[-1]),
            "final_trunc_residual_inf": _num(d.trunc_residual_inf[-1]),
            "trunc_tau_perp": _num(d.truncation.tau_perp) if d.truncation else None,
            "trunc_trivial": d.truncation.trivial if d.truncation else None,
        }
    return out


def run_experiment(exp, ctx: Context) -> ExperimentOutcome:
    T, x, cps = ctx.operator, ctx.x, ctx.checkpoints
    p = exp.params
    common = {"epsilon": ctx.epsilon, "mode": ctx.mode}
    if exp.kind == "weighted":
        ids = exp.weights if exp.weights is not None else list(ctx.weights)
        if not ids:
            raise ValidationError(f"experiment {exp.id!r} has no weights")
        diags = multi_weighted_stream(T, x, [ctx.weights[i] for i in ids], cps,
                                      limit=p.get("limit", "auto"), **common)
        return _stream_outcome(exp, dict(zip(ids, diags)), ctx)
    if exp.kind == "mangoldt":
        _, d = mangoldt_average_stream(T, x, cps, limit=p.get("limit", "auto"), **common)
        return _stream_outcome(exp, {"von_mangoldt": d}, ctx)
    if exp.kind == "primes":
        _, d = prime_average_stream(T, x, cps, **common)
        return _stream_outcome(exp, {"primes": d}, ctx)
    if exp.kind == "moving":
        _, d = moving_average_stream(T, x, _window(p), cps, validate=p.get("validate", True),
                                     k_threshold=p.get("k_threshold"), **common)
        return _stream_outcome(exp, {"moving": d}, ctx)
    if exp.kind == "uniform_ww":
        family = [ctx.weights[i] for i in exp.weights] if exp.weights else None
        seed = p.get("seed", ctx.seed)
        if seed is None and family is None:
            raise ValidationError(f"experiment {exp.id!r} samples random weights but has no seed")
        scan = uniform_ww_scan(T, x, float(p.get("r", 2.0)), float(p.get("b", 1.0)),
                               int(p.get("family_size", 20)), seed or 0, cps, family=family, **common)
        out = ExperimentOutcome(exp.id, exp.kind, scan_rows(exp.id, scan))
        first, last = scan.sup_trunc_inf[0], scan.sup_trunc_inf[-1]
        out.summary = {"family": scan.weights, "limit_source": scan.limit_source,
                       "sup_trunc_first": _num(first), "sup_trunc_last": _num(last),
                       "decay_factor": _num(first / last if last > 0 else math.inf)}
        return out
    if exp.kind == "return_time":
        theta = float(p.get("theta", math.sqrt(2) - 1))
        interval = tuple(p.get("interval", (0.0, 0.5)))
        omegas = p.get("omegas")
        if omegas is None:
            seed = p.get("seed", ctx.seed)
            if seed is None:
                raise ValidationError(f"experiment {exp.id!r} samples omegas but has no seed")
            samples = return_time_experiment(theta, int(p.get("samples", 3)), interval, T, x, cps,
                                             seed=seed, **common)
        else:
            samples = return_time_experiment(theta, omegas, interval, T, x, cps, **common)
        diags, info = {}, []
        for i, s in enumerate(samples):
            diags[f"omega[{i}]:weighted"] = s.weighted
            diags[f"omega[{i}]:visits"] = s.visits
            info.append({"omega": s.omega, "visit_frequency": s.visit_frequency})
        out = _stream_outcome(exp, diags, ctx)
        out.summary["samples"] = info
        return out
    if exp.kind == "jdlg":
        split = jdlg_split(T, float(p.get("unimodular_tol", DEFAULT_UNIMODULAR_TOL)))
        out = ExperimentOutcome(exp.id, exp.kind)
        out.summary = {
            "unimodular_eigenvalues": [_num(complex(l)) for l in split.eigenvalues],
            "eigenspace_dims": [len(b) for _, b in split.unimodular_eigenpairs],
            "reversible_dim": len(split.reversible_basis),
            "flight_dim": len(split.flight_basis),
            "flight_spectral_radius": _num(split.flight_spectral_radius),
            "similarity_constant": _num(flight_similarity_constant(split)),
            "normal": split.normal,
            "projection_condition": _num(split.projection_condition),
            "x_flight_norm_2": _num(float(np.linalg.norm(split.proj_flight @ x.vec()))),
        }
        return out
    if exp.kind == "validate":
        rep = validate_ds(T, int(p.get("samples", 100)), int(p.get("seed", ctx.seed or 0)),
                          float(p.get("tol", CHECK_TOL)))
        out = ExperimentOutcome(exp.id, exp.kind)
        out.summary = _validation_summary(rep)
        out.verdicts = {name: getattr(rep, name).verdict
                        for name in ("positivity", "l1_contraction", "linf_contraction")}
        return out
    if exp.kind == "stability_probe":
        ids = exp.weights if exp.weights is not None else list(ctx.weights)
        if not ids:
            raise ValidationError(f"experiment {exp.id!r} needs a nonempty weight family")
        seed = p.get("seed", ctx.seed)
        if seed is None:
            raise ValidationError(f"experiment {exp.id!r} draws a perturbation but has no seed")
        y = ctx.algebra.random_element(np.random.default_rng(seed))
        scales = [float(s) for s in p.get("scales", [1e-1, 1e-2, 1e-3])]
        pnorm = float(p.get("p", math.inf))
        rep = approximation_stability_probe(T, x, [x + s * y for s in scales],
                                            [ctx.weights[i] for i in ids], cps, p=pnorm, **common)
        out = ExperimentOutcome(exp.id, exp.kind)
        out.summary = {"scales": scales, "distances": _num(rep.distances), "residuals": _num(rep.residuals),
                       "residuals_untruncated": _num(rep.residuals_untruncated),
                       "ratios": _num(rep.ratios), "measured_constant": _num(rep.constant),
                       "seminorms_w1": _num(rep.seminorms), "p": _num(pnorm), "h": "h(s) = s"}
        return out
    raise ValidationError(f"unknown experiment kind {exp.kind!r}")


def _validation_summary(rep) -> dict:
    def verdict(v):
        return {"verdict": v.verdict, "value": _num(v.value), "tol": v.tol, "by_tag": v.by_tag}
    l2 = rep.l2_restriction
    return {
        "positivity": verdict(rep.positivity),
        "l1_contraction": verdict(rep.l1_contraction),
        "linf_contraction": verdict(rep.linf_contraction),
        "lp_bounds": {("inf" if math.isinf(k) else str(k)): _num(v) for k, v in rep.lp_bounds.items()},
        "l2_restriction": {"self_adjoint": _num(l2.self_adjoint), "positive": _num(l2.positive),
                           "normal": _num(l2.normal)},
        "stoltz": {"delta": _num(rep.stoltz["delta"]), "verdict": rep.stoltz["verdict"]},
        "proof_tags": sorted(rep.proof_tags),
        "samples": rep.samples,
        "tol": rep.tol,
    }


@dataclass
class RunResult:
    csv_text: str
    summary: dict
    outcomes: list


def prepare(scenario: Scenario, seed: int | None = None, n_max: int | None = None) -> Context:
    if seed is not None:
        scenario = scenario.model_copy(update={"seed": seed})
    alg, T, x, weights = resolve(scenario)
    n = n_max if n_max is not None else scenario.n_max
    if scenario.require_ds:
        rep = validate_ds(T, 100, scenario.seed or 0)
        failed = rep.failures()
        if failed:
            raise ValidationError(f"operator fails validate_ds: {', '.join(failed)}")
    eps = scenario.trace_budget if scenario.trace_budget is not None else DEFAULT_BUDGET_FRACTION * alg.total_trace
    if not 0 < eps < alg.total_trace:
        raise ValidationError(f"trace_budget must lie in (0, {alg.total_trace})")
    return Context(scenario, alg, T, x, weights, build_checkpoints(scenario, n), n, scenario.seed,
                   eps, scenario.truncation_mode, scenario.decay_threshold)


def run_scenario(scenario: Scenario, raw: bytes, seed: int | None = None, n_max: int | None = None,
                 threads: int = 1) -> RunResult:
    ctx = prepare(scenario, seed, n_max)
    exps = scenario.experiments
    # warm shared caches so worker threads only read them
    if any(e.kind == "primes" for e in exps):
        PRIMES.first_primes(EXTENDED_FACTOR * ctx.checkpoints[-1])
    if threads > 1 and len(exps) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(lambda e: _guarded(e, ctx), exps))
    else:
        outcomes = [_guarded(e, ctx) for e in exps]
    rows = [r for o in outcomes for r in o.rows]
    summary = {
        "schema_version": SCHEMA_VERSION,
        "header": {
            "scenario": scenario.name,
            "scenario_sha256": scenario_hash(raw),
            "library_version": __version__,
            "seed": ctx.seed,
            "n_max": ctx.n_max,
            "checkpoints": ctx.checkpoints,
            "csv_columns": list(COLUMNS),
            "algebra": [[b.dim, b.weight] for b in ctx.algebra.blocks],
            "operator": {"kind": ctx.operator.kind, "proof_tags": sorted(ctx.operator.proof_tags),
                         "disclosures": list(ctx.operator.disclosures)},
            "tolerances": {
                "structure_tol": STRUCTURE_TOL,
                "check_tol": CHECK_TOL,
                "unimodular_tol": DEFAULT_UNIMODULAR_TOL,
                "unimodular_gap_factor": GAP_FACTOR,
                "decay_threshold": ctx.threshold,
                "monotone_slack": MONOTONE_SLACK,
                "trace_budget": ctx.epsilon,
                "truncation_mode": ctx.mode,
                "limsup_window": DEFAULT_WINDOW,
                "extended_horizon_factor": EXTENDED_FACTOR,
            },
            "verdict_rule": "decayed iff final truncated residual <= decay_threshold and the last "
                            "three Cauchy residuals are nonincreasing up to monotone_slack; diverged "
                            "iff the final residual exceeds decay_threshold and the last Cauchy "
                            "residual is at least the largest over the first half of the checkpoints; "
                            "otherwise plateaued",
            "disclosures": list(DISCLOSURES),
        },
        "experiments": [{"id": o.id, "kind": o.kind, "verdicts": o.verdicts, "details": o.summary}
                        for o in outcomes],
    }
    return RunResult(rows_to_csv(rows), summary, outcomes)


def _guarded(exp, ctx: Context) -> ExperimentOutcome:
    try:
        return run_experiment(exp, ctx)
    except ValidationError:
        raise
    except Exception as exc:  # surfaced with the experiment id
        raise RuntimeError(f"experiment {exp.id!r} failed: {type(exc).__name__}: {exc}") from exc


def write_outputs(result: RunResult, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / "rows.csv", out / "summary.json"
    with open(csv_path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(result.csv_text)
    with open(json_path, "w", newline="\n", encoding="utf-8") as fh:
        json.dump(result.summary, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return csv_path, json_path


def strict_failures(result: RunResult) -> list[str]:
    bad = []
    for o in result.outcomes:
        for wid, v in o.verdicts.items():
            if v not in ("decayed", "pass", "sampled"):
                bad.append(f"{o.id}/{wid}: {v}")
    return bad


STRUCTURE = {
    "conjugation": "conjugation x -> u* x u (two matrix products per application)",
    "convolution": "convolution sum_n mu(n) Phi^n of a trace-preserving automorphism",
    "expectation_product": "product of trace-preserving conditional expectations",
    "nc_torus_heat": "Fourier multiplier on the clock-shift basis u^m v^n",
    "matrix": "generic HS matrix (no structural guarantees)",
}


def describe_plan(scenario: Scenario) -> str:
    ctx = prepare(scenario)
    T, alg = ctx.operator, ctx.algebra
    lines = [
        f"scenario: {scenario.name}",
        f"algebra: blocks {[(b.dim, b.weight) for b in alg.blocks]}, tau(1) = {alg.total_trace:g}, "
        f"HS dimension {alg.hs_dim}",
        f"operator: {T.kind}; proof tags: {', '.join(sorted(T.proof_tags)) or 'none'}",
        f"  structure: {STRUCTURE.get(T.kind, T.kind)}",
    ]
    for d in T.disclosures:
        lines.append(f"  disclosure: {d}")
    lines.append("weights:")
    for wid, w in ctx.weights.items():
        lines.append(f"  {wid}: {w.declared_class}")
    lines.append(f"checkpoints: {len(ctx.checkpoints)} up to n = {ctx.checkpoints[-1]}")
    lines.append("experiments:")
    total = 0
    for exp in scenario.experiments:
        work, note = _work(exp, ctx)
        total += work
        lines.append(f"  {exp.id} ({exp.kind}): ~{work} T-applications{note}")
    lines.append(f"estimated total: ~{total} T-applications (plus extended-horizon limit passes)")
    return "\n".join(lines)


def _work(exp, ctx: Context) -> tuple[int, str]:
    n = ctx.checkpoints[-1]
    if exp.kind == "weighted":
        k = len(exp.weights) if exp.weights is not None else len(ctx.weights)
        return n, f" (one shared orbit for {k} weights; {k * n} without sharing)"
    if exp.kind == "mangoldt":
        return n, ""
    if exp.kind == "primes":
        return int(PRIMES.nth_prime(n - 1)) + 1, " (orbit runs through the prime gaps)"
    if exp.kind == "moving":
        w = _window(exp.params)
        return max(sum(w.pair(c)) for c in ctx.checkpoints), ""
    if exp.kind == "uniform_ww":
        size = len(exp.weights) if exp.weights else int(exp.params.get("family_size", 20))
        return n, f" (one shared orbit for {size} weights)"
    if exp.kind == "return_time":
        samples = len(exp.params.get("omegas") or []) or int(exp.params.get("samples", 3))
        return samples * 2 * n, " (weighted + visit-time subsequence per sample)"
    if exp.kind == "stability_probe":
        return n * (1 + len(exp.params.get("scales", [1e-1, 1e-2, 1e-3]))), ""
    return 0, ""
