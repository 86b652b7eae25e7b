"""Config-driven experiments: generate, recover, optionally refine, score, persist.

One JSON file per seed, one summary CSV row per seed, and the per-candidate
statistics dump are written under ``output_dir/<config hash>/``. Every file
is reproducible from the config and the seed; wall-clock timings live in
their own JSON key so the rest compares byte for byte.
"""

import csv
import hashlib
import io
import json
import math
import os
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import (NoiseSpec, ProblemParams, RegressorSet, StructuralError, empirical_observation_probability,
                    generate, k_tight_regressors, orthogonal_regressors, random_valid_regressors,
                    validate_regressors)
from .moments import event_bounds, event_probability_analytic, save_stats_csv
from .oracles import matched_error
from .recovery import (RecoveryConfig, RecoveryError, TheoryConstants, derive_params, net_size_for,
                       recover)
from .refine import refine

SCHEMA_VERSION = 1
GENERATORS = ("orthogonal", "k_tight_construction", "random_valid")
OVERRIDE_KEYS = ("t", "gamma", "delta", "net_resolution")
SUMMARY_COLUMNS = ("config_hash", "seed", "k", "n", "m", "mode", "max_error", "success",
                   "wall_ms_generate", "wall_ms_subspace", "wall_ms_net", "wall_ms_statistics",
                   "wall_ms_filter", "wall_ms_extraction", "wall_ms_refine")


@dataclass
class ExperimentConfig:
    problem: ProblemParams
    regressors: dict  # {"vectors": [[...]]} or {"generator": name, ...generator options}
    noise: dict
    m: int
    mode: str = "practical"
    practical_overrides: dict = None
    seeds: list = field(default_factory=lambda: [0])
    refine: bool = False
    refine_iters: int = 50
    output_dir: str = None
    count_floor: int = 50
    max_net_points: int = 10**7
    constants: dict = None
    require_valid: bool = True

    def __post_init__(self):
        if isinstance(self.problem, dict):
            self.problem = ProblemParams(**self.problem)
        if self.mode == "practical":
            over = self.practical_overrides or {}
            missing = [k for k in OVERRIDE_KEYS if over.get(k) is None]
            if missing:
                raise StructuralError(f"practical mode needs overrides {missing}")
        elif self.mode == "theory":
            if self.practical_overrides:
                raise StructuralError("theory mode forbids practical overrides")
        else:
            raise StructuralError(f"unknown mode {self.mode!r}")
        if self.m < 1:
            raise StructuralError("m must be >= 1")
        if "vectors" not in self.regressors and self.regressors.get("generator") not in GENERATORS:
            raise StructuralError(f"regressors need explicit vectors or a generator in {GENERATORS}")

    def to_dict(self):
        d = asdict(self)
        d["problem"] = asdict(self.problem)
        d["schema_version"] = SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        version = d.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise StructuralError(f"unsupported config schema version {version}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        _atomic_write(path, json.dumps(self.to_dict(), indent=2, sort_keys=True))

    def config_hash(self):
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    def build_regressors(self):
        p, spec = self.problem, self.regressors
        if "vectors" in spec:
            ws = RegressorSet(np.array(spec["vectors"], dtype=float), p.delta, p.bound_b)
        elif spec["generator"] == "orthogonal":
            ws = orthogonal_regressors(p.n, p.k, spec.get("norm", (p.delta + p.bound_b) / 2), p.delta, p.bound_b)
        elif spec["generator"] == "k_tight_construction":
            ws = k_tight_regressors(p.k, p.bound_b, p.delta, p.n)
        else:
            rng = np.random.default_rng(spec.get("seed", 0))
            ws = random_valid_regressors(p.n, p.k, p.delta, p.bound_b, rng, spec.get("mixing", 0.3))
        if ws.k != p.k or ws.n != p.n:
            raise StructuralError(f"regressors are {ws.k}x{ws.n}, problem says {p.k}x{p.n}")
        if self.require_valid:
            bad = validate_regressors(ws)
            if bad:
                raise StructuralError("invalid regressors: " + "; ".join(v.message for v in bad))
        return ws

    def build_noise(self):
        return NoiseSpec.from_dict({**self.noise, "k": self.problem.k}, bound_b=self.problem.bound_b)

    def recovery_config(self):
        over = self.practical_overrides or {}
        consts = TheoryConstants(**self.constants) if self.constants else TheoryConstants()
        return RecoveryConfig(mode=self.mode, constants=consts, count_floor=self.count_floor,
                              max_net_points=self.max_net_points,
                              **{k: over.get(k) for k in OVERRIDE_KEYS}, epsilon=over.get("epsilon"))


@dataclass
class SeedResult:
    seed: int
    max_error: float
    success: bool
    report: dict = None
    permutation: list = None
    per_pair_errors: list = None
    refined_max_error: float = None
    refine_converged: bool = None
    error_stage: str = None
    error_message: str = None
    timings_ms: dict = field(default_factory=dict)

    def to_json(self):
        d = asdict(self)
        timings = d.pop("timings_ms")
        return json.dumps({"result": _jsonable(d), "timings_ms": timings}, sort_keys=True, indent=1)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    seeds: list
    config_hash: str

    @property
    def success_rate(self):
        return sum(r.success for r in self.seeds) / len(self.seeds) if self.seeds else math.nan

    def summary_rows(self):
        p = self.config.problem
        rows = []
        for r in self.seeds:
            t = r.timings_ms
            rows.append([self.config_hash, r.seed, p.k, p.n, self.config.m, self.config.mode,
                         repr(r.max_error), int(r.success)]
                        + [f"{t.get(s, 0.0):.3f}" for s in
                           ("generate", "subspace", "net", "statistics", "filter", "extraction", "refine")])
        return rows


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def run_seed(config, ws, noise, seed, out=None):
    p = config.problem
    timings = {}
    start = time.perf_counter()
    batch = generate(ws, noise, config.m, seed)
    timings["generate"] = (time.perf_counter() - start) * 1e3
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = recover(batch, p, config=config.recovery_config())
    except RecoveryError as exc:
        return SeedResult(seed, math.inf, False, error_stage=exc.stage, error_message=str(exc.cause),
                          timings_ms=timings)
    timings.update(rep.timings_ms)
    res = SeedResult(seed, math.inf, False, rep.to_dict(), timings_ms=timings)
    if rep.success:
        me = matched_error(rep.estimates, ws)
        res.max_error, res.permutation = me.max_error, list(me.permutation)
        res.per_pair_errors = me.per_pair_errors.tolist()
        res.success = me.max_error <= p.epsilon
        if config.refine:
            start = time.perf_counter()
            state = refine(batch, rep.estimates, max_iters=config.refine_iters, force=True)
            timings["refine"] = (time.perf_counter() - start) * 1e3
            res.refined_max_error = matched_error(state.estimates, ws).max_error
            res.refine_converged = state.converged
    else:
        res.error_stage = "extraction"
        res.error_message = f"extracted {rep.estimates.shape[0]} of {p.k} regressors"
    if out is not None:
        save_stats_csv(rep.stats, out / f"seed_{seed}_stats.csv")
    return res


def run_experiment(config, write=True):
    """Run every seed; a failing seed is recorded and never stops the others."""
    ws = config.build_regressors()
    noise = config.build_noise()
    h = config.config_hash()
    out = Path(config.output_dir) / h if (write and config.output_dir) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        config.save(out / "config.json")
    results = []
    for seed in config.seeds:
        res = run_seed(config, ws, noise, int(seed), out)
        results.append(res)
        if out is not None:
            _atomic_write(out / f"seed_{seed}.json", res.to_json())
    result = ExperimentResult(config, results, h)
    if out is not None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        writer.writerows(result.summary_rows())
        _atomic_write(out / "summary.csv", buf.getvalue())
    return result


def k_tight_experiment(bound_b, delta, k_list, m, seed=0, noise=None, n_threads=None):
    """Rows ``(k, frequency, standard error)`` for the index-0 regressor of the tight construction."""
    ks = list(k_list)
    if ks != sorted(ks):
        raise StructuralError("k_list must be ascending")
    rows = []
    for k in ks:
        ws = k_tight_regressors(k, bound_b, delta)
        nz = NoiseSpec.zero(k) if noise is None else noise(k)
        freq = empirical_observation_probability(ws, nz, m, seed, 0, n_threads=n_threads)
        rows.append((k, freq, math.sqrt(freq * (1 - freq) / m)))
    return rows


def write_k_tight_csv(rows, path):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("k", "frequency", "std_error"))
    writer.writerows([(k, repr(f), repr(se)) for k, f, se in rows])
    _atomic_write(path, buf.getvalue())


FEASIBLE_LOG10 = 12.0


def param_report(p, constants=None):
    """Theory-mode derivation as a ``(text table, dict)`` pair; infeasible magnitudes are flagged."""
    dp = derive_params(p, constants)
    lo, hi = event_bounds(dp.t, p.k, dp.delta)
    prob = event_probability_analytic(lo, hi)
    net = net_size_for(p, dp)
    values = {
        "t": dp.t, "gamma": dp.gamma, "delta": dp.delta, "net_resolution": dp.net_resolution,
        "log10_m_est": dp.log10_m_est, "log10_m_moments": dp.log10_m_moments,
        "log10_m_cov": dp.log10_m_cov, "net_size_estimate": net, "event_probability": prob,
    }
    flags = {
        "log10_m_est": dp.log10_m_est > FEASIBLE_LOG10,
        "log10_m_moments": dp.log10_m_moments > FEASIBLE_LOG10,
        "log10_m_cov": dp.log10_m_cov > FEASIBLE_LOG10,
        "net_size_estimate": not net <= 10**FEASIBLE_LOG10,
    }
    lines = [f"{'quantity':<20} {'value':>14}  note"]
    for key, val in values.items():
        lines.append(f"{key:<20} {val:>14.6g}  {'INFEASIBLE' if flags.get(key) else ''}".rstrip())
    return "\n".join(lines), {"values": values, "infeasible": flags}
