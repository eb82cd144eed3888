"""Desk-scale experiment runners and their flat result reports.

Each runner draws fresh data per trial from a counter-based child stream of
the master seed, so trials are independent of scheduling and can be run on
a thread pool. Records are collected and sorted before they are written.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import sinkhorn
from .baselines import herding, random_coreset
from .co2 import (BASELINE, TRIAL, Co2Config, compress, kernel_selection, refine_weights,
                  rng_for, seed_stream)
from .data import PointCloud, uniform
from .kernels import GaussianKernel, gram, mmd_sq
from .recombination import Coreset

DATA = 4

MIXTURE_MEANS = np.array([[3, 3], [3, -3], [-3, 3], [-3, -3], [0, 6], [0, -6], [6, 0], [-6, 0]],
                         dtype=np.float64)

EXPERIMENTS = ("mixture", "recovery", "quadapprox", "baselines")
METHODS = ("co2", "co2-refined", "herding", "random")


def trial_seed(seed: int, trial: int) -> int:
    return int(seed_stream(seed, TRIAL, trial).generate_state(1)[0])


def sample_mixture(n: int, rng: np.random.Generator) -> np.ndarray:
    """Equal-weight mixture of unit-covariance Gaussians at MIXTURE_MEANS."""
    comp = rng.integers(0, len(MIXTURE_MEANS), size=n)
    return MIXTURE_MEANS[comp] + rng.standard_normal((n, 2))


def sample_normal(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((n, d))


def sample_cube(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random((n, d))


def worker_count(tasks: int) -> int:
    cap = os.environ.get("CO2_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, tasks))


@dataclass
class TrialRecord:
    experiment: str
    method: str
    m: int
    trial: int
    rep: int
    seed: int
    size: int
    divergence: float
    quad: float
    rel_error: float | None
    mmd_sq: float | None
    wall_time: float


@dataclass
class RunReport:
    experiment: str
    config: dict
    records: list = field(default_factory=list)

    def summary(self) -> list[dict]:
        """Divergence quantiles per (method, m)."""
        groups: dict = {}
        for r in self.records:
            groups.setdefault((r.method, r.m), []).append(r)
        out = []
        for (method, m), recs in sorted(groups.items()):
            div = np.array([r.divergence for r in recs])
            row = {"method": method, "m": m, "count": len(recs),
                   "divergence_q25": float(np.quantile(div, 0.25)),
                   "divergence_median": float(np.median(div)),
                   "divergence_q75": float(np.quantile(div, 0.75))}
            rel = [r.rel_error for r in recs if r.rel_error is not None]
            if rel:
                row["rel_error_median"] = float(np.median(rel))
            out.append(row)
        return out

    def to_json(self, timestamp: bool = True) -> str:
        doc = {"version": 1, "experiment": self.experiment, "config": self.config,
               "records": [asdict(r) for r in self.records], "summary": self.summary()}
        if timestamp:
            doc["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        return json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = list(TrialRecord.__dataclass_fields__)
        writer = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
        writer.writeheader()
        for r in self.records:
            writer.writerow(asdict(r))
        return buf.getvalue()


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, (tuple, set)):
        return list(x)
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


class _Trial:
    """Shared per-trial state: data, quadratic form and the data's OT value."""

    def __init__(self, X, eps, seed, m_max, tol):
        self.data = uniform(PointCloud(X))
        self.eps = eps
        self.seed = seed
        self.tol = tol
        self.form = kernel_selection(self.data, self._config(m_max))
        self.plan = self.form.plan
        self.ot_data = self.plan.solution.ot_value
        self.gram = gram(GaussianKernel(eps), self.data.cloud)

    def _config(self, m):
        return Co2Config(epsilon=self.eps, m=m, seed=self.seed, tol=self.tol)

    def divergence(self, cs: Coreset) -> float:
        return sinkhorn.divergence(self.data, cs.distribution(), self.eps, tol=self.tol,
                                   ot_mu_mu=self.ot_data)

    def co2(self, m: int) -> Coreset:
        # the plan is shared, the sketch is redrawn at the width for this m
        cfg = self._config(m)
        return compress(self.data, cfg, form=kernel_selection(self.data, cfg, plan=self.plan))

    def co2_refined(self, m: int) -> Coreset:
        return refine_weights(self.co2(m), self.form)

    def random(self, m: int, rep: int = 0) -> Coreset:
        rng = rng_for(self.seed, BASELINE, m, rep)
        return refine_weights(random_coreset(self.data, m, rng), self.form)

    def herding(self, m: int) -> Coreset:
        return refine_weights(herding(self.data, m, self.form), self.form)

    def record(self, experiment, method, m, trial, cs, t0, rep=0):
        d = cs.dense_weights() - self.data.weights
        div = self.divergence(cs)
        return TrialRecord(experiment=experiment, method=method, m=m, trial=trial, rep=rep,
                           seed=self.seed, size=cs.size, divergence=div, quad=self.form(d),
                           rel_error=None, mmd_sq=mmd_sq(self.gram, self.data, cs.distribution()),
                           wall_time=time.perf_counter() - t0)


def _run(experiment, trials, seed, fn) -> list:
    seeds = [trial_seed(seed, t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=worker_count(trials)) as pool:
        chunks = list(pool.map(lambda t: fn(t, seeds[t]), range(trials)))
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=lambda r: (r.method, r.m, r.trial, r.rep))
    return records


def _methods_run(experiment, sampler, eps, ms, methods, trials, seed, tol, random_reps=1,
                 with_rel_error=False):
    m_top = max(ms)
    bad = set(methods) - set(METHODS)
    if bad:
        raise ValueError(f"unknown methods: {', '.join(sorted(bad))}")

    def one(t, s):
        X = sampler(rng_for(s, DATA))
        tr = _Trial(X, eps, s, m_top, tol)
        out = []
        for m in ms:
            for method in methods:
                reps = random_reps if method == "random" else 1
                for rep in range(reps):
                    t0 = time.perf_counter()
                    if method == "co2":
                        cs = tr.co2(m)
                    elif method == "co2-refined":
                        cs = tr.co2_refined(m)
                    elif method == "random":
                        cs = tr.random(m, rep)
                    else:
                        cs = tr.herding(m)
                    rec = tr.record(experiment, method, m, t, cs, t0, rep=rep)
                    if with_rel_error and method == "co2":
                        rec.rel_error = (abs(rec.divergence - rec.quad) / rec.divergence
                                         if rec.divergence >= 1e-12 else float("inf"))
                    out.append(rec)
        return out

    return _run(experiment, trials, seed, one)


def run_mixture(n=2000, eps=0.75, m=16, trials=8, seed=0, random_reps=0,
                methods=("co2", "co2-refined", "random"), tol=sinkhorn.DEFAULT_TOL):
    """Compress draws of the 8-component 2D mixture; optionally score random subsets too."""
    if not random_reps:
        methods = tuple(x for x in methods if x != "random")
    config = dict(n=n, epsilon=eps, m=m, trials=trials, seed=seed, random_reps=random_reps,
                  methods=list(methods))
    records = _methods_run("mixture", lambda rng: sample_mixture(n, rng), eps, (m,), methods,
                           trials, seed, tol, random_reps=random_reps)
    return RunReport("mixture", config, records)


def run_recovery(d=2, n=2000, ms=(8, 16, 32, 64), trials=10, seed=0, eps=None, random_reps=1,
                 methods=("co2", "co2-refined", "random"), tol=sinkhorn.DEFAULT_TOL,
                 with_rel_error=False):
    """Divergence of CO2 and random coresets on standard normal data, eps = 2d by default."""
    eps = 2.0 * d if eps is None else eps
    config = dict(d=d, n=n, epsilon=eps, ms=list(ms), trials=trials, seed=seed,
                  random_reps=random_reps, methods=list(methods))
    records = _methods_run("recovery", lambda rng: sample_normal(n, d, rng), eps, tuple(ms),
                           tuple(methods), trials, seed, tol, random_reps=random_reps,
                           with_rel_error=with_rel_error)
    return RunReport("recovery", config, records)


def run_quadapprox(d=10, n=2000, ms=(32, 64, 128), trials=20, seed=0, eps=None,
                   tol=sinkhorn.DEFAULT_TOL):
    """Relative error of the fast quadratic form against the divergence of CO2 coresets."""
    eps = 2.0 * d if eps is None else eps
    config = dict(d=d, n=n, epsilon=eps, ms=list(ms), trials=trials, seed=seed)
    records = _methods_run("quadapprox", lambda rng: sample_normal(n, d, rng), eps, tuple(ms),
                           ("co2",), trials, seed, tol, with_rel_error=True)
    return RunReport("quadapprox", config, records)


def run_baselines(d=10, n=2000, ms=(16, 32, 64, 128), trials=10, seed=0, eps=20.0,
                  methods=("co2", "co2-refined", "herding", "random"), tol=sinkhorn.DEFAULT_TOL):
    """CO2 against herding and random subsets on uniform data in the unit cube."""
    config = dict(d=d, n=n, epsilon=eps, ms=list(ms), trials=trials, seed=seed,
                  methods=list(methods))
    records = _methods_run("baselines", lambda rng: sample_cube(n, d, rng), eps, tuple(ms),
                           tuple(methods), trials, seed, tol)
    return RunReport("baselines", config, records)
