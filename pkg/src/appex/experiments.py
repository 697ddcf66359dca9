"""Replicated benchmark runs: simulate, estimate, score, aggregate.

An :class:`ExperimentSpec` names a family of SDEs (a fixed example system or a
random generator) and the simulation and estimation settings. Each replicate
draws its own parameters, data and initial diffusion guess from a seed derived
from ``(spec.seed, replicate index)``, so serial and parallel execution give
identical bundles.
"""

from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import asdict, dataclass, field, fields
import json
import logging
from pathlib import Path
import time

import numpy as np

from .causal import extract_graph, mae, pearson_corr, shd_confounders, shd_drift
from .errors import AppexError
from .loop import AppexConfig, run_appex
from .sde import (
    MAX_REJECTIONS,
    InitialDistribution,
    SdeParams,
    gen_default_initial,
    gen_random_sde,
)
from .simulate import euler_maruyama, subsample_marginals

log = logging.getLogger(__name__)

RANDOM_KINDS = {
    "random_dense": "dense",
    "causal_sufficient": "causal_sufficient",
    "latent_confounded": "latent_confounded",
}

# Example pairs that share marginals from a rotation-invariant start, each
# with an initial law that breaks the invariance.
_EX3_G = [[1.0, 2.0], [-1.0, -2.0]]
EXAMPLES = {
    "example1a": ([[-1.0]], [[1.0]], [[1.0]]),
    "example1b": ([[-10.0]], [[np.sqrt(10.0)]], [[1.0]]),
    "example2a": ([[0.0, 0.0], [0.0, 0.0]], np.eye(2).tolist(), [[2.0, 0.0], [2.0, 0.1]]),
    "example2b": ([[0.0, 1.0], [-1.0, 0.0]], np.eye(2).tolist(), [[2.0, 0.0], [2.0, 0.1]]),
    "example3a": ([[1.0, 2.0], [1.0, 0.0]], _EX3_G, [[1.0, 0.0], [0.0, 1.0]]),
    "example3b": ([[1 / 3, 4 / 3], [2 / 3, -1 / 3]], _EX3_G, [[1.0, 0.0], [0.0, 1.0]]),
}
KINDS = tuple(EXAMPLES) + tuple(RANDOM_KINDS)

METRICS = ("mae_A", "mae_H", "corr_A", "corr_H", "shd_drift", "shd_conf")
CURVE_METRICS = ("mae_A", "mae_H", "corr_A", "corr_H")


@dataclass
class ExperimentSpec:
    """Settings for one replicated experiment.

    ``appex`` holds :class:`AppexConfig` overrides. When it has no
    ``sigma0_sq`` the initial diffusion scale is drawn per replicate as
    ``trace(H) 10^U(-1, 1) / d``.
    """

    name: str
    kind: str
    d: int | None = None
    n_replicates: int = 10
    M: int = 500
    dt_em: float = 0.01
    n_steps: int = 100
    dt_obs: float = 0.05
    n_marginals: int = 20
    appex: dict = field(default_factory=dict)
    edge_prob: float = 0.25
    eps: float = 0.5
    seed: int = 0
    max_rejections: int = MAX_REJECTIONS

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in EXAMPLES:
            d = len(EXAMPLES[self.kind][0])
            if self.d is not None and self.d != d:
                raise ValueError(f"{self.kind} has d = {d}")
            self.d = d
        elif self.d is None:
            raise ValueError("d is required for random kinds")
        for name in ("d", "n_replicates", "M", "n_steps", "n_marginals", "max_rejections"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if not (self.dt_em > 0 and self.dt_obs > 0 and self.eps > 0):
            raise ValueError("dt_em, dt_obs and eps must be positive")
        ratio = self.dt_obs / self.dt_em
        stride = round(ratio)
        if stride < 1 or abs(ratio - stride) > 1e-9 * ratio:
            raise ValueError("dt_obs must be an integer multiple of dt_em")
        if (self.n_marginals - 1) * stride > self.n_steps:
            raise ValueError("n_marginals snapshots do not fit in n_steps")
        self.appex = dict(self.appex)
        self.appex_config(1.0)  # validate overrides early

    def appex_config(self, sigma0_sq):
        opts = {"sigma0_sq": sigma0_sq, **self.appex}
        return AppexConfig(**opts)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown spec keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def replicate_seeds(seed, index):
    """Independent integer seeds for one replicate's random stages."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(index,))
    keys = ("params", "initial", "paths", "shuffle", "sigma", "appex")
    return dict(zip(keys, (int(s) for s in ss.generate_state(len(keys)))))


def draw_system(spec, seeds):
    """Ground-truth parameters and initial law for one replicate."""
    if spec.kind in EXAMPLES:
        A, G, support = EXAMPLES[spec.kind]
        return SdeParams.from_factor(np.array(A), np.array(G)), InitialDistribution(np.array(support))
    params, _ = gen_random_sde(
        spec.d,
        RANDOM_KINDS[spec.kind],
        edge_prob=spec.edge_prob,
        seed=seeds["params"],
        max_rejections=spec.max_rejections,
    )
    return params, gen_default_initial(spec.d, seeds["initial"])


def score(A_hat, H_hat, params, eps):
    """All metrics of one estimate; correlations are NaN when undefined."""
    truth = extract_graph(params.A, params.H, eps)
    est = extract_graph(A_hat, H_hat, eps)
    out = {
        "mae_A": mae(A_hat, params.A),
        "mae_H": mae(H_hat, params.H),
        "shd_drift": float(shd_drift(truth, est)),
        "shd_conf": float(shd_confounders(truth, est)),
    }
    for key, est_m, true_m in (("corr_A", A_hat, params.A), ("corr_H", H_hat, params.H)):
        try:
            out[key] = pearson_corr(est_m, true_m)
        except ValueError:
            out[key] = float("nan")
    return out


def run_replicate(spec, index):
    """Simulate, estimate and score replicate ``index``; failures are recorded, not raised."""
    seeds = replicate_seeds(spec.seed, index)
    rec = {"index": index, "seeds": seeds, "status": "ok", "error": None}
    start = time.perf_counter()
    try:
        params, p0 = draw_system(spec, seeds)
        rec["A_true"] = params.A.tolist()
        rec["H_true"] = params.H.tolist()
        sigma0_sq = spec.appex.get("sigma0_sq")
        if sigma0_sq is None:
            u = np.random.default_rng(seeds["sigma"]).uniform(-1.0, 1.0)
            sigma0_sq = float(np.trace(params.H) * 10.0**u / params.d)
        rec["sigma0_sq"] = sigma0_sq
        traj = euler_maruyama(params, p0, spec.dt_em, spec.n_steps, spec.M, seed=seeds["paths"])
        data = subsample_marginals(traj, spec.dt_obs, spec.n_marginals, shuffle_seed=seeds["shuffle"])
        config = spec.appex_config(sigma0_sq)
        config.seed = seeds["appex"]
        result = run_appex(data, config)
    except (AppexError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        rec["status"] = "failed"
        rec["error"] = f"{type(exc).__name__}: {exc}"
        rec["wall_time"] = time.perf_counter() - start
        log.warning("replicate %d of %s failed: %s", index, spec.name, rec["error"])
        return rec
    rec["A_hat"] = result.A_hat.tolist()
    rec["H_hat"] = result.H_hat.tolist()
    rec["history"] = [
        {
            "iteration": h.iteration,
            "A_hat": h.A_hat.tolist(),
            "H_hat": h.H_hat.tolist(),
            "nll": h.nll,
            "kl_proxy": h.kl_proxy,
            "metrics": score(h.A_hat, h.H_hat, params, spec.eps),
        }
        for h in result.history
    ]
    rec["metrics"] = rec["history"][-1]["metrics"]
    rec["wot_metrics"] = rec["history"][0]["metrics"]
    rec["wall_time"] = time.perf_counter() - start
    return rec


def _mean_se(values):
    x = np.asarray([v for v in values if np.isfinite(v)], dtype=float)
    n = x.size
    if n == 0:
        return {"mean": float("nan"), "se": float("nan"), "n": 0}
    se = float(x.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return {"mean": float(x.mean()), "se": se, "n": int(n)}


def _curves(ok, n_iters):
    # Early-stopped runs keep their last estimate for the remaining iterations.
    rows = []
    for k in range(n_iters):
        row = {"iteration": k + 1}
        for m in CURVE_METRICS:
            vals = [r["history"][min(k, len(r["history"]) - 1)]["metrics"][m] for r in ok]
            row[m] = _mean_se(vals)["mean"]
        rows.append(row)
    return rows


@dataclass
class ResultBundle:
    spec: dict
    replicates: list
    aggregates: dict
    curves: list
    n_failed: int
    se_warning: bool

    def to_dict(self):
        return asdict(self)

    def write(self, out_dir):
        """Write ``<name>.json`` and ``<name>_curves.csv`` into ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        name = self.spec["name"]
        bundle_path = out / f"{name}.json"
        bundle_path.write_text(json.dumps(self.to_dict(), indent=1, allow_nan=True) + "\n")
        curve_path = out / f"{name}_curves.csv"
        with open(curve_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", *CURVE_METRICS])
            for row in self.curves:
                w.writerow([row["iteration"], *(repr(row[m]) for m in CURVE_METRICS)])
        return bundle_path, curve_path


def run_experiment(spec, workers=1):
    """Run all replicates of ``spec`` and aggregate them.

    Replicates run in a process pool when ``workers > 1``. Failed replicates
    are kept in the bundle and excluded from the aggregates.
    """
    indices = range(spec.n_replicates)
    if workers > 1 and spec.n_replicates > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(run_replicate, [spec] * spec.n_replicates, indices))
    else:
        reps = [run_replicate(spec, i) for i in indices]
    ok = [r for r in reps if r["status"] == "ok"]
    aggregates = {
        "appex": {m: _mean_se([r["metrics"][m] for r in ok]) for m in METRICS},
        "wot": {m: _mean_se([r["wot_metrics"][m] for r in ok]) for m in METRICS},
    }
    n_iters = spec.appex_config(1.0).n_iters
    se_warning = len(ok) < 2
    if se_warning:
        log.warning("%s: fewer than two successful replicates; standard errors are 0", spec.name)
    return ResultBundle(
        spec.to_dict(),
        reps,
        aggregates,
        _curves(ok, n_iters) if ok else [],
        len(reps) - len(ok),
        se_warning,
    )
