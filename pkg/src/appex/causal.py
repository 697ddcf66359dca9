"""Causal graphs read off (A, H) and the metrics used to score estimates."""

from dataclasses import dataclass
import json

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class CausalGraph:
    """Signed directed edges ``(i, j, sign)`` meaning i -> j, and confounder pairs.

    Confounder pairs are stored as ``(i, j)`` with ``i < j``.
    """

    d: int
    edges: frozenset = frozenset()
    confounders: frozenset = frozenset()

    def __post_init__(self):
        edges = frozenset((int(i), int(j), int(s)) for i, j, s in self.edges)
        confs = frozenset(tuple(sorted((int(i), int(j)))) for i, j in self.confounders)
        for i, j, s in edges:
            if not (0 <= i < self.d and 0 <= j < self.d) or s not in (-1, 1):
                raise ValueError(f"invalid edge {(i, j, s)} for d={self.d}")
        if len({(i, j) for i, j, _ in edges}) != len(edges):
            raise ValueError("an edge cannot carry both signs")
        for i, j in confs:
            if i == j or not (0 <= i < self.d and 0 <= j < self.d):
                raise ValueError(f"invalid confounder pair {(i, j)} for d={self.d}")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "confounders", confs)

    def sign_matrix(self):
        """``S[j, i]`` = sign of edge i -> j, 0 when absent (drift layout)."""
        S = np.zeros((self.d, self.d), dtype=int)
        for i, j, s in self.edges:
            S[j, i] = s
        return S

    def to_dict(self):
        return {
            "d": self.d,
            "edges": [
                {"from": i, "to": j, "sign": "+" if s > 0 else "-"}
                for i, j, s in sorted(self.edges)
            ],
            "confounders": [list(p) for p in sorted(self.confounders)],
        }

    @classmethod
    def from_dict(cls, obj):
        edges = [
            (e["from"], e["to"], 1 if e["sign"] in ("+", 1, "1") else -1)
            for e in obj.get("edges", [])
        ]
        return cls(int(obj["d"]), frozenset(edges), frozenset(map(tuple, obj.get("confounders", []))))

    def to_json(self):
        return json.dumps(self.to_dict())

    def to_dot(self, name="G"):
        """Graphviz text; confounders become dashed edges out of ``U_i_j`` nodes."""
        lines = [f"digraph {name} {{"]
        for k in range(self.d):
            lines.append(f'  X{k} [label="X{k}"];')
        for i, j, s in sorted(self.edges):
            color = "darkgreen" if s > 0 else "red"
            label = "+" if s > 0 else "-"
            lines.append(f'  X{i} -> X{j} [color={color}, label="{label}"];')
        for i, j in sorted(self.confounders):
            u = f"U_{i}_{j}"
            lines.append(f'  {u} [shape=circle, style=dashed, label="U{i},{j}"];')
            lines.append(f"  {u} -> X{i} [style=dashed];")
            lines.append(f"  {u} -> X{j} [style=dashed];")
        lines.append("}")
        return "\n".join(lines) + "\n"


def extract_graph(A, H, eps=0.5):
    """Threshold drift and diffusion into a causal graph.

    Edge i -> j with sign + if ``A[j, i] > eps``, sign - if ``A[j, i] < -eps``.
    Confounder {i, j} (i != j) if ``|H[i, j]| > eps``. The diagonal of ``A``
    yields self-loop edges; the diagonal of ``H`` is ignored.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if A.shape != H.shape or A.shape[0] != A.shape[1]:
        raise DimensionError(f"A {A.shape} and H {H.shape} must be square and equal")
    d = A.shape[0]
    edges = set()
    for j, i in zip(*np.nonzero(A > eps)):
        edges.add((i, j, 1))
    for j, i in zip(*np.nonzero(A < -eps)):
        edges.add((i, j, -1))
    Hs = 0.5 * (np.abs(H) + np.abs(H.T))
    confs = {(i, j) for i, j in zip(*np.nonzero(Hs > eps)) if i < j}
    return CausalGraph(d, frozenset(edges), frozenset(confs))


def _check_same_d(g1, g2):
    if g1.d != g2.d:
        raise DimensionError(f"graphs have different sizes ({g1.d} vs {g2.d})")


def shd_drift(g_true, g_est):
    """Number of ordered pairs i != j whose edge class (+, -, absent) differs."""
    _check_same_d(g_true, g_est)
    diff = g_true.sign_matrix() != g_est.sign_matrix()
    np.fill_diagonal(diff, False)
    return int(diff.sum())


def shd_confounders(g_true, g_est):
    """Number of unordered pairs that are a confounder in exactly one graph."""
    _check_same_d(g_true, g_est)
    return len(g_true.confounders ^ g_est.confounders)


def mae(est, truth):
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise DimensionError(f"shapes differ: {est.shape} vs {truth.shape}")
    return float(np.mean(np.abs(est - truth)))


def pearson_corr(est, truth):
    """Pearson correlation of the flattened entries.

    Raises
    ------
    ValueError
        If either argument is constant, where the coefficient is undefined.
    """
    est = np.asarray(est, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if est.shape != truth.shape:
        raise DimensionError(f"shapes differ: {est.shape} vs {truth.shape}")
    if np.ptp(truth) == 0:
        raise ValueError("correlation undefined: truth is constant")
    if np.ptp(est) == 0:
        raise ValueError("correlation undefined: estimate is constant")
    e = est - est.mean()
    t = truth - truth.mean()
    return float(np.dot(e, t) / np.sqrt(np.dot(e, e) * np.dot(t, t)))
