"""Template evaluation: centeredness, topology, recall capacity and t-tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import dataio
from .errors import ConnectivityError, DegenerateGraphError, DegenerateTestError, DimensionError, EvaluationError, ProtocolError
from .graphdata import MultiViewNetwork
from .reservoir import EsnConfig, recall_protocol

TOPOLOGY_METRICS = ("node_strength", "laplacian_centrality", "information_centrality")


def centeredness(cbt, test_subjects) -> float:
    """Mean Frobenius distance between the template and every test view."""
    c = np.asarray(cbt, dtype=np.float64)
    if len(test_subjects) == 0:
        raise EvaluationError("empty test set")
    dists = []
    for s in test_subjects:
        views = s.views if isinstance(s, MultiViewNetwork) else np.asarray(s, dtype=np.float64)
        if views.shape[1:] != c.shape:
            raise DimensionError(f"template {c.shape} vs views {views.shape[1:]}")
        diff = views - c[None]
        dists.extend(np.sqrt(np.einsum("vij,vij->v", diff, diff)))
    return float(np.mean(dists))


def _square(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got {a.shape}")
    return a


def node_strength(m) -> np.ndarray:
    return _square(m).sum(axis=1)


def _laplacian_energy(w: np.ndarray) -> float:
    off = w - np.diag(np.diag(w))
    s = off.sum(axis=1)
    return float(s @ s + np.sum(off * off))


def laplacian_centrality(m) -> np.ndarray:
    """Relative drop in Laplacian energy when each node is deleted.

    Energy of a weighted graph is ``sum_i s_i^2 + 2 sum_{i<j} w_ij^2``.
    """
    w = _square(m)
    total = _laplacian_energy(w)
    if total == 0.0:
        raise DegenerateGraphError("graph has zero Laplacian energy")
    n = w.shape[0]
    out = np.empty(n)
    for i in range(n):
        keep = np.arange(n) != i
        out[i] = (total - _laplacian_energy(w[np.ix_(keep, keep)])) / total
    return out


def information_centrality(m) -> np.ndarray:
    """Stephenson-Zelen information centrality of a connected weighted graph.

    With ``B = (L + J)^-1``: ``I_i = n / (n B_ii + trace(B) - 2 sum_j B_ij)``,
    i.e. ``n`` over the summed effective resistance from ``i`` to all nodes.
    """
    w = _square(m)
    w = w - np.diag(np.diag(w))
    n = w.shape[0]
    if n < 2:
        raise ConnectivityError("information centrality needs at least two nodes")
    if np.any(w < 0):
        raise ConnectivityError("negative edge weights")
    n_comp, _ = connected_components(w > 0, directed=False)
    if n_comp != 1:
        raise ConnectivityError(f"graph has {n_comp} connected components")
    lap = np.diag(w.sum(axis=1)) - w
    b = np.linalg.inv(lap + np.ones((n, n)))
    denom = n * np.diag(b) + np.trace(b) - 2.0 * b.sum(axis=1)
    return n / denom


def _betacf(a: float, b: float, x: float) -> float:
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, 10_000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta ``I_x(a, b)`` by Lentz's continued fraction."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def paired_t_test(a, b) -> tuple:
    """Two-tailed paired t-test; returns ``(t, p)``."""
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DimensionError("paired samples differ in length")
    n = x.size
    if n < 2:
        raise DegenerateTestError("paired t-test needs at least two pairs")
    d = x - y
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise DegenerateTestError("differences have zero variance")
    t = float(d.mean() / (sd / math.sqrt(n)))
    df = n - 1
    p = betainc_regularized(df / 2.0, 0.5, df / (df + t * t))
    return t, min(1.0, max(0.0, p))


@dataclass
class EvalReport:
    methods: tuple
    folds: list
    topology: dict
    tests: dict
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataio.to_jsonable({
            "methods": list(self.methods),
            "folds": self.folds,
            "topology": self.topology,
            "tests": self.tests,
            "metadata": self.metadata,
        })

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(tuple(d["methods"]), d["folds"], d["topology"], d["tests"], d.get("metadata", {}))

    def csv_rows(self) -> list:
        rows = []
        for fold in self.folds:
            for method in self.methods:
                for metric in ("centeredness", "vis_mc"):
                    rows.append((fold["fold"], metric, method, fold[method][metric]))
                for metric in TOPOLOGY_METRICS:
                    rows.append((fold["fold"], f"{metric}_mean", method, fold[method][f"{metric}_mean"]))
        return rows

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        dataio.write_json(out / "report.json", self.to_dict())
        lines = ["fold,metric,method,value"]
        lines += [f"{f},{m},{meth},{format(float(v), '.17g')}" for f, m, meth, v in self.csv_rows()]
        (out / "report.csv").write_text("\n".join(lines) + "\n")


def _test_entry(a, b) -> dict:
    try:
        t, p = paired_t_test(a, b)
        return {"t": t, "p": p, "degenerate": False, "n": len(a)}
    except DegenerateTestError as exc:
        return {"t": None, "p": None, "degenerate": True, "reason": str(exc), "n": len(a)}


def _topology(cbt) -> dict:
    return {
        "node_strength": node_strength(cbt),
        "laplacian_centrality": laplacian_centrality(cbt),
        "information_centrality": information_centrality(cbt),
    }


def evaluate_experiment(
    bundles,
    baselines,
    test_sets,
    images,
    lags,
    esn_cfg: EsnConfig | None = None,
    n_train_frames: int = 15,
    reference=None,
    names=("coggnn", "baseline"),
) -> EvalReport:
    """Compare two methods fold by fold.

    ``bundles`` and ``baselines`` are per-fold :class:`ExperimentBundle`
    lists; ``test_sets`` holds the held-out subjects of each fold. Both
    templates are scored for centeredness on the test subjects and for
    delayed-recall capacity with identically configured reservoirs. Paired
    t-tests pair the two methods across folds.
    """
    if len(bundles) != len(baselines) or len(bundles) != len(test_sets) or not bundles:
        raise ProtocolError("methods and test sets must cover the same non-empty set of folds")
    for a, b in zip(bundles, baselines):
        fa = None if a.fold is None else a.fold.fold_index
        fb = None if b.fold is None else b.fold.fold_index
        if fa != fb:
            raise ProtocolError(f"fold mismatch: {fa} vs {fb}")
    esn_cfg = esn_cfg or EsnConfig()
    method, base = names
    folds = []
    per_metric = {m: {method: [], base: []} for m in ("centeredness", "vis_mc") + TOPOLOGY_METRICS}
    topo_vectors = {method: {m: [] for m in TOPOLOGY_METRICS}, base: {m: [] for m in TOPOLOGY_METRICS}}
    for i, (a, b, test) in enumerate(zip(bundles, baselines, test_sets)):
        entry = {"fold": i if a.fold is None else a.fold.fold_index}
        for name, bundle in ((method, a), (base, b)):
            cbt = bundle.refined_cbt
            rec = recall_protocol(cbt, images, esn_cfg, lags, n_train_frames)
            topo = _topology(cbt)
            entry[name] = {
                "centeredness": centeredness(cbt, test),
                "vis_mc": rec["vis_mc"],
                "recall_profile": {str(k): v for k, v in rec["profile"].items()},
                **{f"{m}_mean": float(np.mean(topo[m])) for m in TOPOLOGY_METRICS},
            }
            for m in ("centeredness", "vis_mc"):
                per_metric[m][name].append(entry[name][m])
            for m in TOPOLOGY_METRICS:
                per_metric[m][name].append(entry[name][f"{m}_mean"])
                topo_vectors[name][m].append(topo[m])
        folds.append(entry)
    topology = {name: {m: np.mean(v, axis=0) for m, v in d.items()} for name, d in topo_vectors.items()}
    if reference is not None:
        topology["reference"] = _topology(reference)
    tests = {m: _test_entry(per_metric[m][method], per_metric[m][base]) for m in per_metric}
    return EvalReport(
        methods=(method, base),
        folds=folds,
        topology=dataio.to_jsonable(topology),
        tests=tests,
        metadata={"pairing_unit": "fold", "lags": [int(t) for t in lags], "n_train_frames": n_train_frames},
    )
