"""Deep graph normalizer: edge-conditioned convolutions to a CBT.

Every region starts from the same feature vector. A stack of
edge-conditioned convolution layers turns those into distinctive node
embeddings ``V``. The per-subject template is the matrix of pairwise L1
distances between rows of ``V``. Training minimises the centeredness loss,
the summed Frobenius distance between the template and the view-normalised
networks of a random subset of training subjects. Gradients are derived by
hand and optimised with Adam.

Layer rule, with ``N(p)`` every node except ``p``::

    v_p' = Theta v_p + (sum_{q != p} F(e_pq) v_q + b) / (n_r - 1)

``F`` maps the ``n_v`` edge weights to a ``d_out x d_in`` matrix. The bias
sits inside the normalised sum, so its effective size is ``b / (n_r - 1)``.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, SchemaError, TrainingDivergedError
from .graphdata import MultiViewNetwork, Population, compute_view_normalizers, sample_training_subset

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    epochs: int = 500
    subset_size: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    early_stop_patience: int = 50
    seed: int = 0
    layer_dims: tuple = (1, 36, 24, 5)
    filter_hidden: int = 0

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ValueError("layer_dims needs an input size and at least one layer")


@dataclass
class EccNetwork:
    """Layer parameters as dicts of arrays.

    Each layer holds ``theta`` (d_out, d_in), ``bias`` (d_out,), and the
    filter network ``filter_w`` (h, d_out*d_in), ``filter_b`` (d_out*d_in,)
    where ``h = n_v`` for the affine filter. With ``filter_hidden > 0`` the
    filter first applies ``relu(e @ hidden_w + hidden_b)``.
    """

    n_v: int
    layer_dims: tuple
    filter_hidden: int = 0
    layers: list = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    def copy(self) -> "EccNetwork":
        return copy.deepcopy(self)

    def parameters(self):
        """Yield ``(layer_index, name, array)`` in a fixed order."""
        for i, layer in enumerate(self.layers):
            for name in sorted(layer):
                yield i, name, layer[name]


def init_network(n_v: int, layer_dims, filter_hidden: int = 0, seed: int = 0) -> EccNetwork:
    """Uniform init in +-1/sqrt(fan_in)."""
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in layer_dims)

    def uni(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        h = filter_hidden or n_v
        layer = {
            "theta": uni(d_in, (d_out, d_in)),
            "bias": uni(d_in, (d_out,)),
            "filter_w": uni(h, (h, d_out * d_in)),
            "filter_b": uni(h, (d_out * d_in,)),
        }
        if filter_hidden:
            layer["hidden_w"] = uni(n_v, (n_v, filter_hidden))
            layer["hidden_b"] = uni(n_v, (filter_hidden,))
        layers.append(layer)
    return EccNetwork(n_v, dims, filter_hidden, layers)


def initial_features(n_r: int, input_dim: int = 1) -> np.ndarray:
    """Identical starting attributes for every region: a block of ones."""
    return np.ones((n_r, input_dim))


def _edges_of(subject) -> np.ndarray:
    if isinstance(subject, MultiViewNetwork):
        return subject.edge_features()
    e = np.asarray(subject, dtype=np.float64)
    if e.ndim != 3 or e.shape[0] != e.shape[1]:
        raise DimensionError(f"edge features must be (n_r, n_r, n_v), got {e.shape}")
    return e


def _layer_forward(layer, edges, mask, h_in, hidden):
    n = h_in.shape[0]
    d_out, d_in = layer["theta"].shape
    if hidden:
        z = edges @ layer["hidden_w"] + layer["hidden_b"]
        feats = np.maximum(z, 0.0) * mask[..., None]
    else:
        z = None
        feats = edges * mask[..., None]
    k = feats.shape[2]
    w2 = layer["filter_w"].reshape(k, d_out, d_in)
    b2 = layer["filter_b"].reshape(d_out, d_in)
    # P[p, k, i] = sum_{q != p} A[p, q, k] h[q, i]
    p_agg = (feats.transpose(0, 2, 1).reshape(n * k, n) @ h_in).reshape(n, k, d_in)
    others = h_in.sum(axis=0)[None, :] - h_in
    msg = p_agg.reshape(n, k * d_in) @ w2.transpose(0, 2, 1).reshape(k * d_in, d_out) + others @ b2.T
    out = h_in @ layer["theta"].T + (msg + layer["bias"]) / (n - 1)
    cache = (h_in, feats, z, p_agg, others)
    return out, cache


def _layer_backward(layer, edges, mask, cache, d_out_grad, hidden):
    h_in, feats, z, p_agg, others = cache
    n = h_in.shape[0]
    d_out, d_in = layer["theta"].shape
    k = feats.shape[2]
    w2 = layer["filter_w"].reshape(k, d_out, d_in)
    b2 = layer["filter_b"].reshape(d_out, d_in)
    d_msg = d_out_grad / (n - 1)
    grads = {
        "theta": d_out_grad.T @ h_in,
        "bias": d_msg.sum(axis=0),
        "filter_w": (p_agg.reshape(n, k * d_in).T @ d_msg)
        .reshape(k, d_in, d_out).transpose(0, 2, 1).reshape(k, d_out * d_in),
        "filter_b": (d_msg.T @ others).reshape(-1),
    }
    # Q[p, k, i] = sum_o dM[p, o] W[k, o, i]
    q = (d_msg @ w2.transpose(1, 0, 2).reshape(d_out, k * d_in)).reshape(n, k, d_in)
    d_h = (
        d_out_grad @ layer["theta"]
        + feats.transpose(1, 0, 2).reshape(n, n * k) @ q.reshape(n * k, d_in)
        + (d_msg.sum(axis=0)[None, :] - d_msg) @ b2
    )
    if hidden:
        d_feats = (q.reshape(n * k, d_in) @ h_in.T).reshape(n, k, n).transpose(0, 2, 1)
        d_z = d_feats * mask[..., None] * (z > 0)
        n_v = edges.shape[2]
        grads["hidden_w"] = edges.reshape(-1, n_v).T @ d_z.reshape(-1, k)
        grads["hidden_b"] = d_z.sum(axis=(0, 1))
    return d_h, grads


def _forward(net: EccNetwork, edges: np.ndarray, features: np.ndarray):
    n = edges.shape[0]
    if n < 2:
        raise DimensionError("need at least two regions")
    if edges.shape[2] != net.n_v:
        raise DimensionError(f"network expects {net.n_v} views, got {edges.shape[2]}")
    if features.shape != (n, net.input_dim):
        raise DimensionError(f"features must be {(n, net.input_dim)}, got {features.shape}")
    mask = 1.0 - np.eye(n)
    h = features
    caches = []
    for i, layer in enumerate(net.layers):
        out, cache = _layer_forward(layer, edges, mask, h, net.filter_hidden)
        caches.append((cache, out))
        h = np.maximum(out, 0.0) if i < len(net.layers) - 1 else out
    return h, caches, mask


def ecc_forward(net: EccNetwork, subject, features=None) -> np.ndarray:
    """Node embeddings ``(n_r, d_L)`` for one subject."""
    edges = _edges_of(subject)
    if features is None:
        features = initial_features(edges.shape[0], net.input_dim)
    return _forward(net, edges, np.asarray(features, dtype=np.float64))[0]


def cbt_from_embeddings(emb) -> np.ndarray:
    """Pairwise L1 distances between embedding rows."""
    v = np.asarray(emb, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < 2:
        raise DimensionError(f"embeddings must be (n_r >= 2, d), got {v.shape}")
    return np.abs(v[:, None, :] - v[None, :, :]).sum(axis=2)


def _target_stack(subset, lambdas) -> np.ndarray:
    """``lambda_v * T_i^v`` for the subset, shape ``(m, n_v, n_r, n_r)``."""
    if isinstance(subset, Population):
        subset = subset.subjects
    if isinstance(subset, np.ndarray):
        stack = np.asarray(subset, dtype=np.float64)
    else:
        if len(subset) == 0:
            raise DimensionError("empty subset")
        stack = np.stack([s.views if isinstance(s, MultiViewNetwork) else np.asarray(s) for s in subset])
    lam = np.asarray(lambdas, dtype=np.float64)
    if stack.ndim != 4 or stack.shape[0] == 0 or stack.shape[1] != lam.size:
        raise DimensionError(f"subset {stack.shape} does not match {lam.size} normalisers")
    return stack * lam[None, :, None, None]


def _loss_from_targets(cbt, targets):
    diff = cbt[None, None] - targets
    norms = np.sqrt(np.einsum("mvij,mvij->mv", diff, diff))
    return norms, diff


def centeredness_loss(cbt, subset, lambdas) -> float:
    """``sum_v sum_i ||C - lambda_v T_i^v||_F`` over the subset."""
    c = np.asarray(cbt, dtype=np.float64)
    targets = _target_stack(subset, lambdas)
    if targets.shape[2:] != c.shape:
        raise DimensionError(f"template {c.shape} vs views {targets.shape[2:]}")
    norms, _ = _loss_from_targets(c, targets)
    return float(norms.sum())


def _loss_and_grads(net, edges, targets, features):
    emb, caches, mask = _forward(net, edges, features)
    diffs = emb[:, None, :] - emb[None, :, :]
    cbt = np.abs(diffs).sum(axis=2)
    if targets.shape[2:] != cbt.shape:
        raise DimensionError(f"template {cbt.shape} vs views {targets.shape[2:]}")
    norms, diff = _loss_from_targets(cbt, targets)
    safe = np.where(norms > 0, norms, 1.0)
    d_cbt = np.einsum("mvij,mv->ij", diff, np.where(norms > 0, 1.0 / safe, 0.0))
    d_diffs = d_cbt[..., None] * np.sign(diffs)
    d_h = d_diffs.sum(axis=1) - d_diffs.sum(axis=0)
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        cache, pre = caches[i]
        if i < len(net.layers) - 1:
            d_h = d_h * (pre > 0)
        d_h, grads[i] = _layer_backward(net.layers[i], edges, mask, cache, d_h, net.filter_hidden)
    return float(norms.sum()), grads, cbt


def loss_gradients(net: EccNetwork, subject, subset, lambdas, features=None) -> list:
    """Gradients of the centeredness loss for ``subject``'s template.

    Returns one dict per layer with the same keys and shapes as the layer's
    parameters. Subgradients of ``|x|`` and the rectifier are 0 at 0.
    """
    edges = _edges_of(subject)
    if features is None:
        features = initial_features(edges.shape[0], net.input_dim)
    return _loss_and_grads(net, edges, _target_stack(subset, lambdas), np.asarray(features, dtype=np.float64))[1]


class Adam:
    def __init__(self, net: EccNetwork, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [{k: np.zeros_like(v) for k, v in layer.items()} for layer in net.layers]
        self.v = [{k: np.zeros_like(v) for k, v in layer.items()} for layer in net.layers]

    def step(self, net: EccNetwork, grads: list) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for layer, g, m, v in zip(net.layers, grads, self.m, self.v):
            for k in layer:
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k]
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] ** 2
                layer[k] = layer[k] - self.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + self.eps)


@dataclass
class DgnResult:
    network: EccNetwork
    cbts: dict
    trace: list
    best_epoch: int
    lambdas: np.ndarray


class DgnTrainer:
    """Owns one training loop; :mod:`cogcbt.coopt` drives it epoch by epoch."""

    def __init__(self, pop_train: Population, cfg: TrainConfig, lambdas=None):
        self.pop = pop_train
        self.cfg = cfg
        self.ids = pop_train.ids
        self.lambdas = compute_view_normalizers(pop_train) if lambdas is None else np.asarray(lambdas, float)
        if cfg.layer_dims[0] < 1:
            raise ValueError("input dimension must be >= 1")
        self.net = init_network(pop_train.n_v, cfg.layer_dims, cfg.filter_hidden, cfg.seed)
        self.adam = Adam(self.net, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.features = initial_features(pop_train.n_r, cfg.layer_dims[0])
        self.edges = [s.edge_features() for s in pop_train.subjects]
        self.targets = _target_stack(pop_train.subjects, self.lambdas)
        self.subset_size = min(cfg.subset_size, len(self.ids))
        if self.subset_size < cfg.subset_size:
            log.warning("subset size %d exceeds %d training subjects; using all", cfg.subset_size, len(self.ids))

    def run_epoch(self, epoch: int) -> float:
        """One Adam pass over every training subject; returns the mean subset loss."""
        total = 0.0
        index = {sid: i for i, sid in enumerate(self.ids)}
        for s, edges in enumerate(self.edges):
            chosen = sample_training_subset(self.ids, self.subset_size, self.cfg.seed, epoch, s)
            targets = self.targets[[index[c] for c in chosen]]
            loss, grads, _ = _loss_and_grads(self.net, edges, targets, self.features)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            self.adam.step(self.net, grads)
            total += loss
        return total / len(self.edges)

    def subject_cbts(self, net: EccNetwork | None = None) -> dict:
        net = self.net if net is None else net
        return {sid: cbt_from_embeddings(_forward(net, e, self.features)[0]) for sid, e in zip(self.ids, self.edges)}

    def evaluation_loss(self, net: EccNetwork | None = None, cbts: dict | None = None) -> float:
        """Expected subset loss: every training subject in the sum, rescaled to ``|R|``."""
        cbts = self.subject_cbts(net) if cbts is None else cbts
        total = 0.0
        for sid in self.ids:
            norms, _ = _loss_from_targets(cbts[sid], self.targets)
            total += norms.sum()
        value = total / len(self.ids) * self.subset_size / len(self.ids)
        if not np.isfinite(value):
            raise TrainingDivergedError(-1, "evaluation loss became non-finite")
        return float(value)


def train_dgn(pop_train: Population, cfg: TrainConfig, lambdas=None) -> DgnResult:
    """Adam training with best-checkpoint tracking and patience-based early stop.

    The trace holds one row per epoch (epoch 0 is the initialisation) with
    the mean subset loss seen during the epoch and the full evaluation loss
    used for checkpoint selection.
    """
    trainer = DgnTrainer(pop_train, cfg, lambdas)
    best_loss = trainer.evaluation_loss()
    best_net, best_epoch = trainer.net.copy(), 0
    trace = [{"epoch": 0, "train_loss": float("nan"), "gnn_loss": best_loss}]
    for epoch in range(1, cfg.epochs + 1):
        train_loss = trainer.run_epoch(epoch)
        loss = trainer.evaluation_loss()
        trace.append({"epoch": epoch, "train_loss": train_loss, "gnn_loss": loss})
        if loss < best_loss:
            best_loss, best_net, best_epoch = loss, trainer.net.copy(), epoch
        elif epoch - best_epoch >= cfg.early_stop_patience:
            log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
            break
    return DgnResult(best_net, trainer.subject_cbts(best_net), trace, best_epoch, trainer.lambdas)


def network_to_dict(net: EccNetwork, cfg: TrainConfig | None = None) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "kind": "ecc_network",
        "n_v": net.n_v,
        "layer_dims": list(net.layer_dims),
        "filter_hidden": net.filter_hidden,
        "layers": [{k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in layer.items()} for layer in net.layers],
        "config": None if cfg is None else {**asdict(cfg), "layer_dims": list(cfg.layer_dims)},
        "seed": None if cfg is None else cfg.seed,
    }


def network_from_dict(d: dict, source="checkpoint") -> EccNetwork:
    try:
        if d.get("format_version") != CHECKPOINT_VERSION or d.get("kind") != "ecc_network":
            raise SchemaError(source, "unsupported network checkpoint version/kind")
        layers = [
            {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in layer.items()}
            for layer in d["layers"]
        ]
        net = EccNetwork(int(d["n_v"]), tuple(d["layer_dims"]), int(d["filter_hidden"]), layers)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(source, f"malformed network checkpoint ({exc})") from exc
    if len(layers) != len(net.layer_dims) - 1:
        raise SchemaError(source, "layer count does not match layer_dims")
    return net


def train_config_from_dict(d: dict) -> TrainConfig:
    return TrainConfig(**d)
