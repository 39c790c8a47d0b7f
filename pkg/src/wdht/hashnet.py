"""Trainable hashing head: FC3 -> (H1 sigmoid, H2 tanh), losses and training.

Shapes follow the usual ``W @ x`` convention: ``W_fc3`` is [hidden, d_in],
``W_h1`` is [bits, hidden], ``W_h2`` is [embed_dim, hidden].  All training
math runs in float64.
"""

import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import DataError, NumericError
from .rng import SplitMix64

log = logging.getLogger(__name__)

PARAM_NAMES = ("W_fc3", "b_fc3", "W_h1", "b_h1", "W_h2", "b_h2")
LOSS_MODES = ("wdht", "binary_tag")
FC3_WIDTH = 256

CKPT_MAGIC = b"WDHM"
CKPT_VERSION = 1


@dataclass
class HyperParams:
    lambda1: float = 1.0
    lambda2: float = 10.0
    lambda3: float = 1.0
    lambda4: float = 1.0
    margin_hinge: float = 0.1
    margin_contrastive: float = 1.0
    learning_rate: float = 0.001
    momentum: float = 0.9
    batch_size: int = 128
    epochs: int = 50
    seed: int = 0

    def validate(self, mode="wdht"):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be non-negative")
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise DataError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise DataError("batch_size must be >= 1 and epochs >= 0")
        pairwise = self.lambda1 > 0 if mode == "wdht" else self.lambda4 > 0
        if pairwise and self.batch_size < 2:
            raise DataError("pairwise losses need batch_size >= 2")


@dataclass
class NetworkParams:
    W_fc3: np.ndarray
    b_fc3: np.ndarray
    W_h1: np.ndarray
    b_h1: np.ndarray
    W_h2: np.ndarray
    b_h2: np.ndarray

    @property
    def sizes(self):
        """(d_in, hidden, bits, embed_dim)"""
        return (self.W_fc3.shape[1], self.W_fc3.shape[0], self.W_h1.shape[0], self.W_h2.shape[0])

    def tensors(self):
        return [getattr(self, n) for n in PARAM_NAMES]

    def copy(self):
        return NetworkParams(*(t.copy() for t in self.tensors()))

    def zeros_like(self):
        return NetworkParams(*(np.zeros_like(t) for t in self.tensors()))

    def equal(self, other):
        return all(np.array_equal(a, b) for a, b in zip(self.tensors(), other.tensors()))


@dataclass
class Activations:
    fc3_pre: np.ndarray
    fc3_out: np.ndarray
    h1_pre: np.ndarray
    h1_out: np.ndarray
    h2_pre: np.ndarray
    h2_out: np.ndarray


@dataclass
class GradientSet:
    grads: NetworkParams
    losses: dict = field(default_factory=dict)


@dataclass
class Batch:
    """One mini-batch: features plus either aggregated tag vectors or a similarity matrix."""

    X: np.ndarray
    W: np.ndarray = None
    S: np.ndarray = None


def init_glorot(sizes, seed):
    """Glorot-normal weights (variance 2 / (fan_in + fan_out)), zero biases.

    ``sizes`` is ``(d_in, hidden, bits, embed_dim)``; ``embed_dim`` may be 0
    for a network without the H2 head.
    """
    d_in, hidden, bits, embed = (int(s) for s in sizes)
    if min(d_in, hidden, bits) <= 0 or embed < 0:
        raise DataError(f"layer sizes must be positive, got {sizes}")
    rng = SplitMix64(seed).spawn(0x1A17)

    def glorot(fan_out, fan_in):
        std = np.sqrt(2.0 / (fan_in + fan_out))
        return rng.normal(fan_out * fan_in).reshape(fan_out, fan_in) * std

    return NetworkParams(
        glorot(hidden, d_in), np.zeros(hidden),
        glorot(bits, hidden), np.zeros(bits),
        glorot(embed, hidden) if embed else np.zeros((0, hidden)), np.zeros(embed),
    )


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(params, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.W_fc3.shape[1]:
        raise DataError(f"features have shape {X.shape}, network expects d_in={params.W_fc3.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite feature values")
    a = X @ params.W_fc3.T + params.b_fc3
    f = np.maximum(a, 0.0)
    z1 = f @ params.W_h1.T + params.b_h1
    z2 = f @ params.W_h2.T + params.b_h2
    return Activations(a, f, z1, sigmoid(z1), z2, np.tanh(z2))


# --- losses -------------------------------------------------------------

def _pair_sqdist(H):
    diff = H[:, None, :] - H[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff) / H.shape[1]


def cosine_target(W):
    """1/2 (1 - cos(w_i, w_j)) for every ordered pair."""
    norms = np.linalg.norm(W, axis=1)
    if np.any(norms == 0):
        raise DataError("zero-norm tag vector: cosine similarity undefined")
    Wn = W / norms[:, None]
    cos = Wn @ Wn.T
    np.fill_diagonal(cos, 1.0)
    return 0.5 * (1.0 - cos)


def loss_pairwise(H1, W):
    E = _pair_sqdist(H1) - cosine_target(W)
    return float(np.sum(E * E))


def _hinge_args(H2, W, margin):
    P = H2 @ W.T  # P[n, j] = w_j . h_n
    args = margin + P - np.diag(P)[:, None]
    np.fill_diagonal(args, 0.0)
    return args


def loss_hinge(H2, W, margin):
    H2, W = np.atleast_2d(H2), np.atleast_2d(W)
    if H2.shape != W.shape:
        raise DataError(f"H2 {H2.shape} and tag vectors {W.shape} must have equal shapes")
    return float(np.sum(np.maximum(_hinge_args(H2, W, margin), 0.0)))


def loss_quantization(H1):
    H1 = np.atleast_2d(H1)
    return float(-np.sum((H1 - 0.5) ** 2) / H1.shape[1])


def similarity_fraction(S):
    """Fraction of similar ordered pairs, clamped to [0.01, 0.99]."""
    k = S.shape[0]
    return float(np.clip(S.sum() / (k * k), 0.01, 0.99))


def _check_similarity(S):
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DataError("similarity matrix must be square")
    if not np.all((S == 0) | (S == 1)):
        raise DataError("similarity matrix must be binary")
    return S


def loss_contrastive(H1, S, margin, beta=None):
    S = _check_similarity(S)
    D = _pair_sqdist(np.atleast_2d(H1))
    if beta is None:
        beta = similarity_fraction(S)
    hinge = np.maximum(margin - D, 0.0)
    return float(np.sum(S * (1 - beta) * D + (1 - S) * beta * hinge ** 2))


def total_loss(losses, hyper, mode="wdht"):
    if mode == "wdht":
        return hyper.lambda1 * losses["L1"] + hyper.lambda2 * losses["L2"] + hyper.lambda3 * losses["L3"]
    if mode == "binary_tag":
        return hyper.lambda3 * losses["L3"] + hyper.lambda4 * losses["L4"]
    raise ValueError(f"unknown loss mode {mode!r}")


def _check_batch(batch, mode):
    k = batch.X.shape[0]
    if mode == "wdht":
        if batch.W is None or batch.W.shape[0] != k:
            raise DataError("wdht mode needs one aggregated tag vector per sample")
    elif mode == "binary_tag":
        if batch.S is None or batch.S.shape != (k, k):
            raise DataError("binary_tag mode needs a k x k similarity matrix")
    else:
        raise ValueError(f"unknown loss mode {mode!r}")


def batch_losses(acts, batch, hyper, mode="wdht"):
    H1 = acts.h1_out
    out = {"L1": 0.0, "L2": 0.0, "L3": loss_quantization(H1), "L4": 0.0}
    if mode == "wdht":
        out["L1"] = loss_pairwise(H1, batch.W)
        out["L2"] = loss_hinge(acts.h2_out, batch.W, hyper.margin_hinge)
    else:
        out["L4"] = loss_contrastive(H1, batch.S, hyper.margin_contrastive)
    out["total"] = total_loss(out, hyper, mode)
    return out


def objective(params, batch, hyper, mode="wdht"):
    _check_batch(batch, mode)
    return batch_losses(forward(params, batch.X), batch, hyper, mode)["total"]


# --- gradients ----------------------------------------------------------

def backward(params, acts, batch, hyper, mode="wdht"):
    """Analytic gradient of the selected total loss.

    Hinge and ReLU kinks (argument exactly zero) take subgradient 0.
    """
    _check_batch(batch, mode)
    H, G, F = acts.h1_out, acts.h2_out, acts.fc3_out
    b = H.shape[1]
    dH = np.zeros_like(H)
    dG = np.zeros_like(G)

    # L3
    dH += hyper.lambda3 * (-2.0 / b) * (H - 0.5)

    if mode == "wdht":
        if hyper.lambda1:
            E = _pair_sqdist(H) - cosine_target(batch.W)
            # each unordered pair appears twice in the ordered double sum
            dH += hyper.lambda1 * (8.0 / b) * (E.sum(axis=1)[:, None] * H - E @ H)
        if hyper.lambda2:
            A = (_hinge_args(G, batch.W, hyper.margin_hinge) > 0).astype(np.float64)
            dG += hyper.lambda2 * (A @ batch.W - A.sum(axis=1)[:, None] * batch.W)
    elif hyper.lambda4:
        S = _check_similarity(batch.S)
        beta = similarity_fraction(S)
        D = _pair_sqdist(H)
        C = S * (1 - beta) - 2.0 * (1 - S) * beta * np.maximum(hyper.margin_contrastive - D, 0.0)
        dH += hyper.lambda4 * (4.0 / b) * (C.sum(axis=1)[:, None] * H - C @ H)

    dZ1 = dH * H * (1.0 - H)
    dZ2 = dG * (1.0 - G * G)
    dF = dZ1 @ params.W_h1 + dZ2 @ params.W_h2
    dA = dF * (acts.fc3_pre > 0)

    grads = NetworkParams(
        dA.T @ batch.X, dA.sum(axis=0),
        dZ1.T @ F, dZ1.sum(axis=0),
        dZ2.T @ F, dZ2.sum(axis=0),
    )
    return GradientSet(grads, batch_losses(acts, batch, hyper, mode))


def finite_diff(f, theta, h=1e-5):
    """Central differences of scalar ``f`` w.r.t. every entry of array ``theta`` (in place, restored)."""
    grad = np.zeros_like(theta, dtype=np.float64)
    flat, gflat = theta.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def finite_diff_grad(params, batch, hyper, mode="wdht", h=1e-5):
    work = params.copy()
    f = lambda: objective(work, batch, hyper, mode)  # noqa: E731
    grads = [finite_diff(f, t, h) for t in work.tensors()]
    return GradientSet(NetworkParams(*grads), {"total": f()})


def max_relative_error(a, b, floor=1e-6):
    """Largest entrywise |a - b| / max(|a|, |b|, floor) over all tensors."""
    worst = 0.0
    for x, y in zip(a.tensors(), b.tensors()):
        if x.size:
            denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
            worst = max(worst, float(np.max(np.abs(x - y) / denom)))
    return worst


def sgd_momentum_step(params, velocity, grads, hyper):
    """v <- mu v + g ; theta <- theta - lr v.  Updates ``params`` and ``velocity`` in place."""
    for name in PARAM_NAMES:
        v = getattr(velocity, name)
        v *= hyper.momentum
        v += getattr(grads, name)
        getattr(params, name)[...] -= hyper.learning_rate * v
    return params


# --- training -----------------------------------------------------------

def tag_incidence(tagsets):
    """Sparse binary sample x tag matrix."""
    vocab = {}
    rows, cols = [], []
    for i, tags in enumerate(tagsets):
        for t in set(tags):
            rows.append(i)
            cols.append(vocab.setdefault(t, len(vocab)))
    data = np.ones(len(rows), dtype=np.float64)
    return sparse.csr_matrix((data, (rows, cols)), shape=(len(tagsets), max(len(vocab), 1)))


def shared_tag_similarity(incidence, idx):
    """S[i, j] = 1 when samples share at least one tag; S[i, i] = 1."""
    sub = incidence[idx]
    S = (sub @ sub.T).toarray() > 0
    np.fill_diagonal(S, True)
    return S.astype(np.float64)


@dataclass
class TrainResult:
    params: NetworkParams
    history: list


def train(X, hyper, mode="wdht", W=None, tagsets=None, bits=16, hidden=FC3_WIDTH, params=None):
    """Mini-batch SGD with momentum.

    ``W`` (aggregated tag vectors, invalid rows already removed) drives the
    wdht objective; ``tagsets`` drive the binary_tag baseline.  Batches are a
    fresh portable-RNG permutation each epoch; a trailing partial batch is
    dropped.  Returns final parameters and one loss record per epoch.
    """
    hyper.validate(mode)
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if mode == "wdht":
        if W is None:
            raise DataError("wdht mode needs aggregated tag vectors")
        W = np.asarray(W, dtype=np.float64)
        if W.shape[0] != n:
            raise DataError(f"{n} feature rows but {W.shape[0]} tag vectors")
        if np.any(np.linalg.norm(W, axis=1) == 0):
            raise DataError("zero tag vectors present; drop invalid samples before training")
        embed = W.shape[1]
    elif mode == "binary_tag":
        if tagsets is None or len(tagsets) != n:
            raise DataError("binary_tag mode needs one tag set per feature row")
        incidence = tag_incidence(tagsets)
        embed = 0
    else:
        raise ValueError(f"unknown loss mode {mode!r}")
    if n < hyper.batch_size:
        raise DataError(f"{n} samples is fewer than batch_size={hyper.batch_size}")

    if params is None:
        params = init_glorot((X.shape[1], hidden, bits, embed), hyper.seed)
    else:
        params = params.copy()
    velocity = params.zeros_like()
    shuffle = SplitMix64(hyper.seed).spawn(0x5AFF)
    k = hyper.batch_size
    history = []

    for epoch in range(1, hyper.epochs + 1):
        order = shuffle.permutation(n)
        sums = dict.fromkeys(("L1", "L2", "L3", "L4", "total"), 0.0)
        n_batches = n // k
        for bi in range(n_batches):
            idx = order[bi * k:(bi + 1) * k]
            if mode == "wdht":
                batch = Batch(X[idx], W=W[idx])
            else:
                batch = Batch(X[idx], S=shared_tag_similarity(incidence, idx))
            acts = forward(params, batch.X)
            gs = backward(params, acts, batch, hyper, mode)
            if not np.isfinite(gs.losses["total"]):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {bi}")
            for key in sums:
                sums[key] += gs.losses[key]
            sgd_momentum_step(params, velocity, gs.grads, hyper)
        record = {"epoch": epoch, **{key: v / n_batches for key, v in sums.items()}}
        history.append(record)
        log.info("epoch %d total %.6f", epoch, record["total"])

    return TrainResult(params, history)


def encode(params, X):
    """H1 activations for a feature matrix (no tags needed)."""
    return forward(params, X).h1_out


def save_history(path, history):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,L1,L2,L3,L4,total\n")
        for r in history:
            fh.write(f"{r['epoch']},{r['L1']!r},{r['L2']!r},{r['L3']!r},{r['L4']!r},{r['total']!r}\n")


def save_checkpoint(path, params):
    d_in, hidden, bits, embed = params.sizes
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<5I", CKPT_VERSION, d_in, hidden, bits, embed))
        for t in params.tensors():
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 24:
        raise DataError(f"{path}: truncated checkpoint header at byte offset {len(blob)}")
    if blob[:4] != CKPT_MAGIC:
        raise DataError(f"{path}: bad magic {blob[:4]!r}, expected {CKPT_MAGIC!r}")
    version, d_in, hidden, bits, embed = struct.unpack_from("<5I", blob, 4)
    if version != CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    shapes = [(hidden, d_in), (hidden,), (bits, hidden), (bits,), (embed, hidden), (embed,)]
    offset = 24
    tensors = []
    for shape in shapes:
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(blob):
            raise DataError(f"{path}: truncated tensor data at byte offset {len(blob)}, expected {end}")
        tensors.append(np.frombuffer(blob, dtype="<f4", count=count, offset=offset).astype(np.float64).reshape(shape))
        offset = end
    if offset != len(blob):
        raise DataError(f"{path}: trailing bytes after offset {offset}")
    return NetworkParams(*tensors)


# (mode, lambda1, lambda2, lambda3, lambda4) combinations exercised by the gradient check
GRADCHECK_CASES = (
    ("wdht", 1.0, 0.0, 0.0, 0.0),
    ("wdht", 0.0, 1.0, 0.0, 0.0),
    ("wdht", 0.0, 0.0, 1.0, 0.0),
    ("wdht", 1.0, 10.0, 1.0, 0.0),
    ("binary_tag", 0.0, 0.0, 0.0, 1.0),
    ("binary_tag", 0.0, 0.0, 1.0, 1.0),
)


def gradient_check(seeds=range(20), sizes=(8, 6, 4, 5), k=3, h=1e-5):
    """Compare ``backward`` with central differences on small random problems.

    Hinge margins are drawn from [-0.5, 0.5) so both active and inactive
    hinge terms occur.  Returns a list of ``(seed, case, max_rel_err,
    active_hinges, inactive_hinges)``.
    """
    d_in, hidden, bits, embed = sizes
    report = []
    for seed in seeds:
        rng = SplitMix64(seed).spawn(0x6C)
        params = init_glorot(sizes, seed)
        for name in ("b_fc3", "b_h1", "b_h2"):
            getattr(params, name)[...] = 0.1 * rng.normal(getattr(params, name).size)
        X = 2.0 * rng.normal(k * d_in).reshape(k, d_in)
        W = rng.normal(k * embed).reshape(k, embed)
        S = np.eye(k)
        S[0, 1] = S[1, 0] = 1.0
        m_hinge = float(rng.uniform(1)[0]) - 0.5
        m_contr = 0.05 + 0.3 * float(rng.uniform(1)[0])
        batch = Batch(X, W=W, S=S)
        acts = forward(params, X)
        args = _hinge_args(acts.h2_out, W, m_hinge)[~np.eye(k, dtype=bool)]
        for case in GRADCHECK_CASES:
            mode, l1, l2, l3, l4 = case
            hp = HyperParams(l1, l2, l3, l4, margin_hinge=m_hinge, margin_contrastive=m_contr)
            analytic = backward(params, acts, batch, hp, mode).grads
            numeric = finite_diff_grad(params, batch, hp, mode, h).grads
            report.append((seed, case, max_relative_error(analytic, numeric), int((args > 0).sum()), int((args < 0).sum())))
    return report
