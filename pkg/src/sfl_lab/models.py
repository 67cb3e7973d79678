"""Split-differentiable objectives.

Each objective exposes the three halves of a split training step:

* ``client_forward`` maps the client block and a batch to the cut activation,
* ``server_loss_and_grads`` turns the activation into a loss, the server
  gradient and the gradient with respect to the activation,
* ``client_backward`` applies the chain rule to recover the client gradient.

Regularization is charged blockwise: ``lam/2 * ||x_c||^2`` lives on the
client and ``lam/2 * ||x_s||^2`` on the server, so neither side needs the
other's parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import NonFiniteError, ShapeError, as_vec, sq_norm


class ConstantsUnavailable(ValueError):
    """Smoothness/convexity constants are not certified for this objective."""


@dataclass(frozen=True)
class SplitParams:
    client: np.ndarray
    server: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "client", as_vec(self.client))
        object.__setattr__(self, "server", as_vec(self.server))

    @property
    def cut(self) -> int:
        return self.client.size

    def concat(self) -> np.ndarray:
        return np.concatenate([self.client, self.server])

    @classmethod
    def from_flat(cls, x: np.ndarray, n_client: int) -> "SplitParams":
        x = np.asarray(x, dtype=np.float64)
        return cls(x[:n_client], x[n_client:])


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 2:
            raise ShapeError("batch inputs must be 2-D (samples x features)")
        if len(self.inputs) < 1:
            raise ShapeError("batch must hold at least one sample")
        if len(self.inputs) != len(self.targets):
            raise ShapeError("inputs and targets differ in sample count")

    @property
    def size(self) -> int:
        return len(self.inputs)


def _check_len(v: np.ndarray, n: int, what: str) -> None:
    if v.shape != (n,):
        raise ShapeError(f"{what} has shape {v.shape}, expected ({n},)")


def _finite_loss(loss: float) -> float:
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite loss")
    return float(loss)


class _SplitLinear:
    """Linear score ``w . x`` with the weight vector partitioned at a cut.

    The client owns the weights of the first ``n_client_features`` input
    coordinates and sends, per sample, its partial score together with the
    remaining raw coordinates. The server owns the rest of the weights and
    completes the score. The activation width is therefore
    ``1 + n_server_features``.
    """

    convex = True

    def __init__(self, n_features: int, n_client_features: int, lam: float = 0.0):
        if not 1 <= n_client_features < n_features:
            raise ValueError("need 1 <= n_client_features < n_features")
        if lam < 0:
            raise ValueError("lam must be non-negative")
        self.n_features = n_features
        self.n_client_features = n_client_features
        self.lam = float(lam)

    def __repr__(self) -> str:
        return (f"{type(self).__name__}(n_features={self.n_features}, "
                f"n_client_features={self.n_client_features}, lam={self.lam})")

    @property
    def client_size(self) -> int:
        return self.n_client_features

    @property
    def server_size(self) -> int:
        return self.n_features - self.n_client_features

    @property
    def size(self) -> int:
        return self.n_features

    @property
    def cut_width(self) -> int:
        return 1 + self.server_size

    def flops_per_sample(self) -> int:
        return 6 * self.size

    def _check_batch(self, batch: Batch) -> None:
        if batch.inputs.shape[1] != self.n_features:
            raise ShapeError(
                f"batch has {batch.inputs.shape[1]} features, expected {self.n_features}")

    def client_forward(self, x_c: np.ndarray, batch: Batch) -> np.ndarray:
        _check_len(x_c, self.client_size, "client block")
        self._check_batch(batch)
        k = self.n_client_features
        act = np.empty((batch.size, self.cut_width))
        act[:, 0] = batch.inputs[:, :k] @ x_c
        act[:, 1:] = batch.inputs[:, k:]
        return act

    def server_loss_and_grads(self, x_s: np.ndarray, act: np.ndarray, batch: Batch):
        _check_len(x_s, self.server_size, "server block")
        if act.shape != (batch.size, self.cut_width):
            raise ShapeError(f"activation shape {act.shape} does not match batch")
        score = act[:, 0] + act[:, 1:] @ x_s
        data_loss, resid = self._loss_resid(score, batch.targets)
        loss = data_loss + 0.5 * self.lam * sq_norm(x_s)
        r = resid / batch.size
        g_s = act[:, 1:].T @ r + self.lam * x_s
        cut_grad = np.empty_like(act)
        cut_grad[:, 0] = r
        cut_grad[:, 1:] = np.outer(r, x_s)
        return _finite_loss(loss), g_s, cut_grad

    def client_backward(self, x_c: np.ndarray, batch: Batch, cut_grad: np.ndarray) -> np.ndarray:
        if cut_grad.shape != (batch.size, self.cut_width):
            raise ShapeError("cut gradient shape does not match batch")
        k = self.n_client_features
        return batch.inputs[:, :k].T @ cut_grad[:, 0] + self.lam * x_c

    def loss_and_grad(self, x: SplitParams, batch: Batch):
        """Monolithic loss and gradient of the full model on ``batch``.

        Uses the same floating-point operations as the split path, so the two
        agree exactly.
        """
        self._check_batch(batch)
        k = self.n_client_features
        xs_in = batch.inputs[:, k:]
        score = batch.inputs[:, :k] @ x.client + xs_in @ x.server
        data_loss, resid = self._loss_resid(score, batch.targets)
        loss = data_loss + 0.5 * self.lam * sq_norm(x.client) + 0.5 * self.lam * sq_norm(x.server)
        r = resid / batch.size
        g_c = batch.inputs[:, :k].T @ r + self.lam * x.client
        g_s = xs_in.T @ r + self.lam * x.server
        return _finite_loss(loss), np.concatenate([g_c, g_s])

    def init_params(self, rng=None, scale: float = 0.0) -> SplitParams:
        w = np.zeros(self.size) if rng is None else rng.normal(self.size, scale)
        return SplitParams.from_flat(w, self.client_size)


class SplitRidge(_SplitLinear):
    """Least squares ``(1/2b) sum (score - y)^2`` plus L2."""

    def _loss_resid(self, score, y):
        resid = score - y
        with np.errstate(over="ignore", invalid="ignore"):
            # a diverging run overflows here; the caller's finiteness check reports it
            return 0.5 * float(resid @ resid) / len(y), resid

    def curvature_matrix(self, X: np.ndarray) -> np.ndarray:
        return X.T @ X / len(X) + self.lam * np.eye(self.n_features)


class SplitLogistic(_SplitLinear):
    """Binary cross-entropy on labels in {0, 1} plus L2."""

    def _loss_resid(self, score, y):
        # log(1 + e^s) - y s, evaluated stably
        loss = np.logaddexp(0.0, score) - y * score
        resid = _sigmoid(score) - y
        return float(loss.sum()) / len(y), resid

    def curvature_matrix(self, X: np.ndarray) -> np.ndarray:
        return X.T @ X / (4 * len(X)) + self.lam * np.eye(self.n_features)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class SplitMLP:
    """Fully connected tanh network with softmax cross-entropy output.

    ``widths = [d_in, h_1, ..., d_out]``. Layers ``0 .. cut-1`` live on the
    client; the activation is the tanh output of layer ``cut-1``. Parameters
    are flattened layer by layer, weight matrix (row-major, out x in) first,
    then bias.
    """

    convex = False

    def __init__(self, widths, cut: int, lam: float = 0.0):
        widths = [int(w) for w in widths]
        if len(widths) < 3:
            raise ValueError("an MLP needs at least one hidden layer")
        n_layers = len(widths) - 1
        if not 1 <= cut <= n_layers - 1:
            raise ValueError(f"cut must lie in [1, {n_layers - 1}]")
        self.widths = widths
        self.cut = cut
        self.lam = float(lam)
        self._shapes = [(widths[k + 1], widths[k]) for k in range(n_layers)]
        sizes = [o * i + o for o, i in self._shapes]
        self.client_size = sum(sizes[:cut])
        self.server_size = sum(sizes[cut:])

    def __repr__(self) -> str:
        return f"SplitMLP(widths={self.widths}, cut={self.cut}, lam={self.lam})"

    @property
    def size(self) -> int:
        return self.client_size + self.server_size

    @property
    def n_features(self) -> int:
        return self.widths[0]

    @property
    def n_classes(self) -> int:
        return self.widths[-1]

    @property
    def cut_width(self) -> int:
        return self.widths[self.cut]

    def flops_per_sample(self) -> int:
        return 6 * self.size

    def _unpack(self, flat: np.ndarray, layers: range):
        out, pos = [], 0
        for k in layers:
            o, i = self._shapes[k]
            W = flat[pos:pos + o * i].reshape(o, i)
            pos += o * i
            b = flat[pos:pos + o]
            pos += o
            out.append((W, b))
        return out

    def _client_layers(self, x_c):
        return self._unpack(x_c, range(0, self.cut))

    def _server_layers(self, x_s):
        return self._unpack(x_s, range(self.cut, len(self._shapes)))

    def client_forward(self, x_c: np.ndarray, batch: Batch) -> np.ndarray:
        _check_len(x_c, self.client_size, "client block")
        if batch.inputs.shape[1] != self.widths[0]:
            raise ShapeError("batch feature dimension does not match the network input")
        h = batch.inputs
        for W, b in self._client_layers(x_c):
            h = np.tanh(h @ W.T + b)
        return h

    def server_loss_and_grads(self, x_s: np.ndarray, act: np.ndarray, batch: Batch):
        _check_len(x_s, self.server_size, "server block")
        if act.shape != (batch.size, self.cut_width):
            raise ShapeError(f"activation shape {act.shape} does not match batch")
        layers = self._server_layers(x_s)
        hs = [act]
        h = act
        for j, (W, b) in enumerate(layers):
            z = h @ W.T + b
            h = z if j == len(layers) - 1 else np.tanh(z)
            hs.append(h)
        data_loss, delta = _softmax_xent(hs[-1], batch.targets)
        loss = data_loss + 0.5 * self.lam * sq_norm(x_s)
        grads = []
        for j in range(len(layers) - 1, -1, -1):
            W, _ = layers[j]
            grads.append((delta.T @ hs[j], delta.sum(axis=0)))
            delta = delta @ W
            if j > 0:
                delta = delta * (1.0 - hs[j] ** 2)
        grads.reverse()
        g_s = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])
        g_s = g_s + self.lam * x_s
        return _finite_loss(loss), g_s, delta

    def client_backward(self, x_c: np.ndarray, batch: Batch, cut_grad: np.ndarray) -> np.ndarray:
        if cut_grad.shape != (batch.size, self.cut_width):
            raise ShapeError("cut gradient shape does not match batch")
        layers = self._client_layers(x_c)
        hs = [batch.inputs]
        h = batch.inputs
        for W, b in layers:
            h = np.tanh(h @ W.T + b)
            hs.append(h)
        delta = cut_grad * (1.0 - hs[-1] ** 2)
        grads = []
        for j in range(len(layers) - 1, -1, -1):
            W, _ = layers[j]
            grads.append((delta.T @ hs[j], delta.sum(axis=0)))
            if j > 0:
                delta = (delta @ W) * (1.0 - hs[j] ** 2)
        grads.reverse()
        g_c = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])
        return g_c + self.lam * x_c

    def loss_and_grad(self, x: SplitParams, batch: Batch):
        """Monolithic forward/backward through the whole network, no cut."""
        flat = x.concat()
        layers = self._unpack(flat, range(len(self._shapes)))
        hs = [batch.inputs]
        h = batch.inputs
        for j, (W, b) in enumerate(layers):
            z = h @ W.T + b
            h = z if j == len(layers) - 1 else np.tanh(z)
            hs.append(h)
        data_loss, delta = _softmax_xent(hs[-1], batch.targets)
        loss = data_loss + 0.5 * self.lam * sq_norm(flat)
        grads = []
        for j in range(len(layers) - 1, -1, -1):
            W, _ = layers[j]
            grads.append(np.concatenate([(delta.T @ hs[j]).ravel(), delta.sum(axis=0)]))
            if j > 0:
                delta = (delta @ W) * (1.0 - hs[j] ** 2)
        grads.reverse()
        return _finite_loss(loss), np.concatenate(grads) + self.lam * flat

    def init_params(self, rng=None, scale: float = 0.5) -> SplitParams:
        if rng is None:
            raise ValueError("SplitMLP needs a random stream for initialization")
        w = rng.normal(self.size, scale)
        return SplitParams.from_flat(w, self.client_size)


def _softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient with respect to the logits."""
    labels = np.asarray(labels).astype(np.int64)
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(labels))
    loss = float((lse - z[rows, labels]).sum()) / len(labels)
    p = np.exp(z - lse[:, None])
    p[rows, labels] -= 1.0
    return loss, p / len(labels)


Objective = SplitRidge | SplitLogistic | SplitMLP


# --------------------------------------------------------------------------
# Module-level operations
# --------------------------------------------------------------------------

def client_forward(obj, x_c, batch):
    return obj.client_forward(x_c, batch)


def server_loss_and_grads(obj, x_s, act, batch):
    return obj.server_loss_and_grads(x_s, act, batch)


def client_backward(obj, x_c, batch, cut_grad):
    return obj.client_backward(x_c, batch, cut_grad)


def split_step(obj, x_c: np.ndarray, x_s: np.ndarray, batch: Batch):
    """One forward/backward exchange across the cut.

    Returns ``(loss, g_c, g_s, act, cut_grad)``.
    """
    act = obj.client_forward(x_c, batch)
    loss, g_s, cut_grad = obj.server_loss_and_grads(x_s, act, batch)
    g_c = obj.client_backward(x_c, batch, cut_grad)
    return loss, g_c, g_s, act, cut_grad


def split_grad(obj, x: SplitParams, batch: Batch) -> np.ndarray:
    _, g_c, g_s, _, _ = split_step(obj, x.client, x.server, batch)
    return np.concatenate([g_c, g_s])


def full_grad(obj, x: SplitParams, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Exact gradient over a whole dataset (no sampling)."""
    return obj.loss_and_grad(x, Batch(X, y))[1]


def full_loss(obj, x: SplitParams, X: np.ndarray, y: np.ndarray) -> float:
    return obj.loss_and_grad(x, Batch(X, y))[0]


def power_iteration(A: np.ndarray, tol: float = 1e-8, max_iter: int = 200_000,
                    shift: float = 0.0) -> float:
    """Largest eigenvalue of the symmetric PSD matrix ``A - shift*I``.

    Stops when the Rayleigh quotient changes by less than ``tol`` relative.
    """
    n = A.shape[0]
    B = A - shift * np.eye(n)
    # deterministic, non-degenerate start vector
    v = np.linspace(1.0, 2.0, n)
    v /= np.linalg.norm(v)
    lam_old = float(v @ B @ v)
    for _ in range(max_iter):
        w = B @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        lam = float(v @ B @ v)
        if abs(lam - lam_old) <= tol * max(abs(lam), 1e-300):
            # two consecutive agreements guard against a lucky stall
            w = B @ v
            v2 = w / np.linalg.norm(w)
            lam2 = float(v2 @ B @ v2)
            if abs(lam2 - lam) <= tol * max(abs(lam2), 1e-300):
                return lam2
            v, lam = v2, lam2
        lam_old = lam
    return lam_old


def extreme_eigenvalues(A: np.ndarray, tol: float = 1e-8) -> tuple[float, float]:
    """``(lambda_max, lambda_min)`` of a symmetric PSD matrix by power iteration.

    The minimum comes from the shifted matrix ``lambda_max*I - A``.
    """
    lmax = power_iteration(A, tol=tol * 1e-2)
    top = power_iteration(lmax * np.eye(A.shape[0]) - A, tol=tol * 1e-4)
    return lmax, lmax - top


def convexity_constants(obj, X: np.ndarray) -> tuple[float, float]:
    """``(S, mu)`` of the objective on data ``X``.

    Ridge: extreme eigenvalues of ``X^T X / D + lam I``. Logistic: ``S`` from
    ``X^T X / (4D) + lam I`` and ``mu = lam``.
    """
    if isinstance(obj, SplitRidge):
        S, mu = extreme_eigenvalues(obj.curvature_matrix(X))
        return S, max(mu, 0.0)
    if isinstance(obj, SplitLogistic):
        S, _ = extreme_eigenvalues(obj.curvature_matrix(X))
        return S, obj.lam
    raise ConstantsUnavailable(f"constants unavailable for {type(obj).__name__}")
