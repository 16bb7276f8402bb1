"""Stacked LSTM with a linear head, written directly in numpy.

Shapes are time-major: inputs ``(T, B, D)``, masks ``(T, B)``. Gates are
packed in the order input, forget, cell, output inside one weight matrix of
shape ``(D + H, 4H)`` acting on ``[x_t, h_{t-1}]``. Everything runs in
float64 and step by step, so padding a batch with extra masked steps at the
end leaves every real computation bit-identical.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CHECKPOINT_VERSION = 1


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(y):
    z = y - y.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class SeqModelParams:
    """Weights and hyperparameters of one model.

    ``loss`` is ``"nll"`` (softmax classifier) or ``"mae"`` (scalar
    regression, ``W_out`` has a single column).
    """

    W: list
    b: list
    W_out: np.ndarray
    b_out: np.ndarray
    loss: str = "nll"
    dropout: float = 0.2
    clip: float = 0.01
    clip_mode: str = "value"

    @property
    def n_layers(self):
        return len(self.W)

    @property
    def hidden(self):
        return tuple(w.shape[1] // 4 for w in self.W)

    @property
    def n_in(self):
        return self.W[0].shape[0] - self.hidden[0]

    @property
    def n_out(self):
        return self.W_out.shape[1]

    def arrays(self):
        out = []
        for w, b in zip(self.W, self.b):
            out += [w, b]
        return out + [self.W_out, self.b_out]

    def with_arrays(self, arrays):
        L = self.n_layers
        return SeqModelParams([arrays[2 * i] for i in range(L)],
                              [arrays[2 * i + 1] for i in range(L)],
                              arrays[2 * L], arrays[2 * L + 1],
                              self.loss, self.dropout, self.clip, self.clip_mode)

    def copy(self):
        return self.with_arrays([a.copy() for a in self.arrays()])

    def check(self):
        H = self.hidden
        d = self.n_in
        for l, (w, b) in enumerate(zip(self.W, self.b)):
            if w.shape != (d + H[l], 4 * H[l]) or b.shape != (4 * H[l],):
                raise ValueError(f"layer {l}: inconsistent shapes {w.shape}, {b.shape}")
            d = H[l]
        if self.W_out.shape[0] != H[-1] or self.b_out.shape != (self.W_out.shape[1],):
            raise ValueError("output projection does not match the last layer")
        if self.loss == "mae" and self.n_out != 1:
            raise ValueError("regression head must have one output")
        for a in self.arrays():
            if not np.all(np.isfinite(a)):
                raise ValueError("non-finite parameter")
        return self

    def save(self, path):
        meta = np.array([CHECKPOINT_VERSION, self.n_layers, self.dropout, self.clip])
        np.savez(path, meta=meta, loss=np.array(self.loss), clip_mode=np.array(self.clip_mode),
                 **{f"a{i}": a for i, a in enumerate(self.arrays())})

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            meta = z["meta"]
            if int(meta[0]) != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {int(meta[0])}")
            L = int(meta[1])
            arrays = [z[f"a{i}"] for i in range(2 * L + 2)]
            proto = cls([None] * L, [None] * L, None, None, str(z["loss"]), float(meta[2]),
                        float(meta[3]), str(z["clip_mode"]))
        return proto.with_arrays(arrays).check()


def init_params(n_in, hidden, n_out, loss, rng, dropout=0.2, clip=0.01, clip_mode="value"):
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, forget-gate bias 1."""
    W, b = [], []
    d = n_in
    for H in hidden:
        s = 1.0 / np.sqrt(H)
        W.append(rng.uniform(-s, s, size=(d + H, 4 * H)))
        bias = np.zeros(4 * H)
        bias[H:2 * H] = 1.0
        b.append(bias)
        d = H
    s = 1.0 / np.sqrt(d)
    W_out = rng.uniform(-s, s, size=(d, n_out))
    return SeqModelParams(W, b, W_out, np.zeros(n_out), loss, dropout, clip, clip_mode)


def zero_params(n_in, hidden, n_out, loss="nll"):
    W, b, d = [], [], n_in
    for H in hidden:
        W.append(np.zeros((d + H, 4 * H)))
        b.append(np.zeros(4 * H))
        d = H
    return SeqModelParams(W, b, np.zeros((d, n_out)), np.zeros(n_out), loss)


def _head(params, h):
    y = h @ params.W_out + params.b_out
    if params.loss == "nll":
        return softmax(y)
    return y[..., 0]


def lstm_forward(params: SeqModelParams, X, mask=None, train_mode=False, rng=None):
    """Run the network over a padded batch.

    Returns ``(outputs, cache)``: class probabilities ``(T, B, K)`` for the
    classifier or predictions ``(T, B)`` for the regressor. Dropout on the
    activations passed between layers is active only when ``train_mode``.
    """
    X = np.asarray(X, dtype=float)
    T, B, _ = X.shape
    if mask is None:
        mask = np.ones((T, B), dtype=bool)
    L = params.n_layers
    H = params.hidden
    drop = None
    if train_mode and params.dropout > 0 and L > 1:
        if rng is None:
            raise ValueError("training-mode forward needs an rng for dropout")
        keep = 1.0 - params.dropout
        drop = [(rng.random((T, B, H[l])) < keep) / keep for l in range(L - 1)]
    layers = []
    inp = X
    for l in range(L):
        W, b, Hl = params.W[l], params.b[l], H[l]
        h = np.zeros((B, Hl))
        c = np.zeros((B, Hl))
        Z = np.empty((T, B, inp.shape[2] + Hl))
        G = np.empty((T, B, 4 * Hl))
        C = np.empty((T + 1, B, Hl))
        C[0] = c
        Hs = np.empty((T, B, Hl))
        for t in range(T):
            z = np.concatenate([inp[t], h], axis=1)
            a = z @ W + b
            i = sigmoid(a[:, :Hl])
            f = sigmoid(a[:, Hl:2 * Hl])
            g = np.tanh(a[:, 2 * Hl:3 * Hl])
            o = sigmoid(a[:, 3 * Hl:])
            c = f * c + i * g
            h = o * np.tanh(c)
            Z[t] = z
            G[t, :, :Hl], G[t, :, Hl:2 * Hl], G[t, :, 2 * Hl:3 * Hl], G[t, :, 3 * Hl:] = i, f, g, o
            C[t + 1] = c
            Hs[t] = h
        bad = ~np.all(np.isfinite(Hs), axis=(1, 2))
        if bad.any():
            raise FloatingPointError(f"non-finite activation in layer {l} at step "
                                     f"{int(np.argmax(bad))}")
        layers.append((Z, G, C, Hs))
        inp = Hs * drop[l] if (drop is not None and l < L - 1) else Hs
    out = _head(params, inp)
    return out, {"layers": layers, "drop": drop, "top": inp, "mask": mask, "out": out}


def step_loss(params, out, Y, mask):
    """Per-step loss terms (zero where masked)."""
    if params.loss == "nll":
        T, B, K = out.shape
        p = np.take_along_axis(out, np.asarray(Y, dtype=np.int64)[..., None], axis=-1)[..., 0]
        with np.errstate(divide="ignore"):
            term = -np.log(np.where(mask, p, 1.0))
    else:
        term = np.abs(out - Y)
    return np.where(mask, term, 0.0)


def loss_and_grads(params: SeqModelParams, X, Y, mask, train_mode=False, rng=None):
    """Mean loss over unmasked steps and its gradient for every array."""
    out, cache = lstm_forward(params, X, mask, train_mode, rng)
    mask = np.asarray(mask, dtype=bool)
    n = max(int(mask.sum()), 1)
    loss = float(step_loss(params, out, Y, mask).sum() / n)
    w = mask / n
    if params.loss == "nll":
        dy = out.copy()
        Yi = np.asarray(Y, dtype=np.int64)
        np.put_along_axis(dy, Yi[..., None],
                          np.take_along_axis(dy, Yi[..., None], axis=-1) - 1.0, axis=-1)
        dy *= w[..., None]
    else:
        dy = (np.sign(out - Y) * w)[..., None]
    grads = backward(params, cache, dy)
    return loss, grads, out


def backward(params, cache, dy):
    """Backpropagation through time given ``dy`` on the pre-activation head."""
    layers, drop, top = cache["layers"], cache["drop"], cache["top"]
    T, B, _ = dy.shape
    L = params.n_layers
    H = params.hidden
    dW_out = np.zeros_like(params.W_out)
    db_out = np.zeros_like(params.b_out)
    dh_in = np.empty((T, B, H[-1]))
    for t in range(T - 1, -1, -1):
        dW_out += top[t].T @ dy[t]
        db_out += dy[t].sum(axis=0)
        dh_in[t] = dy[t] @ params.W_out.T
    dW = [None] * L
    db = [None] * L
    for l in range(L - 1, -1, -1):
        W, Hl = params.W[l], H[l]
        Z, G, C, _ = layers[l]
        D = Z.shape[2] - Hl
        gW = np.zeros_like(W)
        gb = np.zeros_like(params.b[l])
        dx = np.empty((T, B, D))
        dh_next = np.zeros((B, Hl))
        dc_next = np.zeros((B, Hl))
        for t in range(T - 1, -1, -1):
            i, f, g, o = (G[t, :, :Hl], G[t, :, Hl:2 * Hl], G[t, :, 2 * Hl:3 * Hl],
                          G[t, :, 3 * Hl:])
            tc = np.tanh(C[t + 1])
            dh = dh_in[t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            da = np.concatenate([dc * g * i * (1.0 - i),
                                 dc * C[t] * f * (1.0 - f),
                                 dc * i * (1.0 - g * g),
                                 dh * tc * o * (1.0 - o)], axis=1)
            gW += Z[t].T @ da
            gb += da.sum(axis=0)
            dz = da @ W.T
            dx[t] = dz[:, :D]
            dh_next = dz[:, D:]
            dc_next = dc * f
        dW[l], db[l] = gW, gb
        if l > 0:
            dh_in = dx * drop[l - 1] if drop is not None else dx
    grads = []
    for l in range(L):
        grads += [dW[l], db[l]]
    return grads + [dW_out, db_out]


def clip_gradients(grads, clip, mode="value"):
    """Per-component value clipping or global-norm clipping."""
    if clip is None or clip <= 0:
        return grads
    if mode == "value":
        return [np.clip(g, -clip, clip) for g in grads]
    if mode == "norm":
        norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
        if norm > clip:
            return [g * (clip / norm) for g in grads]
        return grads
    raise ValueError(f"unknown clip mode {mode!r}")


class Adam:
    def __init__(self, arrays, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays, grads):
        """Update ``arrays`` in place."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def initial_state(params, batch):
    return [(np.zeros((batch, h)), np.zeros((batch, h))) for h in params.hidden]


def lstm_step(params, x, state):
    """Advance one inference step for a batch ``x`` of shape ``(B, D)``.

    Returns ``(output, new_state)``; equivalent to one time step of
    :func:`lstm_forward` in evaluation mode.
    """
    inp = np.asarray(x, dtype=float)
    new = []
    for l, (h, c) in enumerate(state):
        Hl = params.hidden[l]
        a = np.concatenate([inp, h], axis=1) @ params.W[l] + params.b[l]
        i = sigmoid(a[:, :Hl])
        f = sigmoid(a[:, Hl:2 * Hl])
        g = np.tanh(a[:, 2 * Hl:3 * Hl])
        o = sigmoid(a[:, 3 * Hl:])
        c = f * c + i * g
        h = o * np.tanh(c)
        new.append((h, c))
        inp = h
    return _head(params, inp), new
