"""Action proposal network.

Embedding (conv + ReLU) -> boundary detection (two convs + sigmoid) ->
proposal generation from boundary candidates -> proposal evaluation, which
scores each proposal against class text embeddings by cosine similarity.
"""

from __future__ import annotations

import hashlib
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import nnkit as nn
from .types import FeatureSequence

DEFAULT_PROMPTS = ("{}", "the man in the scene is {}", "a video of someone {}")
CONF_TEMPERATURE = 0.2


# ---------------------------------------------------------------------------
# boundary candidates and proposals


def select_boundary_candidates(p, rel_threshold: float = 0.5) -> List[int]:
    """Indices above ``rel_threshold * max(p)`` or at a strict local peak."""
    p = np.asarray(p, dtype=np.float64)
    T = len(p)
    if T == 0:
        return []
    keep = p > rel_threshold * p.max()
    if T > 1:
        peak = np.zeros(T, dtype=bool)
        peak[1:-1] = (p[1:-1] > p[:-2]) & (p[1:-1] > p[2:])
        peak[0] = p[0] > p[1]
        peak[-1] = p[-1] > p[-2]
        keep |= peak
    return [int(i) for i in np.flatnonzero(keep)]


def generate_proposals(starts: Sequence[int], ends: Sequence[int], d_min, d_max) -> List[Tuple[int, int]]:
    """All (start, end) pairs whose duration ``end - start`` is in ``[d_min, d_max]``."""
    ends = np.asarray(sorted(ends), dtype=np.int64)
    out = []
    for s in sorted(starts):
        lo = np.searchsorted(ends, s + d_min, side="left")
        hi = np.searchsorted(ends, s + d_max, side="right")
        out.extend((int(s), int(e)) for e in ends[lo:hi])
    return out


def sampling_matrix(t_s: int, t_e: int, N: int, T: int, mode: str = "linear") -> np.ndarray:
    """``N x T`` interpolation weights for ``N`` evenly spaced points over the
    proposal window extended by a tenth of its duration on each side."""
    if N < 2:
        raise ValueError("N must be >= 2")
    d = t_e - t_s
    rel = np.linspace(-d / 10.0, d + d / 10.0, N)
    # integer/fractional split relative to t_s keeps sampling translation-exact
    base = np.floor(rel)
    frac = rel - base
    idx = t_s + base.astype(np.int64)
    low = idx + frac < 0
    high = idx + frac > T - 1
    idx[low], frac[low] = 0, 0.0
    idx[high], frac[high] = T - 1, 0.0
    if mode == "nearest":
        idx = np.where(frac >= 0.5, idx + 1, idx)
        frac = np.zeros_like(frac)
    elif mode != "linear":
        raise ValueError(f"unknown sampling mode {mode!r}")
    W = np.zeros((N, T))
    rows = np.arange(N)
    np.add.at(W, (rows, idx), 1.0 - frac)
    nxt = np.minimum(idx + 1, T - 1)
    np.add.at(W, (rows, nxt), frac)
    return W


def sample_proposal_features(X, proposal: Tuple[int, int], N: int = 32, mode: str = "linear") -> np.ndarray:
    X = X.data if isinstance(X, FeatureSequence) else np.asarray(X, dtype=np.float64)
    return sampling_matrix(proposal[0], proposal[1], N, X.shape[0], mode) @ X


def pooling_matrix(proposals: Sequence[Tuple[int, int]], N: int, T: int, mode: str = "linear") -> np.ndarray:
    """``P x T`` matrix mapping features to the mean of each proposal's N samples."""
    A = np.zeros((len(proposals), T))
    for i, (s, e) in enumerate(proposals):
        A[i] = sampling_matrix(s, e, N, T, mode).mean(axis=0)
    return A


# ---------------------------------------------------------------------------
# class text embeddings


def _token_vector(token: str, dim: int) -> np.ndarray:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.standard_normal(dim)


def prompt_class_embedding(label: str, prompts: Sequence[str] = DEFAULT_PROMPTS, dim: int = 64) -> np.ndarray:
    """Deterministic unit vector for ``label`` averaged over prompt templates."""
    if not label or not label.strip():
        raise ValueError("label text must be nonempty")
    if not prompts:
        raise ValueError("prompt set must be nonempty")
    per_prompt = []
    for z in prompts:
        text = z.replace("{}", label) if "{}" in z else f"{z} {label}"
        tokens = text.lower().split()
        per_prompt.append(np.mean([_token_vector(t, dim) for t in tokens], axis=0))
    v = np.mean(per_prompt, axis=0)
    return v / np.linalg.norm(v)


def load_class_embeddings(path, M: Optional[int] = None) -> np.ndarray:
    from .synthio import load_features

    table = load_features(path).data.copy()
    if M is not None and table.shape[0] != M:
        raise ValueError(f"{path}: expected {M} class rows, found {table.shape[0]}")
    norms = np.linalg.norm(table, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError(f"{path}: zero class embedding row")
    return table / norms


# ---------------------------------------------------------------------------
# network


class APN:
    """Parameters plus forward/backward passes of the proposal network."""

    def __init__(self, D: int, M: int, embed_dim: int = 64, hidden: int = 64,
                 class_names: Optional[Sequence[str]] = None, prompts: Sequence[str] = DEFAULT_PROMPTS,
                 class_embeddings: Optional[np.ndarray] = None, seed: int = 0):
        self.D, self.M, self.embed_dim, self.hidden = D, M, embed_dim, hidden
        rng = np.random.default_rng([seed, 7])
        H = max(1, D // 2)
        shapes = {
            "embed.W": ((3, D, D), 3 * D),
            "embed.b": ((D,), 3 * D),
            "bdm.W1": ((3, D, H), 3 * D),
            "bdm.b1": ((H,), 3 * D),
            "bdm.W2": ((3, H, 2), 3 * H),
            "bdm.b2": ((2,), 3 * H),
            "pem.cls": ((D,), D),
            "pem.W1": ((2 * D, hidden), 2 * D),
            "pem.b1": ((hidden,), 2 * D),
            "pem.Wv": ((hidden, embed_dim), hidden),
            "pem.bv": ((embed_dim,), hidden),
            "pem.Wc1": ((hidden, hidden), hidden),
            "pem.bc1": ((hidden,), hidden),
            "pem.Wc2": ((hidden, M), hidden),
            "pem.bc2": ((M,), hidden),
        }
        self.params: Dict[str, nn.Parameter] = {
            name: nn.Parameter(name, nn.init_uniform(rng, shape, fan_in)) for name, (shape, fan_in) in shapes.items()
        }
        if class_embeddings is None:
            names = list(class_names) if class_names is not None else [f"class_{j}" for j in range(M)]
            if len(names) != M:
                raise ValueError(f"got {len(names)} class names for M={M}")
            class_embeddings = np.stack([prompt_class_embedding(n, prompts, embed_dim) for n in names])
        class_embeddings = np.asarray(class_embeddings, dtype=np.float64)
        if class_embeddings.shape != (M, embed_dim):
            raise ValueError(f"class embeddings shape {class_embeddings.shape} != ({M}, {embed_dim})")
        self.params["text.C"] = nn.Parameter("text.C", class_embeddings)
        self.renormalize()

    # -- parameter plumbing

    def values(self) -> Dict[str, np.ndarray]:
        return {k: p.values for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def renormalize(self):
        C = self.params["text.C"].values
        C /= np.maximum(np.linalg.norm(C, axis=1, keepdims=True), 1e-12)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: p.values.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        for k, p in self.params.items():
            if k not in state:
                raise KeyError(f"checkpoint is missing parameter {k!r}")
            if state[k].shape != p.values.shape:
                raise ValueError(f"parameter {k!r}: checkpoint shape {state[k].shape} != {p.values.shape}")
            p.values[...] = state[k]

    def _v(self, name):
        return self.params[name].values

    # -- embedding

    def embed(self, F):
        F = F.data if isinstance(F, FeatureSequence) else np.asarray(F, dtype=np.float64)
        pre, conv_cache = nn.conv1d_forward(F, self._v("embed.W"), self._v("embed.b"))
        X, relu_cache = nn.relu_forward(pre)
        return X, (conv_cache, relu_cache)

    def embed_backward(self, dX, cache):
        conv_cache, relu_cache = cache
        _, dW, db = nn.conv1d_backward(nn.relu_backward(dX, relu_cache), conv_cache)
        self.params["embed.W"].grad += dW
        self.params["embed.b"].grad += db

    # -- boundary detection

    def bdm_forward(self, X):
        h_pre, c1 = nn.conv1d_forward(X, self._v("bdm.W1"), self._v("bdm.b1"))
        h, r1 = nn.relu_forward(h_pre)
        z, c2 = nn.conv1d_forward(h, self._v("bdm.W2"), self._v("bdm.b2"))
        probs = nn.sigmoid(z)
        return probs[:, 0], probs[:, 1], (c1, r1, c2, probs)

    def bdm_backward(self, dp_start, dp_end, cache):
        c1, r1, c2, probs = cache
        dz = nn.sigmoid_backward(np.stack([dp_start, dp_end], axis=1), probs)
        dh, dW2, db2 = nn.conv1d_backward(dz, c2)
        dX, dW1, db1 = nn.conv1d_backward(nn.relu_backward(dh, r1), c1)
        for name, g in (("bdm.W1", dW1), ("bdm.b1", db1), ("bdm.W2", dW2), ("bdm.b2", db2)):
            self.params[name].grad += g
        return dX

    # -- proposal evaluation

    def pem_pooled_forward(self, pooled):
        """Score ``P`` proposals from their mean-pooled sampled features (``P x D``).

        Returns ``(c_hat, sims, s_hat, cache)``: per-class classification
        probabilities, cosine similarities to class embeddings, and the
        similarities mapped to (0, 1).
        """
        P = pooled.shape[0]
        tokens = np.concatenate([np.broadcast_to(self._v("pem.cls"), (P, self.D)), pooled], axis=1)
        e_pre, d1 = nn.dense_forward(tokens, self._v("pem.W1"), self._v("pem.b1"))
        e, r1 = nn.relu_forward(e_pre)
        xv, dv = nn.dense_forward(e, self._v("pem.Wv"), self._v("pem.bv"))
        u, nu = nn.l2_normalize_forward(xv)
        w, nw = nn.l2_normalize_forward(self._v("text.C"))
        sims = u @ w.T
        s_hat = nn.sigmoid(sims / CONF_TEMPERATURE)
        c_pre, dc1 = nn.dense_forward(e, self._v("pem.Wc1"), self._v("pem.bc1"))
        c_h, rc = nn.relu_forward(c_pre)
        logits, dc2 = nn.dense_forward(c_h, self._v("pem.Wc2"), self._v("pem.bc2"))
        c_hat = nn.sigmoid(logits)
        cache = (d1, r1, dv, nu, nw, u, w, s_hat, dc1, rc, dc2, c_hat)
        return c_hat, sims, s_hat, cache

    def pem_pooled_backward(self, dc_hat, ds_hat, cache):
        d1, r1, dv, nu, nw, u, w, s_hat, dc1, rc, dc2, c_hat = cache
        g = self.params
        dlogits = nn.sigmoid_backward(dc_hat, c_hat)
        dch, dWc2, dbc2 = nn.dense_backward(dlogits, dc2)
        de_c, dWc1, dbc1 = nn.dense_backward(nn.relu_backward(dch, rc), dc1)
        dsims = nn.sigmoid_backward(ds_hat, s_hat) / CONF_TEMPERATURE
        du = dsims @ w
        dw = dsims.T @ u
        g["text.C"].grad += nn.l2_normalize_backward(dw, nw)
        dxv = nn.l2_normalize_backward(du, nu)
        de_v, dWv, dbv = nn.dense_backward(dxv, dv)
        dtokens, dW1, db1 = nn.dense_backward(nn.relu_backward(de_c + de_v, r1), d1)
        for name, grad in (("pem.Wc2", dWc2), ("pem.bc2", dbc2), ("pem.Wc1", dWc1), ("pem.bc1", dbc1),
                           ("pem.Wv", dWv), ("pem.bv", dbv), ("pem.W1", dW1), ("pem.b1", db1)):
            g[name].grad += grad
        g["pem.cls"].grad += dtokens[:, :self.D].sum(axis=0)
        return dtokens[:, self.D:]


def pem_forward(model: APN, proposal_feats):
    """Evaluate a single proposal from its ``N x D`` sampled features.

    Returns ``(c_hat, sims, s_hat)`` as length-M vectors.
    """
    pooled, _ = nn.mean_pool_forward(np.asarray(proposal_feats, dtype=np.float64), axis=0)
    c_hat, sims, s_hat, _ = model.pem_pooled_forward(pooled[None, :])
    return c_hat[0], sims[0], s_hat[0]


def confidence_from_similarity(sims):
    return nn.sigmoid(np.asarray(sims, dtype=np.float64) / CONF_TEMPERATURE)
