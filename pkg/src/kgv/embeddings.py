"""Node/relation embedding tables and triplet energies.

All energies are "lower is better": ``S_ij`` is the energy of an image
embedding ``z`` under relation ``i`` and node ``j``. For the Gaussian
variant it is the negative log density of ``z + r_i`` under the node's
diagonal Gaussian.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

VARIANTS = ("gaussian", "transE", "transH", "distmult")
LOG_VAR_BOUNDS = (-6.0, 6.0)
LOG_2PI = float(np.log(2.0 * np.pi))
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class GaussianNodeEmbedding:
    mu: np.ndarray
    log_var: np.ndarray


@dataclass(frozen=True)
class RelationEmbedding:
    vec: np.ndarray
    frozen: bool = False
    normal: np.ndarray | None = None  # TransH hyperplane normal


def _check_variant(variant: str):
    if variant not in VARIANTS:
        raise ValueError(f"unknown score variant {variant!r}; expected one of {VARIANTS}")


class EmbeddingTables:
    """Lookup tables for one score variant.

    ``params`` maps parameter names to arrays and is what the optimizer
    updates. Gaussian runs hold ``mu``/``log_var``; the vector variants hold
    ``node``. ``normal`` exists only for TransH.
    """

    def __init__(self, variant: str, params: dict[str, np.ndarray], frozen_relations=(0,)):
        _check_variant(variant)
        self.variant = variant
        self.params = params
        self.frozen_relations = tuple(frozen_relations)
        expected = {"rel"} | ({"mu", "log_var"} if variant == "gaussian" else {"node"})
        if variant == "transH":
            expected.add("normal")
        if set(params) != expected:
            raise ValueError(f"variant/table mismatch: {variant} needs {sorted(expected)}, got {sorted(params)}")

    @property
    def d(self) -> int:
        return self.params["rel"].shape[1]

    @property
    def num_relations(self) -> int:
        return self.params["rel"].shape[0]

    @property
    def num_nodes(self) -> int:
        key = "mu" if self.variant == "gaussian" else "node"
        return self.params[key].shape[0]

    def node(self, j: int):
        if self.variant == "gaussian":
            return GaussianNodeEmbedding(self.params["mu"][j], self.params["log_var"][j])
        return self.params["node"][j]

    def relation(self, i: int) -> RelationEmbedding:
        normal = self.params["normal"][i] if self.variant == "transH" else None
        return RelationEmbedding(self.params["rel"][i], i in self.frozen_relations, normal)

    def copy(self) -> "EmbeddingTables":
        return EmbeddingTables(self.variant, {k: v.copy() for k, v in self.params.items()}, self.frozen_relations)

    def mask_gradients(self, grads: dict[str, np.ndarray]):
        """Zero the gradient rows of frozen relations, in place."""
        for i in self.frozen_relations:
            grads["rel"][i] = 0.0
            if "normal" in grads:
                grads["normal"][i] = 0.0

    def project(self):
        """Re-impose the table constraints after an optimizer step."""
        for i in self.frozen_relations:
            self.params["rel"][i] = 0.0
        if "log_var" in self.params:
            np.clip(self.params["log_var"], *LOG_VAR_BOUNDS, out=self.params["log_var"])
        if "normal" in self.params:
            w = self.params["normal"]
            w /= np.linalg.norm(w, axis=1, keepdims=True)

    # -- checkpointing --------------------------------------------------------

    def save(self, path):
        meta = {"version": CHECKPOINT_VERSION, "variant": self.variant, "frozen": list(self.frozen_relations)}
        np.savez(path, __meta__=np.array(json.dumps(meta)), **self.params)

    @classmethod
    def load(cls, path) -> "EmbeddingTables":
        with np.load(path) as f:
            meta = json.loads(str(f["__meta__"]))
            if meta["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported embedding checkpoint version {meta['version']}")
            params = {k: f[k].copy() for k in f.files if k != "__meta__"}
        return cls(meta["variant"], params, tuple(meta["frozen"]))

    def digest(self) -> str:
        h = hashlib.sha256(self.variant.encode())
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k]).tobytes())
        return h.hexdigest()


def init_tables(num_entities: int, num_relations: int, d: int, seed=0,
                variant: str = "gaussian", dtype=np.float64) -> EmbeddingTables:
    """Uniform(+-6/sqrt(d)) init for means, vectors and relations; unit variance.

    ``num_relations`` counts the inclusion relation, which is zeroed and frozen.
    """
    _check_variant(variant)
    if d < 1:
        raise ValueError("latent dimension d must be >= 1")
    rng = np.random.default_rng(seed)
    bound = 6.0 / np.sqrt(d)
    params = {}
    nodes = rng.uniform(-bound, bound, size=(num_entities, d)).astype(dtype)
    if variant == "gaussian":
        params["mu"] = nodes
        params["log_var"] = np.zeros((num_entities, d), dtype=dtype)
    else:
        params["node"] = nodes
    rel = rng.uniform(-bound, bound, size=(num_relations, d)).astype(dtype)
    rel[0] = 0.0
    params["rel"] = rel
    if variant == "transH":
        w = rng.uniform(-bound, bound, size=(num_relations, d)).astype(dtype)
        params["normal"] = w / np.linalg.norm(w, axis=1, keepdims=True)
    return EmbeddingTables(variant, params)


def init_embeddings(kg, d: int, seed=0, variant: str = "gaussian", dtype=np.float64) -> EmbeddingTables:
    return init_tables(kg.num_entities, kg.num_relations, d, seed, variant, dtype)


# -- scalar energies ------------------------------------------------------------


def gaussian_energy(x, node: GaussianNodeEmbedding) -> float:
    """Negative log density of ``x`` under a diagonal Gaussian."""
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(node.mu, dtype=np.float64)
    log_var = np.asarray(node.log_var, dtype=np.float64)
    if x.shape != mu.shape or mu.shape != log_var.shape:
        raise ValueError("dimension mismatch")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(log_var))):
        raise ValueError("non-finite input to gaussian_energy")
    diff = x - mu
    return float(0.5 * np.sum(diff * diff * np.exp(-log_var) + log_var + LOG_2PI))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def variant_energy(variant: str, z_img, rel: RelationEmbedding, node) -> float:
    _check_variant(variant)
    z = np.asarray(z_img, dtype=np.float64)
    r = np.asarray(rel.vec, dtype=np.float64)
    if variant == "gaussian":
        if not isinstance(node, GaussianNodeEmbedding):
            raise ValueError("variant/table mismatch: gaussian needs a GaussianNodeEmbedding")
        return gaussian_energy(z + r, node)
    if isinstance(node, GaussianNodeEmbedding):
        raise ValueError(f"variant/table mismatch: {variant} needs a vector node")
    t = np.asarray(node, dtype=np.float64)
    if variant == "transE":
        e = z + r - t
        return float(e @ e)
    if variant == "transH":
        if rel.normal is None:
            raise ValueError("variant/table mismatch: transH needs a hyperplane normal")
        w = np.asarray(rel.normal, dtype=np.float64)
        u = z - t
        e = u - (w @ u) * w + r
        return float(e @ e)
    return float(_softplus(-np.sum(z * r * t)))


# -- batched score matrix ------------------------------------------------------


def score_matrix(tables: EmbeddingTables, z: np.ndarray, return_cache: bool = False):
    """Energies for every (relation, node) pair.

    ``z`` of shape (d,) gives an (R, O) matrix; shape (B, d) gives (B, R, O).
    """
    single = z.ndim == 1
    zb = z[None] if single else z
    p = tables.params
    rel = p["rel"]
    v = tables.variant
    if v == "gaussian":
        x = zb[:, None, :] + rel[None, :, :]                     # (B, R, d)
        diff = x[:, :, None, :] - p["mu"][None, None, :, :]      # (B, R, O, d)
        inv_var = np.exp(-p["log_var"])                           # (O, d)
        sq = diff * diff
        S = 0.5 * (np.einsum("brod,od->bro", sq, inv_var)
                   + (p["log_var"].sum(axis=1) + LOG_2PI * tables.d)[None, None, :])
        cache = (diff, inv_var, sq)
    elif v == "transE":
        e = zb[:, None, None, :] + rel[None, :, None, :] - p["node"][None, None, :, :]
        S = np.einsum("brod,brod->bro", e, e)
        cache = (e,)
    elif v == "transH":
        w = p["normal"]                                           # (R, d)
        u = zb[:, None, :] - p["node"][None, :, :]                # (B, O, d)
        wu = np.einsum("rd,bod->bro", w, u)                       # (B, R, O)
        e = u[:, None] - wu[..., None] * w[None, :, None, :] + rel[None, :, None, :]
        S = np.einsum("brod,brod->bro", e, e)
        cache = (u, wu, e)
    else:
        zr = zb[:, None, :] * rel[None, :, :]                     # (B, R, d)
        score = np.einsum("brd,od->bro", zr, p["node"])
        S = _softplus(-score)
        cache = (zr, score)
    if single:
        S = S[0]
    if return_cache:
        return S, (single, zb, cache)
    return S


def score_matrix_backward(tables: EmbeddingTables, dS: np.ndarray, cache):
    """Gradients of ``sum(dS * S)`` w.r.t. z and every table parameter."""
    single, zb, inner = cache
    if single:
        dS = dS[None]
    p = tables.params
    v = tables.variant
    grads = {}
    if v == "gaussian":
        diff, inv_var, sq = inner
        # dS/dx = diff/var; dS/dmu = -diff/var; dS/dlog_var = 0.5 (1 - diff^2/var)
        g_x = np.einsum("bro,brod,od->brd", dS, diff, inv_var)
        dz = g_x.sum(axis=1)
        grads["rel"] = g_x.sum(axis=0)
        grads["mu"] = -np.einsum("bro,brod->od", dS, diff) * inv_var
        w_o = dS.sum(axis=(0, 1))
        grads["log_var"] = 0.5 * (w_o[:, None] - np.einsum("bro,brod->od", dS, sq) * inv_var)
    elif v == "transE":
        (e,) = inner
        g_e = 2.0 * dS[..., None] * e                              # (B, R, O, d)
        dz = g_e.sum(axis=(1, 2))
        grads["rel"] = g_e.sum(axis=(0, 2))
        grads["node"] = -g_e.sum(axis=(0, 1))
    elif v == "transH":
        u, wu, e = inner
        w = p["normal"]
        we = np.einsum("rd,brod->bro", w, e)
        # S = |e|^2 with e = u - (w.u) w + r
        g_e = 2.0 * dS[..., None] * e
        g_u = g_e - 2.0 * (dS * we)[..., None] * w[None, :, None, :]
        grads["rel"] = g_e.sum(axis=(0, 2))
        g_u_sum = g_u.sum(axis=1)                                  # (B, O, d)
        dz = g_u_sum.sum(axis=1)
        grads["node"] = -g_u_sum.sum(axis=0)
        grads["normal"] = -2.0 * (np.einsum("bro,bod->rd", dS * we, u)
                                  + np.einsum("bro,brod->rd", dS * wu, e))
    else:
        zr, score = inner
        g_score = -dS * _sigmoid(-score)                           # (B, R, O)
        node = p["node"]
        rel = p["rel"]
        g_zr = np.einsum("bro,od->brd", g_score, node)
        dz = np.einsum("brd,rd->bd", g_zr, rel)
        grads["rel"] = np.einsum("brd,bd->rd", g_zr, zb)
        grads["node"] = np.einsum("bro,brd->od", g_score, zr)
    if single:
        dz = dz[0]
    return dz, grads
