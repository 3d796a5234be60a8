"""Pair scoring: tanh projections and group bilinear logits over all classes.

The logit vector covers every relation class plus the learnable threshold
class, which always sits at index ``TH_INDEX``. Relation id ``r`` maps to
logit index ``r + 1``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

TH_INDEX = 0


def class_index(relation_id: int) -> int:
    return relation_id + 1


def group_bilinear(z_s: Tensor, z_o: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Blockwise bilinear scores for a batch of pairs.

    ``z_s`` and ``z_o`` are [n_pairs, d]; ``weights`` is
    [n_classes, k, d/k, d/k] and ``bias`` [n_classes]. The embeddings are
    split into k consecutive groups and each class scores
    ``sum_i z_s^i' W^i z_o^i + b``; output is [n_pairs, n_classes].
    """
    if z_s.shape != z_o.shape or z_s.data.ndim != 2:
        raise ShapeError(f"group_bilinear: need matching [n, d] inputs, got "
                         f"{z_s.shape} and {z_o.shape}")
    n, d = z_s.shape
    if weights.data.ndim != 4 or bias.data.ndim != 1:
        raise ShapeError(f"group_bilinear: weights must be 4-D and bias 1-D, got "
                         f"{weights.shape} and {bias.shape}")
    n_classes, k, b1, b2 = weights.shape
    if b1 != b2 or k * b1 != d or bias.shape[0] != n_classes:
        raise ShapeError(f"group_bilinear: weights {weights.shape} incompatible with "
                         f"d={d}, bias {bias.shape}")

    zs3 = z_s.data.reshape(n, k, b1)
    zo3 = z_o.data.reshape(n, k, b1)
    out = np.einsum("pki,ckij,pkj->pc", zs3, weights.data, zo3) + bias.data

    def backward(g):
        ad._accumulate(z_s, np.einsum("pc,ckij,pkj->pki", g, weights.data, zo3).reshape(n, d))
        ad._accumulate(z_o, np.einsum("pc,ckij,pki->pkj", g, weights.data, zs3).reshape(n, d))
        ad._accumulate(weights, np.einsum("pc,pki,pkj->ckij", g, zs3, zo3))
        ad._accumulate(bias, g.sum(axis=0))

    return ad._node(out, (z_s, z_o, weights, bias), "group_bilinear", backward)


def group_bilinear_logit(z_s: Tensor, z_o: Tensor, class_weights: Tensor,
                         class_bias: Tensor) -> Tensor:
    """Scalar logit of one class for one pair: blocks [k, d/k, d/k], scalar bias."""
    d = z_s.shape[0]
    k = class_weights.shape[0]
    w = ad.reshape(class_weights, (1,) + tuple(class_weights.shape))
    b = ad.reshape(class_bias, (1,))
    out = group_bilinear(ad.reshape(z_s, (1, d)), ad.reshape(z_o, (1, d)), w, b)
    return ad.reshape(out, ())


class RelationHead:
    """Projections plus per-class group-bilinear scoring, TH class included."""

    def __init__(self, model_dim: int, n_relations: int, k: int,
                 rng: np.random.Generator, context_pooling: bool = True):
        if model_dim % k != 0:
            raise ConfigError(f"model_dim {model_dim} not divisible by k={k}")
        self.model_dim = model_dim
        self.n_relations = n_relations
        self.n_classes = n_relations + 1
        self.k = k
        self.block = model_dim // k
        self.context_pooling = context_pooling
        bound = 1.0 / np.sqrt(model_dim)

        def uniform(shape):
            return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

        self.params: dict[str, Tensor] = {
            "w_subject": uniform((model_dim, model_dim)),
            "w_object": uniform((model_dim, model_dim)),
            "w_ctx_subject": uniform((model_dim, model_dim)),
            "w_ctx_object": uniform((model_dim, model_dim)),
            "bilinear": uniform((self.n_classes, k, self.block, self.block)),
            "bias": Tensor(np.zeros(self.n_classes), requires_grad=True),
        }

    def parameter_count_per_class(self) -> int:
        return self.model_dim * self.model_dim // self.k + 1

    def project(self, h: Tensor, c: Tensor | None, side: str) -> Tensor:
        """z = tanh(W h) or tanh(W h + W_c c) for one entity vector [d]."""
        if side not in ("subject", "object"):
            raise ConfigError(f"side must be 'subject' or 'object', got {side!r}")
        w = self.params["w_subject" if side == "subject" else "w_object"]
        pre = ad.matmul(w, ad.reshape(h, (self.model_dim, 1)))
        if c is not None:
            wc = self.params["w_ctx_subject" if side == "subject" else "w_ctx_object"]
            pre = ad.add(pre, ad.matmul(wc, ad.reshape(c, (self.model_dim, 1))))
        return ad.reshape(ad.tanh(pre), (self.model_dim,))

    def pair_logits(self, h_s: Tensor, h_o: Tensor, c: Tensor | None = None) -> Tensor:
        """Logits [n_relations + 1] for one pair; index TH_INDEX is the threshold."""
        z_s = self.project(h_s, c, "subject")
        z_o = self.project(h_o, c, "object")
        d = self.model_dim
        out = group_bilinear(ad.reshape(z_s, (1, d)), ad.reshape(z_o, (1, d)),
                             self.params["bilinear"], self.params["bias"])
        return ad.reshape(out, (self.n_classes,))

    def scores(self, h_subjects: Tensor, h_objects: Tensor,
               contexts: Tensor | None = None) -> Tensor:
        """Batched logits [n_pairs, n_relations + 1] for stacked entity vectors."""
        zs_pre = ad.matmul(h_subjects, ad.transpose(self.params["w_subject"]))
        zo_pre = ad.matmul(h_objects, ad.transpose(self.params["w_object"]))
        if contexts is not None:
            zs_pre = ad.add(zs_pre, ad.matmul(contexts, ad.transpose(self.params["w_ctx_subject"])))
            zo_pre = ad.add(zo_pre, ad.matmul(contexts, ad.transpose(self.params["w_ctx_object"])))
        return group_bilinear(ad.tanh(zs_pre), ad.tanh(zo_pre),
                              self.params["bilinear"], self.params["bias"])
