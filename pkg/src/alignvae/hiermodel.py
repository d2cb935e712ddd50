"""Sentence-level latent extension of the joint model.

A per-sentence Gaussian latent conditions both the prior over the
per-token embeddings (through a small tanh network) and the generative
and posterior heads (through additive blocks that consume the sentence
draw). With every sentence pathway zeroed the objective collapses to the
base bound, which the tests rely on.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from . import model as model_mod
from .autodiff import ParameterStore, Tensor
from .corpus import SentencePair
from .errors import ContractError, DomainError
from .model import ModelConfig


def infer_sentence_posterior(x_ids, params: ParameterStore):
    """Diagonal-Gaussian parameters of the sentence latent given x.

    The sentence is summarized by the mean of its token embeddings (so
    the result is order-invariant), then mapped by two affine heads.
    Returns ([d_s] location, [d_s] scale).
    """
    table = ad.rows(params["E"], np.asarray(x_ids, dtype=np.intp))
    pooled = ad.mean_rows(table)
    u_k = ad.add(ad.matmul(params["sent_Mu"], pooled), params["sent_bu"])
    s_k = ad.softplus(ad.add(ad.matmul(params["sent_Ms"], pooled), params["sent_bs"]))
    return u_k, s_k


def prior_mean(s: Tensor, params: ParameterStore) -> Tensor:
    """Conditional prior mean for token embeddings: one tanh hidden layer."""
    hidden = ad.tanh(ad.add(ad.matmul(params["prior_V1"], s), params["prior_c1"]))
    return ad.add(ad.matmul(params["prior_V2"], hidden), params["prior_c2"])


def infer_word_posterior_conditioned(s: Tensor, h: Tensor, params: ParameterStore):
    """Per-token posterior heads that also consume the sentence draw.

    The affine map over the concatenation [s ; h_i] is realized as the
    base head plus an additive sentence block, so zeroing the block
    reduces exactly to the unconditioned posterior.
    """
    base_u = ad.add(ad.matmul(h, ad.transpose(params["M1"])), params["d1"])
    base_s_pre = ad.add(ad.matmul(h, ad.transpose(params["M2"])), params["d2"])
    l = ad.add(base_u, ad.matmul(params["N1"], s))
    r = ad.softplus(ad.add(base_s_pre, ad.matmul(params["N2"], s)))
    return l, r


def kl_diag_gaussian(q_mean, q_scale, p_mean, p_scale) -> float:
    """KL[N(q_mean, q_scale^2) || N(p_mean, p_scale^2)] for diagonal Gaussians.

    Accepts plain vectors; the underlying graph is the one shared with
    the training objective.
    """
    q_mean = np.atleast_1d(np.asarray(q_mean, dtype=np.float64))
    q_scale = np.atleast_1d(np.asarray(q_scale, dtype=np.float64))
    p_mean = np.atleast_1d(np.asarray(p_mean, dtype=np.float64))
    p_scale = np.atleast_1d(np.asarray(p_scale, dtype=np.float64))
    if np.any(q_scale <= 0) or np.any(p_scale <= 0):
        raise DomainError("kl_diag_gaussian: scales must be strictly positive")
    d = q_mean.shape[0]
    value = model_mod.gaussian_kl_rows(
        ad.constant(q_mean.reshape(1, d)),
        ad.constant(q_scale.reshape(1, d)),
        ad.constant(p_mean),
        ad.constant(p_scale),
    )
    return float(value.data[0])


def _kl_vector(u: Tensor, s: Tensor, mu: Tensor | None = None,
               sigma: Tensor | None = None) -> Tensor:
    """Scalar KL for 1-d (u, s) through the shared matrix-shaped graph."""
    d = u.data.shape[0]
    return ad.row(
        model_mod.gaussian_kl_rows(
            ad.reshape(u, (1, d)), ad.reshape(s, (1, d)), mu, sigma
        ),
        0,
    )


def elbo_s(pair: SentencePair, params: ParameterStore, cfg: ModelConfig,
           alpha: float, eps_s: np.ndarray, eps_z: np.ndarray,
           css_pair=None) -> Tensor:
    """Single-sample bound with the sentence latent.

    Samples s from its posterior, conditions the token posteriors and the
    L1 head on it, and adds the sentence-level divergence on top of the
    (now prior-shifted) per-token divergences.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must be in [0, 1], got {alpha}")
    css_l1, css_l2 = css_pair if css_pair is not None else (None, None)
    u_k, s_k = infer_sentence_posterior(pair.x, params)
    s = ad.add(u_k, ad.mul(s_k, ad.constant(np.asarray(eps_s, dtype=np.float64))))
    h = model_mod.encode(pair.x, params, cfg)
    l, r = infer_word_posterior_conditioned(s, h, params)
    z = model_mod.reparam_sample(l, r, eps_z)
    like = ad.add(
        model_mod._l1_sum(z, pair.x, params, css_l1, s_vec=s),
        ad.total(
            model_mod._l2_log_marginals(z, pair.y, params["W2"], params["b2"], css_l2)
        ),
    )
    kl_z = ad.total(model_mod.gaussian_kl_rows(l, r, prior_mean(s, params)))
    base_shape = ad.sub(like, ad.mul(ad.constant(float(alpha)), kl_z))
    kl_s = _kl_vector(u_k, s_k)
    return ad.sub(base_shape, ad.mul(ad.constant(float(alpha)), kl_s))


def _softplus_preimage(target: float = 1.0) -> float:
    """Float x with softplus(x) == target exactly under our softplus."""
    x = math.log(math.expm1(target))
    probe = x
    for _ in range(64):
        if float(np.log1p(np.exp(probe))) == target:
            return probe
        probe = np.nextafter(probe, math.inf)
    probe = np.nextafter(x, -math.inf)
    for _ in range(64):
        if float(np.log1p(np.exp(probe))) == target:
            return float(probe)
        probe = np.nextafter(probe, -math.inf)
    raise AssertionError("no exact softplus preimage found")


def zero_sentence_pathways(params: ParameterStore) -> None:
    """Silence every sentence-latent pathway, in place.

    Zeroes the prior network, the additive posterior and generative
    blocks, and the sentence-posterior heads. The scale-head bias is set
    to the softplus preimage of 1 so the sentence posterior is exactly
    standard normal and its divergence term vanishes; the sentence draw
    itself is then pure noise consumed only by zeroed blocks.
    """
    for name in ("prior_V1", "prior_c1", "prior_V2", "prior_c2",
                 "N1", "N2", "G1", "sent_Mu", "sent_bu", "sent_Ms"):
        params[name].data = np.zeros_like(params[name].data)
    params["sent_bs"].data = np.full_like(
        params["sent_bs"].data, _softplus_preimage(1.0)
    )
