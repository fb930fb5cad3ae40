"""Candidate-generation networks: policy MLP, value MLP, and selection.

The policy is a three-layer tanh MLP with a softmax head over the object
vocabulary; the value net is a two-layer tanh MLP with a scalar head.  Both
are implemented directly on numpy arrays with analytic backward passes so
gradients can be checked against finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import (AllExcluded, CacheMismatch, DimensionMismatch,
                     EmptyQuerySet, InvalidConfig, NonFiniteParameters)
from .gallery import ObjectPresenceIndex
from .ranker import RankedList, top_object_distribution

HIDDEN_DEFAULT = 256
STATE_LAYOUTS = ("text_mean_plus_dist", "dual_dist")
_LOG_FLOOR = 1e-300


@dataclass(eq=False)
class PolicyParameters:
    """Weights of the 3-layer policy MLP (Fc-Tanh-Fc-Tanh-Fc-Softmax)."""

    w1: np.ndarray   # (d_state, H)
    b1: np.ndarray   # (H,)
    w2: np.ndarray   # (H, H)
    b2: np.ndarray   # (H,)
    w3: np.ndarray   # (H, |vocab|)
    b3: np.ndarray   # (|vocab|,)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2,
                "w3": self.w3, "b3": self.b3}

    @property
    def d_state(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.w3.shape[1]

    def check_finite(self) -> None:
        for name, arr in self.arrays().items():
            if not np.all(np.isfinite(arr)):
                raise NonFiniteParameters(f"policy parameter {name} is not finite")


@dataclass(eq=False)
class ValueParameters:
    """Weights of the 2-layer value MLP (Fc-Tanh-Fc)."""

    w1: np.ndarray   # (d_state, H)
    b1: np.ndarray   # (H,)
    w2: np.ndarray   # (H, 1)
    b2: np.ndarray   # (1,)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    @property
    def d_state(self) -> int:
        return self.w1.shape[0]

    def check_finite(self) -> None:
        for name, arr in self.arrays().items():
            if not np.all(np.isfinite(arr)):
                raise NonFiniteParameters(f"value parameter {name} is not finite")


@dataclass
class ActionSet:
    """Distinct object indices proposed this round, with their log-prob."""

    objects: np.ndarray          # (n,) int64
    log_prob: float | None = None

    def __len__(self) -> int:
        return int(self.objects.size)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_policy_params(d_state: int, vocab_size: int,
                       rng: np.random.Generator,
                       hidden: int = HIDDEN_DEFAULT) -> PolicyParameters:
    """Glorot-uniform weights, zero biases."""
    return PolicyParameters(
        w1=_glorot(rng, d_state, hidden), b1=np.zeros(hidden),
        w2=_glorot(rng, hidden, hidden), b2=np.zeros(hidden),
        w3=_glorot(rng, hidden, vocab_size), b3=np.zeros(vocab_size),
    )


def init_value_params(d_state: int, rng: np.random.Generator,
                      hidden: int = HIDDEN_DEFAULT) -> ValueParameters:
    return ValueParameters(
        w1=_glorot(rng, d_state, hidden), b1=np.zeros(hidden),
        w2=_glorot(rng, hidden, 1), b2=np.zeros(1),
    )


def build_state(query_features: Iterable[np.ndarray], ranked: RankedList,
                index: ObjectPresenceIndex, k: int = 100,
                layout: str = "text_mean_plus_dist",
                shaping_dist: np.ndarray | None = None) -> np.ndarray:
    """Concatenate the query summary with the top-K object distribution.

    ``text_mean_plus_dist`` prepends the mean query feature (length d);
    ``dual_dist`` prepends the query-conditioned object distribution
    (length |vocab|), which must then be supplied as ``shaping_dist``.
    """
    feats = list(query_features)
    if not feats:
        raise EmptyQuerySet("build_state needs at least one query feature")
    dist = top_object_distribution(ranked, index, k)
    if layout == "text_mean_plus_dist":
        head = np.mean(feats, axis=0)
    elif layout == "dual_dist":
        if shaping_dist is None:
            raise InvalidConfig("dual_dist layout needs the query-object distribution")
        head = np.asarray(shaping_dist, dtype=np.float64)
        if head.shape != dist.shape:
            raise DimensionMismatch("query-object distribution length != vocab size")
    else:
        raise InvalidConfig(f"unknown state layout '{layout}'")
    return np.concatenate([head, dist])


@dataclass
class ForwardCache:
    """Activations kept for the analytic backward pass (always batched)."""

    params: object
    x: np.ndarray
    h1: np.ndarray
    h2: np.ndarray | None
    probs: np.ndarray | None
    single: bool


def _as_batch(state: np.ndarray, d_state: int, what: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(state, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != d_state:
        raise DimensionMismatch(f"{what} expects states of length {d_state}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionMismatch(f"{what} got a non-finite state")
    return arr, single


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def policy_forward(state: np.ndarray, params: PolicyParameters
                   ) -> tuple[np.ndarray, ForwardCache]:
    """Object probabilities for one state or a batch of states.

    Parameters are validated as finite when constructed, loaded, or
    updated; the forward pass validates only the state.
    """
    x, single = _as_batch(state, params.d_state, "policy_forward")
    h1 = np.tanh(x @ params.w1 + params.b1)
    h2 = np.tanh(h1 @ params.w2 + params.b2)
    probs = softmax(h2 @ params.w3 + params.b3)
    if not np.all(np.isfinite(probs)):
        params.check_finite()
        raise NonFiniteParameters("policy_forward produced non-finite probabilities")
    cache = ForwardCache(params=params, x=x, h1=h1, h2=h2, probs=probs, single=single)
    return (probs[0] if single else probs), cache


def value_forward(state: np.ndarray, params: ValueParameters
                  ) -> tuple[float | np.ndarray, ForwardCache]:
    """Scalar state value for one state or a batch of states."""
    x, single = _as_batch(state, params.d_state, "value_forward")
    h1 = np.tanh(x @ params.w1 + params.b1)
    v = (h1 @ params.w2 + params.b2)[:, 0]
    if not np.all(np.isfinite(v)):
        params.check_finite()
        raise NonFiniteParameters("value_forward produced a non-finite value")
    cache = ForwardCache(params=params, x=x, h1=h1, h2=None, probs=None, single=single)
    return (float(v[0]) if single else v), cache


def _upstream(cache: ForwardCache, grad, what: str) -> np.ndarray:
    g = np.asarray(grad, dtype=np.float64)
    if cache.single and g.ndim == 1:
        g = g[None, :]
    if g.shape[0] != cache.x.shape[0]:
        raise CacheMismatch(f"{what}: gradient batch {g.shape} does not match cache "
                            f"batch of {cache.x.shape[0]}")
    return g


def policy_backward(cache: ForwardCache, dprobs: np.ndarray | None = None,
                    dlogits: np.ndarray | None = None) -> PolicyParameters:
    """Exact parameter gradients of the policy net, summed over the batch.

    Exactly one of ``dprobs`` (gradient w.r.t. the softmax output) or
    ``dlogits`` (gradient w.r.t. the pre-softmax logits) must be given.
    """
    if (dprobs is None) == (dlogits is None):
        raise CacheMismatch("give exactly one of dprobs or dlogits")
    params: PolicyParameters = cache.params  # type: ignore[assignment]
    if cache.probs is None or not isinstance(params, PolicyParameters):
        raise CacheMismatch("policy_backward needs a cache from policy_forward")
    if dlogits is None:
        g = _upstream(cache, dprobs, "policy_backward")
        if g.shape[1] != params.vocab_size:
            raise CacheMismatch("dprobs length does not match the vocabulary size")
        p = cache.probs
        dz = p * (g - (p * g).sum(axis=1, keepdims=True))
    else:
        dz = _upstream(cache, dlogits, "policy_backward")
        if dz.shape[1] != params.vocab_size:
            raise CacheMismatch("dlogits length does not match the vocabulary size")
    dw3 = cache.h2.T @ dz
    db3 = dz.sum(axis=0)
    dh2 = dz @ params.w3.T
    dz2 = (1.0 - cache.h2 ** 2) * dh2
    dw2 = cache.h1.T @ dz2
    db2 = dz2.sum(axis=0)
    dh1 = dz2 @ params.w2.T
    dz1 = (1.0 - cache.h1 ** 2) * dh1
    dw1 = cache.x.T @ dz1
    db1 = dz1.sum(axis=0)
    return PolicyParameters(w1=dw1, b1=db1, w2=dw2, b2=db2, w3=dw3, b3=db3)


def value_backward(cache: ForwardCache, dvalue: np.ndarray | float) -> ValueParameters:
    """Exact parameter gradients of the value net, summed over the batch."""
    params: ValueParameters = cache.params  # type: ignore[assignment]
    if cache.probs is not None or not isinstance(params, ValueParameters):
        raise CacheMismatch("value_backward needs a cache from value_forward")
    g = np.asarray(dvalue, dtype=np.float64).reshape(-1)
    if g.shape[0] != cache.x.shape[0]:
        raise CacheMismatch("dvalue batch does not match the cache batch")
    dv = g[:, None]
    dw2 = cache.h1.T @ dv
    db2 = dv.sum(axis=0)
    dh1 = dv @ params.w2.T
    dz1 = (1.0 - cache.h1 ** 2) * dh1
    dw1 = cache.x.T @ dz1
    db1 = dz1.sum(axis=0)
    return ValueParameters(w1=dw1, b1=db1, w2=dw2, b2=db2)


def select_candidates(probs: np.ndarray, n: int, mode: str = "greedy",
                      excluded: Iterable[int] | np.ndarray | None = None,
                      rng: np.random.Generator | int | None = None) -> ActionSet:
    """Pick ``n`` distinct unexcluded objects from a probability vector.

    Greedy takes the top-n by probability (ties broken by ascending index);
    stochastic draws sequentially without replacement from the exclusion-
    renormalized distribution.  The recorded log-prob always sums the
    ORIGINAL probabilities of the chosen objects, a stated approximation of
    the joint draw likelihood.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1:
        raise DimensionMismatch("probs must be a vector")
    if n < 1:
        raise InvalidConfig("n must be >= 1")
    vocab_size = probs.size
    mask = np.zeros(vocab_size, dtype=bool)
    if excluded is not None:
        excl = np.asarray(excluded)
        if excl.dtype == bool:
            if excl.shape != (vocab_size,):
                raise DimensionMismatch("excluded mask length != vocab size")
            mask = excl.copy()
        elif excl.size:
            mask[excl.astype(np.int64)] = True
    available = int(vocab_size - mask.sum())
    if available == 0:
        raise AllExcluded("every object has already been asked")
    n_eff = min(n, available)

    if mode == "greedy":
        adj = np.where(mask, -np.inf, probs)
        order = np.lexsort((np.arange(vocab_size), -adj))
        chosen = order[:n_eff].astype(np.int64)
    elif mode == "stochastic":
        if isinstance(rng, (int, np.integer)) or rng is None:
            rng = np.random.default_rng(rng)
        allowed = ~mask
        weights = np.where(allowed, np.maximum(probs, 0.0), 0.0)
        picks = []
        for _ in range(n_eff):
            w = np.where(allowed, weights, 0.0)
            total = w.sum()
            if total <= 0:  # residual mass exhausted: uniform over the rest
                w = allowed.astype(np.float64)
                total = w.sum()
            idx = int(rng.choice(vocab_size, p=w / total))
            picks.append(idx)
            allowed[idx] = False
        chosen = np.array(picks, dtype=np.int64)
    else:
        raise InvalidConfig(f"unknown selection mode '{mode}'")

    log_prob = float(np.log(np.maximum(probs[chosen], _LOG_FLOOR)).sum())
    return ActionSet(objects=chosen, log_prob=log_prob)


# ---------------------------------------------------------------------------
# Persistence


def save_policy_file(path: str, policy: PolicyParameters, value: ValueParameters,
                     state_layout: str = "text_mean_plus_dist") -> None:
    """Write both networks as one JSON document with row-major nested arrays."""
    from .gallery import atomic_write_text
    doc = {
        "d_state": policy.d_state,
        "hidden": policy.hidden,
        "vocab_size": policy.vocab_size,
        "state_layout": state_layout,
        "policy": {"W1": policy.w1.tolist(), "b1": policy.b1.tolist(),
                   "W2": policy.w2.tolist(), "b2": policy.b2.tolist(),
                   "W3": policy.w3.tolist(), "b3": policy.b3.tolist()},
        "value": {"W1": value.w1.tolist(), "b1": value.b1.tolist(),
                  "W2": value.w2.tolist(), "b2": value.b2.tolist()},
    }
    atomic_write_text(path, json.dumps(doc, separators=(",", ":")) + "\n")


def load_policy_file(path: str) -> tuple[PolicyParameters, ValueParameters, dict]:
    """Load networks saved by save_policy_file; returns (policy, value, meta)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        p: Mapping = doc["policy"]
        v: Mapping = doc["value"]
        policy = PolicyParameters(
            w1=np.asarray(p["W1"], dtype=np.float64), b1=np.asarray(p["b1"], dtype=np.float64),
            w2=np.asarray(p["W2"], dtype=np.float64), b2=np.asarray(p["b2"], dtype=np.float64),
            w3=np.asarray(p["W3"], dtype=np.float64), b3=np.asarray(p["b3"], dtype=np.float64))
        value = ValueParameters(
            w1=np.asarray(v["W1"], dtype=np.float64), b1=np.asarray(v["b1"], dtype=np.float64),
            w2=np.asarray(v["W2"], dtype=np.float64), b2=np.asarray(v["b2"], dtype=np.float64))
        meta = {"d_state": int(doc["d_state"]), "hidden": int(doc["hidden"]),
                "vocab_size": int(doc["vocab_size"]),
                "state_layout": doc.get("state_layout", "text_mean_plus_dist")}
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfig(f"malformed policy file: {exc}") from exc
    if policy.d_state != meta["d_state"] or policy.vocab_size != meta["vocab_size"]:
        raise InvalidConfig("policy file header does not match the stored arrays")
    policy.check_finite()
    value.check_finite()
    return policy, value, meta
