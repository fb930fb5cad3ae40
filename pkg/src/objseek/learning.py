"""Policy optimization: clipped-surrogate updates with weak shaping.

Training needs no annotated dialogs.  A co-occurrence table over the train
split turns the current query words into a target distribution over objects
(words that appear in an image's captions vote for that image's objects);
the squared distance between this distribution and the policy output is
added to the clipped PPO surrogate, scaled by a large coefficient, which is
what makes the policy converge at all.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from .encoders import tokenize
from .errors import (EmptyEpisode, EmptyQuerySet, InsufficientData,
                     InvalidConfig, NonFiniteLoss, ShapeMismatch)
from .gallery import Dataset
from .interaction import LearnedPolicy, StepRecord, evaluate, run_episode
from .policy import (PolicyParameters, ValueParameters, init_policy_params,
                     init_value_params, policy_backward, policy_forward,
                     value_backward, value_forward)
from .ranker import GalleryView

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class PpoConfig:
    """All training knobs; defaults follow the reference setup."""

    clip_epsilon: float = 0.2
    gamma: float = 0.95
    gae_lambda: float = 0.95
    epochs_per_update: int = 4
    minibatch: int = 64
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    alpha: float = 1000.0          # shaping weight
    n_s: int = 600                 # environment rounds per update
    lr_policy: float = 3e-4
    lr_value: float = 1e-3
    total_epochs: int = 500        # one epoch = one collect + update cycle
    horizon: int = 20              # rounds per training episode (T)
    n_actions: int = 10            # objects proposed per round (N_A)
    n_initial_queries: int = 1
    ranker: str = "sscan"
    k_top: int = 100
    hidden: int = 256
    state_layout: str = "text_mean_plus_dist"
    reward_mode: str = "per_step"  # or "terminal"
    accumulate_negatives: bool = True
    eval_every: int = 20           # 0 disables in-training evaluation
    eval_targets: int = 100
    eval_rounds: int = 10

    def validate(self) -> None:
        if not 0.0 < self.clip_epsilon < 1.0:
            raise InvalidConfig("clip_epsilon must be in (0, 1)")
        if not 0.0 < self.gamma <= 1.0 or not 0.0 < self.gae_lambda <= 1.0:
            raise InvalidConfig("gamma and gae_lambda must be in (0, 1]")
        if self.alpha < 0:
            raise InvalidConfig("alpha must be >= 0")
        if min(self.epochs_per_update, self.minibatch, self.n_s, self.horizon,
               self.n_actions, self.n_initial_queries, self.hidden) < 1:
            raise InvalidConfig("counts must be >= 1")
        if self.total_epochs < 0:
            raise InvalidConfig("total_epochs must be >= 0")
        if min(self.lr_policy, self.lr_value) <= 0:
            raise InvalidConfig("learning rates must be positive")
        if self.reward_mode not in ("per_step", "terminal"):
            raise InvalidConfig("reward_mode must be per_step or terminal")


# ---------------------------------------------------------------------------
# Shaping statistics


@dataclass(frozen=True)
class CooccurrenceMatrix:
    """counts[w, a] = number of split images whose captions contain word w
    and whose object set contains object a (once per image)."""

    words: tuple[str, ...]
    counts: np.ndarray             # (|words|, |vocab|) int64
    n_images: int

    @cached_property
    def word_index(self) -> dict[str, int]:
        return {w: i for i, w in enumerate(self.words)}


def build_cooccurrence(dataset: Dataset, indices: Sequence[int]) -> CooccurrenceMatrix:
    """Count caption-word / object co-occurrence over a split."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise InvalidConfig("co-occurrence over an empty split")
    word_ids: dict[str, int] = {}
    per_image: list[tuple[list[int], np.ndarray]] = []
    for i in indices:
        img = dataset.images[int(i)]
        toks = set()
        for caption in img.captions:
            toks.update(tokenize(caption))
        rows = [word_ids.setdefault(w, len(word_ids)) for w in sorted(toks)]
        per_image.append((rows, img.objects))
    counts = np.zeros((len(word_ids), dataset.vocab_size), dtype=np.int64)
    for rows, objs in per_image:
        if rows:
            counts[np.ix_(rows, objs)] += 1
    words = tuple(sorted(word_ids, key=word_ids.get))
    return CooccurrenceMatrix(words=words, counts=counts, n_images=int(indices.size))


def shaping_scores(query_texts: Sequence[str], cooc: CooccurrenceMatrix) -> np.ndarray:
    """Unnormalized query-object co-occurrence counts (tokens vote with
    multiplicity); exact integers, useful for oracle comparisons."""
    if len(query_texts) == 0:
        raise EmptyQuerySet("shaping needs at least one query")
    acc = np.zeros(cooc.counts.shape[1], dtype=np.int64)
    index = cooc.word_index
    for text in query_texts:
        for tok in tokenize(text):
            row = index.get(tok)
            if row is not None:
                acc += cooc.counts[row]
    return acc


def shaping_target(query_texts: Sequence[str], cooc: CooccurrenceMatrix) -> np.ndarray:
    """Query-conditioned object distribution from co-occurrence counts.

    A query whose tokens never appear in the split falls back to the
    uniform distribution.
    """
    acc = shaping_scores(query_texts, cooc)
    total = acc.sum()
    vocab_size = acc.size
    if total <= 0:
        return np.full(vocab_size, 1.0 / vocab_size)
    return acc / total


def shaping_loss(targets: np.ndarray, probs: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed squared distance between target distributions and policy
    outputs, with its gradient w.r.t. the policy outputs."""
    targets = np.asarray(targets, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if targets.shape != probs.shape:
        raise ShapeMismatch(f"targets {targets.shape} vs probs {probs.shape}")
    diff = probs - targets
    return float((diff ** 2).sum()), 2.0 * diff


# ---------------------------------------------------------------------------
# Advantages and Adam


def compute_advantages(rewards: Sequence[float], values: Sequence[float],
                       gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over one episode (terminal value 0).

    Returns raw (unnormalized) advantages and returns = advantages + values;
    batch-level normalization happens inside ppo_update.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if r.size == 0:
        raise EmptyEpisode("advantage estimation over an empty episode")
    if r.shape != v.shape:
        raise ShapeMismatch(f"rewards {r.shape} vs values {v.shape}")
    adv = np.empty_like(r)
    running = 0.0
    next_value = 0.0
    for t in range(r.size - 1, -1, -1):
        delta = r[t] + gamma * next_value - v[t]
        running = delta + gamma * lam * running
        adv[t] = running
        next_value = v[t]
    return adv, adv + v


@dataclass
class AdamState:
    """First/second moment estimates per parameter array."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
              eps: float = ADAM_EPS) -> None:
    """One bias-corrected Adam update, in place on the parameter arrays."""
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    state.t += 1
    for name, p in p_arrays.items():
        g = g_arrays[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, "
                                f"parameter has {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        m_hat = m / (1.0 - beta1 ** state.t)
        v_hat = v / (1.0 - beta2 ** state.t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# Trajectory buffer and the PPO update


@dataclass
class TrajectoryBuffer:
    """Flat per-step storage with episode boundaries marked by done flags."""

    states: list[np.ndarray] = field(default_factory=list)
    actions: list[np.ndarray] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    shaping: list[np.ndarray] = field(default_factory=list)
    dones: list[bool] = field(default_factory=list)

    def add(self, state, actions, log_prob, value, reward, shaping, done) -> None:
        if not np.isfinite(reward) or not np.isfinite(value):
            raise NonFiniteLoss("non-finite reward or value entering the buffer")
        self.states.append(np.asarray(state, dtype=np.float64))
        self.actions.append(np.asarray(actions, dtype=np.int64))
        self.log_probs.append(float(log_prob))
        self.values.append(float(value))
        self.rewards.append(float(reward))
        self.shaping.append(np.asarray(shaping, dtype=np.float64))
        self.dones.append(bool(done))

    @property
    def n_rounds(self) -> int:
        return len(self.states)

    def episode_slices(self) -> list[slice]:
        slices = []
        start = 0
        for i, done in enumerate(self.dones):
            if done:
                slices.append(slice(start, i + 1))
                start = i + 1
        if start < len(self.dones):
            slices.append(slice(start, len(self.dones)))
        return slices

    def clear(self) -> None:
        for lst in (self.states, self.actions, self.log_probs, self.values,
                    self.rewards, self.shaping, self.dones):
            lst.clear()


@dataclass
class UpdateStats:
    loss_ppo: float
    loss_value: float
    loss_shaping: float
    entropy: float
    n_steps: int
    n_minibatches: int


def ppo_update(buffer: TrajectoryBuffer, policy: PolicyParameters,
               value: ValueParameters, config: PpoConfig, *,
               policy_opt: AdamState | None = None,
               value_opt: AdamState | None = None,
               rng: np.random.Generator | None = None,
               require_full_buffer: bool = True) -> UpdateStats:
    """Clipped-surrogate update over the buffered rounds; clears the buffer.

    Per minibatch the total objective is
    ``L_clip + value_coef * L_value - entropy_coef * H + alpha * L_shaping``
    with the shaping term summed over the minibatch, and each network gets
    its own Adam step at its own learning rate.
    """
    if require_full_buffer and buffer.n_rounds < config.n_s:
        raise InsufficientData(f"buffer holds {buffer.n_rounds} rounds, "
                               f"needs {config.n_s}")
    if buffer.n_rounds == 0:
        raise InsufficientData("buffer is empty")
    if rng is None:
        rng = np.random.default_rng(0)
    policy_opt = policy_opt if policy_opt is not None else AdamState()
    value_opt = value_opt if value_opt is not None else AdamState()

    states = np.stack(buffer.states)
    logp_old = np.asarray(buffer.log_probs, dtype=np.float64)
    targets = np.stack(buffer.shaping)
    n_total = buffer.n_rounds
    vocab_size = policy.vocab_size
    action_hot = np.zeros((n_total, vocab_size), dtype=np.float64)
    action_count = np.zeros(n_total, dtype=np.float64)
    for i, acts in enumerate(buffer.actions):
        action_hot[i, acts] = 1.0
        action_count[i] = acts.size

    advantages = np.empty(n_total, dtype=np.float64)
    returns = np.empty(n_total, dtype=np.float64)
    for sl in buffer.episode_slices():
        adv, ret = compute_advantages(buffer.rewards[sl], buffer.values[sl],
                                      config.gamma, config.gae_lambda)
        advantages[sl] = adv
        returns[sl] = ret
    advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

    sums = {"loss_ppo": 0.0, "loss_value": 0.0, "loss_shaping": 0.0, "entropy": 0.0}
    n_minibatches = 0
    for _ in range(config.epochs_per_update):
        order = rng.permutation(n_total)
        for start in range(0, n_total, config.minibatch):
            mb = order[start:start + config.minibatch]
            b = mb.size
            probs, cache = policy_forward(states[mb], policy)
            logp_new = (action_hot[mb] * np.log(np.maximum(probs, 1e-300))).sum(axis=1)
            ratio = np.exp(logp_new - logp_old[mb])
            adv = advantages[mb]
            unclipped = ratio * adv
            clipped = np.clip(ratio, 1.0 - config.clip_epsilon,
                              1.0 + config.clip_epsilon) * adv
            loss_clip = -float(np.minimum(unclipped, clipped).mean())
            entropy_each = -(probs * np.log(np.maximum(probs, 1e-300))).sum(axis=1)
            entropy = float(entropy_each.mean())
            l_shape, dprobs_shape = shaping_loss(targets[mb], probs)

            vals, vcache = value_forward(states[mb], value)
            loss_value = float(((vals - returns[mb]) ** 2).mean())

            total = (loss_clip + config.value_coef * loss_value
                     - config.entropy_coef * entropy + config.alpha * l_shape)
            if not np.isfinite(total):
                raise NonFiniteLoss(
                    f"non-finite loss at minibatch {n_minibatches}: clip={loss_clip} "
                    f"value={loss_value} shaping={l_shape} entropy={entropy}")

            # d(total)/d(logits), assembled analytically term by term.
            active = (unclipped <= clipped).astype(np.float64)
            coef = -(adv * ratio * active) / b
            dz = coef[:, None] * (action_hot[mb] - action_count[mb][:, None] * probs)
            dz += (config.entropy_coef / b) * probs * (
                np.log(np.maximum(probs, 1e-300)) + entropy_each[:, None])
            p_dot = (probs * dprobs_shape).sum(axis=1, keepdims=True)
            dz += config.alpha * probs * (dprobs_shape - p_dot)
            grads_p = policy_backward(cache, dlogits=dz)
            adam_step(policy, grads_p, policy_opt, config.lr_policy)

            dval = config.value_coef * 2.0 * (vals - returns[mb]) / b
            grads_v = value_backward(vcache, dval)
            adam_step(value, grads_v, value_opt, config.lr_value)

            sums["loss_ppo"] += loss_clip
            sums["loss_value"] += loss_value
            sums["loss_shaping"] += l_shape / b
            sums["entropy"] += entropy
            n_minibatches += 1

    policy.check_finite()
    value.check_finite()
    buffer.clear()
    return UpdateStats(loss_ppo=sums["loss_ppo"] / n_minibatches,
                       loss_value=sums["loss_value"] / n_minibatches,
                       loss_shaping=sums["loss_shaping"] / n_minibatches,
                       entropy=sums["entropy"] / n_minibatches,
                       n_steps=n_total, n_minibatches=n_minibatches)


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class TrainResult:
    policy: PolicyParameters
    value: ValueParameters
    log: list[dict]
    config: PpoConfig
    elapsed_seconds: float


def train(dataset: Dataset, config: PpoConfig, seed: int = 0, *,
          progress: bool = False) -> TrainResult:
    """Full training loop: collect episodes, update every n_s rounds.

    One epoch is one collect-and-update cycle.  Episode targets and initial
    captions are drawn from the train split; rewards are the query-target
    similarity after each round's positives were appended.  Deterministic
    in ``seed``.
    """
    config.validate()
    train_idx = dataset.split_indices("train")
    if train_idx.size == 0:
        raise InvalidConfig("dataset has no train images")
    view = GalleryView(dataset, train_idx)
    cooc = build_cooccurrence(dataset, train_idx)

    if config.state_layout == "text_mean_plus_dist":
        d_state = dataset.feature_dim + dataset.vocab_size
    else:
        d_state = 2 * dataset.vocab_size
    master = np.random.default_rng(seed)
    policy = init_policy_params(d_state, dataset.vocab_size, master, config.hidden)
    value = init_value_params(d_state, master, config.hidden)
    policy_opt = AdamState()
    value_opt = AdamState()
    update_rng = np.random.default_rng(master.integers(2 ** 63))
    shaping_fn = None
    if config.state_layout == "dual_dist":
        shaping_fn = lambda texts: shaping_target(texts, cooc)  # noqa: E731

    actor = LearnedPolicy(policy, mode="stochastic")
    buffer = TrajectoryBuffer()
    log: list[dict] = []
    started = time.perf_counter()

    for epoch in range(1, config.total_epochs + 1):
        epoch_rewards: list[float] = []

        def hook(step: StepRecord) -> None:
            val, _ = value_forward(step.state, value)
            reward = step.reward
            if config.reward_mode == "terminal" and not step.done:
                reward = 0.0
            buffer.add(step.state, step.actions, step.log_prob, val, reward,
                       shaping_target(step.query_texts, cooc), step.done)
            epoch_rewards.append(step.reward)

        while buffer.n_rounds < config.n_s:
            target = dataset.images[int(train_idx[master.integers(train_idx.size)])]
            episode_rng = np.random.default_rng(master.integers(2 ** 63))
            run_episode(dataset, target.id, actor, view=view,
                        n_initial_queries=min(config.n_initial_queries,
                                              len(target.captions)),
                        n_actions=config.n_actions, max_rounds=config.horizon,
                        ranker=config.ranker, k_top=config.k_top, rng=episode_rng,
                        accumulate_negatives=config.accumulate_negatives,
                        state_layout=config.state_layout, shaping_fn=shaping_fn,
                        step_hook=hook)

        stats = ppo_update(buffer, policy, value, config,
                           policy_opt=policy_opt, value_opt=value_opt,
                           rng=update_rng, require_full_buffer=False)

        r10_eval = mr_eval = None
        if config.eval_every and (epoch % config.eval_every == 0
                                  or epoch == config.total_epochs):
            r10_eval, mr_eval = _quick_eval(dataset, policy, config)
        record = {"epoch": epoch,
                  "mean_reward": float(np.mean(epoch_rewards)),
                  "loss_ppo": stats.loss_ppo,
                  "loss_shaping": stats.loss_shaping,
                  "r_at_10_eval": r10_eval,
                  "mean_rank_eval": mr_eval}
        log.append(record)
        if progress:
            print(f"epoch {epoch}/{config.total_epochs} "
                  f"reward={record['mean_reward']:.4f} "
                  f"ppo={stats.loss_ppo:.4f} shaping={stats.loss_shaping:.5f}"
                  + (f" r10={r10_eval:.1f} mr={mr_eval:.1f}" if r10_eval is not None else ""))

    return TrainResult(policy=policy, value=value, log=log, config=config,
                       elapsed_seconds=time.perf_counter() - started)


def _quick_eval(dataset: Dataset, policy: PolicyParameters,
                config: PpoConfig) -> tuple[float, float]:
    """Greedy R@10 / Mean Rank on a test subsample at the final round."""
    cooc_fn = None
    if config.state_layout == "dual_dist":
        cooc = build_cooccurrence(dataset, dataset.split_indices("train"))
        cooc_fn = lambda texts: shaping_target(texts, cooc)  # noqa: E731
    split = "test" if dataset.split_indices("test").size else "train"
    report = evaluate(dataset, LearnedPolicy(policy, mode="greedy"),
                      settings=((config.n_initial_queries, config.n_actions),),
                      t_eval=config.eval_rounds, seeds=(0,), split=split,
                      ranker=config.ranker, k_top=config.k_top,
                      accumulate_negatives=config.accumulate_negatives,
                      state_layout=config.state_layout, shaping_fn=cooc_fn,
                      max_targets=config.eval_targets)
    last = report["settings"][0]["rounds"][-1]
    return last["r10"], last["mr"]


def config_from_dict(doc: dict) -> PpoConfig:
    """Build a PpoConfig from a plain dict, rejecting unknown keys."""
    known = {f.name for f in PpoConfig.__dataclass_fields__.values()}
    unknown = set(doc) - known
    if unknown:
        raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
    cfg = replace(PpoConfig(), **doc)
    cfg.validate()
    return cfg
