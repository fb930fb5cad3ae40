"""The interactive retrieval loop: sessions, episodes, baselines, evaluation.

One round proposes candidate objects, receives confirmations (from the
simulated user or a human), appends confirmed-present object words to the
query set, accumulates confirmed-absent objects for refinement, and re-ranks
the gallery.  The same ``RetrievalSession`` engine drives simulated
episodes, batch evaluation, and the HTTP service, so their round-by-round
rankings are identical by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .encoders import encode_text
from .errors import AllExcluded, EmptyQuerySet, InvalidConfig, UnknownTarget
from .gallery import Dataset, GalleryImage
from .policy import ActionSet, PolicyParameters, build_state, policy_forward, select_candidates
from .ranker import GalleryView, gallery_scores, mean_rank, rank_gallery, recall_at_k

EVAL_SETTINGS_DEFAULT = ((1, 10), (2, 5), (4, 3))


@dataclass(frozen=True)
class ProposalContext:
    """Everything a candidate policy may look at when proposing objects."""

    state: np.ndarray
    query_features: tuple[np.ndarray, ...]
    query_texts: tuple[str, ...]
    asked: np.ndarray            # (|vocab|,) bool, True = already proposed
    n_actions: int
    rng: np.random.Generator
    view: GalleryView
    dataset: Dataset


class PolicySource(Protocol):
    name: str

    def propose(self, ctx: ProposalContext) -> ActionSet: ...


def oracle_confirm(candidates: ActionSet | np.ndarray | Sequence[int],
                   target: GalleryImage) -> tuple[np.ndarray, np.ndarray]:
    """Simulated user: partition candidates by presence in the target image."""
    objs = candidates.objects if isinstance(candidates, ActionSet) else np.asarray(candidates)
    objs = objs.astype(np.int64)
    present = set(int(o) for o in target.objects)
    mask = np.array([int(o) in present for o in objs], dtype=bool)
    return np.sort(objs[mask]), np.sort(objs[~mask])


# ---------------------------------------------------------------------------
# Candidate policies


class LearnedPolicy:
    """MLP policy head; greedy at test time, stochastic during training."""

    name = "learned"

    def __init__(self, params: PolicyParameters, mode: str = "greedy"):
        if mode not in ("greedy", "stochastic"):
            raise InvalidConfig(f"unknown selection mode '{mode}'")
        params.check_finite()
        self.params = params
        self.mode = mode

    def propose(self, ctx: ProposalContext) -> ActionSet:
        probs, _ = policy_forward(ctx.state, self.params)
        return select_candidates(probs, ctx.n_actions, self.mode, ctx.asked, ctx.rng)


def baseline_random(vocab_size: int, asked: np.ndarray, n_actions: int,
                    rng: np.random.Generator | int | None) -> ActionSet:
    """Uniform draw without replacement over the unasked objects."""
    mask = _asked_mask(asked, vocab_size)
    unasked = np.nonzero(~mask)[0]
    if unasked.size == 0:
        raise AllExcluded("every object has already been asked")
    if isinstance(rng, (int, np.integer)) or rng is None:
        rng = np.random.default_rng(rng)
    picks = rng.choice(unasked, size=min(n_actions, unasked.size), replace=False)
    return ActionSet(objects=picks.astype(np.int64))


def _asked_mask(asked, vocab_size: int) -> np.ndarray:
    arr = np.asarray(asked) if asked is not None else np.zeros(vocab_size, dtype=bool)
    if arr.dtype == bool:
        return arr
    mask = np.zeros(vocab_size, dtype=bool)
    if arr.size:
        mask[arr.astype(np.int64)] = True
    return mask


def object_query_affinity(query_features: Sequence[np.ndarray],
                          dataset: Dataset) -> np.ndarray:
    """Mean cosine between the queries and each object word's feature."""
    feats = list(query_features)
    if not feats:
        raise EmptyQuerySet("affinity scoring needs at least one query")
    return dataset.embeddings @ np.mean(feats, axis=0)


def baseline_qasim(query_features: Sequence[np.ndarray], dataset: Dataset,
                   asked: np.ndarray, n_actions: int) -> ActionSet:
    """Objects whose word features are most similar to the current queries."""
    scores = object_query_affinity(query_features, dataset)
    act = select_candidates(scores, n_actions, "greedy", _asked_mask(asked, scores.size))
    act.log_prob = None
    return act


def build_joint_cooccurrence(dataset: Dataset, indices: Sequence[int]) -> np.ndarray:
    """Joint object distribution over images of a split: P_c[i, j] is the
    fraction of same-image pairs (i, j), i != j, among all ordered pairs."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise InvalidConfig("joint co-occurrence over an empty split")
    v = dataset.vocab_size
    counts = np.zeros((v, v), dtype=np.float64)
    for i in indices:
        objs = dataset.images[int(i)].objects
        counts[np.ix_(objs, objs)] += 1.0
    np.fill_diagonal(counts, 0.0)
    total = counts.sum()
    return counts / total if total > 0 else counts


def baseline_qacohe(query_features: Sequence[np.ndarray], p_c: np.ndarray,
                    dataset: Dataset, asked: np.ndarray, n_actions: int,
                    rng: np.random.Generator | int | None = None) -> ActionSet:
    """Objects that co-occur most with the query's best-matching object.

    Falls back to the random baseline for rounds where the anchor object's
    co-occurrence row carries no mass over the unasked objects.
    """
    scores = object_query_affinity(query_features, dataset)
    a_star = int(np.argmax(scores))
    row = p_c[a_star]
    mask = _asked_mask(asked, scores.size)
    if row[~mask].sum() <= 0.0:
        return baseline_random(scores.size, mask, n_actions, rng)
    act = select_candidates(row, n_actions, "greedy", mask)
    act.log_prob = None
    return act


class RandomPolicy:
    name = "random"

    def propose(self, ctx: ProposalContext) -> ActionSet:
        return baseline_random(ctx.dataset.vocab_size, ctx.asked, ctx.n_actions, ctx.rng)


class QASimPolicy:
    name = "qasim"

    def propose(self, ctx: ProposalContext) -> ActionSet:
        return baseline_qasim(ctx.query_features, ctx.dataset, ctx.asked, ctx.n_actions)


class QACohePolicy:
    name = "qacohe"

    def __init__(self, p_c: np.ndarray):
        self.p_c = p_c

    def propose(self, ctx: ProposalContext) -> ActionSet:
        return baseline_qacohe(ctx.query_features, self.p_c, ctx.dataset,
                               ctx.asked, ctx.n_actions, ctx.rng)


# ---------------------------------------------------------------------------
# Session engine


class RetrievalSession:
    """Mutable state of one interactive retrieval episode.

    After construction the session holds the round-0 ranking plus the first
    pending candidate set; each ``apply_confirmations`` call advances one
    round.  ``pending`` becomes None once the round budget or the
    vocabulary is exhausted.
    """

    def __init__(self, view: GalleryView, policy: PolicySource,
                 queries: Sequence[str], *, ranker: str = "sscan",
                 n_actions: int = 10, max_rounds: int = 20, k_top: int = 100,
                 target_id: str | None = None,
                 rng: np.random.Generator | int | None = None,
                 accumulate_negatives: bool = True,
                 state_layout: str = "text_mean_plus_dist",
                 shaping_fn: Callable[[tuple[str, ...]], np.ndarray] | None = None):
        if not queries:
            raise EmptyQuerySet("a session needs at least one initial query")
        if n_actions < 1:
            raise InvalidConfig("n_actions must be >= 1")
        if max_rounds < 0:
            raise InvalidConfig("max_rounds must be >= 0")
        self.view = view
        self.dataset = view.dataset
        self.policy = policy
        self.ranker = ranker
        self.n_actions = n_actions
        self.max_rounds = max_rounds
        self.k_top = k_top
        self.state_layout = state_layout
        self.shaping_fn = shaping_fn
        self.accumulate_negatives = accumulate_negatives
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.target_id = target_id
        self.target_pos = view.require_target(target_id) if target_id is not None else None

        n = view.n_images
        v = self.dataset.vocab_size
        self.round = 0
        self.query_texts: list[str] = []
        self.query_features: list[np.ndarray] = []
        self._score_sum = np.zeros(n, dtype=np.float64)
        self.asked = np.zeros(v, dtype=bool)
        self.positives: list[int] = []
        self.negatives: list[int] = []
        self._neg_mask = np.zeros(n, dtype=bool)      # accumulated refinement mask
        self._active_mask = np.zeros(n, dtype=bool)   # mask used by the last rescore
        self.exhausted = False
        self.pending: ActionSet | None = None
        self._proposal_state: np.ndarray | None = None
        self._proposal_texts: tuple[str, ...] = ()

        for q in queries:
            self._append_query(q)
        self._rescore()
        self._propose()

    # -- internals

    def _append_query(self, text: str) -> None:
        feat = encode_text(text, self.dataset)
        self.query_texts.append(text)
        self.query_features.append(feat)
        self._score_sum += gallery_scores(self.view, feat, self.ranker)

    def _rescore(self) -> None:
        scores = self._score_sum / len(self.query_features)
        if self._active_mask.any():
            scores = scores.copy()
            scores[self._active_mask] *= 0.9
        self.scores = scores
        self.ranked = rank_gallery(scores, self.view, target_id=self.target_id)

    def _propose(self) -> None:
        self.pending = None
        if self.round >= self.max_rounds:
            return
        if self.asked.all():
            self.exhausted = True
            return
        shaping = None
        if self.state_layout == "dual_dist":
            if self.shaping_fn is None:
                raise InvalidConfig("dual_dist layout needs a shaping_fn")
            shaping = self.shaping_fn(tuple(self.query_texts))
        state = build_state(self.query_features, self.ranked, self.view.object_index,
                            self.k_top, self.state_layout, shaping)
        ctx = ProposalContext(state=state,
                              query_features=tuple(self.query_features),
                              query_texts=tuple(self.query_texts),
                              asked=self.asked.copy(), n_actions=self.n_actions,
                              rng=self.rng, view=self.view, dataset=self.dataset)
        act = self.policy.propose(ctx)
        objs = act.objects
        if objs.size == 0 or np.unique(objs).size != objs.size or self.asked[objs].any():
            raise InvalidConfig(f"policy '{self.policy.name}' proposed an invalid candidate set")
        self.asked[objs] = True
        self.pending = act
        self._proposal_state = state
        self._proposal_texts = tuple(self.query_texts)

    # -- public stepping API

    @property
    def candidate_words(self) -> tuple[str, ...]:
        if self.pending is None:
            return ()
        return tuple(self.dataset.vocab[int(o)] for o in self.pending.objects)

    @property
    def target_penalized(self) -> bool:
        """True if the last rescore multiplied the target's score by 0.9."""
        if self.target_pos is None:
            return False
        return bool(self._active_mask[self.target_pos])

    def query_target_similarity(self) -> float:
        """Unrefined mean similarity of the current query set to the target."""
        if self.target_pos is None:
            raise UnknownTarget("session has no target image")
        return float(self._score_sum[self.target_pos] / len(self.query_features))

    def apply_confirmations(self, positives: Sequence[int],
                            negatives: Sequence[int]) -> None:
        """Advance one round with confirmed object indices.

        Candidates neither confirmed nor rejected are treated as skipped and
        returned to the askable pool (a human may be unsure; the simulated
        user never skips).
        """
        if self.pending is None:
            raise InvalidConfig("session has no pending candidates")
        pend = set(int(o) for o in self.pending.objects)
        pos = sorted(set(int(o) for o in positives))
        neg = sorted(set(int(o) for o in negatives))
        if set(pos) & set(neg):
            raise InvalidConfig("positive and negative confirmations overlap")
        stray = (set(pos) | set(neg)) - pend
        if stray:
            raise InvalidConfig(f"confirmed objects {sorted(stray)} were not proposed this round")
        skipped = pend - set(pos) - set(neg)
        if skipped:
            self.asked[sorted(skipped)] = False

        self.positives.extend(pos)
        self.negatives.extend(neg)
        if neg:
            self._neg_mask |= self.view.presence[np.asarray(neg, dtype=np.int64)].any(axis=0)
        if self.accumulate_negatives:
            self._active_mask = self._neg_mask
        elif neg:
            self._active_mask = self.view.presence[np.asarray(neg, dtype=np.int64)].any(axis=0)
        else:
            self._active_mask = np.zeros(self.view.n_images, dtype=bool)

        for o in pos:
            self._append_query(self.dataset.vocab[o])
        self.round += 1
        self._rescore()
        self._propose()

    def apply_word_confirmations(self, positive_words: Sequence[str],
                                 negative_words: Sequence[str]) -> None:
        """Word-level variant used by the HTTP service."""
        words = self.candidate_words
        lookup = {w: int(o) for w, o in zip(words, self.pending.objects)} if self.pending else {}
        missing = [w for w in list(positive_words) + list(negative_words) if w not in lookup]
        if missing:
            raise InvalidConfig(f"words {missing} are not in the current candidate set")
        self.apply_confirmations([lookup[w] for w in positive_words],
                                 [lookup[w] for w in negative_words])


# ---------------------------------------------------------------------------
# Episodes


@dataclass(frozen=True)
class RoundRecord:
    t: int
    candidates: tuple[str, ...]
    positives: tuple[str, ...]
    negatives: tuple[str, ...]
    target_rank: int
    reward: float
    target_penalized: bool = False


@dataclass(frozen=True)
class StepRecord:
    """Per-step tuple handed to the training hook."""

    state: np.ndarray
    actions: np.ndarray
    log_prob: float | None
    reward: float
    query_texts: tuple[str, ...]
    done: bool


@dataclass
class EpisodeTrace:
    target_id: str
    ranker: str
    rounds: list[RoundRecord] = field(default_factory=list)
    exhausted: bool = False

    @property
    def final_rank(self) -> int:
        return self.rounds[-1].target_rank

    @property
    def ranks(self) -> list[int]:
        return [r.target_rank for r in self.rounds]


def run_episode(dataset: Dataset, target_id: str, policy: PolicySource, *,
                view: GalleryView | None = None,
                initial_queries: Sequence[str] | None = None,
                n_initial_queries: int = 1, n_actions: int = 10,
                max_rounds: int = 20, ranker: str = "sscan", k_top: int = 100,
                seed: int | None = None, rng: np.random.Generator | None = None,
                accumulate_negatives: bool = True,
                state_layout: str = "text_mean_plus_dist",
                shaping_fn: Callable[[tuple[str, ...]], np.ndarray] | None = None,
                step_hook: Callable[[StepRecord], None] | None = None) -> EpisodeTrace:
    """Run one simulated episode against the ground-truth-object oracle.

    Round t's recorded rank reflects that round's confirmations: positives
    are appended to the queries and negatives refine the fresh similarities
    before re-ranking, exactly as the HTTP service advances a session.  The
    episode ends after ``max_rounds`` rounds or when every object has been
    proposed, whichever comes first.
    """
    if view is None:
        view = GalleryView(dataset)
    pos = view.require_target(target_id)
    target = view.images[pos]
    if rng is None:
        rng = np.random.default_rng(seed)
    if initial_queries is None:
        if n_initial_queries < 1 or n_initial_queries > len(target.captions):
            raise InvalidConfig(
                f"n_initial_queries must be in [1, {len(target.captions)}] for '{target_id}'")
        picks = rng.choice(len(target.captions), size=n_initial_queries, replace=False)
        initial_queries = [target.captions[int(i)] for i in picks]

    sess = RetrievalSession(view, policy, initial_queries, ranker=ranker,
                            n_actions=n_actions, max_rounds=max_rounds, k_top=k_top,
                            target_id=target_id, rng=rng,
                            accumulate_negatives=accumulate_negatives,
                            state_layout=state_layout, shaping_fn=shaping_fn)
    trace = EpisodeTrace(target_id=target_id, ranker=ranker)
    trace.rounds.append(RoundRecord(
        t=0, candidates=(), positives=(), negatives=(),
        target_rank=sess.ranked.target_rank, reward=sess.query_target_similarity()))

    vocab = dataset.vocab
    t = 0
    while sess.pending is not None:
        t += 1
        act = sess.pending
        state = sess._proposal_state
        texts = sess._proposal_texts
        pos_idx, neg_idx = oracle_confirm(act, target)
        sess.apply_confirmations(pos_idx, neg_idx)
        # Oracle soundness: confirmed negatives never hit the target image.
        assert not sess.target_penalized, "target image was refined despite the oracle"
        reward = sess.query_target_similarity()
        trace.rounds.append(RoundRecord(
            t=t,
            candidates=tuple(vocab[int(o)] for o in act.objects),
            positives=tuple(vocab[int(o)] for o in pos_idx),
            negatives=tuple(vocab[int(o)] for o in neg_idx),
            target_rank=sess.ranked.target_rank,
            reward=reward,
            target_penalized=sess.target_penalized))
        if step_hook is not None:
            step_hook(StepRecord(state=state, actions=act.objects,
                                 log_prob=act.log_prob, reward=reward,
                                 query_texts=texts, done=sess.pending is None))
    trace.exhausted = sess.exhausted
    return trace


# ---------------------------------------------------------------------------
# Batch evaluation


def evaluate(dataset: Dataset, policy: PolicySource,
             settings: Sequence[tuple[int, int]] = EVAL_SETTINGS_DEFAULT,
             t_eval: int = 10, seeds: Sequence[int] = (0,), *,
             split: str = "test", ranker: str = "sscan", k_top: int = 100,
             accumulate_negatives: bool = True,
             state_layout: str = "text_mean_plus_dist",
             shaping_fn: Callable[[tuple[str, ...]], np.ndarray] | None = None,
             max_targets: int | None = None) -> dict:
    """Per-round R@K / Mean Rank over every target of a split.

    Initial captions are drawn once per (seed, target); candidate selection
    follows the policy's test-time behavior.  Episodes that exhaust the
    vocabulary early keep their final rank for the remaining rounds.
    """
    indices = dataset.split_indices(split)
    if indices.size == 0:
        raise InvalidConfig(f"split '{split}' contains no images")
    if max_targets is not None:
        indices = indices[:max_targets]
    view = GalleryView(dataset, indices)

    out_settings = []
    for n_q, n_a in settings:
        per_round: list[list[int]] = [[] for _ in range(t_eval + 1)]
        for s in seeds:
            for ti, img in enumerate(view.images):
                rng = np.random.default_rng((int(s), ti))
                trace = run_episode(dataset, img.id, policy, view=view,
                                    n_initial_queries=n_q, n_actions=n_a,
                                    max_rounds=t_eval, ranker=ranker, k_top=k_top,
                                    rng=rng, accumulate_negatives=accumulate_negatives,
                                    state_layout=state_layout, shaping_fn=shaping_fn)
                ranks = trace.ranks
                ranks = ranks + [ranks[-1]] * (t_eval + 1 - len(ranks))
                for t in range(t_eval + 1):
                    per_round[t].append(ranks[t])
        rounds_out = [{"t": t,
                       "r1": recall_at_k(rks, 1),
                       "r5": recall_at_k(rks, 5),
                       "r10": recall_at_k(rks, 10),
                       "mr": mean_rank(rks)}
                      for t, rks in enumerate(per_round)]
        out_settings.append({"n_q": int(n_q), "n_a": int(n_a), "rounds": rounds_out})
    return {"settings": out_settings, "seeds": [int(s) for s in seeds],
            "policy_type": policy.name}


def caption_degradation(dataset: Dataset, ranker: str,
                        caption_counts: Sequence[int], seed: int = 0, *,
                        split: str = "test") -> list[dict]:
    """Round-0 retrieval quality as a function of the caption count.

    For each target a random caption order is fixed, then the first n
    captions are used as the query set for every requested count n.
    """
    indices = dataset.split_indices(split)
    if indices.size == 0:
        raise InvalidConfig(f"split '{split}' contains no images")
    view = GalleryView(dataset, indices)
    counts = sorted(set(int(c) for c in caption_counts))
    if not counts or counts[0] < 1:
        raise InvalidConfig("caption counts must be positive")

    ranks: dict[int, list[int]] = {c: [] for c in counts}
    for ti, img in enumerate(view.images):
        rng = np.random.default_rng((int(seed), ti))
        order = rng.permutation(len(img.captions))
        score_rows = np.cumsum([gallery_scores(view, encode_text(img.captions[int(i)], dataset),
                                               ranker)
                                for i in order], axis=0)
        for c in counts:
            used = min(c, len(img.captions))
            scores = score_rows[used - 1] / used
            ranks[c].append(rank_gallery(scores, view, target_id=img.id).target_rank)
    return [{"captions": c,
             "r1": recall_at_k(ranks[c], 1),
             "r5": recall_at_k(ranks[c], 5),
             "r10": recall_at_k(ranks[c], 10),
             "mr": mean_rank(ranks[c])} for c in counts]
