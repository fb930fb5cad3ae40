"""Acceptance gate: every criterion prints one PASS/FAIL line.

The benchmark gallery G* (2000 images, 100 objects, 32 dims, 8 regions,
3-6 objects/image, 10 captions, noise 0.15, seed 1, split 1600/1600+400)
is generated once per session; the policy is trained on it once and reused
by the criteria that need it.  Run with ``pytest tests/test_acceptance.py
-v -s`` to watch the lines as they appear.
"""

import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from objseek.encoders import encode_text, tokenize
from objseek.gallery import generate_synthetic, save_dataset
from objseek.interaction import (LearnedPolicy, QACohePolicy, RandomPolicy,
                                 build_joint_cooccurrence, caption_degradation,
                                 evaluate, run_episode)
from objseek.learning import (AdamState, PpoConfig, TrajectoryBuffer,
                              build_cooccurrence, ppo_update, shaping_scores,
                              train)
from objseek.policy import (init_policy_params, init_value_params,
                            policy_backward, policy_forward, value_backward,
                            value_forward)
from objseek.ranker import (GalleryView, gallery_scores, mean_rank,
                            rank_gallery, recall_at_k)
from objseek.service import ServeConfig, create_app

from conftest import fd_gradient, flatten_params, relative_error

GSTAR_CONFIG = dict(n_images=2000, vocab_size=100, dim=32,
                    regions_per_image=8, objects_per_image_range=(3, 6),
                    captions_per_image=10, noise_sigma=0.15, seed=1)
TRAIN_EPOCHS = 150          # criterion allows up to 200
TRAIN_BUDGET_SECONDS = 1800


def check(criterion: str, ok: bool, detail: str) -> None:
    print(f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}", flush=True)
    assert ok, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="session")
def gstar():
    return generate_synthetic(**GSTAR_CONFIG)


@pytest.fixture(scope="session")
def trained(gstar):
    config = PpoConfig(total_epochs=TRAIN_EPOCHS, eval_every=0)
    result = train(gstar, config, seed=0)
    return result


pytestmark = pytest.mark.acceptance


def test_criterion_01_gradient_correctness():
    rng = np.random.default_rng(42)
    started = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        policy = init_policy_params(12, 6, rng, hidden=8)
        value = init_value_params(12, rng, hidden=8)
        state = rng.standard_normal(12)
        direction = rng.standard_normal(6)

        _, cache = policy_forward(state, policy)
        analytic_p = flatten_params(policy_backward(cache, dprobs=direction))
        numeric_p = fd_gradient(
            lambda q: float(policy_forward(state, q)[0] @ direction), policy, h=1e-5)
        worst = max(worst, relative_error(analytic_p, numeric_p).max())

        _, vcache = value_forward(state, value)
        analytic_v = flatten_params(value_backward(vcache, 1.0))
        numeric_v = fd_gradient(lambda q: value_forward(state, q)[0], value, h=1e-5)
        worst = max(worst, relative_error(analytic_v, numeric_v).max())
    elapsed = time.perf_counter() - started
    check("1", worst < 1e-4 and elapsed < 5.0,
          f"max relative error {worst:.2e} (< 1e-4), runtime {elapsed:.2f}s (< 5s)")


def test_criterion_02_shaping_oracle_equivalence():
    ds = generate_synthetic(30, 10, 6, 3, (2, 4), 4, 0.2, seed=23)
    indices = list(range(30))
    cooc = build_cooccurrence(ds, indices)
    image_tokens = []
    for i in indices:
        toks = set()
        for caption in ds.images[i].captions:
            toks.update(tokenize(caption))
        image_tokens.append(toks)
    rng = np.random.default_rng(5)
    started = time.perf_counter()
    exact = 0
    for _ in range(50):
        words = list(rng.choice(ds.vocab, size=int(rng.integers(1, 4))))
        queries = [" ".join(words)]
        tokens = [t for q in queries for t in tokenize(q)]
        brute = np.zeros(ds.vocab_size, dtype=np.int64)
        for a in range(ds.vocab_size):
            for i in indices:
                if a in ds.images[i].objects:
                    brute[a] += sum(1 for t in tokens if t in image_tokens[i])
        exact += int(np.array_equal(shaping_scores(queries, cooc), brute))
    elapsed = time.perf_counter() - started
    check("2", exact == 50 and elapsed < 1.0,
          f"{exact}/50 queries integer-exact, runtime {elapsed:.2f}s (< 1s)")


def test_criterion_03_partial_query_degradation(gstar):
    started = time.perf_counter()
    rows = {r["captions"]: r for r in
            caption_degradation(gstar, "sscan", [1, 10], seed=0, split="test")}
    elapsed = time.perf_counter() - started
    gap = rows[10]["r10"] - rows[1]["r10"]
    ok = gap >= 15.0 and rows[1]["mr"] > rows[10]["mr"] and elapsed < 120
    check("3", ok,
          f"R@10 1 caption {rows[1]['r10']:.1f} vs 10 captions {rows[10]['r10']:.1f} "
          f"(gap {gap:.1f} >= 15), MR {rows[1]['mr']:.2f} > {rows[10]['mr']:.2f}, "
          f"runtime {elapsed:.1f}s (< 2 min)")


def test_criterion_04_ground_truth_objects_uplift(gstar):
    started = time.perf_counter()
    view = GalleryView(gstar, gstar.split_indices("test"))
    base_ranks, full_ranks = [], []
    for ti, img in enumerate(view.images):
        rng = np.random.default_rng((0, ti))
        caption = img.captions[int(rng.integers(len(img.captions)))]
        base = gallery_scores(view, encode_text(caption, gstar), "sscan")
        object_rows = [gallery_scores(view, encode_text(gstar.vocab[o], gstar), "sscan")
                       for o in img.objects]
        full = np.mean([base] + object_rows, axis=0)
        base_ranks.append(rank_gallery(base, view, target_id=img.id).target_rank)
        full_ranks.append(rank_gallery(full, view, target_id=img.id).target_rank)
    elapsed = time.perf_counter() - started
    r1_base, r1_full = recall_at_k(base_ranks, 1), recall_at_k(full_ranks, 1)
    mr_base, mr_full = mean_rank(base_ranks), mean_rank(full_ranks)
    ok = (r1_full >= 2.0 * r1_base and mr_full <= 0.5 * mr_base and elapsed < 120)
    check("4", ok,
          f"R@1 {r1_base:.1f} -> {r1_full:.1f} ({r1_full / max(r1_base, 1e-9):.1f}x >= 2x), "
          f"MR {mr_base:.2f} -> {mr_full:.2f} ({100 * (1 - mr_full / mr_base):.0f}% "
          f"reduction >= 50%), runtime {elapsed:.1f}s (< 2 min)")


def test_criterion_05_policy_learning_wins(gstar, trained):
    assert trained.config.total_epochs <= 200
    assert trained.elapsed_seconds < TRAIN_BUDGET_SECONDS
    train_idx = gstar.split_indices("train")
    p_c = build_joint_cooccurrence(gstar, train_idx)
    rounds = {}
    for name, policy in (("learned", LearnedPolicy(trained.policy, "greedy")),
                         ("random", RandomPolicy()),
                         ("qacohe", QACohePolicy(p_c))):
        report = evaluate(gstar, policy, settings=((1, 10),), t_eval=10,
                          seeds=(0,), split="test")
        rounds[name] = report["settings"][0]["rounds"]

    print("    per-round R@10 (learned / random / qacohe):", flush=True)
    for t in range(11):
        print(f"      t={t:2d}  {rounds['learned'][t]['r10']:5.1f} / "
              f"{rounds['random'][t]['r10']:5.1f} / {rounds['qacohe'][t]['r10']:5.1f}"
              f"   mr(learned)={rounds['learned'][t]['mr']:6.2f}", flush=True)

    r10_learned = rounds["learned"][10]["r10"]
    r10_random = rounds["random"][10]["r10"]
    r10_qacohe = rounds["qacohe"][10]["r10"]
    mr0 = rounds["learned"][0]["mr"]
    mr10 = rounds["learned"][10]["mr"]
    clause_random = r10_learned >= r10_random + 10.0
    clause_qacohe = r10_learned >= r10_qacohe + 3.0
    clause_mr = mr10 <= 0.5 * mr0
    print(f"    clause A (vs random +10): learned {r10_learned:.1f} vs "
          f"random {r10_random:.1f} -> {'PASS' if clause_random else 'FAIL'}", flush=True)
    print(f"    clause B (vs qacohe +3):  learned {r10_learned:.1f} vs "
          f"qacohe {r10_qacohe:.1f} -> {'PASS' if clause_qacohe else 'FAIL'}", flush=True)
    print(f"    clause C (MR halved):     round-10 {mr10:.2f} vs round-0 {mr0:.2f} "
          f"-> {'PASS' if clause_mr else 'FAIL'}", flush=True)
    best_gap = max(rounds["learned"][t]["r10"] - rounds["random"][t]["r10"]
                   for t in range(11))
    check("5", clause_random and clause_qacohe and clause_mr,
          f"round-10 R@10 learned {r10_learned:.1f}, random {r10_random:.1f}, "
          f"qacohe {r10_qacohe:.1f}; MR {mr0:.2f} -> {mr10:.2f}; best mid-episode "
          f"gap over random {best_gap:+.1f} points "
          f"(at Q1/A10 all 100 objects are asked within 10 rounds, so every "
          f"policy reaches the identical confirmed set by round 10)")


def test_criterion_06_refinement_oracle_soundness():
    ds = generate_synthetic(100, 30, 16, 5, (2, 5), 5, 0.12, seed=41)
    view = GalleryView(ds)
    started = time.perf_counter()
    violations = 0
    episodes = 0
    rng = np.random.default_rng(0)
    for k in range(1000):
        target = ds.images[int(rng.integers(ds.n_images))]
        trace = run_episode(ds, target.id, RandomPolicy(), view=view,
                            n_actions=5, max_rounds=6,
                            seed=int(rng.integers(2 ** 62)))
        episodes += 1
        violations += sum(int(r.target_penalized) for r in trace.rounds)
    elapsed = time.perf_counter() - started
    check("6", violations == 0 and episodes == 1000,
          f"{episodes} episodes, {violations} target-refinement violations "
          f"(runtime {elapsed:.1f}s)")


def test_criterion_07_cli_determinism(tmp_path, capsys):
    from objseek.cli import main

    data = str(tmp_path / "small.json")
    save_dataset(generate_synthetic(80, 15, 8, 4, (2, 4), 4, 0.1, seed=3), data)
    config = str(tmp_path / "cfg.json")
    with open(config, "w") as fh:
        json.dump({"total_epochs": 2, "n_s": 40, "horizon": 5, "n_actions": 4,
                   "hidden": 16, "eval_every": 2, "eval_targets": 10,
                   "eval_rounds": 3}, fh)

    outputs = []
    for run_id in range(2):
        policy_path = str(tmp_path / f"p{run_id}.json")
        log_path = str(tmp_path / f"l{run_id}.jsonl")
        assert main(["train", "--data", data, "--out", policy_path,
                     "--log", log_path, "--config", config, "--seed", "11",
                     "--quiet"]) == 0
        outputs.append((open(policy_path, "rb").read(), open(log_path, "rb").read()))
    train_ok = outputs[0] == outputs[1]

    reports = []
    for run_id in range(2):
        report_path = str(tmp_path / f"r{run_id}.json")
        assert main(["eval", "--data", data, "--out", report_path,
                     "--policies", "random,qasim,qacohe",
                     "--settings", "q1a4,q2a3", "--rounds", "3",
                     "--seeds", "0,1"]) == 0
        reports.append(open(report_path, "rb").read())
    eval_ok = reports[0] == reports[1]
    capsys.readouterr()
    check("7", train_ok and eval_ok,
          f"cmd_train byte-identical: {train_ok}, cmd_eval byte-identical: {eval_ok}")


def test_criterion_08_ppo_sanity():
    rng = np.random.default_rng(0)
    vocab, d_state = 6, 9
    policy = init_policy_params(d_state, vocab, rng, hidden=16)
    value = init_value_params(d_state, rng, hidden=16)
    states = rng.standard_normal((4, d_state))
    targets = rng.dirichlet(np.ones(vocab) * 2.0, size=4)

    def filled_buffer():
        buf = TrajectoryBuffer()
        for i in range(600):
            s = states[i % 4]
            probs, _ = policy_forward(s, policy)
            acts = np.argsort(-probs)[:2]
            buf.add(s, acts, float(np.log(probs[acts]).sum()), 0.0, 0.0,
                    targets[i % 4], done=(i % 4 == 3))
        return buf

    buf = filled_buffer()
    probs, _ = policy_forward(np.stack(buf.states), policy)
    hot = np.zeros((600, vocab))
    for i, a in enumerate(buf.actions):
        hot[i, a] = 1.0
    ratios = np.exp((hot * np.log(probs)).sum(axis=1) - np.array(buf.log_probs))
    ratio_dev = float(np.abs(ratios - 1.0).max())

    config = PpoConfig(alpha=1e6)
    p_opt, v_opt = AdamState(), AdamState()
    update_rng = np.random.default_rng(1)
    updates = 0
    deviation = np.inf
    for _ in range(200):
        ppo_update(filled_buffer(), policy, value, config,
                   policy_opt=p_opt, value_opt=v_opt, rng=update_rng)
        updates += 1
        deviation = max(np.abs(policy_forward(s, policy)[0] - t).max()
                        for s, t in zip(states, targets))
        if deviation < 0.05:
            break
    check("8", ratio_dev < 1e-6 and deviation < 0.05,
          f"ratio deviation at theta_old {ratio_dev:.2e} (< 1e-6); shaping "
          f"convergence max dev {deviation:.4f} (< 0.05) after {updates} updates")


def test_criterion_09_service_replay_equivalence(gstar, trained):
    policy = LearnedPolicy(trained.policy, "greedy")
    app = create_app(gstar, policy, ServeConfig(n_candidates=10, max_rounds=10))
    client = TestClient(app)
    view = GalleryView(gstar)
    rng = np.random.default_rng(7)
    picks = rng.choice(gstar.n_images, size=20, replace=False)
    mismatches = 0
    for pos in picks:
        target = gstar.images[int(pos)]
        queries = [target.captions[0]]
        trace = run_episode(gstar, target.id, policy, view=view,
                            initial_queries=queries, n_actions=10,
                            max_rounds=10, seed=0)
        state = client.post("/api/sessions", json={
            "queries": queries, "mode": "demo", "target_id": target.id}).json()
        got = [state["target_rank"]]
        words = {gstar.vocab[o] for o in target.objects}
        while not state["done"]:
            positive = [w for w in state["candidates"] if w in words]
            negative = [w for w in state["candidates"] if w not in words]
            state = client.post(
                f"/api/sessions/{state['session_id']}/confirm",
                json={"positive": positive, "negative": negative}).json()
            got.append(state["target_rank"])
        mismatches += int(got != trace.ranks)
    check("9", mismatches == 0,
          f"20 targets replayed through the service, {mismatches} rank-trace "
          f"mismatches")


def test_criterion_10_ui_note():
    print("[criterion 10] covered by the frontend suite (frontend/: npm test); "
          "the primary suite runs with no UI built", flush=True)
