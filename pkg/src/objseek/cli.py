"""Operator command line: data generation, training, evaluation, serving.

Every command is deterministic for a fixed --seed and writes its artifacts
atomically.  Usage errors exit with status 2 (argparse), data errors with
status 1 and the underlying module's message.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict

import numpy as np

from .errors import InvalidConfig, ObjseekError
from .gallery import (atomic_write_text, generate_synthetic, load_dataset,
                      save_dataset)
from .interaction import (EVAL_SETTINGS_DEFAULT, LearnedPolicy, QACohePolicy,
                          QASimPolicy, RandomPolicy, build_joint_cooccurrence,
                          caption_degradation, evaluate, run_episode)
from .policy import load_policy_file, save_policy_file
from .ranker import RANKER_KINDS

POLICY_TYPES = ("learned", "random", "qasim", "qacohe")


def _parse_settings(text: str) -> list[tuple[int, int]]:
    """Parse 'q1a10,q2a5' into [(1, 10), (2, 5)]."""
    out = []
    for part in text.split(","):
        part = part.strip().lower()
        if not part.startswith("q") or "a" not in part:
            raise InvalidConfig(f"bad setting '{part}', expected e.g. q1a10")
        q, a = part[1:].split("a", 1)
        try:
            out.append((int(q), int(a)))
        except ValueError as exc:
            raise InvalidConfig(f"bad setting '{part}': {exc}") from exc
    if not out:
        raise InvalidConfig("no settings given")
    return out


def _make_policy(kind: str, args, dataset):
    if kind == "learned":
        if not args.policy:
            raise InvalidConfig("policy type 'learned' requires --policy FILE")
        params, _value, meta = load_policy_file(args.policy)
        expected = (dataset.feature_dim + dataset.vocab_size
                    if meta["state_layout"] == "text_mean_plus_dist"
                    else 2 * dataset.vocab_size)
        if params.d_state != expected or params.vocab_size != dataset.vocab_size:
            raise InvalidConfig("policy file does not match the dataset dimensions")
        return LearnedPolicy(params, mode="greedy"), meta["state_layout"]
    if kind == "random":
        return RandomPolicy(), "text_mean_plus_dist"
    if kind == "qasim":
        return QASimPolicy(), "text_mean_plus_dist"
    if kind == "qacohe":
        p_c = build_joint_cooccurrence(dataset, dataset.split_indices("train"))
        return QACohePolicy(p_c), "text_mean_plus_dist"
    raise InvalidConfig(f"unknown policy type '{kind}'")


def _shaping_fn_for(layout: str, dataset):
    if layout != "dual_dist":
        return None
    from .learning import build_cooccurrence, shaping_target
    cooc = build_cooccurrence(dataset, dataset.split_indices("train"))
    return lambda texts: shaping_target(texts, cooc)


# ---------------------------------------------------------------------------
# Commands


def cmd_gen_data(args) -> int:
    dataset = generate_synthetic(
        n_images=args.images, vocab_size=args.vocab, dim=args.dim,
        regions_per_image=args.regions,
        objects_per_image_range=(args.objects_min, args.objects_max),
        captions_per_image=args.captions, noise_sigma=args.noise,
        seed=args.seed, train_fraction=args.train_fraction)
    save_dataset(dataset, args.out)
    print(f"wrote {args.out}: {dataset.n_images} images, "
          f"|vocab|={dataset.vocab_size}, d={dataset.feature_dim}")
    return 0


def cmd_train(args) -> int:
    from .learning import PpoConfig, config_from_dict, train

    doc = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    data_path = doc.pop("data", None)
    seed = doc.pop("seed", 0)
    overrides = {"alpha": args.alpha, "total_epochs": args.epochs,
                 "horizon": args.rounds, "n_actions": args.actions,
                 "n_initial_queries": args.queries, "ranker": args.ranker}
    doc.update({k: v for k, v in overrides.items() if v is not None})
    config: PpoConfig = config_from_dict(doc)
    if args.data:
        data_path = args.data
    if args.seed is not None:
        seed = args.seed
    if not data_path:
        raise InvalidConfig("--data (or a 'data' config key) is required")

    dataset = load_dataset(data_path)
    result = train(dataset, config, seed=seed, progress=not args.quiet)
    save_policy_file(args.out, result.policy, result.value, config.state_layout)
    log_path = args.log or (args.out + ".log.jsonl")
    atomic_write_text(log_path, "".join(
        json.dumps(rec, separators=(",", ":")) + "\n" for rec in result.log))
    print(f"trained {config.total_epochs} epochs in {result.elapsed_seconds:.1f}s; "
          f"policy -> {args.out}, log -> {log_path}")
    return 0


def cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    settings = _parse_settings(args.settings)
    seeds = [int(s) for s in args.seeds.split(",")]
    kinds = [k.strip() for k in args.policies.split(",")]
    for kind in kinds:
        if kind not in POLICY_TYPES:
            raise InvalidConfig(f"unknown policy type '{kind}'")
    reports = []
    for kind in kinds:
        policy, layout = _make_policy(kind, args, dataset)
        reports.append(evaluate(
            dataset, policy, settings=settings, t_eval=args.rounds, seeds=seeds,
            split=args.split, ranker=args.ranker, state_layout=layout,
            shaping_fn=_shaping_fn_for(layout, dataset)))
    doc = reports[0] if len(reports) == 1 else {"reports": reports}
    atomic_write_text(args.out, json.dumps(doc, separators=(",", ":"), sort_keys=True) + "\n")
    for rep in reports:
        for setting in rep["settings"]:
            last = setting["rounds"][-1]
            print(f"{rep['policy_type']:8s} q{setting['n_q']}a{setting['n_a']}: "
                  f"round {last['t']} r1={last['r1']:.1f} r5={last['r5']:.1f} "
                  f"r10={last['r10']:.1f} mr={last['mr']:.2f}")
    print(f"report -> {args.out}")
    return 0


def cmd_simulate(args) -> int:
    dataset = load_dataset(args.data)
    policy, layout = _make_policy(args.policy_type, args, dataset)
    if args.split == "all":
        indices = np.arange(dataset.n_images)
    else:
        indices = dataset.split_indices(args.split)
    if indices.size == 0:
        raise InvalidConfig(f"split '{args.split}' contains no images")
    if args.target:
        target_id = args.target
    else:
        rng = np.random.default_rng(args.seed)
        target_id = dataset.images[int(indices[rng.integers(indices.size)])].id
    from .ranker import GalleryView
    view = GalleryView(dataset, indices)
    initial_queries = args.query or None
    trace = run_episode(
        dataset, target_id, policy, view=view, n_initial_queries=args.queries,
        initial_queries=initial_queries, n_actions=args.actions,
        max_rounds=args.rounds, ranker=args.ranker, seed=args.seed,
        state_layout=layout, shaping_fn=_shaping_fn_for(layout, dataset))

    target = dataset.images[dataset.id_index[target_id]]
    shown_queries = initial_queries or list(target.captions[:args.queries])
    print(f"target {target_id} | objects: "
          f"{', '.join(dataset.vocab[o] for o in target.objects)}")
    for rec in trace.rounds:
        if rec.t == 0:
            print(f"round  0 | rank {rec.target_rank:4d} | "
                  f"initial queries: {', '.join(repr(q) for q in shown_queries)}")
            continue
        marked = [f"+{w}" if w in rec.positives else f"-{w}" for w in rec.candidates]
        print(f"round {rec.t:2d} | rank {rec.target_rank:4d} | reward {rec.reward:.4f} | "
              f"{' '.join(marked)}")
    if trace.exhausted:
        print("(vocabulary exhausted, episode truncated)")
    if args.json:
        doc = {"target_id": trace.target_id, "ranker": trace.ranker,
               "exhausted": trace.exhausted,
               "rounds": [{"t": r.t, "candidates": list(r.candidates),
                           "positives": list(r.positives),
                           "negatives": list(r.negatives),
                           "target_rank": r.target_rank, "reward": r.reward}
                          for r in trace.rounds]}
        atomic_write_text(args.json, json.dumps(doc, separators=(",", ":")) + "\n")
        print(f"trace -> {args.json}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServeConfig, create_app

    dataset = load_dataset(args.data)
    policy = None
    layout = "text_mean_plus_dist"
    if args.policy or args.policy_type != "learned":
        policy, layout = _make_policy(args.policy_type, args, dataset)
    config = ServeConfig(ranker=args.ranker, n_candidates=args.candidates,
                         top_k_images=args.topk, max_rounds=args.rounds,
                         seed=args.seed, session_log_dir=args.session_log,
                         state_layout=layout,
                         shaping_fn=_shaping_fn_for(layout, dataset))
    app = create_app(dataset, policy, config, ui_dir=args.ui)
    print(f"serving {dataset.n_images} images on http://{args.host}:{args.port} "
          f"(policy: {getattr(policy, 'name', 'none')})")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_degradation(args) -> int:
    dataset = load_dataset(args.data)
    counts = list(range(1, args.captions_max + 1))
    rows = caption_degradation(dataset, args.ranker, counts, seed=args.seed,
                               split=args.split)
    lines = ["captions,r1,r5,r10,mr"]
    for row in rows:
        lines.append(f"{row['captions']},{row['r1']:.4f},{row['r5']:.4f},"
                     f"{row['r10']:.4f},{row['mr']:.4f}")
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="objseek",
        description="Interactive text-to-image retrieval: generate data, train "
                    "the candidate policy, evaluate, simulate, and serve.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic gallery")
    p.add_argument("--out", required=True)
    p.add_argument("--images", type=int, default=2000)
    p.add_argument("--vocab", type=int, default=100)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--regions", type=int, default=8)
    p.add_argument("--objects-min", type=int, default=3)
    p.add_argument("--objects-max", type=int, default=6)
    p.add_argument("--captions", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the candidate policy")
    p.add_argument("--data")
    p.add_argument("--out", required=True, help="policy JSON output path")
    p.add_argument("--log", help="training log path (JSON lines)")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--rounds", type=int, help="training episode horizon T")
    p.add_argument("--actions", type=int, help="objects proposed per round")
    p.add_argument("--queries", type=int, help="initial captions per episode")
    p.add_argument("--ranker", choices=RANKER_KINDS)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate policies over Q/A settings")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--policies", default="learned,random,qasim,qacohe")
    p.add_argument("--policy", help="policy JSON (for 'learned')")
    p.add_argument("--settings", default="q1a10,q2a5,q4a3")
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--seeds", default="0")
    p.add_argument("--ranker", choices=RANKER_KINDS, default="sscan")
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="print one oracle-driven episode")
    p.add_argument("--data", required=True)
    p.add_argument("--policy-type", choices=POLICY_TYPES, default="qasim")
    p.add_argument("--policy")
    p.add_argument("--target", help="target image id (default: random from split)")
    p.add_argument("--queries", type=int, default=1)
    p.add_argument("--query", action="append",
                   help="explicit initial query text (repeatable; overrides --queries)")
    p.add_argument("--actions", type=int, default=10)
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--ranker", choices=RANKER_KINDS, default="sscan")
    p.add_argument("--split", default="test",
                   help="gallery split to rank over; 'all' = whole gallery")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="also write the trace as JSON to this path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--data", required=True)
    p.add_argument("--policy", help="policy JSON (for 'learned')")
    p.add_argument("--policy-type", choices=POLICY_TYPES, default="learned")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ranker", choices=RANKER_KINDS, default="sscan")
    p.add_argument("--candidates", type=int, default=10)
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--rounds", type=int, default=20, help="max rounds per session")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--session-log", help="directory for append-only session logs")
    p.add_argument("--ui", help="directory with the built web client")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("degradation", help="R@K/MR versus caption count (CSV)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ranker", choices=RANKER_KINDS, default="sscan")
    p.add_argument("--captions-max", type=int, default=10)
    p.add_argument("--split", default="test")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_degradation)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ObjseekError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
