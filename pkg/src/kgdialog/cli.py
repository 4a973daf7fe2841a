"""Command-line entry point wiring all modules together.

Subcommands: ingest, generate, split, stats, answer, link, embed,
kernel-check, eval.  All randomness flows from --seed; identical flags and
seed produce byte-identical outputs.  Exit codes: 0 ok, 1 runtime error,
2 usage.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

import numpy as np

from . import (
    dataset_pipeline as pipeline,
    dialog_machine as dm,
    entity_linker as linker,
    eval_harness,
    kg_embed,
    kg_store,
    memnet_kernel as kernel,
    plan_text,
    query_algebra as qa,
    templates as tpl,
)
from .config import ConfigError, RunConfig, load_config

_ERRORS = (
    kg_store.KgError,
    qa.PlanError,
    plan_text.PlanTextError,
    tpl.TemplateError,
    dm.DialogError,
    pipeline.PipelineError,
    kg_embed.EmbedError,
    kernel.KernelError,
    eval_harness.EvalError,
    ConfigError,
    OSError,
    ValueError,
)


def main(argv: list[str] | None = None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


def dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgdialog",
        description="knowledge-graph question answering and dialog synthesis toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="json config file")
        p.add_argument("--seed", type=int, help="master random seed")

    p = sub.add_parser("ingest", help="load, filter and re-emit a knowledge graph")
    common(p)
    p.add_argument("--kg", required=True, help="directory with tuples/labels/types tsv files")
    p.add_argument("--relations", help="comma-separated relation labels to keep")
    p.add_argument("--type-coverage", type=float, help="retain types covering this tuple fraction")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("generate", help="generate a dialog corpus")
    common(p)
    p.add_argument("--kg", required=True)
    p.add_argument("--templates", help="templates json-lines file (default: <kg>/templates.jsonl)")
    p.add_argument("--n", type=int, required=True, help="number of dialogs")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("split", help="split a corpus with tuple separation")
    common(p)
    p.add_argument("--kg", required=True)
    p.add_argument("--corpus", required=True, help="dialogs.jsonl from generate")
    p.add_argument("--fractions", help="train,valid,test fractions (default from config)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("stats", help="corpus statistics")
    common(p)
    p.add_argument("--kg", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", help="write json here instead of stdout")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("answer", help="execute a query plan (or start a REPL)")
    common(p)
    p.add_argument("--kg", required=True)
    p.add_argument("--plan", help="canonical plan text; omit for a REPL")
    p.set_defaults(func=_cmd_answer)

    p = sub.add_parser("link", help="entity-link an utterance and list candidate tuples")
    common(p)
    p.add_argument("--kg", required=True)
    p.add_argument("--utterance", help="single utterance to link")
    p.add_argument("--corpus", help="dialogs.jsonl: report gold-tuple recall of the candidates")
    p.add_argument("--cap", type=int, help="candidate cap (default: config memory_cap)")
    p.add_argument("--aliases", help="optional aliases.tsv extending the gazetteer")
    p.add_argument("--out", help="write the recall report json here")
    p.set_defaults(func=_cmd_link)

    p = sub.add_parser("embed", help="train translational embeddings")
    common(p)
    p.add_argument("--kg", required=True)
    p.add_argument("--out", required=True, help="embedding file path")
    p.add_argument("--dim", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("kernel-check", help="run the memory-kernel golden and property suite")
    common(p)
    p.add_argument("--vectors", help="golden vector json-lines file")
    p.set_defaults(func=_cmd_kernel_check)

    p = sub.add_parser("eval", help="score prediction records and write a report")
    common(p)
    p.add_argument("--records", required=True, help="json-lines eval records")
    p.add_argument("--out", help="report.json path")
    p.set_defaults(func=_cmd_eval)

    return parser


def _config(args: argparse.Namespace) -> RunConfig:
    overrides = {"seed": getattr(args, "seed", None)}
    return load_config(args.config, overrides=overrides)


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


# -- subcommands ---------------------------------------------------------------------


def _cmd_ingest(args: argparse.Namespace) -> int:
    config = _config(args)
    store = kg_store.load_dir(args.kg)
    retained_types = None
    if args.relations:
        allow = {store.relation_id(label.strip()) for label in args.relations.split(",")}
        store = kg_store.filter_relations(store, allow)
    if args.type_coverage is not None:
        store, retained = kg_store.filter_types(store, args.type_coverage)
        retained_types = sorted(store.type_label(t) for t in retained)
    out = Path(args.out)
    kg_store.save_dir(store, out)
    stats = kg_store.stats(store)
    _write_json(
        out / "stats.json",
        {
            "stats": {
                "n_tuples": stats.n_tuples,
                "n_entities": stats.n_entities,
                "n_relations": stats.n_relations,
                "n_entities_in_tuples": stats.n_entities_in_tuples,
                "fanout_histogram": {str(k): v for k, v in sorted(stats.fanout_histogram.items())},
                "n_fanout_ge3": stats.n_fanout_ge3,
                "n_one_one": stats.n_one_one,
                "n_one_many": stats.n_one_many,
            },
            "retained_types": retained_types,
            "config": config.as_dict(),
        },
    )
    print(f"wrote {stats.n_tuples} tuples to {out}")
    return 0


def _load_templates(args: argparse.Namespace) -> list[tpl.QuestionTemplate]:
    path = args.templates if getattr(args, "templates", None) else Path(args.kg) / "templates.jsonl"
    return tpl.load_templates(path)


def _cmd_generate(args: argparse.Namespace) -> int:
    config = _config(args)
    store = kg_store.load_dir(args.kg)
    templates = _load_templates(args)
    corpus = pipeline.generate_corpus(store, templates, args.n, config, config.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_corpus(corpus, store, out / "dialogs.jsonl")
    stats = pipeline.corpus_stats(corpus, config.vocab_threshold)
    _write_json(
        out / "stats.json",
        {
            "stats": stats.as_dict(),
            "shortfall": corpus.shortfall,
            "full_scale_reference": pipeline.FULL_SCALE_REFERENCE,
            "config": config.as_dict(),
        },
    )
    _write_json(out / "run_config.json", config.as_dict())
    if corpus.shortfall:
        print(f"warning: store exhausted, generated {len(corpus.dialogs)} of {args.n} dialogs")
    print(f"wrote {len(corpus.dialogs)} dialogs to {out / 'dialogs.jsonl'}")
    return 0


def _cmd_split(args: argparse.Namespace) -> int:
    config = _config(args)
    store = kg_store.load_dir(args.kg)
    corpus = pipeline.read_corpus(args.corpus, store)
    fractions = config.split_fractions
    if args.fractions:
        fractions = [float(x) for x in args.fractions.split(",")]
    spec = pipeline.SplitSpec(tuple(fractions), config.seed)
    result = pipeline.split_corpus(corpus, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, dialogs in (
        ("train", result.train),
        ("valid", result.valid),
        ("test", result.test),
        ("discarded", result.discarded),
    ):
        part = pipeline.Corpus(dialogs, corpus.provenance)
        pipeline.write_corpus(part, store, out / f"{name}.jsonl")
    report = pipeline.split_report(corpus, result)
    report["config"] = config.as_dict()
    _write_json(out / "split_report.json", report)
    print(
        f"train {report['n_train']}  valid {report['n_valid']}  test {report['n_test']}  "
        f"discarded {report['n_discarded']}"
    )
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    config = _config(args)
    store = kg_store.load_dir(args.kg)
    corpus = pipeline.read_corpus(args.corpus, store)
    stats = pipeline.corpus_stats(corpus, config.vocab_threshold)
    payload = {
        "stats": stats.as_dict(),
        "full_scale_reference": pipeline.FULL_SCALE_REFERENCE,
        "config": config.as_dict(),
    }
    if args.out:
        _write_json(Path(args.out), payload)
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _render_answer(store: kg_store.KgStore, answer: qa.AnswerSet, config: RunConfig) -> str:
    rendered = dm.render_response(
        store,
        answer,
        display_limit=config.display_limit,
        sample_size=config.sample_size,
        rng=random.Random(config.seed),
        words=config.number_words,
    )
    return rendered.utterance


def _cmd_answer(args: argparse.Namespace) -> int:
    config = _config(args)
    store = kg_store.load_dir(args.kg)
    if args.plan is not None:
        plan = plan_text.parse_plan(args.plan, store)
        answer = qa.execute(store, plan, include_zero_groups=config.include_zero_groups)
        print(_render_answer(store, answer, config))
        return 0
    return _repl(store, config)


def _repl(store: kg_store.KgStore, config: RunConfig) -> int:
    """Stateless-across-sessions plan REPL; "that ⟨type⟩" resolves against
    the previous answer within the session."""
    last_entities: tuple[int, ...] = ()
    print("enter a plan per line (empty line or EOF quits)", file=sys.stderr)
    while True:
        try:
            line = input("plan> ")
        except EOFError:
            return 0
        line = line.strip()
        if not line:
            return 0
        try:
            resolved = _resolve_that(store, line, last_entities)
            plan = plan_text.parse_plan(resolved, store)
            answer = qa.execute(store, plan, include_zero_groups=config.include_zero_groups)
            if isinstance(answer, qa.Entities):
                last_entities = tuple(sorted(answer.members))
            print(_render_answer(store, answer, config))
        except _ERRORS as exc:
            print(f"error: {exc}", file=sys.stderr)


def _resolve_that(store: kg_store.KgStore, line: str, last_entities: tuple[int, ...]) -> str:
    if "that " not in line:
        return line
    for ty in sorted(range(store.n_types), key=lambda t: -len(store.type_label(t))):
        label = store.type_label(ty)
        mention = f"that {label}"
        if mention not in line:
            continue
        matches = [e for e in last_entities if store.has_type(e, ty)]
        if not matches:
            raise dm.DialogError(f"no previous answer entity of type {label!r}")
        if len(matches) > 1:
            names = ", ".join(store.entity_label(e) for e in matches)
            raise dm.DialogError(f"ambiguous mention {mention!r}: did you mean one of {names}?")
        quoted = '"' + store.entity_label(matches[0]).replace('"', '\\"') + '"'
        line = line.replace(mention, quoted)
    return line


def _cmd_link(args: argparse.Namespace) -> int:
    config = _config(args)
    store = kg_store.load_dir(args.kg)
    aliases = linker.load_aliases(args.aliases, store) if args.aliases else ()
    gaz = linker.build_gazetteer(store, aliases)
    cap = args.cap if args.cap is not None else config.memory_cap
    if args.utterance is None and args.corpus is None:
        print("error: link needs --utterance or --corpus", file=sys.stderr)
        return 2
    if args.utterance is not None:
        matches = linker.link(gaz, args.utterance)
        candidates = linker.link_and_retrieve(store, gaz, args.utterance, cap)
        for m in matches:
            names = ", ".join(store.entity_label(e) for e in m.entities)
            print(f"[{m.start}:{m.end}] {m.text!r} -> {names}")
        print(f"candidate tuples: {len(candidates.tuples)} (truncated: {candidates.truncated})")
        for t in candidates.tuples:
            print(
                f"  ({store.relation_label(t.relation)}, "
                f"{store.entity_label(t.subject)}, {store.entity_label(t.object)})"
            )
    if args.corpus is not None:
        corpus = pipeline.read_corpus(args.corpus, store)
        report = linker.recall_report(
            store, gaz, corpus.dialogs, cap, use_context=config.link_use_context
        )
        payload = {"recall": report.as_dict(), "config": config.as_dict()}
        print(
            f"candidate recall over {report.n_questions_with_gold} questions: "
            f"micro {report.micro_recall:.4f}, macro {report.macro_recall:.4f}"
        )
        for state, value in report.per_state.items():
            print(f"  {state:<24} {value:.4f}")
        if args.out:
            _write_json(Path(args.out), payload)
    return 0


def _cmd_embed(args: argparse.Namespace) -> int:
    config = _config(args)
    store = kg_store.load_dir(args.kg)
    train_config = kg_embed.TrainConfig(
        dim=args.dim or config.embed_dim,
        margin=config.embed_margin,
        learning_rate=config.embed_lr,
        epochs=args.epochs or config.embed_epochs,
        negatives=config.embed_negatives,
        seed=config.seed,
    )
    table = kg_embed.train(store, train_config)
    kg_embed.save_embeddings(table, args.out)
    report = kg_embed.link_prediction_eval(table, store.tuples, all_tuples=store.tuples)
    n = store.n_entities
    print(f"saved embeddings to {args.out} (dim {table.dim})")
    print(
        f"object side: mean rank {report.object_side.mean_rank:.2f} "
        f"(random {kg_embed.random_baseline_mean_rank(n):.2f}), "
        f"hits@{report.k} {report.object_side.hits_at_k:.3f}"
    )
    print(
        f"subject side: mean rank {report.subject_side.mean_rank:.2f}, "
        f"hits@{report.k} {report.subject_side.hits_at_k:.3f}"
    )
    return 0


def _cmd_kernel_check(args: argparse.Namespace) -> int:
    failures = 0
    for name, ok, detail in _builtin_kernel_checks():
        print(f"{'PASS' if ok else 'FAIL'} {name}{': ' + detail if detail else ''}")
        failures += 0 if ok else 1
    if args.vectors:
        for outcome in kernel.run_vector_file(args.vectors):
            print(
                f"{'PASS' if outcome.passed else 'FAIL'} vector {outcome.name}"
                f"{': ' + outcome.detail if outcome.detail else ''}"
            )
            failures += 0 if outcome.passed else 1
    return 0 if failures == 0 else 1


def _builtin_kernel_checks() -> list[tuple[str, bool, str]]:
    checks: list[tuple[str, bool, str]] = []
    rng = np.random.default_rng(0)

    def slab(n: int, d_emb: int) -> kernel.MemorySlab:
        return kernel.MemorySlab(
            rng.standard_normal((n, 2 * d_emb)),
            rng.standard_normal((n, d_emb)),
            tuple(kg_store.Tuple(0, 0, i) for i in range(n)),
        )

    def params(d: int, d_emb: int, hops: int = kernel.DEFAULT_HOPS) -> kernel.HopParams:
        return kernel.HopParams(
            A=rng.standard_normal((d, 2 * d_emb)),
            R=tuple(rng.standard_normal((d, d)) for _ in range(hops)),
            B=rng.standard_normal((d, d_emb)),
        )

    try:
        s1 = slab(1, 3)
        out = kernel.multi_hop(rng.standard_normal(4), s1, params(4, 3))
        ok = all(abs(w[0] - 1.0) < 1e-12 for w in out.attentions)
        checks.append(("singleton memory attends with weight 1.0", ok, ""))
    except kernel.KernelError as exc:
        checks.append(("singleton memory attends with weight 1.0", False, str(exc)))

    s = slab(5, 3)
    zero = kernel.HopParams(
        A=np.zeros((4, 6)), R=(np.eye(4),), B=np.zeros((4, 3))
    )
    out = kernel.multi_hop(rng.standard_normal(4), s, zero)
    ok = np.allclose(out.attentions[0], 0.2, atol=1e-12)
    checks.append(("zero projection gives uniform attention", ok, ""))

    p = params(4, 3)
    q1 = rng.standard_normal(4)
    base = kernel.multi_hop(q1, s, p)
    doubled = kernel.MemorySlab(
        np.concatenate([s.keys, s.keys]),
        np.concatenate([s.values, s.values]),
        s.provenance + s.provenance,
    )
    dup = kernel.multi_hop(q1, doubled, p)
    ok = np.allclose(base.q_final, dup.q_final, atol=1e-7)
    checks.append(("duplicating memory rows leaves the final query unchanged", ok, ""))

    big = kernel.MemorySlab(s.keys * 1e4, s.values, s.provenance)
    out = kernel.multi_hop(q1, big, p)
    ok = bool(np.all(np.isfinite(out.q_final)))
    checks.append(("large logits stay finite", ok, ""))

    dist = kernel.entity_distribution(base.q_final, s, p.B)
    ok = abs(float(np.sum(dist)) - 1.0) < 1e-9 and bool(np.all(dist >= 0))
    checks.append(("copy distribution is a probability vector", ok, ""))

    ok, detail = _gradient_check(rng)
    checks.append(("margin-loss gradients match central differences", ok, detail))
    return checks


def _gradient_check(rng: np.random.Generator, tolerance: float = 1e-4) -> tuple[bool, str]:
    for trial in range(3):
        table = kg_embed.EmbeddingTable(
            rng.standard_normal((6, 5)), rng.standard_normal((2, 5))
        )
        pos = kg_store.Tuple(0, 0, 1)
        neg = kg_store.Tuple(0, 2, 1) if trial % 2 == 0 else kg_store.Tuple(0, 0, 3)
        loss, grads = kg_embed.margin_loss_grads(table, pos, neg, 10.0)
        if loss <= 0.0 or not grads:
            return False, "hinge unexpectedly inactive"
        h = 1e-6
        for (kind, idx), grad in grads.items():
            array = table.entity_vecs if kind == "entity" else table.relation_vecs
            numeric = np.zeros_like(grad)
            for d in range(array.shape[1]):
                orig = array[idx, d]
                array[idx, d] = orig + h
                up = kg_embed.margin_loss(table, pos, neg, 10.0)
                array[idx, d] = orig - h
                down = kg_embed.margin_loss(table, pos, neg, 10.0)
                array[idx, d] = orig
                numeric[d] = (up - down) / (2 * h)
            rel_err = np.linalg.norm(grad - numeric) / max(np.linalg.norm(numeric), 1e-12)
            if rel_err >= tolerance:
                return False, f"relative error {rel_err:.2e} at {kind} {idx}"
    return True, ""


def _cmd_eval(args: argparse.Namespace) -> int:
    config = _config(args)
    records = eval_harness.read_records(args.records)
    report = eval_harness.aggregate(records)
    print(eval_harness.format_report(report))
    if args.out:
        payload = report.as_dict()
        payload["config"] = config.as_dict()
        _write_json(Path(args.out), payload)
    return 0


if __name__ == "__main__":
    sys.exit(main())
