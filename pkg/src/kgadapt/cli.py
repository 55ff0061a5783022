"""Command-line entry point: generate-kg, validate-kg, train, stream, retrieve, experiment, report.

Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
All randomness flows from ``--seed`` (or the config's ``seed``) through
per-module derived seeds.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, derive_seed
from .embedding_space import TokenEmbeddingTable, Vocabulary
from .kg_model import KGError, ParseError, validate
from . import kg_model
from .stream_sim import auc

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

COST_NOTE = (
    "Cloud-side cost figures (bandwidth, energy and FLOPs of a server deployment) are "
    "not reproduced here; only the local measurements below are reported."
)


class UsageError(Exception):
    pass


# --- helpers ---------------------------------------------------------------------------


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _vocab(cfg: RunConfig) -> Vocabulary:
    return Vocabulary.load(cfg.embedding.vocab_path) if cfg.embedding.vocab_path else Vocabulary.default()


def _read_kgs(paths):
    return [kg_model.load(p) for p in paths]


def _load_stream(args, cfg: RunConfig, concept: str, n: int, name: str):
    """Frames and labels from ``--data`` (npz with ``frames``/``labels``) or a synthetic stream."""
    if getattr(args, "data", None):
        with np.load(args.data) as z:
            return np.asarray(z["frames"], dtype=np.float64), np.asarray(z["labels"], dtype=int)
    from .experiment import _stream, build_world
    from .stream_sim import AnomalyPhase

    world = build_world(cfg)
    s = _stream(cfg, world.concepts, [AnomalyPhase(concept, 0, n)], n, name)
    return s.frames, s.labels


def _write(path, text: str | bytes) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(text, bytes):
        p.write_bytes(text)
    else:
        p.write_text(text)


# --- subcommands -----------------------------------------------------------------------


def cmd_generate_kg(args) -> int:
    from .experiment import build_world
    from .kg_builder import GenerationConfig, generate_kg, source_from_spec

    cfg = _config(args)
    mission = args.mission or cfg.kg.mission
    depth = args.depth or cfg.kg.depth
    vocab = _vocab(cfg)
    src = source_from_spec(args.source or cfg.kg.source, seed=derive_seed(cfg.seed, "kg_builder"))
    kg = generate_kg(mission, GenerationConfig(depth=depth, max_correction_iters=cfg.kg.max_correction_iters), src, vocab)
    _write(args.output, kg_model.serialize(kg))
    if args.table_out:
        if args.table_init == "semantic":
            table = build_world(cfg).table
        else:
            table = TokenEmbeddingTable.init(len(vocab), cfg.embedding.dim, cfg.embedding.init_std, derive_seed(cfg.seed, "table"))
        _write(args.table_out, table.to_bytes())
    print(f"wrote {args.output}: {len(kg.concept_nodes())} concept nodes, {len(kg.edges)} edges")
    return EXIT_OK


def cmd_validate_kg(args) -> int:
    try:
        kg = kg_model.load(args.kg)
    except ParseError as e:
        print(f"ParseError: {e}", file=sys.stderr)
        return EXIT_FAIL
    report = validate(kg)
    if report.ok:
        print("ok")
        return EXIT_OK
    for issue in report.issues:
        print(f"{issue.code} {','.join(issue.ids)}: {issue.message}")
    return EXIT_FAIL


def _new_model(cfg: RunConfig, kgs, table):
    from .model import DecisionModel

    m = cfg.model
    return DecisionModel.create(kgs, table, n_anomalies=m.n_anomalies, gnn_dim=m.gnn_dim, window=m.window,
                                model_dim=m.model_dim, heads=m.heads, blocks=m.blocks, ffn_dim=m.ffn_dim,
                                seed=derive_seed(cfg.seed, "model"))


def cmd_train(args) -> int:
    from .training import LossConfig, TrainConfig, train

    cfg = _config(args)
    kgs = _read_kgs(args.kg)
    table = TokenEmbeddingTable.load(args.table)
    model = _new_model(cfg, kgs, table)
    steps = cfg.training.steps if args.steps is None else args.steps
    o = cfg.optimizer
    tc = TrainConfig(steps=steps, batch=cfg.training.batch, lr=o.lr, weight_decay=o.weight_decay, beta1=o.beta1,
                     beta2=o.beta2, eps=o.eps, seed=derive_seed(cfg.seed, "training"),
                     loss=LossConfig(cfg.loss.lambda_spa, cfg.loss.lambda_smt))
    if steps > 0:
        frames, labels = _load_stream(args, cfg, kgs[0].mission, cfg.experiment.train_frames, "train")
        log = open(args.log, "w") if args.log else None
        try:
            train(model, frames, labels, tc, log)
        finally:
            if log:
                log.close()
    _write(args.output, model.checkpoint_bytes())
    print(f"wrote {args.output} after {steps} steps")
    return EXIT_OK


def _deploy(cfg: RunConfig, args):
    from .model import DecisionModel

    kgs = _read_kgs(args.kg)
    table = TokenEmbeddingTable.load(args.table)
    return DecisionModel.load(args.checkpoint, kgs, table)


def cmd_stream(args) -> int:
    from .adaptation import AdaptiveEngine, run_adaptation_loop
    from .experiment import adaptation_config
    from .training import LossConfig

    cfg = _config(args)
    model = _deploy(cfg, args)
    n = args.frames or 20 * cfg.adaptation.cadence
    frames, labels = _load_stream(args, cfg, args.concept or model.kgs[0].mission, n, "stream")
    snap_dir = Path(args.snapshots) if args.snapshots else None

    def snapshot(pass_index, kg):
        if snap_dir is not None:
            _write(snap_dir / f"kg_v{pass_index:05d}.json", kg_model.serialize(kg))

    engine = AdaptiveEngine(model, adaptation_config(cfg), seed=derive_seed(cfg.seed, "adaptation"),
                            enabled=not args.static, loss_cfg=LossConfig(cfg.loss.lambda_spa, cfg.loss.lambda_smt),
                            on_structure_change=snapshot)
    def evaluate(m, t):
        # AUC of the buffered scores against their frame labels (scores as emitted)
        ts = np.array([e.t for e in engine.buffer.entries])
        lab = labels[ts]
        if lab.min() == lab.max():
            return float("nan")
        return auc([e.score for e in engine.buffer.entries], lab)

    with open(args.metrics, "w") as fh:
        records = run_adaptation_loop(engine, frames, evaluate if labels is not None else None, fh)
    if args.table_out:
        _write(args.table_out, model.table.to_bytes())
    if args.kg_out:
        _write(args.kg_out, kg_model.serialize(model.kgs[0]))
    print(f"{len(records)} passes, {engine.adapt_steps} adaptation steps; metrics in {args.metrics}")
    return EXIT_OK


def cmd_retrieve(args) -> int:
    from .retrieval import interpret_kg

    cfg = _config(args)
    kg = kg_model.load(args.kg)
    table = TokenEmbeddingTable.load(args.table)
    k = args.k or cfg.retrieval.k
    result = interpret_kg(kg, table, _vocab(cfg), k, args.metric or cfg.retrieval.metric)
    _write(args.output, result.to_json())
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    from .experiment import run_experiment

    cfg = _config(args)
    out = Path(args.output or cfg.paths.out_dir)
    result = run_experiment(cfg)
    _write(out / "report.jsonl", result.report_text())
    summary = dict(result.summary)
    summary.pop("seconds", None)
    _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write(out / "config.json", cfg.dumps())
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cost_report(records: list[dict]) -> dict:
    adapted = [r for r in records if r.get("K", 0) > 0]
    flops = [r["flops"] for r in adapted]
    secs = [r["seconds"] for r in adapted]
    return {
        "note": COST_NOTE,
        "passes": len(records),
        "adaptation_passes": len(adapted),
        "ops_per_adaptation_pass_mean": float(np.mean(flops)) if flops else 0.0,
        "ops_per_adaptation_pass_max": int(max(flops)) if flops else 0,
        "seconds_per_adaptation_pass_mean": float(np.mean(secs)) if secs else 0.0,
        "seconds_per_pass_mean": float(np.mean([r["seconds"] for r in records])) if records else 0.0,
        "ops_unit": "multiply-accumulate estimate (forward + backward)",
    }


def measure_costs(cfg: RunConfig, repeats: int = 3) -> list[dict]:
    """Wall time and op estimate of one forced adaptation step for several K."""
    from .adaptation import AdaptiveEngine, adapt_step, estimate_adapt_flops, select_negatives, select_topk
    from .experiment import _stream, adaptation_config, build_world
    from .stream_sim import AnomalyPhase

    world = build_world(cfg)
    model = _new_model(cfg, [world.kg], world.table)
    a = cfg.adaptation
    n = a.N + (a.N if a.reference_lag is None else a.reference_lag)
    s = _stream(cfg, world.concepts, [AnomalyPhase(cfg.experiment.initial, 0, n)], n, "cost")
    engine = AdaptiveEngine(model, adaptation_config(cfg), seed=derive_seed(cfg.seed, "adaptation"))
    engine.score_chunk(s.frames)
    rows = []
    for K in sorted({1, max(1, a.N // 10), max(1, a.N // 2), a.N}):
        times = []
        for _ in range(repeats):
            start = time.perf_counter()
            pseudo = select_topk(engine.buffer, K) + select_negatives(engine.buffer, K, a.negatives)
            adapt_step(model, pseudo, engine.opt, 0, engine.loss_cfg)
            times.append(time.perf_counter() - start)
        rows.append({"K": K, "examples": len(pseudo), "ops": estimate_adapt_flops(model, len(pseudo)),
                     "seconds_median": float(np.median(times))})
    return rows


def cmd_report(args) -> int:
    cfg = _config(args)
    if args.dump_config:
        sys.stdout.write(cfg.dumps())
        return EXIT_OK
    if args.metrics:
        records = [json.loads(line) for line in Path(args.metrics).read_text().splitlines() if line.strip()]
    else:
        records = None
    report = cost_report(records) if records is not None else {"note": COST_NOTE, "per_K": measure_costs(cfg)}
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.output:
        _write(args.output, text)
    sys.stdout.write(text)
    return EXIT_OK


# --- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kgadapt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    def common(sp):
        sp.add_argument("--config", help="JSON run config (unknown keys are rejected)")
        sp.add_argument("--seed", type=int, help="root seed; overrides the config's seed")

    sp = sub.add_parser("generate-kg", help="build a mission KG from a knowledge source")
    common(sp)
    sp.add_argument("--mission", help="mission name (default from config)")
    sp.add_argument("--depth", type=int, help="number of concept levels")
    sp.add_argument("--source", help="'mock', 'cmd:<program>' or an http(s) URL")
    sp.add_argument("--table-out", help="also write the token embedding table here")
    sp.add_argument("--table-init", choices=("semantic", "gaussian"), default="semantic",
                    help="semantic: synthetic pretrained stand-in; gaussian: seeded N(0, init_std^2)")
    sp.add_argument("-o", "--output", required=True, help="KG JSON output path")
    sp.set_defaults(func=cmd_generate_kg)

    sp = sub.add_parser("validate-kg", help="check KG invariants; exit 1 when issues are found")
    sp.add_argument("kg", help="KG JSON file")
    sp.set_defaults(func=cmd_validate_kg)

    sp = sub.add_parser("train", help="initial training of GNN, temporal model and decision head")
    common(sp)
    sp.add_argument("--kg", action="append", required=True, help="KG JSON (repeatable)")
    sp.add_argument("--table", required=True, help="token embedding table file")
    sp.add_argument("--data", help="npz with 'frames' and 'labels'; default: synthetic stream")
    sp.add_argument("--steps", type=int, help="override training.steps")
    sp.add_argument("--log", help="per-step JSONL training log")
    sp.add_argument("-o", "--output", required=True, help="checkpoint output path")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("stream", help="deploy a checkpoint on a stream and adapt the KG tokens")
    common(sp)
    sp.add_argument("--kg", action="append", required=True, help="KG JSON (repeatable)")
    sp.add_argument("--table", required=True, help="token embedding table file")
    sp.add_argument("--checkpoint", required=True, help="trained checkpoint")
    sp.add_argument("--data", help="npz with 'frames' and optional 'labels'; default: synthetic stream")
    sp.add_argument("--concept", help="anomaly concept of the synthetic stream (default: KG mission)")
    sp.add_argument("--frames", type=int, help="synthetic stream length")
    sp.add_argument("--static", action="store_true", help="score only, never adapt")
    sp.add_argument("--metrics", required=True, help="per-pass JSONL metrics output")
    sp.add_argument("--snapshots", help="directory for KG snapshots after structural changes")
    sp.add_argument("--table-out", help="write the adapted token table here")
    sp.add_argument("--kg-out", help="write the final KG here")
    sp.set_defaults(func=cmd_stream)

    sp = sub.add_parser("retrieve", help="nearest vocabulary words of every KG token")
    common(sp)
    sp.add_argument("--kg", required=True)
    sp.add_argument("--table", required=True)
    sp.add_argument("--k", type=int, help="neighbours per token (default from config)")
    sp.add_argument("--metric", choices=("euclidean", "dot", "cosine"))
    sp.add_argument("-o", "--output", required=True)
    sp.set_defaults(func=cmd_retrieve)

    sp = sub.add_parser("experiment", help="adaptive vs static arms under an anomaly-trend shift")
    common(sp)
    sp.add_argument("-o", "--output", help="output directory (default: paths.out_dir)")
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("report", help="cost report per adaptation pass, or dump the effective config")
    common(sp)
    sp.add_argument("--dump-config", action="store_true", help="print the effective config including defaults")
    sp.add_argument("--metrics", help="metrics JSONL from 'stream'; default: run a short measured deployment")
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        print("effective schema (defaults):", file=sys.stderr)
        sys.stderr.write(RunConfig().dumps())
        return EXIT_USAGE
    except (FileNotFoundError, UsageError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (KGError, ValueError, RuntimeError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
