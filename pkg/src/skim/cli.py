"""Command-line entry point: ``skim <subcommand> [--config FILE] [key=value ...]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from skim import dataserver
from skim.checkpoint import CheckpointError, load
from skim.corpus import CorpusError, ingest
from skim.harness import qa as qa_mod
from skim.harness import training
from skim.harness.config import ConfigError, RunConfig, parse_lines, parse_override
from skim.harness.evaluate import eval_ppl
from skim.harness.synth import SynthSettings, read_qa, write_corpus
from skim.model import NonFiniteLoss, forward
from skim.plot import PlotError, plot

SUBCOMMANDS = ("pretrain", "pretrain-short", "finetune", "eval", "qa-gen", "qa-eval", "traverse", "plot",
               "synth-corpus")

# flag -> config key, per subcommand
FLAG_KEYS = {
    "ckpt": "checkpoint",
    "init": "init_checkpoint",
    "corpus": "corpus.path",
    "k": "skip.k",
    "alpha": "skip.alpha",
    "k_infer": "qa.k_infer",
    "qa": "qa.path",
    "grid": "qa.grid_path",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out_dir", "--out-dir", dest="out_dir")
        if name == "plot":
            p.add_argument("inputs", nargs="+", help="metrics.jsonl or grid .json files")
            continue
        p.add_argument("overrides", nargs="*", metavar="key=value")
        p.add_argument("--corpus")
        if name in ("eval", "qa-eval", "traverse"):
            p.add_argument("--ckpt")
        if name == "finetune":
            p.add_argument("--init")
        if name == "traverse":
            p.add_argument("--doc", type=int, default=0)
            p.add_argument("--k", type=int)
            p.add_argument("--alpha", type=float)
        if name in ("qa-eval", "qa-gen"):
            p.add_argument("--qa")
        if name == "qa-eval":
            p.add_argument("--k-infer", "--k_infer", dest="k_infer", type=int)
            p.add_argument("--grid")
    return parser


def resolve(args) -> RunConfig:
    file_values = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        file_values = parse_lines(path.read_text(), str(path))
    overrides = dict(parse_override(item) for item in getattr(args, "overrides", []))
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    if args.out_dir:
        overrides["out_dir"] = args.out_dir
    overrides["mode"] = args.subcommand.replace("-", "_")
    file_values.pop("mode", None)
    return RunConfig.build(file_values, overrides)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _eval_store(cfg: RunConfig):
    if cfg["eval.path"]:
        return ingest(cfg["eval.path"], cfg["eval.min_tokens"])
    if cfg["corpus.path"]:
        return ingest(cfg["corpus.path"], cfg["eval.min_tokens"])
    path = Path(cfg["out_dir"]) / "eval_synthetic.jsonl"
    write_corpus(SynthSettings.from_config(cfg), cfg["seed"] + 1, path)
    return ingest(path, cfg["eval.min_tokens"])


def cmd_traverse(cfg: RunConfig, doc_id: int) -> dataserver.TraversalTrace:
    ckpt = load(cfg["checkpoint"])
    if not cfg["corpus.path"]:
        raise ConfigError("traverse needs corpus.path (or --corpus)")
    store = ingest(cfg["corpus.path"], cfg["corpus.min_tokens"])
    pool = training.memory_for(ckpt.config, ckpt.meta)

    def losses(chunk):
        return forward(ckpt.params, ckpt.config, chunk.tokens, pool).token_losses

    return dataserver.traverse(store, doc_id, cfg.skip_config(L=ckpt.config.max_window), losses)


def run(args) -> int:
    if args.subcommand == "plot":
        out_dir = Path(args.out_dir or "plots")
        cfg = RunConfig.build(overrides={"mode": "plot", "out_dir": str(out_dir)})
        cfg.write_resolved(out_dir)
        for path in plot(args.inputs, out_dir):
            print(path)
        return 0

    cfg = resolve(args)
    out_dir = Path(cfg["out_dir"])
    cfg.write_resolved(out_dir)
    mode = cfg["mode"]
    if mode in ("pretrain", "pretrain_short", "finetune"):
        getattr(training, mode)(cfg)
        _emit(json.loads((out_dir / "summary.json").read_text()))
    elif mode == "eval":
        result = eval_ppl(load(cfg["checkpoint"]), _eval_store(cfg), cfg["eval.max_docs"]).to_dict()
        (out_dir / "eval.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
        _emit(result)
    elif mode == "qa_gen":
        print(qa_mod.qa_generate(cfg))
    elif mode == "qa_eval":
        path = cfg["qa.path"] or qa_mod.qa_generate(cfg)
        result = qa_mod.qa_eval(load(cfg["checkpoint"]), read_qa(path), cfg["qa.k_infer"],
                                alpha=cfg["skip.alpha"], pooling=cfg["skip.pooling"],
                                decay=cfg["skip.decay"], c_min=cfg["skip.c_min"])
        (out_dir / "qa_outcomes.jsonl").write_text(qa_mod.outcomes_jsonl(result))
        (out_dir / "qa_result.json").write_text(json.dumps(result.cell(), indent=2, sort_keys=True) + "\n")
        qa_mod.update_grid(cfg["qa.grid_path"] or out_dir / "qa_grid.json", result)
        _emit(result.cell())
    elif mode == "traverse":
        sys.stdout.write(cmd_traverse(cfg, args.doc).to_jsonl())
    elif mode == "synth_corpus":
        print(write_corpus(SynthSettings.from_config(cfg), cfg["seed"], cfg["corpus.path"] or out_dir / "corpus.jsonl"))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return run(args)
    except (ConfigError, CorpusError, CheckpointError, PlotError, NonFiniteLoss,
            dataserver.TraversalError, IndexError, ValueError, OSError) as exc:
        print(f"error={type(exc).__name__} message={json.dumps(str(exc))}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
