"""``amdd`` command-line entry point.

Exit status: 0 on success, 1 on usage or configuration errors, 2 on runtime
failures (including a failed verification suite).  Progress goes to stderr;
results go to files or stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import checkpoint, kernels
from .config import RunConfig, describe_schema
from .corpus import load_meta, read_jsonl, read_records
from .mdd_eval import score_corpus
from .model import SOFT_VARIANTS, VARIANTS, AccentMDD, ConfigError, predict_corpus
from .synth import gen_corpus
from .train import evaluate, train
from .verify import GRAD_TOL, ctc_oracle_suite, gradient_suite

log = logging.getLogger("amdd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _threads() -> int:
    raw = os.environ.get("AMDD_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"AMDD_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("AMDD_THREADS must be >= 1")
    return n


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig.from_values({})
    if args.seed is not None:
        cfg.set_seed(args.seed)
    return cfg


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _data_dir(args, cfg: RunConfig) -> Path:
    d = args.data or cfg.paths.get("data")
    if not d:
        raise UsageError("no data directory: pass --data or set paths.data in the config")
    return Path(d)


def _out_dir(args, cfg: RunConfig, default: str) -> Path:
    return Path(args.out or cfg.paths.get("out") or default)


# -- subcommands ----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args, cfg, "data")
    splits, am = gen_corpus(cfg.synth, out)
    counts = ", ".join(f"{k}={len(v)}" for k, v in splits.items())
    _progress(f"wrote {counts} to {out} (min prototype distance {am.min_prototype_distance():.3f})")
    return 0


def _model_config(args, cfg: RunConfig, data: Path, train_utts):
    mc = cfg.model
    meta = load_meta(data).get("synth_spec", {})
    for k in ("n_phones", "n_accents", "feat_dim"):
        if k in meta:
            setattr(mc, k, int(meta[k]))
    mc.feat_dim = int(train_utts[0].frames.shape[1])
    for flag, key in (("variant", "variant"), ("alpha", "alpha"), ("beta", "beta"),
                      ("classifier_layers", "classifier_layers"), ("epochs", "epochs")):
        v = getattr(args, flag)
        if v is not None:
            setattr(mc, key, v)
    mc.validate()
    return mc


def _run_tag(args, variant: str, classifier_layers: int) -> str:
    if variant in SOFT_VARIANTS or args.classifier_layers is not None:
        return f"{variant}_cl{classifier_layers}"
    return variant


def cmd_train(args) -> int:
    threads = _threads()
    cfg = _run_config(args)
    data = _data_dir(args, cfg)
    train_utts = read_jsonl(data / "train.jsonl")
    if not train_utts:
        raise ConfigError(f"{data / 'train.jsonl'} is empty")
    dev = read_jsonl(data / "dev.jsonl") if (data / "dev.jsonl").exists() else []
    test = read_jsonl(data / "test.jsonl") if (data / "test.jsonl").exists() else []
    mc = _model_config(args, cfg, data, train_utts)
    model = AccentMDD(mc)
    out = _out_dir(args, cfg, "runs")
    tag = _run_tag(args, mc.variant, mc.classifier_layers)
    _progress(f"[{tag}] {model.param_count()} parameters, {len(train_utts)} training utterances, "
              f"kernels={kernels.BACKEND}")
    tlog = train(model, train_utts, dev, progress=_progress, max_steps=args.max_steps,
                 eval_every_epoch=not args.no_epoch_eval)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint.save(model, out / f"model_{tag}.ckpt")
    metrics = {"variant": mc.variant, "classifier_layers": mc.classifier_layers, "alpha": mc.alpha,
               "beta": mc.beta, "seed": mc.seed, "train": tlog.to_dict()}
    if test:
        metrics["test"] = evaluate(model, test, threads=threads).to_dict()
    _write_json(out / f"metrics_{tag}.json", metrics)
    _progress(f"[{tag}] wrote {out / f'model_{tag}.ckpt'} and {out / f'metrics_{tag}.json'}")
    return 0


def _load_model(path) -> AccentMDD:
    if not path:
        raise UsageError("--model is required")
    return checkpoint.load(path)


def cmd_predict(args) -> int:
    threads = _threads()
    model = _load_model(args.model)
    if not args.data:
        raise UsageError("--data is required")
    utts = read_jsonl(args.data)
    seqs = predict_corpus(model, utts, threads=threads)
    lines = [json.dumps({"id": u.id, "predicted": s}, separators=(",", ":")) for u, s in zip(utts, seqs)]
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _emit_report(rep, report_path) -> None:
    if report_path:
        Path(report_path).write_text(rep.to_json() + "\n", encoding="utf-8")
    print(rep.table())


def cmd_eval(args) -> int:
    threads = _threads()
    model = _load_model(args.model)
    if not args.data:
        raise UsageError("--data is required")
    utts = read_jsonl(args.data)
    rep = evaluate(model, utts, threads=threads)
    _emit_report(rep, args.report or args.out)
    return 0


def cmd_score(args) -> int:
    if not (args.ref and args.hyp):
        raise UsageError("--ref and --hyp are required")
    refs = read_records(args.ref)
    hyps = {str(r["id"]): r["predicted"] for r in read_records(args.hyp)}
    triples = []
    for r in refs:
        rid = str(r["id"])
        if rid not in hyps:
            raise ConfigError(f"no prediction for utterance {rid!r}")
        triples.append((r["canonical"], r["perceived"], hyps[rid]))
    rep = score_corpus(triples)
    _emit_report(rep, args.report or args.out)
    return 0


def cmd_gradcheck(args) -> int:
    res = gradient_suite(seed=args.seed or 0)
    for name, r in res.items():
        status = "ok" if r["passed"] else "FAIL"
        print(f"{name:<16} {r['max_rel_error']:.3e}  ({r['n_params']} params)  {status}")
    ok = all(r["passed"] for r in res.values())
    print(f"gradient suite {'passed' if ok else 'FAILED'} (tolerance {GRAD_TOL:g})")
    return 0 if ok else 2


def cmd_ctc_oracle(args) -> int:
    r = ctc_oracle_suite(trials=args.trials, seed=args.seed or 0)
    print(f"{r['trials']} instances ({r['infeasible']} infeasible), max |exp(-loss) - path sum| = "
          f"{r['max_abs_error']:.3e}, {r['seconds']:.2f}s")
    print("ctc oracle " + ("passed" if r["passed"] else "FAILED"))
    return 0 if r["passed"] else 2


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for all randomness (overrides config)")
    common.add_argument("--config", default=None, help="flat key = value config file")
    common.add_argument("--out", default=None, help="output directory or file")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(
        prog="amdd",
        description="Accent-aware hybrid CTC/attention mispronunciation detection toolkit.",
        epilog="config keys and defaults:\n" + describe_schema(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("gen-data", parents=[common], help="generate the synthetic corpus")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], help="train one model variant")
    s.add_argument("--data", default=None, help="corpus directory with train/dev/test .jsonl")
    s.add_argument("--variant", choices=VARIANTS, default=None)
    s.add_argument("--alpha", type=float, default=None, help="CTC weight in the hybrid loss")
    s.add_argument("--beta", type=float, default=None, help="accent-classification weight")
    s.add_argument("--classifier-layers", type=int, choices=(1, 2, 3), default=None)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--max-steps", type=int, default=None, help="stop after this many optimizer steps")
    s.add_argument("--no-epoch-eval", action="store_true", help="skip dev evaluation after each epoch")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="decode phone sequences")
    s.add_argument("--model", default=None)
    s.add_argument("--data", default=None, help="corpus .jsonl file")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", parents=[common], help="decode and score a corpus file")
    s.add_argument("--model", default=None)
    s.add_argument("--data", default=None, help="corpus .jsonl file")
    s.add_argument("--report", default=None, help="write the metrics JSON here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("score", parents=[common], help="score predictions without a model")
    s.add_argument("--ref", default=None, help=".jsonl with id, canonical, perceived")
    s.add_argument("--hyp", default=None, help=".jsonl with id, predicted")
    s.add_argument("--report", default=None, help="write the metrics JSON here")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("gradcheck", parents=[common], help="run the finite-difference gradient suite")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("ctc-oracle", parents=[common], help="compare CTC with brute-force path sums")
    s.add_argument("--trials", type=int, default=200)
    s.set_defaults(func=cmd_ctc_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(e, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"amdd {args.command}: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - top-level reporting
        log.debug("failure", exc_info=True)
        print(f"amdd {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
