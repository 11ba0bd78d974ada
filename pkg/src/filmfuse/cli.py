"""``filmfuse`` command line.

Exit codes: 0 success, 1 usage error, 2 data/format error (missing or
malformed files, contract violations, failed services), 3 numeric fault.

Config files (``--config``) are YAML with optional top-level keys ``profile``
(``desk`` or ``full``), ``net`` (NetConfig fields) and ``train``
(TrainConfig fields). Command-line flags override the file.
"""

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import yaml

from . import checkpoint, metrics, synthetic, trainer
from .errors import ContractError, FilmError, FormatError, NumericFault
from .fusionnet import NetConfig, no_text_config, parity_gap
from .imaging import load_image, recompose, save_image, to_luma_chroma
from .vlfdata import (VARIANTS, HttpClients, MockClients, build_dataset, fuse_text_features,
                      manifest_stats, read_embedding, read_manifest, stub_embed, validate_manifest)

log = logging.getLogger("filmfuse")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kw):
        kw.setdefault("allow_abbrev", False)
        super().__init__(*args, **kw)

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common():
    p = Parser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


# helpers

def _load_config(path):
    if path is None:
        return {}
    try:
        cfg = yaml.safe_load(Path(path).read_text()) or {}
    except yaml.YAMLError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not isinstance(cfg, dict) or set(cfg) - {"profile", "net", "train"}:
        raise FormatError(f"{path}: expected a mapping with keys profile, net, train")
    return cfg


def _configs(args):
    file_cfg = _load_config(args.config)
    profile = args.profile or file_cfg.get("profile", "desk")
    if profile not in trainer.PROFILES:
        raise ContractError(f"unknown profile {profile!r}")
    net_cfg, train_cfg = trainer.PROFILES[profile]
    if "net" in file_cfg:
        net_cfg = NetConfig.from_dict({**net_cfg.to_dict(), **file_cfg["net"]})
    if "train" in file_cfg:
        train_cfg = trainer.TrainConfig.from_dict({**train_cfg.to_dict(), **file_cfg["train"]})
    over = {k: v for k, v in (("task", args.task), ("epochs", args.epochs), ("batch_size", args.batch_size),
                              ("lr0", args.lr), ("crop_size", args.crop), ("max_steps", args.max_steps))
            if v is not None}
    train_cfg = replace(train_cfg, seed=args.seed, **over)
    if args.no_text:
        net_cfg = no_text_config(net_cfg)
    return net_cfg, train_cfg


def _text_arg(value, dim, seed):
    p = Path(value)
    if p.suffix == ".vlfe" and p.is_file():
        return read_embedding(p)
    if p.suffix == ".txt" and p.is_file():
        value = p.read_text(encoding="utf-8")
    return stub_embed(value, dim, seed)


def _record(manifest, pair_id):
    recs = read_manifest(manifest)
    if pair_id is None:
        if len(recs) != 1:
            raise ContractError(f"{manifest} has {len(recs)} records; pass --pair-id")
        return recs[0]
    for r in recs:
        if r.pair_id == pair_id:
            return r
    raise ContractError(f"no record {pair_id!r} in {manifest}")


def _load_ckpt(path):
    """A checkpoint file, a run directory, or a ``latest`` pointer file."""
    p = Path(path)
    if p.is_dir() or p.name == trainer.LATEST:
        resolved = trainer.latest_checkpoint(p if p.is_dir() else p.parent)
        if resolved is None:
            raise FileNotFoundError(f"no latest checkpoint under {p}")
        p = resolved
    return checkpoint.load(p)


def _clients(args):
    return HttpClients.from_env(seed=args.seed) if args.live else MockClients(args.seed)


def _emit(text, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


def _render(rows, fmt, mean=True):
    if fmt == "csv":
        return metrics.to_csv(rows, mean).rstrip("\n")
    if fmt == "json":
        rows = list(rows) + ([metrics.mean_report(rows)] if mean else [])
        return "\n".join(metrics.to_json(r) for r in rows)
    return metrics.format_table(rows, mean)


# commands

def cmd_fuse(args):
    ck = _load_ckpt(args.ckpt)
    if args.no_text and ck.net_cfg.use_text:
        raise ContractError("--no-text needs a checkpoint trained without text (see `ablate --variant no_text`)")
    a, b = load_image(args.img1), load_image(args.img2)
    if a.shape[:2] != b.shape[:2]:
        raise ContractError(f"image sizes differ: {a.shape[:2]} vs {b.shape[:2]}")
    y1, c1 = to_luma_chroma(a)
    y2, c2 = to_luma_chroma(b)
    text = None
    if ck.net_cfg.use_text:
        if args.vlf_record:
            rec = _record(args.vlf_record, args.pair_id)
            text = fuse_text_features(*rec.load_embeddings(Path(args.vlf_record).parent))
        elif args.text1 and args.text2:
            dim = ck.net_cfg.text_dim
            text = fuse_text_features(_text_arg(args.text1, dim, args.seed), _text_arg(args.text2, dim, args.seed))
        else:
            raise ContractError("this checkpoint needs --text1/--text2 or --vlf-record")
    t0 = time.perf_counter()
    fused = trainer.infer(ck, y1, y2, text, task=args.task)
    log.info("fused %dx%d in %.2fs", fused.shape[1], fused.shape[0], time.perf_counter() - t0)
    out = recompose(fused, args.chroma_policy, (c1, c2))
    save_image(args.out, out)
    if args.metrics:
        print(metrics.format_table([metrics.report(fused, y1, y2, Path(args.out).stem)], mean=False))
    return EXIT_OK


def cmd_train(args):
    net_cfg, train_cfg = _configs(args)
    data = Path(args.data)
    if data.is_file():
        samples = trainer.samples_from_manifest(data, with_text=net_cfg.use_text)
    elif data.is_dir():
        if net_cfg.use_text:
            raise ContractError("a pair directory has no text; pass a manifest or --no-text")
        samples = trainer.samples_from_dir(data)
    else:
        raise FileNotFoundError(f"no such dataset: {data}")

    def progress(step, row):
        log.info("step %d total %.5f", step, row["total"])

    ck = trainer.train(samples, net_cfg, train_cfg, args.out, resume=args.resume, on_step=progress)
    print(f"trained {ck.step} steps; latest checkpoint {trainer.latest_checkpoint(args.out)}")
    return EXIT_OK


def cmd_eval(args):
    if args.manifest:
        samples = trainer.samples_from_manifest(args.manifest)
    elif args.pairs:
        samples = trainer.samples_from_dir(args.pairs)
    else:
        raise UsageError("pass --pairs or --manifest")
    if args.ckpt:
        ck = _load_ckpt(args.ckpt)
        if ck.net_cfg.use_text and not args.manifest:
            raise ContractError("this checkpoint needs text; evaluate a --manifest")
        rows, _ = trainer.evaluate(ck, samples, args.workers)
    else:
        if not args.pairs:
            raise UsageError("without --ckpt, pass --pairs folders that hold the fused images")
        items = []
        for s in samples:
            path = Path(args.pairs) / s.pair_id / args.fused_name
            items.append((s.pair_id, to_luma_chroma(load_image(path))[0], s.i1, s.i2))
        rows = metrics.report_many(items, args.workers)
    _emit(_render(rows, args.format), args.out)
    return EXIT_OK


def cmd_ablate(args):
    net_cfg, train_cfg = _configs(args)
    samples = trainer.samples_from_dir(args.data)
    n_test = max(1, int(round(len(samples) * args.test_fraction)))
    if n_test >= len(samples):
        raise ContractError(f"need more than {n_test} pairs to split train/test")
    pairs = [(s.pair_id, s.i1, s.i2) for s in samples]
    train_pairs, test_pairs = pairs[:-n_test], pairs[-n_test:]
    variants = trainer.ABLATION_VARIANTS if args.variant == "all" else (args.variant,)
    clients = _clients(args)
    rows = []
    for v in variants:
        if v == "no_text":
            print(f"no_text parameter gap: {100 * parity_gap(net_cfg):+.2f}%")
        rows.append(trainer.run_ablation(v, train_pairs, test_pairs, clients, args.out, net_cfg, train_cfg))
    _emit(_render(rows, args.format, mean=False), args.table)
    log.info("service calls: %s", dict(clients.calls))
    return EXIT_OK


def cmd_dataset_build(args):
    root = Path(args.pairs)
    if not root.is_dir():
        raise FileNotFoundError(f"no such pair directory: {root}")
    out = Path(args.out)
    items = []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        a, b = trainer._first(d, "1"), trainer._first(d, "2")
        if a and b:
            refs = (os.path.relpath(a.resolve(), out.resolve()), os.path.relpath(b.resolve(), out.resolve()))
            items.append((d.name, load_image(a), load_image(b), refs))
    if not items:
        raise FileNotFoundError(f"no image pairs under {root}")
    clients = _clients(args)
    path, records = build_dataset(items, clients, out, task=args.task, source_dataset=args.source,
                                  variant=args.variant, embed_dim=args.embed_dim, seed=args.seed,
                                  workers=args.workers)
    print(f"wrote {path} with {len(records)} records ({sum(r.validated for r in records)} validated)")
    return EXIT_OK


def cmd_dataset_validate(args):
    problems = validate_manifest(args.manifest)
    for p in problems:
        print(p)
    if problems:
        raise FormatError(f"{len(problems)} problems in {args.manifest}")
    print(f"{args.manifest}: ok")
    return EXIT_OK


def cmd_dataset_stats(args):
    stats = manifest_stats(args.manifest)
    if args.json:
        print(json.dumps(stats, sort_keys=True))
    else:
        for k, v in stats.items():
            print(f"{k}: {v:.1f}" if isinstance(v, float) else f"{k}: {v}")
    return EXIT_OK


def cmd_synth(args):
    dirs = synthetic.write_corpus(args.out, args.task, args.n, args.seed, args.size)
    print(f"wrote {len(dirs)} {args.task} pairs under {args.out}")
    return EXIT_OK


# parser

def _train_flags(p):
    p.add_argument("--config", help="YAML file with profile/net/train sections")
    p.add_argument("--profile", choices=sorted(trainer.PROFILES), help="preset sizes (default desk)")
    p.add_argument("--task", choices=("IVF", "MEF", "MFF"), help="loss configuration")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--crop", type=int, help="training crop size")
    p.add_argument("--max-steps", type=int, help="stop after this many optimizer steps")
    p.add_argument("--no-text", action="store_true", help="train the parameter-matched text-free network")


def build_parser():
    common = _common()
    ap = Parser(prog="filmfuse", description="Language-guided image fusion toolkit.")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("fuse", parents=[common], help="fuse one image pair with a checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint file, run directory or its `latest` file")
    p.add_argument("--img1", required=True)
    p.add_argument("--img2", required=True)
    p.add_argument("--text1", help="description of image 1: literal text, a .txt file or a .vlfe embedding")
    p.add_argument("--text2", help="description of image 2")
    p.add_argument("--vlf-record", metavar="MANIFEST", help="take both embeddings from a dataset manifest")
    p.add_argument("--pair-id", help="record to use from --vlf-record")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--task", choices=("IVF", "MIF", "MEF", "MFF"), help="check the checkpoint suits this task")
    p.add_argument("--chroma-policy", default="saturation", choices=("saturation", "first", "second"))
    p.add_argument("--no-text", action="store_true", help="use a text-free (ablation) checkpoint")
    p.add_argument("--metrics", action="store_true", help="print the metric row of the result")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("train", parents=[common], help="train a network")
    p.add_argument("--data", required=True, help="dataset manifest, or a pair directory with --no-text")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in --out")
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="metric table over a corpus")
    p.add_argument("--pairs", help="directory of pair folders holding 1.png and 2.png")
    p.add_argument("--manifest", help="dataset manifest (supplies text for text-guided checkpoints)")
    p.add_argument("--ckpt", help="fuse with this checkpoint; without it each pair folder must hold --fused-name")
    p.add_argument("--fused-name", default="fused.png")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.add_argument("--out", help="write the table here instead of stdout")
    p.add_argument("--workers", type=int, default=1, help="pairs evaluated in parallel")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="train and evaluate ablation variants")
    p.add_argument("--variant", required=True, choices=trainer.ABLATION_VARIANTS + ("all",))
    p.add_argument("--data", required=True, help="directory of pair folders")
    p.add_argument("--out", required=True, help="working directory")
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--live", action="store_true", help="use the HTTP services from VLF_* variables")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.add_argument("--table", help="write the result table here instead of stdout")
    _train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dataset", help="build, validate and summarise VLF manifests")
    dsub = p.add_subparsers(dest="action", metavar="ACTION", parser_class=Parser)
    dsub.required = True
    q = dsub.add_parser("build", parents=[common], help="describe image pairs and write a manifest")
    q.add_argument("--pairs", required=True, help="directory of pair folders")
    q.add_argument("--out", required=True, help="dataset directory")
    q.add_argument("--task", default="IVF", choices=("IVF", "MIF", "MEF", "MFF"))
    q.add_argument("--source", default="local", help="source_dataset field")
    q.add_argument("--variant", default="full", choices=[v for v in VARIANTS if v != "no_text"])
    q.add_argument("--embed-dim", type=int, default=256)
    q.add_argument("--workers", type=int, default=1, help="records built concurrently")
    q.add_argument("--live", action="store_true", help="use the HTTP services from VLF_* variables")
    q.set_defaults(func=cmd_dataset_build)
    q = dsub.add_parser("validate", parents=[common], help="check records and embedding files")
    q.add_argument("manifest")
    q.set_defaults(func=cmd_dataset_validate)
    q = dsub.add_parser("stats", parents=[common], help="sentence and word statistics")
    q.add_argument("manifest")
    q.add_argument("--json", action="store_true")
    q.set_defaults(func=cmd_dataset_stats)

    p = sub.add_parser("synth", parents=[common], help="write synthetic fixture pairs")
    p.add_argument("--task", default="IVF", choices=("IVF", "MIF", "MEF", "MFF"))
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"filmfuse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"filmfuse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFault as exc:
        print(f"filmfuse: numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FilmError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"filmfuse: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
