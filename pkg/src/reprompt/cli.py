"""Command-line pipeline driver.

Subcommands: gen, cost, train, eval, sweep, curves, trace, inspect. All
artifacts land under --out, embed the config hash and tool version, and
are byte-reproducible from (config, seed, tool version) regardless of
--threads.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_hash, load_config, to_dict
from .deferral import CostSpec, read_cost_tables_csv, reprice, write_cost_tables_csv
from .evalkit import (build_tables, error_curve, evaluate, features_for, lambda_sweep,
                      propagate_initial, quality_targets, write_curves_csv,
                      write_report_csv, write_sweep_csv)
from .policy import evenly_spaced_frames, load_model, save_model, train
from .propagator import PROMPT_KINDS, dice_trace, expected_dice, make_prompt, propagate
from .seeds import derive_seed
from .strategies import STRATEGY_KINDS, Strategy, train_quality_regressor
from .svgplot import bar_chart, line_chart
from .synthgen import generate_dataset, read_dataset, read_dataset_header, write_dataset

DATASET_FILE = "dataset.rpds"


class CliError(RuntimeError):
    """User-facing failure: printed as one line, exit status 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"usage: {message}")


def _file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()[:16]


def _dynamics_digest(cfg: ExperimentConfig) -> str:
    blob = json.dumps(to_dict(cfg)["dynamics"], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise CliError(f"missing artifact: {path.name} (run `reprompt {producer}` first)")
    return path


def _load_dataset(out: Path, cfg: ExperimentConfig):
    path = _require(out / DATASET_FILE, "gen")
    header, clips = read_dataset(path)
    if header.get("n_train", 0) + header.get("n_eval", 0) != len(clips):
        raise CliError(f"corrupt artifact: {path.name} header split disagrees with clip count")
    n_train = int(header["n_train"])
    return header, clips[:n_train], clips[n_train:], _file_sha256(path)


def _check_costs_meta(meta: dict, name: str, cfg: ExperimentConfig, dataset_sha: str,
                      kind: str, candidates: tuple[int, ...]) -> None:
    stale = []
    if meta.get("dataset_sha256") != dataset_sha:
        stale.append("dataset")
    if meta.get("dynamics_sha256") != _dynamics_digest(cfg):
        stale.append("dynamics")
    if meta.get("candidates") != json.dumps(list(candidates)):
        stale.append("candidates")
    if meta.get("prompt_kind") != kind:
        stale.append("prompt kind")
    if stale:
        raise CliError(
            f"stale artifact: {name} no longer matches the current "
            f"{'/'.join(stale)} (rerun `reprompt cost`)")


def _base_meta(cfg: ExperimentConfig) -> dict:
    return {"tool_version": __version__, "config_hash": config_hash(cfg)}


def _write_svg(path: Path, svg: str, cfg: ExperimentConfig) -> None:
    stamp = (f"<!-- tool_version: {__version__} "
             f"config_hash: {config_hash(cfg)} -->\n")
    path.write_text(stamp + svg, encoding="utf-8")


def _kinds_arg(value: str) -> list[str]:
    kinds = list(PROMPT_KINDS) if value == "all" else value.split(",")
    for kind in kinds:
        if kind not in PROMPT_KINDS:
            raise CliError(f"unknown prompt kind: {kind!r}")
    return kinds


def _cand_frames(cfg: ExperimentConfig) -> tuple[tuple[int, ...], tuple[int, ...]]:
    frames = evenly_spaced_frames(cfg.clip.frame_count, cfg.sample_count)
    return frames, frames[1:]


def cmd_gen(args, cfg: ExperimentConfig, out: Path) -> None:
    train_clips = generate_dataset(cfg.clip, cfg.n_train,
                                   derive_seed(cfg.seed, "train"), prefix="train")
    eval_clips = generate_dataset(cfg.clip, cfg.n_eval,
                                  derive_seed(cfg.seed, "eval"), prefix="eval")
    path = out / DATASET_FILE
    write_dataset(path, train_clips + eval_clips, clip_config=cfg.clip,
                  master_seed=cfg.seed, n_train=cfg.n_train, n_eval=cfg.n_eval,
                  config_hash=config_hash(cfg), tool_version=__version__)
    print(f"wrote {path} ({cfg.n_train} train + {cfg.n_eval} eval clips)")


def cmd_cost(args, cfg: ExperimentConfig, out: Path) -> None:
    _, train_clips, eval_clips, dataset_sha = _load_dataset(out, cfg)
    clips = train_clips + eval_clips
    _, candidates = _cand_frames(cfg)
    for kind in _kinds_arg(args.kind):
        tables = build_tables(clips, kind, candidates, cfg.cost,
                              cfg.dynamics, threads=args.threads)
        meta = _base_meta(cfg) | {
            "dataset_sha256": dataset_sha,
            "dynamics_sha256": _dynamics_digest(cfg),
            "prompt_kind": kind,
            "candidates": json.dumps(list(candidates)),
            "lambda_base": repr(cfg.cost.base_cost),
            "lambda_corr": repr(cfg.cost.correction_cost),
        }
        path = out / f"costs_{kind}.csv"
        write_cost_tables_csv(tables, path, meta)
        print(f"wrote {path} ({len(tables)} clips x {len(candidates)} candidates)")


def _load_costs(out: Path, cfg: ExperimentConfig, kind: str, dataset_sha: str,
                candidates: tuple[int, ...]):
    path = _require(out / f"costs_{kind}.csv", "cost")
    meta, tables = read_cost_tables_csv(path)
    _check_costs_meta(meta, path.name, cfg, dataset_sha, kind, candidates)
    return {t.clip_id: t for t in tables}


def cmd_train(args, cfg: ExperimentConfig, out: Path) -> None:
    _, train_clips, _, dataset_sha = _load_dataset(out, cfg)
    frames, candidates = _cand_frames(cfg)
    for kind in _kinds_arg(args.kind):
        by_id = _load_costs(out, cfg, kind, dataset_sha, candidates)
        missing = [c.id for c in train_clips if c.id not in by_id]
        if missing:
            raise CliError(f"stale artifact: costs_{kind}.csv lacks clip "
                           f"{missing[0]} (rerun `reprompt cost`)")
        results = propagate_initial(train_clips, kind, cfg.dynamics, args.threads)
        feats = features_for(train_clips, results, frames, args.threads)
        tables = [reprice(by_id[c.id], cfg.cost) for c in train_clips]

        model, curve = train(list(zip(feats, tables)), cfg.train, cfg.clip.frame_count)
        meta = _base_meta(cfg) | {"dataset_sha256": dataset_sha, "prompt_kind": kind}
        save_model(model, out / f"policy_{kind}.ckpt", model_type="deferral", meta=meta)

        targets = [quality_targets(c, r, frames) for c, r in zip(train_clips, results)]
        qmodel, qcurve = train_quality_regressor(list(zip(feats, targets)), cfg.train,
                                                 frames, cfg.clip.frame_count)
        save_model(qmodel, out / f"quality_{kind}.ckpt", model_type="quality", meta=meta)

        loss_path = out / f"losses_{kind}.csv"
        with open(loss_path, "w", encoding="utf-8", newline="") as fh:
            for key, value in meta.items():
                fh.write(f"# {key}: {value}\n")
            fh.write("epoch,policy_loss,quality_loss\n")
            for i in range(curve.size):
                fh.write(f"{i},{float(curve[i])!r},{float(qcurve[i])!r}\n")
        print(f"wrote policy_{kind}.ckpt quality_{kind}.ckpt {loss_path.name} "
              f"(final losses {curve[-1]:.5f} / {qcurve[-1]:.5f})")


def _strategies_arg(value: str) -> list[str]:
    names = list(STRATEGY_KINDS) if value == "all" else value.split(",")
    for name in names:
        if name not in STRATEGY_KINDS:
            raise CliError(f"unknown strategy: {name!r}")
    return names


def cmd_eval(args, cfg: ExperimentConfig, out: Path) -> None:
    _, _, eval_clips, dataset_sha = _load_dataset(out, cfg)
    frames, candidates = _cand_frames(cfg)
    names = _strategies_arg(args.strategy)
    reports = []
    for kind in _kinds_arg(args.kind):
        results = propagate_initial(eval_clips, kind, cfg.dynamics, args.threads)
        tables = None
        if "oracle" in names:
            by_id = _load_costs(out, cfg, kind, dataset_sha, candidates)
            try:
                tables = [reprice(by_id[c.id], cfg.cost) for c in eval_clips]
            except KeyError as exc:
                raise CliError(f"stale artifact: costs_{kind}.csv lacks clip "
                               f"{exc.args[0]} (rerun `reprompt cost`)") from None
        kind_reports = []
        for name in names:
            strategy = _make_strategy(name, kind, out)
            report = evaluate(eval_clips, strategy, kind, cfg.cost, cfg.dynamics,
                              cfg.seed, cfg.sample_count, tables=tables,
                              initial_results=results, threads=args.threads,
                              config_hash=config_hash(cfg))
            kind_reports.append(report)
            print(f"{kind:5s} {name:8s} mean dice {report.mean_dice:.4f} "
                  f"defer rate {report.deferral_rate:.2f} "
                  f"mean loss {report.mean_deferral_loss:.4f}")
        reports.extend(kind_reports)
        svg = bar_chart([r.strategy for r in kind_reports],
                        [r.mean_dice for r in kind_reports],
                        f"Final Dice by strategy ({kind} prompts)", "mean Dice",
                        errors=[1.96 * r.std_dice / np.sqrt(len(r.clip_ids))
                                for r in kind_reports])
        _write_svg(out / f"report_{kind}.svg", svg, cfg)
    meta = _base_meta(cfg) | {"dataset_sha256": dataset_sha, "seed": cfg.seed}
    write_report_csv(reports, out / "report.csv", meta)
    print(f"wrote report.csv ({len(reports)} strategy/kind rows)")


def _make_strategy(name: str, kind: str, out: Path) -> Strategy:
    if name == "l2rp":
        path = _require(out / f"policy_{kind}.ckpt", "train")
        model, header = load_model(path)
        if header.get("model_type") != "deferral":
            raise CliError(f"stale artifact: {path.name} is not a deferral policy")
        return Strategy("l2rp", policy=model)
    if name == "evavos":
        path = _require(out / f"quality_{kind}.ckpt", "train")
        model, header = load_model(path)
        if header.get("model_type") != "quality":
            raise CliError(f"stale artifact: {path.name} is not a quality model")
        return Strategy("evavos", quality=model)
    return Strategy(name)


def cmd_sweep(args, cfg: ExperimentConfig, out: Path) -> None:
    _, train_clips, eval_clips, dataset_sha = _load_dataset(out, cfg)
    _, candidates = _cand_frames(cfg)
    kind = args.kind
    if kind not in PROMPT_KINDS:
        raise CliError(f"unknown prompt kind: {kind!r}")
    by_id = _load_costs(out, cfg, kind, dataset_sha, candidates)
    try:
        train_tables = [by_id[c.id] for c in train_clips]
    except KeyError as exc:
        raise CliError(f"stale artifact: costs_{kind}.csv lacks clip "
                       f"{exc.args[0]} (rerun `reprompt cost`)") from None
    points = lambda_sweep(train_clips, eval_clips, kind, cfg.sweep_lambdas,
                          cfg.dynamics, cfg.cost, cfg.train, cfg.seed,
                          cfg.sample_count, train_tables=train_tables,
                          threads=args.threads)
    meta = _base_meta(cfg) | {"dataset_sha256": dataset_sha, "prompt_kind": kind}
    write_sweep_csv(points, out / "sweep.csv", meta)
    svg = line_chart(
        [("mean dice", [p.lambda_corr for p in points], [p.mean_dice for p in points]),
         ("deferral rate", [p.lambda_corr for p in points], [p.deferral_rate for p in points])],
        f"Correction-cost sweep ({kind} prompts)", "correction cost", "value")
    _write_svg(out / "sweep.svg", svg, cfg)
    for p in points:
        print(f"lambda {p.lambda_corr:g}: mean dice {p.mean_dice:.4f} "
              f"defer rate {p.deferral_rate:.2f}")
    print("wrote sweep.csv sweep.svg")


def cmd_curves(args, cfg: ExperimentConfig, out: Path) -> None:
    _, _, eval_clips, dataset_sha = _load_dataset(out, cfg)
    curves = []
    for kind in _kinds_arg(args.kind):
        curves.append(error_curve(eval_clips, kind, cfg.dynamics, cfg.seed,
                                  window=args.window, threads=args.threads))
    meta = _base_meta(cfg) | {
        "dataset_sha256": dataset_sha,
        "smoothing": f"centered moving average, window {args.window}, clipped at ends",
        "ci": "normal approximation, 1.96*std/sqrt(n_clips)",
    }
    write_curves_csv(curves, out / "curves.csv", meta)
    xs = list(range(curves[0].raw_loss.size))
    svg = line_chart(
        [(c.prompt_kind, xs, list(c.smoothed_loss)) for c in curves],
        "Dice loss vs. distance from the prompt", "frame", "mean Dice loss",
        bands=[list(c.ci_half_width) for c in curves])
    _write_svg(out / "curves.svg", svg, cfg)
    print(f"wrote curves.csv curves.svg ({len(curves)} prompt kinds, "
          f"{len(eval_clips)} clips)")


def cmd_trace(args, cfg: ExperimentConfig, out: Path) -> None:
    _, train_clips, eval_clips, dataset_sha = _load_dataset(out, cfg)
    clips = train_clips + eval_clips
    if args.clip is None:
        clip = eval_clips[0]
    else:
        matches = [c for c in clips if c.id == args.clip]
        if not matches:
            raise CliError(f"unknown clip id: {args.clip!r}")
        clip = matches[0]
    kind = args.kind
    if kind not in PROMPT_KINDS:
        raise CliError(f"unknown prompt kind: {kind!r}")
    p0 = make_prompt(clip, 0, kind, derive_seed(clip.seed, "prompt", 0))
    result = propagate(clip, [p0], cfg.dynamics, clip.seed)
    measured = dice_trace(result, clip)
    path = out / "trace.csv"
    meta = _base_meta(cfg) | {"dataset_sha256": dataset_sha, "prompt_kind": kind}
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key, value in meta.items():
            fh.write(f"# {key}: {value}\n")
        fh.write("clip_id,frame,expected,measured,anchor\n")
        for t in range(clip.frame_count):
            anchor = int(result.anchor_frame[t])
            exp = expected_dice(abs(t - anchor), kind, cfg.dynamics)
            fh.write(f"{clip.id},{t},{exp!r},{float(measured[t])!r},{anchor}\n")
    print(f"wrote {path} (clip {clip.id}, {kind} prompt)")


def cmd_inspect(args, cfg: ExperimentConfig, out: Path) -> None:
    path = Path(args.artifact)
    if not path.exists():
        path = out / args.artifact
    if not path.exists():
        raise CliError(f"missing artifact: {args.artifact}")
    if path.suffix == ".rpds":
        print(json.dumps(read_dataset_header(path), indent=2, sort_keys=True))
    elif path.suffix == ".ckpt":
        _, header = load_model(path)
        print(json.dumps(header, indent=2, sort_keys=True))
    elif path.suffix in (".csv", ".svg"):
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("#") or line.startswith("<!--"):
                    print(line.rstrip("\n"))
                else:
                    break
    else:
        raise CliError(f"cannot inspect {path.name}: unknown artifact type")


def build_parser() -> _Parser:
    parser = _Parser(prog="reprompt", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="PATH=VALUE", help="dotted config override")
        p.add_argument("--out", default=".", help="artifact directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for per-clip work")
        return p

    common(sub.add_parser("gen", help="generate the synthetic dataset"))
    p = common(sub.add_parser("cost", help="precompute correction cost tables"))
    p.add_argument("--kind", default="all", help="prompt kind(s), comma-separated or 'all'")
    p = common(sub.add_parser("train", help="train the deferral policy and quality model"))
    p.add_argument("--kind", default="all", help="prompt kind(s), comma-separated or 'all'")
    p = common(sub.add_parser("eval", help="run frame-selection strategies on eval clips"))
    p.add_argument("--kind", default="all", help="prompt kind(s), comma-separated or 'all'")
    p.add_argument("--strategy", default="all",
                   help=f"comma-separated subset of {','.join(STRATEGY_KINDS)} or 'all'")
    p = common(sub.add_parser("sweep", help="sweep the correction cost for the learned policy"))
    p.add_argument("--kind", default="mask", help="prompt kind")
    p = common(sub.add_parser("curves", help="export error-propagation curves"))
    p.add_argument("--kind", default="all", help="prompt kind(s), comma-separated or 'all'")
    p.add_argument("--window", type=int, default=20, help="smoothing window")
    p = common(sub.add_parser("trace", help="dump expected vs measured dice for one clip"))
    p.add_argument("--clip", default=None, help="clip id (default: first eval clip)")
    p.add_argument("--kind", default="mask", help="prompt kind")
    p = common(sub.add_parser("inspect", help="print an artifact's embedded header"))
    p.add_argument("artifact", help="artifact path (absolute or relative to --out)")
    return parser


_COMMANDS = {
    "gen": cmd_gen, "cost": cmd_cost, "train": cmd_train, "eval": cmd_eval,
    "sweep": cmd_sweep, "curves": cmd_curves, "trace": cmd_trace,
    "inspect": cmd_inspect,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise CliError("--threads must be at least 1")
        cfg = load_config(args.config, args.overrides)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _COMMANDS[args.command](args, cfg, out)
        return 0
    except SystemExit as exc:   # argparse --help / --version
        return int(exc.code or 0)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        message = " ".join(str(exc).split()) or exc.__class__.__name__
        print(f"error: {exc.__class__.__name__}: {message}", file=sys.stderr)
        return 2


def entry_point() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry_point()
