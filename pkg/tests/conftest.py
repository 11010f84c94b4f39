"""Shared fixtures. The default benchmark (200 train / 50 eval clips, seed
42) is expensive to build, so it is computed once per session and reused by
the unit tests that need realistic data as well as by the acceptance suite.
"""

import time

import pytest

from reprompt.deferral import CostSpec
from reprompt.evalkit import (build_tables, error_curve, evaluate, features_for,
                              propagate_initial, quality_targets)
from reprompt.policy import TrainConfig, evenly_spaced_frames, train
from reprompt.propagator import PromptDynamics
from reprompt.seeds import derive_seed
from reprompt.strategies import Strategy, train_quality_regressor
from reprompt.synthgen import ClipConfig, generate_dataset

THREADS = 8

_acceptance_lines: list[str] = []


def record_acceptance(line: str) -> None:
    _acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def benchmark():
    """Default benchmark state: clips, propagations, cost tables, models,
    per-strategy reports and per-kind error curves, with stage timings."""
    times = {}
    dyn = PromptDynamics()
    spec = CostSpec()
    ccfg = ClipConfig()
    seed = 42

    t0 = time.perf_counter()
    train_clips = generate_dataset(ccfg, 200, derive_seed(seed, "train"), prefix="train")
    eval_clips = generate_dataset(ccfg, 50, derive_seed(seed, "eval"), prefix="eval")
    times["gen"] = time.perf_counter() - t0

    frames = evenly_spaced_frames(ccfg.frame_count, 10)
    candidates = frames[1:]

    results = {}
    curves = {}
    for kind in ("mask", "box", "point"):
        t0 = time.perf_counter()
        results[kind] = propagate_initial(eval_clips, kind, dyn, THREADS)
        curves[kind] = error_curve(eval_clips, kind, dyn, seed,
                                   initial_results=results[kind])
        times[f"curve_{kind}"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    train_results = propagate_initial(train_clips, "mask", dyn, THREADS)
    train_tables = build_tables(train_clips, "mask", candidates, spec, dyn,
                                THREADS, train_results)
    eval_tables = build_tables(eval_clips, "mask", candidates, spec, dyn,
                               THREADS, results["mask"])
    times["tables"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    feats = features_for(train_clips, train_results, frames, THREADS)
    policy, policy_curve = train(list(zip(feats, train_tables)), TrainConfig(),
                                 ccfg.frame_count)
    targets = [quality_targets(c, r, frames)
               for c, r in zip(train_clips, train_results)]
    quality, quality_curve = train_quality_regressor(
        list(zip(feats, targets)), TrainConfig(), frames, ccfg.frame_count)
    times["train"] = time.perf_counter() - t0

    strategies = {
        "initial": Strategy("initial"),
        "midpoint": Strategy("midpoint"),
        "random": Strategy("random"),
        "evavos": Strategy("evavos", quality=quality),
        "l2rp": Strategy("l2rp", policy=policy),
        "oracle": Strategy("oracle"),
    }
    t0 = time.perf_counter()
    reports = {
        name: evaluate(eval_clips, st, "mask", spec, dyn, seed, 10,
                       tables=eval_tables, initial_results=results["mask"],
                       threads=THREADS)
        for name, st in strategies.items()
    }
    times["eval"] = time.perf_counter() - t0

    return {
        "seed": seed, "dyn": dyn, "spec": spec, "clip_config": ccfg,
        "frames": frames, "candidates": candidates,
        "train_clips": train_clips, "eval_clips": eval_clips,
        "train_results": train_results, "eval_results": results,
        "train_tables": train_tables, "eval_tables": eval_tables,
        "train_features": feats, "policy": policy, "quality": quality,
        "policy_curve": policy_curve, "quality_curve": quality_curve,
        "curves": curves, "reports": reports, "times": times,
    }
