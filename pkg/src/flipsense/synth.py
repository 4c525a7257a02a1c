"""Deterministic synthetic build histories with planted file->test links.

Each test depends on a few files; when a build's change set touches a
dependency the test flips its verdict with the hit probability, otherwise
with the (small) noise probability. The ground-truth dependency map is
returned alongside the history for diagnostics. Everything is a pure
function of the config, so the same seed always yields byte-identical
output.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import IO

from .errors import ValidationError
from .history import BuildRecord


@dataclass(frozen=True)
class SynthConfig:
    """Desk-scale default: a three-method replay finishes in seconds."""

    seed: int = 0
    n_builds: int = 50
    n_files: int = 200
    n_tests: int = 100
    deps_per_test: tuple[int, int] = (1, 5)
    change_set_size: tuple[int, int] = (1, 20)
    flip_probability_hit: float = 0.7
    flip_probability_noise: float = 0.01
    initial_fail_fraction: float = 0.1


def validate_config(config: SynthConfig) -> None:
    if min(config.n_builds, config.n_files, config.n_tests) < 1:
        raise ValidationError("n_builds, n_files, and n_tests must all be >= 1")
    for name, (lo, hi) in (
        ("deps_per_test", config.deps_per_test),
        ("change_set_size", config.change_set_size),
    ):
        if lo < 1 or hi < lo:
            raise ValidationError(f"{name} must be a range 1 <= lo <= hi, got {lo}..{hi}")
        if hi > config.n_files:
            raise ValidationError(f"{name} max {hi} exceeds n_files {config.n_files}")
    for name, p in (
        ("flip_probability_hit", config.flip_probability_hit),
        ("flip_probability_noise", config.flip_probability_noise),
        ("initial_fail_fraction", config.initial_fail_fraction),
    ):
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"{name} must be in [0, 1], got {p}")


def _flip(verdict: str) -> str:
    return "fail" if verdict == "pass" else "pass"


def generate(config: SynthConfig) -> tuple[list[BuildRecord], dict[str, tuple[str, ...]]]:
    """Build the history and the planted dependency map."""
    validate_config(config)
    rng = random.Random(config.seed)
    files = [f"f{i:04d}" for i in range(config.n_files)]
    tests = [f"t{i:04d}" for i in range(config.n_tests)]

    deps = {
        t: frozenset(rng.sample(files, rng.randint(*config.deps_per_test)))
        for t in tests
    }
    verdicts = {
        t: "fail" if rng.random() < config.initial_fail_fraction else "pass"
        for t in tests
    }

    records = [
        BuildRecord("b0000", 0, frozenset(rng.sample(files, rng.randint(*config.change_set_size))), dict(verdicts))
    ]
    for seq in range(1, config.n_builds):
        changed = frozenset(rng.sample(files, rng.randint(*config.change_set_size)))
        new_verdicts = {}
        for t in tests:
            p = config.flip_probability_hit if deps[t] & changed else config.flip_probability_noise
            v = verdicts[t]
            if rng.random() < p:
                v = _flip(v)
            new_verdicts[t] = v
        verdicts = new_verdicts
        records.append(BuildRecord(f"b{seq:04d}", seq, changed, new_verdicts))

    truth = {t: tuple(sorted(deps[t])) for t in tests}
    return records, truth


def write_truth(truth: dict[str, tuple[str, ...]], fp: IO[str]) -> None:
    json.dump({t: list(fs) for t, fs in truth.items()}, fp, sort_keys=True, separators=(",", ":"))
    fp.write("\n")
