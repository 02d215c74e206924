"""Monte Carlo experiments behind the CLI ``sweep`` command.

Each grid point runs ``trials`` independent trials; trial ``i`` draws its seed
from ``(seed, i)`` so results do not depend on execution order. Every row
reports a mean and a 95% confidence half-width.
"""
from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .adversary import InterceptResend, NoAdversary, from_name
from .bb84.auth import AuthSecret
from .bb84.session import SessionParams, Status, generate_raw, run_session, sift
from .channel import ChannelConfig

KINDS = ("detection_sweep", "qber_sweep", "sifting_yield", "scalability", "session_demo")

SCHEMAS: Dict[str, Tuple[str, ...]] = {
    "detection_sweep": ("sample_size", "fraction", "detect_rate", "ci"),
    "qber_sweep": ("fraction", "flip", "mean_qber", "ci"),
    "sifting_yield": ("n", "yield", "ci"),
    "scalability": ("concurrent_users", "mean_session_wall_time", "ci"),
    "session_demo": (
        "seed", "N", "adversary", "fraction", "flip", "loss", "sifted_len", "qber", "status", "final_len",
    ),
}

DEFAULT_GRIDS: Dict[str, Dict[str, list]] = {
    "detection_sweep": {"sample_size": [5, 10, 19, 40], "fraction": [0.0, 0.25, 0.5, 1.0], "photons": [512]},
    "qber_sweep": {"fraction": [0.0, 0.25, 0.5, 0.75, 1.0], "flip": [0.0, 0.02, 0.05], "photons": [20000]},
    "sifting_yield": {"n": [100, 1000, 10000]},
    "scalability": {"concurrent_users": [10, 100, 1000], "photons": [256], "workers": [8]},
    "session_demo": {"photons": [10000], "adversary": ["none"], "fraction": [1.0], "flip": [0.0], "loss": [0.0]},
}


def trial_seed(seed: int, index: int) -> int:
    lo, hi = np.random.SeedSequence([seed, index]).generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def mean_ci(values: Sequence[float]) -> Tuple[float, float]:
    n = len(values)
    if n == 0:
        return float("nan"), float("nan")
    m = float(np.mean(values))
    if n == 1:
        return m, 0.0
    return m, 1.96 * float(np.std(values, ddof=1)) / math.sqrt(n)


def rate_ci(hits: int, n: int) -> Tuple[float, float]:
    p = hits / n
    return p, 1.96 * math.sqrt(p * (1 - p) / n)


@dataclass
class ExperimentSpec:
    kind: str
    grid: Dict[str, list] = field(default_factory=dict)
    trials: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; choose from {KINDS}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        merged = dict(DEFAULT_GRIDS[self.kind])
        merged.update({k: list(v) for k, v in self.grid.items() if v is not None})
        for key, values in merged.items():
            if not values:
                raise ValueError(f"grid axis {key!r} is empty")
        self.grid = merged


# -- individual experiments -------------------------------------------------


def detection_rate(sample_size: int, fraction: float, trials: int, seed: int, photons: int = 512) -> Tuple[float, float]:
    """Share of sessions that end without a key under intercept-resend at ``fraction``."""
    strategy = InterceptResend(fraction) if fraction > 0 else NoAdversary()
    hits = 0
    for i in range(trials):
        s = trial_seed(seed, i)
        r = run_session(SessionParams(photons, sample_size=sample_size, seed=s), ChannelConfig(seed=s), strategy)
        hits += r.status is not Status.ESTABLISHED
    return rate_ci(hits, trials)


def sifted_error_rate(fraction: float, flip: float, photons: int, seed: int) -> Tuple[float, int]:
    """Error rate over the whole sifted key of one raw exchange, and its length."""
    strategy = InterceptResend(fraction) if fraction > 0 else NoAdversary()
    params = SessionParams(photons, sample_size=0, seed=seed)
    alice, bob, record = generate_raw(params, ChannelConfig(flip, 0.0, seed), strategy)
    a, b, kept = sift(alice, bob, record)
    return (float(np.mean(a != b)) if len(kept) else 0.0), len(kept)


def sifting_fraction(n: int, seed: int, loss: float = 0.0) -> float:
    alice, bob, record = generate_raw(SessionParams(n, sample_size=0, seed=seed), ChannelConfig(0.0, loss, seed))
    _, _, kept = sift(alice, bob, record)
    return len(kept) / n


def session_latencies(users: int, seed: int, photons: int = 256, workers: int = 8) -> List[float]:
    """Submit ``users`` sessions at once to a fixed worker pool; seconds from submit to key."""

    def one(i: int) -> float:
        s = trial_seed(seed, i)
        run_session(SessionParams(photons, seed=s), ChannelConfig(seed=s), auth=AuthSecret.generate())
        return time.perf_counter()

    with ThreadPoolExecutor(max_workers=workers) as pool:
        t0 = time.perf_counter()
        done = list(pool.map(one, range(users)))
    return [t - t0 for t in done]


# -- grid drivers -----------------------------------------------------------


def run_experiment(spec: ExperimentSpec) -> List[dict]:
    g = spec.grid
    rows: List[dict] = []
    if spec.kind == "detection_sweep":
        for k in g["sample_size"]:
            for f in g["fraction"]:
                rate, ci = detection_rate(int(k), float(f), spec.trials, spec.seed, int(g["photons"][0]))
                rows.append({"sample_size": int(k), "fraction": float(f), "detect_rate": rate, "ci": ci})
    elif spec.kind == "qber_sweep":
        for f in g["fraction"]:
            for p in g["flip"]:
                vals = [
                    sifted_error_rate(float(f), float(p), int(g["photons"][0]), trial_seed(spec.seed, i))[0]
                    for i in range(spec.trials)
                ]
                m, ci = mean_ci(vals)
                rows.append({"fraction": float(f), "flip": float(p), "mean_qber": m, "ci": ci})
    elif spec.kind == "sifting_yield":
        for n in g["n"]:
            vals = [sifting_fraction(int(n), trial_seed(spec.seed, i)) for i in range(spec.trials)]
            m, ci = mean_ci(vals)
            rows.append({"n": int(n), "yield": m, "ci": ci})
    elif spec.kind == "scalability":
        for u in g["concurrent_users"]:
            lat = session_latencies(int(u), spec.seed, int(g["photons"][0]), int(g["workers"][0]))
            m, ci = mean_ci(lat)
            rows.append({"concurrent_users": int(u), "mean_session_wall_time": m, "ci": ci})
    elif spec.kind == "session_demo":
        for i in range(spec.trials):
            s = trial_seed(spec.seed, i)
            for adv_name in g["adversary"]:
                for f in g["fraction"]:
                    for p in g["flip"]:
                        for loss in g["loss"]:
                            n = int(g["photons"][0])
                            strategy = from_name(str(adv_name), float(f))
                            r = run_session(SessionParams(n, seed=s), ChannelConfig(float(p), float(loss), s), strategy)
                            rows.append(summary_row(r, s, n, strategy, float(f), float(p), float(loss)))
    return rows


def summary_row(result, seed: int, n: int, strategy, fraction: float, flip: float, loss: float) -> dict:
    return {
        "seed": seed,
        "N": n,
        "adversary": strategy.name,
        "fraction": fraction if strategy.name == "intercept" else (1.0 if strategy.name == "mitm" else 0.0),
        "flip": flip,
        "loss": loss,
        "sifted_len": result.sifted_length,
        "qber": result.estimated_qber,
        "status": result.status.value,
        "final_len": result.final_length,
    }


def write_csv(rows: Iterable[dict], kind: str, fp) -> None:
    writer = csv.DictWriter(fp, fieldnames=SCHEMAS[kind], lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
