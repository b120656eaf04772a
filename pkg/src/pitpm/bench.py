"""Message-complexity benchmark runner and the scalar-multiplication kernel benchmark."""

from __future__ import annotations

import csv
import io
import random
import time
from dataclasses import dataclass, field

from . import _ec_py
from .errors import ConfigError, InvalidParams, PiTPMError
from .group import GROUPS, PROD, Group
from .harness import FaultPlan, Scheme, run_baseline_interactive, simulate

CSV_COLUMNS = ["n", "scheme", "messages_total", "bytes_total", "wall_ms_simulated", "failures"]


@dataclass
class BenchConfig:
    ns: list[int]
    schemes: list[str] = field(default_factory=lambda: ["multisig", "baseline"])
    trials: int = 1
    latency_ms: float = 20.0
    jitter_ms: float = 5.0
    seed: int = 0
    t: int | None = None
    group: Group = PROD


def _ints(value: str) -> list[int]:
    out = [int(v) for v in value.split(",") if v.strip()]
    if not out or any(v < 1 for v in out):
        raise ValueError("expected a list of positive integers")
    return out


def _scheme_list(value: str) -> list[str]:
    out = [v.strip() for v in value.split(",") if v.strip()]
    for s in out:
        if s not in ("multisig", "threshold", "baseline"):
            raise ValueError(f"unknown scheme {s!r}")
    if not out:
        raise ValueError("empty scheme list")
    return out


def _group(value: str) -> Group:
    if value not in GROUPS:
        raise ValueError(f"group must be one of {sorted(GROUPS)}")
    return GROUPS[value]


_FIELDS = {
    "ns": ("ns", _ints),
    "scheme": ("schemes", _scheme_list),
    "trials": ("trials", int),
    "latency_ms": ("latency_ms", float),
    "jitter_ms": ("jitter_ms", float),
    "seed": ("seed", int),
    "t": ("t", int),
    "group": ("group", _group),
}


def parse_config(text: str) -> BenchConfig:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"expected key=value, got {raw.strip()!r}", lineno)
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        attr, conv = _FIELDS[key]
        try:
            values[attr] = (key, conv(value), lineno)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", lineno) from None
    if "ns" not in values:
        raise ConfigError("missing required key 'ns'", 0)
    cfg = BenchConfig(**{attr: v for attr, (_, v, _) in values.items()})
    for attr in ("trials",):
        if getattr(cfg, attr) < 1:
            raise ConfigError("trials must be at least 1", values[attr][2])
    if cfg.latency_ms < 0 or cfg.jitter_ms < 0:
        line = values.get("latency_ms", values.get("jitter_ms"))[2]
        raise ConfigError("latency must be non-negative", line)
    return cfg


def _run_once(n: int, scheme: str, cfg: BenchConfig, seed: int):
    faults = FaultPlan(latency_ms=cfg.latency_ms, jitter_ms=cfg.jitter_ms)
    if scheme == "baseline":
        outcome, transcript = run_baseline_interactive(n, seed, faults, cfg.group)
    else:
        if scheme == "threshold":
            t = cfg.t if cfg.t is not None else (n - 1) // 2
            if t >= n:
                raise InvalidParams(f"t={t} needs n > t")
            sch = Scheme("threshold", t)
        else:
            sch = Scheme("multisig")
        result = simulate(n, sch, faults, seed, cfg.group)
        outcome, transcript = result.outcome, result.transcript
    return not isinstance(outcome, Exception), transcript


def run_bench(cfg: BenchConfig) -> list[dict]:
    """One row per ``(n, scheme)``; counts are per session, wall time is the trial mean."""
    rows = []
    for n in cfg.ns:
        for scheme in cfg.schemes:
            if scheme == "baseline" and n < 2:
                continue
            counts, sizes, walls, failures = set(), set(), [], 0
            for trial in range(cfg.trials):
                ok, tr = _run_once(n, scheme, cfg, cfg.seed * 1_000_003 + trial)
                failures += not ok
                counts.add(tr.total)
                sizes.add(tr.bytes_total)
                walls.append(tr.wall_ms)
            if len(counts) != 1:
                raise AssertionError(f"message count varied across trials: {sorted(counts)}")
            rows.append({
                "n": n,
                "scheme": "pitpm-" + scheme if scheme != "baseline" else "baseline",
                "messages_total": counts.pop(),
                "bytes_total": max(sizes),
                "wall_ms_simulated": f"{sum(walls) / len(walls):.3f}",
                "failures": failures,
            })
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def bench_csv(config_text: str) -> str:
    return rows_to_csv(run_bench(parse_config(config_text)))


def kernel_benchmark(iterations: int = 200, seed: int = 1) -> dict[str, float]:
    """Mean milliseconds per secp256k1 scalar multiplication, per available kernel."""
    rng = random.Random(seed)
    scalars = [rng.randrange(1, _ec_py.N) for _ in range(iterations)]
    kernels = {"python": _ec_py.point_mul}
    try:
        from . import _ec  # type: ignore[attr-defined]

        kernels["compiled"] = _ec.point_mul
    except ImportError:
        pass
    results = {}
    reference = None
    for name, fn in kernels.items():
        start = time.perf_counter()
        out = [fn(k, _ec_py.GX, _ec_py.GY) for k in scalars]
        results[name] = (time.perf_counter() - start) * 1000 / iterations
        if reference is None:
            reference = out
        elif out != reference:
            raise PiTPMError(f"kernel {name} disagrees with the reference")
    if "compiled" in results:
        results["speedup"] = results["python"] / results["compiled"]
    return results
