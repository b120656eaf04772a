import csv
import io

import pytest

from pitpm.bench import CSV_COLUMNS, bench_csv, kernel_benchmark, parse_config, run_bench
from pitpm.errors import ConfigError
from pitpm.group import PROD, TEST, KERNEL


def test_parse_example_config():
    cfg = parse_config("ns=2,10,100\nscheme=multisig\ntrials=5\nlatency_ms=20\njitter_ms=5\nseed=42\n")
    assert cfg.ns == [2, 10, 100]
    assert cfg.schemes == ["multisig"]
    assert (cfg.trials, cfg.latency_ms, cfg.jitter_ms, cfg.seed) == (5, 20.0, 5.0, 42)
    assert cfg.group is PROD


def test_parse_comments_and_defaults():
    cfg = parse_config("# sweep\nns = 3  # small\n\ngroup=test\n")
    assert cfg.ns == [3] and cfg.group is TEST
    assert cfg.schemes == ["multisig", "baseline"]


@pytest.mark.parametrize("text, line", [
    ("ns=2\nbogus=1\n", 2),
    ("ns=2\nns=3\n", 2),
    ("seed=1\nns=2,x\n", 2),
    ("ns=2\n\ntrials=0\n", 3),
    ("ns=2\nscheme=musig2\n", 2),
    ("just words\n", 1),
    ("ns=0\n", 1),
    ("ns=2\nlatency_ms=-3\n", 2),
    ("ns=2\ngroup=p521\n", 2),
])
def test_config_errors_carry_line(text, line):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def test_missing_ns():
    with pytest.raises(ConfigError):
        parse_config("seed=1\n")


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_single_signer_row():
    rows = _rows(bench_csv("ns=1\nscheme=multisig,baseline\n"))
    assert rows == [{"n": "1", "scheme": "pitpm-multisig", "messages_total": "3",
                     "bytes_total": rows[0]["bytes_total"], "wall_ms_simulated": rows[0]["wall_ms_simulated"],
                     "failures": "0"}]


def test_csv_shape_and_ratio():
    text = bench_csv("ns=2,10,100\nscheme=multisig,baseline\nseed=3\n")
    assert text.splitlines()[0].split(",") == CSV_COLUMNS
    rows = {(int(r["n"]), r["scheme"]): r for r in _rows(text)}
    for n in (2, 10, 100):
        assert int(rows[n, "pitpm-multisig"]["messages_total"]) == 3 * n
        assert int(rows[n, "baseline"]["messages_total"]) == 2 * n * (n - 1)
        assert rows[n, "baseline"]["failures"] == "0"
    ratio = int(rows[100, "baseline"]["messages_total"]) / int(rows[100, "pitpm-multisig"]["messages_total"])
    assert ratio == 66


def test_csv_deterministic():
    cfg = "ns=2,5\nscheme=multisig,threshold,baseline\ntrials=2\nseed=7\ngroup=test\n"
    assert bench_csv(cfg) == bench_csv(cfg)


def test_threshold_rows_and_trials():
    rows = run_bench(parse_config("ns=5\nscheme=threshold\nt=2\ntrials=3\ngroup=test\n"))
    assert rows[0]["scheme"] == "pitpm-threshold"
    assert rows[0]["messages_total"] == 15 and rows[0]["failures"] == 0


def test_kernel_benchmark_runs():
    res = kernel_benchmark(iterations=10)
    assert res["python"] > 0
    if KERNEL == "compiled":
        assert res["compiled"] > 0 and res["speedup"] > 1
