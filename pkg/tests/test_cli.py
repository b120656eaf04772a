import json
import os
import subprocess
import sys

import pytest

from pitpm.cli import main


@pytest.fixture
def msg(tmp_path):
    path = tmp_path / "msg.txt"
    path.write_bytes(b"pay 10 units to carol")
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


def test_multisig_flow(tmp_path, msg, capsys):
    d = tmp_path / "ms"
    assert run("setup", "--n", 3, "--group", "test", "--out", d, "--seed", 1) == 0
    for name in ("pp.bin", "vault.bin", "keys.json", "signer1.bin", "signer1.key"):
        assert (d / name).exists()
    assert (d / "signer1.bin").read_bytes().startswith(b"PITPMX1")
    shares = []
    for i in (1, 3):
        out = tmp_path / f"share{i}.bin"
        assert run("sign", "--params", d / "pp.bin", "--packet", d / f"signer{i}.bin",
                   "--msg", msg, "--set", "1,3", "--vault", d / "vault.bin", "--out", out) == 0
        shares.append(out)
    sig = tmp_path / "out.psig"
    assert run("combine", "--keys", d / "keys.json", "--msg", msg, "--shares", *shares, "--out", sig) == 0
    state = tmp_path / "state.json"
    assert run("verify", "--sig", sig, "--keys", d / "keys.json", "--msg", msg, "--state", state) == 0
    assert len(json.loads(state.read_text())) == 1
    other = tmp_path / "other.txt"
    other.write_bytes(b"pay 99 units to mallory")
    assert run("verify", "--sig", sig, "--keys", d / "keys.json", "--msg", other) == 1
    assert "invalid" in capsys.readouterr().out

    # a second session picks the next counter automatically
    for i in (1, 3):
        assert run("sign", "--params", d / "pp.bin", "--packet", d / f"signer{i}.bin",
                   "--msg", other, "--set", "1,3", "--vault", d / "vault.bin",
                   "--out", tmp_path / f"s2_{i}.bin") == 0
    sig2 = tmp_path / "second.psig"
    assert run("combine", "--keys", d / "keys.json", "--msg", other,
               "--shares", tmp_path / "s2_1.bin", tmp_path / "s2_3.bin", "--out", sig2) == 0
    assert run("verify", "--sig", sig2, "--keys", d / "keys.json", "--msg", other, "--state", state) == 0
    # the first signature is now stale for this verifier
    assert run("verify", "--sig", sig, "--keys", d / "keys.json", "--msg", msg, "--state", state) == 1


def test_replayed_counter_refused(tmp_path, msg):
    d = tmp_path / "ms"
    run("setup", "--n", 2, "--group", "test", "--out", d, "--seed", 2, "--plaintext")
    args = ["sign", "--params", d / "pp.bin", "--packet", d / "signer1.bin", "--msg", msg,
            "--set", "1,2", "--vault", d / "vault.bin", "--ctr", 4, "--out", tmp_path / "a.bin"]
    assert run(*args) == 0
    assert run(*args) == 1


def test_threshold_flow_with_refresh(tmp_path, msg):
    d = tmp_path / "th"
    assert run("dkg", "--t", 1, "--n", 3, "--out", d, "--group", "prod", "--seed", 3) == 0
    for name in ("params.bin", "transcript.bin", "vault.bin", "1.bin", "1.key"):
        assert (d / name).exists()
    shares = []
    for i in (1, 2, 3):
        out = tmp_path / f"t{i}.bin"
        assert run("threshold-sign", "--share", d / f"{i}.bin", "--set", "1,2,3",
                   "--msg", msg, "--out", out) == 0
        shares.append(out)
    sig = tmp_path / "t.psig"
    assert run("threshold-combine", "--params", d / "params.bin", "--msg", msg,
               "--shares", *shares[:2], "--vault", d / "vault.bin", "--out", sig) == 0
    assert run("verify", "--sig", sig, "--threshold-params", d / "params.bin", "--msg", msg) == 0
    # without the vault, two of three members are not enough to cover the third
    assert run("threshold-combine", "--params", d / "params.bin", "--msg", msg,
               "--shares", *shares[:2], "--out", tmp_path / "x.psig") == 1

    assert run("refresh", "--seeds", d / "vault.bin", "--token", "aa" * 16,
               "--packets", d / "1.bin", d / "2.bin") == 0
    # party 3 missed the refresh and detects the mismatch
    assert run("threshold-sign", "--share", d / "3.bin", "--set", "1,3", "--msg", msg,
               "--out", tmp_path / "bad.bin") == 1
    assert run("threshold-sign", "--share", d / "1.bin", "--set", "1,2", "--msg", msg,
               "--out", tmp_path / "r1.bin") == 0
    assert run("verify", "--sig", sig, "--threshold-params", d / "params.bin", "--msg", msg) == 0


def test_bench_commands(tmp_path, capsys):
    cfg = tmp_path / "bench.cfg"
    cfg.write_text("ns=1,3\nscheme=multisig,baseline\nseed=4\ngroup=test\n")
    out = tmp_path / "r.csv"
    assert run("bench", "--config", cfg, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "n,scheme,messages_total,bytes_total,wall_ms_simulated,failures"
    assert len(lines) == 4
    cfg.write_text("ns=1\nfoo=2\n")
    assert run("bench", "--config", cfg) == 1
    assert "line 2" in capsys.readouterr().err
    assert run("bench-kernel", "--iterations", 5) == 0
    assert "ms per scalar multiplication" in capsys.readouterr().out


def test_serve_over_tcp(tmp_path, msg):
    d = tmp_path / "srv"
    run("setup", "--n", 2, "--out", d, "--seed", 5)
    env = dict(os.environ, PITPM_VAULT=str(d / "vault.bin"))
    proc = subprocess.Popen(
        [sys.executable, "-m", "pitpm.cli", "serve", "--params", str(d / "pp.bin"),
         "--listen", "127.0.0.1:0"],
        stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True, env=env,
    )
    try:
        line = proc.stdout.readline()
        assert line.startswith("aggregator listening on")
        address = line.split()[-1]
        shares = []
        for i in (1, 2):
            out = tmp_path / f"share{i}.bin"
            assert run("sign", "--params", d / "pp.bin", "--packet", d / f"signer{i}.bin",
                       "--msg", msg, "--set", "1,2", "--aggregator", address, "--out", out) == 0
            shares.append(out)
        sig = tmp_path / "out.psig"
        assert run("combine", "--keys", d / "keys.json", "--msg", msg, "--shares", *shares, "--out", sig) == 0
        assert run("verify", "--sig", sig, "--keys", d / "keys.json", "--msg", msg) == 0
    finally:
        proc.terminate()
        proc.wait(timeout=10)
