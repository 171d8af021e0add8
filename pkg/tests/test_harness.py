"""Config parsing, worker pool, CSV encoding, and the run/manifest cycle."""

import hashlib
import json
import os
import time

import pytest

from scalebridge.errors import BudgetExceededError, ValidationError
from scalebridge.harness import (CSV_SCHEMA, MANIFEST_SCHEMA, EXPERIMENTS,
                                 ExperimentConfig, WorkerPool, catalog,
                                 encode_csv, list_experiments, load_config,
                                 run)

ALL_KINDS = (
    "simulate-map", "srb-profile", "green-kubo", "average", "fluctuations",
    "wf-compare", "decay", "metastability", "lattice-sde", "jump",
    "gap-probe", "kappa-m", "hydro", "heat-ref",
)


def test_catalog_covers_every_experiment():
    entries = catalog()
    assert sorted(e["kind"] for e in entries) == sorted(ALL_KINDS)
    for e in entries:
        assert e["anchor"] and e["description"]
        for p in e["params"]:
            assert set(p) == {"name", "type", "default", "choices", "help"}
    parsed = json.loads(list_experiments(as_json=True))
    assert parsed == entries
    text = list_experiments()
    for kind in ALL_KINDS:
        assert kind in text


def test_ini_config_round_trip(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(
        "[experiment]\nkind = lattice-sde\nseed = 7\nworkers = 2\n"
        "[params]\nL = 6\nT = 0.5\nn_replicas = 4\nchecks = false\n")
    cfg = load_config(str(path))
    assert cfg.kind == "lattice-sde"
    assert cfg.seed == 7 and cfg.workers == 2
    assert cfg.params["L"] == 6
    assert cfg.params["T"] == 0.5
    assert cfg.params["checks"] is False
    assert cfg.params["beta"] == 1.0  # default fills in


def test_json_config_mirrors_ini(tmp_path):
    ini = tmp_path / "a.ini"
    ini.write_text("[experiment]\nkind = green-kubo\nseed = 3\n"
                   "[params]\nn_cells = 256\nm_max = 6\n")
    js = tmp_path / "a.json"
    js.write_text(json.dumps({"kind": "green-kubo", "seed": 3,
                              "params": {"n_cells": 256, "m_max": 6}}))
    assert load_config(str(ini)) == load_config(str(js))


def test_config_rejections(tmp_path):
    bad_param = tmp_path / "p.ini"
    bad_param.write_text("[experiment]\nkind = jump\n[params]\nbogus = 1\n")
    with pytest.raises(ValidationError, match="bogus"):
        load_config(str(bad_param))

    bad_section = tmp_path / "s.ini"
    bad_section.write_text("[experiment]\nkind = jump\n[extra]\nx = 1\n")
    with pytest.raises(ValidationError, match="extra"):
        load_config(str(bad_section))

    bad_key = tmp_path / "k.json"
    bad_key.write_text(json.dumps({"kind": "jump", "notes": "hi"}))
    with pytest.raises(ValidationError, match="notes"):
        load_config(str(bad_key))

    mismatch = tmp_path / "m.ini"
    mismatch.write_text("[experiment]\nkind = green-kubo\n")
    with pytest.raises(ValidationError, match="green-kubo"):
        load_config(str(mismatch), kind="jump")

    with pytest.raises(ValidationError, match="cannot read"):
        load_config(str(tmp_path / "missing.ini"))


def test_cli_overrides_beat_file_values(tmp_path):
    path = tmp_path / "o.ini"
    path.write_text("[experiment]\nkind = jump\nseed = 1\nworkers = 1\n")
    cfg = load_config(str(path), seed=9, workers=3, out=str(tmp_path / "d"))
    assert cfg.seed == 9 and cfg.workers == 3
    assert cfg.out == str(tmp_path / "d")


def test_param_coercions_and_bounds():
    create = ExperimentConfig.create
    cfg = create("lattice-sde", {"checks": "false", "L": "12"})
    assert cfg.params["checks"] is False and cfg.params["L"] == 12
    cfg = create("hydro", {"times": "0.01, 0.02 0.05"})
    assert cfg.params["times"] == [0.01, 0.02, 0.05]
    with pytest.raises(ValidationError):
        create("lattice-sde", {"L": "1.5"})
    with pytest.raises(ValidationError):
        create("lattice-sde", {"checks": "maybe"})
    with pytest.raises(ValidationError):
        create("simulate-map", {"preset": "no-such-map"})
    with pytest.raises(ValidationError):
        create("simulate-map", {"epsilon": -0.1})
    with pytest.raises(ValidationError):
        create("srb-profile", {"n_cells": 32})
    with pytest.raises(ValidationError):
        create("average", {"eps": "0.01 0.02"})  # needs >= 3 values
    with pytest.raises(ValidationError):
        create("no-such-kind", {})
    with pytest.raises(ValidationError):
        create("jump", {}, seed=-1)
    with pytest.raises(ValidationError):
        create("jump", {}, seed=2 ** 64)
    with pytest.raises(ValidationError):
        create("jump", {}, workers=0)


def test_encode_csv_exact_bytes():
    data = encode_csv(("i", "v", "flag"),
                      [(1, 0.5, True), (2, 0.0015, False)])
    assert data == b"i,v,flag\r\n1,0.5,true\r\n2,0.0015,false\r\n"
    with pytest.raises(ValidationError):
        encode_csv(("a",), [([1, 2],)])


def test_worker_pool_ranges():
    pool = WorkerPool(4)
    blocks = pool.ranges(250, min_size=100)
    assert blocks == [(0, 125), (125, 250)]
    assert pool.ranges(0) == []
    cover = pool.ranges(10)
    assert cover[0][0] == 0 and cover[-1][1] == 10
    for (a, b), (c, d) in zip(cover, cover[1:]):
        assert b == c
    assert WorkerPool(1).ranges(10) == [(0, 10)]


def test_worker_pool_starmap_preserves_task_order():
    def slow_id(i):
        time.sleep(0.02 * (4 - i))
        return i

    assert WorkerPool(4).starmap(slow_id, [(i,) for i in range(4)]) \
        == [0, 1, 2, 3]


def test_run_writes_manifest_and_reproduces(tmp_path):
    params = {"times": [0.01, 0.02], "grid_n": 256, "n_out": 8}
    cfg = ExperimentConfig.create("heat-ref", params, seed=1,
                                  out=str(tmp_path / "one"))
    res = run(cfg)
    assert res.files == ("reference.csv",)
    man = res.manifest
    assert man["manifest_schema"] == MANIFEST_SCHEMA
    assert man["experiment"] == "heat-ref"
    assert man["anchor"] == EXPERIMENTS["heat-ref"].anchor
    assert man["config"]["params"]["grid_n"] == 256
    assert "kappa" in res.summary
    entry = man["files"][0]
    assert entry["schema"] == CSV_SCHEMA
    with open(res.path("reference.csv"), "rb") as fh:
        payload = fh.read()
    assert hashlib.sha256(payload).hexdigest() == entry["sha256"]
    assert entry["bytes"] == len(payload)
    with open(res.path("manifest.json")) as fh:
        assert json.load(fh) == man

    again = run(ExperimentConfig.create("heat-ref", params, seed=1,
                                        out=str(tmp_path / "two")))
    assert [f["sha256"] for f in again.manifest["files"]] \
        == [f["sha256"] for f in man["files"]]


def test_run_default_out_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = ExperimentConfig.create("heat-ref", {"times": [0.01],
                                               "grid_n": 256, "n_out": 8})
    res = run(cfg)
    assert res.out_dir == os.path.join("runs", "heat-ref")
    assert os.path.exists(res.path("manifest.json"))


def test_failed_run_writes_nothing(tmp_path):
    out = tmp_path / "never"
    cfg = ExperimentConfig.create(
        "simulate-map", {"epsilon": 1e-9, "horizon": 200.0}, out=str(out))
    with pytest.raises(BudgetExceededError):
        run(cfg)
    assert not out.exists()


def test_worker_count_does_not_change_bytes(tmp_path):
    params = {"L": 6, "n_replicas": 12, "n_steps": 150, "checks": False,
              "T": 0.3}
    res1 = run(ExperimentConfig.create("lattice-sde", params, seed=5,
                                       workers=1, out=str(tmp_path / "w1")))
    res3 = run(ExperimentConfig.create("lattice-sde", params, seed=5,
                                       workers=3, out=str(tmp_path / "w3")))
    assert [f["sha256"] for f in res1.manifest["files"]] \
        == [f["sha256"] for f in res3.manifest["files"]]
