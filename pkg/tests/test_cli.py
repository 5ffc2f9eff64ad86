import json

import pytest

from robtune.cli import main

TINY = {
    "dataset": {"classes": 3, "dims": 8, "per_class": 40, "spread": 0.3,
                "mean_dim": 4, "seed": 5},
    "model": {"arch": "mlp", "hidden": [12, 12]},
    "training": {"epochs": 6, "patience": 6},
    "ensembles": [{"kind": "centralized", "n": 1}, {"kind": "iid", "n": 2}],
    "surrogate": {"kind": "full", "n": 2},
    "attacks": {"transfer_epsilon": 0.1, "transfer_steps": 4, "query_epsilon": 0.05,
                "query_budget": 30, "eval_samples": 8},
    "seed": 3,
}


@pytest.fixture()
def cfg_path(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def test_unknown_flag_exits_2(capsys):
    assert main(["--bogus-flag", "gen-data"]) == 2
    assert main(["definitely-not-a-command"]) == 2


def test_missing_config_exits_2(tmp_path, capsys):
    rc = main(["--config", str(tmp_path / "nope.json"), "gen-data"])
    assert rc == 2
    assert "not found" in capsys.readouterr().err


def test_gen_data_writes_dataset(tmp_path, cfg_path):
    out = tmp_path / "data.dset"
    assert main(["--config", cfg_path, "--out", str(out), "gen-data"]) == 0
    raw = out.read_bytes()
    assert raw[:4] == b"DSET"
    assert (tmp_path / "data.dset.json").exists()


def test_train_attack_diagnose_chain(tmp_path, cfg_path, capsys):
    ckpt = tmp_path / "model"
    assert main(["--config", cfg_path, "--out", str(ckpt), "train",
                 "--kind", "iid", "--n", "2"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["members"] == 2
    assert (ckpt / "manifest.json").exists()
    assert (ckpt / "trainlog_000.csv").read_text().startswith("epoch,eta_t,train_loss")

    atk = tmp_path / "attacked"
    assert main(["--config", cfg_path, "--out", str(atk), "attack",
                 "--model", str(ckpt), "--family", "both"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert {"ra_t", "ra_q", "ca"} <= set(summary)
    rec = json.loads((atk / "query.jsonl").read_text().splitlines()[0])
    assert set(rec) == {"sample_id", "success", "queries", "linf", "clean_label", "adv_label"}

    diag = tmp_path / "diag"
    assert main(["--config", cfg_path, "--out", str(diag), "diagnose",
                 "--model", str(ckpt), "--samples", "4"]) == 0
    payload = json.loads((diag / "diagnostics.json").read_text())
    assert "input_smoothness" in payload
    assert (diag / "diagnostics.csv").read_text().startswith("eigenvalue,")


def test_ablate_rows_per_instantiation(tmp_path, cfg_path):
    out = tmp_path / "run"
    rc = main(["--config", cfg_path, "--out", str(out), "ablate",
               "--param", "eta", "--values", "0.005,0.02,0.1", "--repeats", "1"])
    assert rc == 0
    rows = (out / "tables" / "ablation_eta_per_n.csv").read_text().strip().splitlines()[1:]
    per_kind = {}
    for row in rows:
        per_kind.setdefault(row.split(",")[0], []).append(row)
    assert all(len(v) == 3 for v in per_kind.values())  # 3 values -> 3 rows each
    assert set(per_kind) == {"centralized", "iid"}


def test_report_regenerates_byte_identical(tmp_path, cfg_path):
    out = tmp_path / "run"
    main(["--config", cfg_path, "--out", str(out), "ablate",
          "--param", "mu", "--values", "0.85,0.95", "--repeats", "1"])
    table = out / "tables" / "ablation_mu_per_n.csv"
    before = table.read_bytes()
    assert main(["--config", cfg_path, "report", "--run", str(out)]) == 0
    assert table.read_bytes() == before


def test_failed_run_exits_1_with_structured_error(tmp_path, cfg_path, capsys):
    rc = main(["--config", cfg_path, "report", "--run", str(tmp_path / "missing")])
    assert rc == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert "error" in err and "detail" in err


def test_search_subcommand_micro(tmp_path):
    cfg = dict(TINY)
    cfg["ensembles"] = [{"kind": "centralized", "n": 1}]
    cfg["attacks"] = dict(TINY["attacks"], eval_samples=6, query_budget=20)
    cfg["training"] = {"epochs": 4, "patience": 4}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "srun"
    rc = main(["--config", str(path), "--out", str(out), "search",
               "--population", "4", "--generations", "2"])
    assert rc == 0
    trace = (out / "search" / "trace_centralized-n1.jsonl").read_text().splitlines()
    assert len(trace) == 8
