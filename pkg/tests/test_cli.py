import json
import subprocess
import sys

import pytest

from btcactors.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main


def data_flags(cfg):
    return ["--chain", cfg.chain, "--tags", cfg.tags, "--seeds", cfg.seeds, "--out", cfg.out]


def test_ingest(small_synth_dir, capsys):
    code = main(["ingest", "--chain", str(small_synth_dir / "chain.jsonl"), "--tags", str(small_synth_dir / "tags.csv")])
    assert code == EXIT_OK
    stats = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    assert int(stats["transactions"]) == len((small_synth_dir / "chain.jsonl").read_text().splitlines())
    assert int(stats["coinjoin"]) > 0


def test_per_address_stages(small_run, tmp_path, capsys):
    cfg, res = small_run
    addr = res.test_groups[0]
    flags = data_flags(cfg)
    assert main(["subgraph", *flags, "--address", addr, "--n", "10", "-o", str(tmp_path / "s.tsv")]) == EXIT_OK
    assert main(["cluster", *flags, "--address", addr, "-o", str(tmp_path / "c.csv")]) == EXIT_OK
    assert (tmp_path / "c.csv").read_text().startswith("address,actor_id\n")
    assert main(["actor-graph", *flags, "--address", addr, "--kind", "ego2_simple"]) == EXIT_OK
    assert "ego2_simple" in capsys.readouterr().out
    out = tmp_path / "f.csv"
    assert main(["features", *flags, "--address", addr, "--kinds", "ego1,ego1_simple", "-o", str(out)]) == EXIT_OK
    kinds = {line.split(",")[2] for line in out.read_text().splitlines()[1:]}
    assert kinds <= {"ego1", "ego1_simple"}


def test_summarize_train_report_predict(small_run, tmp_path, capsys):
    cfg, res = small_run
    feats = str(res.out / "features.csv")
    assert main(["summarize", "--features", feats, "-o", str(tmp_path / "sum.csv")]) == EXIT_OK
    assert (tmp_path / "sum.csv").read_text().startswith("feature,class,")
    assert main(["report", "--dir", str(res.out)]) == EXIT_OK
    assert "Stacking-bagging" in capsys.readouterr().out
    assert main(["train", "--features", feats, "--out", str(tmp_path / "t"), "--folds", "3"]) == EXIT_OK
    assert "held-out balanced accuracy" in capsys.readouterr().out
    addr = res.test_groups[0]
    code = main(["predict", *data_flags(cfg), "--address", addr, "--model-dir", str(cfg.model_dir),
                 "--dump-features", str(tmp_path / "p.csv")])
    assert code == EXIT_OK
    pred = json.loads(capsys.readouterr().out)
    assert pred["address"] == addr and pred["class"] in pred["probabilities"]
    assert (tmp_path / "p.csv").exists()


def test_exit_codes(small_run, tmp_path, capsys):
    cfg, _ = small_run
    flags = data_flags(cfg)
    assert main(["subgraph", *flags, "--address", "no-such-address"]) == EXIT_DATA
    assert main(["ingest", "--chain", str(tmp_path / "missing.jsonl")]) == EXIT_DATA
    assert main(["cluster", *flags, "--address", "x", "--max-transactions", "0"]) == EXIT_USAGE
    bad = tmp_path / "bad.conf"
    bad.write_text("btcactors-config 1\nnot_a_key = 1\n")
    assert main(["--config", str(bad), "ingest"]) == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["subgraph"])
    assert exc.value.code == EXIT_USAGE
    broken = tmp_path / "broken.jsonl"
    broken.write_text('{"txid": 1}\n')
    assert main(["ingest", "--chain", str(broken)]) == EXIT_DATA
    capsys.readouterr()


def test_size_limit_exit(small_run, capsys):
    cfg, res = small_run
    code = main(["subgraph", *data_flags(cfg), "--address", res.test_groups[0], "--max-transactions", "1"])
    assert code == EXIT_DATA
    assert "size limit" in capsys.readouterr().err


def test_synth_and_run_end_to_end(in_tmp, capsys):
    code = main(["synth", "--seed", "5", "--actors-per-class", "8", "--blocks", "2000", "-o", "data"])
    assert code == EXIT_OK
    flags = ["--chain", "data/chain.jsonl", "--tags", "data/tags.csv", "--seeds", "data/labels.csv"]
    code = main(["run", *flags, "--out", "out", "--folds", "2", "--no-keep-intermediates", "--save-config", "eff.conf"])
    assert code == EXIT_OK
    assert "held-out balanced accuracy" in capsys.readouterr().out
    assert not (in_tmp / "out" / "graphs").exists()
    assert "keep_intermediates = false" in (in_tmp / "eff.conf").read_text()
    bad = in_tmp / "synth.json"
    bad.write_text('{"actors_per_class": 0}')
    assert main(["synth", "--config", str(bad)]) == EXIT_USAGE


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "btcactors.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("btcactors ")
    out = subprocess.run([sys.executable, "-m", "btcactors.cli", "bogus"], capture_output=True, text=True)
    assert out.returncode == EXIT_USAGE
