import json

import pytest

from frevl.cli import run_cli

MATCHING_TOML = """\
[task]
kind = "classification"
classes = 2

[fusion]
d_v = 16
d_t = 16
d_h = 16
n_layers = 1
heads = 2
ffn_dim = 32
out_dim = 2
head_hidden = 32

[schedule]
peak_lr = 3e-3
total_steps = 0

[train]
batch_size = 32
epochs = 2
seed = 5
"""


@pytest.fixture
def cache(tmp_path):
    path = tmp_path / "data.frvl"
    rc = run_cli(["synth", "--task", "matching", "--n", "400", "--dv", "16",
                  "--dt", "16", "--seed", "3", "--out", str(path)])
    assert rc == 0
    return path


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(MATCHING_TOML)
    return path


class TestUsageErrors:
    def test_train_missing_data_flag(self, capsys, tmp_path):
        rc = run_cli(["train", "--config", "x.toml",
                      "--out-checkpoint", str(tmp_path / "c.frvp")])
        assert rc == 1
        assert "--data" in capsys.readouterr().err

    def test_unknown_command(self, capsys):
        assert run_cli(["transmogrify"]) == 1

    def test_unknown_ablation_axis(self, cache, config, capsys):
        rc = run_cli(["ablate", "--data", str(cache), "--config",
                      str(config), "--axis", "nonsense"])
        assert rc == 1
        assert "unknown ablation axis" in capsys.readouterr().err

    def test_bad_config_section(self, cache, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[fusion]\nwidth = 3\n")
        rc = run_cli(["train", "--data", str(cache), "--config", str(bad),
                      "--out-checkpoint", str(tmp_path / "c.frvp")])
        assert rc == 1
        assert "fusion" in capsys.readouterr().err


class TestDataErrors:
    def test_missing_cache(self, tmp_path):
        assert run_cli(["info", "--cache", str(tmp_path / "nope.frvl")]) == 2

    def test_corrupt_cache(self, cache, capsys):
        data = bytearray(cache.read_bytes())
        data[:4] = b"XXXX"
        cache.write_bytes(bytes(data))
        rc = run_cli(["info", "--cache", str(cache)])
        assert rc == 2
        assert "magic" in capsys.readouterr().err


class TestSynthAndInfo:
    def test_round_trip(self, cache, capsys):
        rc = run_cli(["info", "--cache", str(cache)])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["record_count"] == 400
        assert doc["d_v"] == 16 and doc["d_t"] == 16
        assert doc["label_kind"] == "class"

    def test_synth_deterministic(self, tmp_path):
        a, b = tmp_path / "a.frvl", tmp_path / "b.frvl"
        for out in (a, b):
            assert run_cli(["synth", "--task", "bottleneck", "--n", "200",
                            "--dv", "8", "--dt", "8", "--seed", "7", "--k",
                            "4", "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestImport:
    def test_tsv_import(self, tmp_path, capsys):
        tsv = tmp_path / "in.tsv"
        tsv.write_text("0\t1\t3.0,4.0\t1.0,0.0\n1\t0\t1.0,1.0\t0.0,2.0\n")
        out = tmp_path / "out.frvl"
        assert run_cli(["import", "--tsv", str(tsv), "--out", str(out)]) == 0
        capsys.readouterr()
        assert run_cli(["info", "--cache", str(out)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["record_count"] == 2

    def test_malformed_tsv(self, tmp_path):
        tsv = tmp_path / "in.tsv"
        tsv.write_text("0\t1\tonly-three-fields\n")
        assert run_cli(["import", "--tsv", str(tsv),
                        "--out", str(tmp_path / "o.frvl")]) == 2


class TestPipeline:
    def test_train_eval_probe_bench_info(self, cache, config, tmp_path,
                                         capsys):
        ck = tmp_path / "model.frvp"
        hist = tmp_path / "history.csv"
        manifest = tmp_path / "manifest.json"
        rc = run_cli(["train", "--data", str(cache), "--config", str(config),
                      "--out-checkpoint", str(ck), "--history-csv",
                      str(hist), "--manifest", str(manifest)])
        assert rc == 0
        out = json.loads(capsys.readouterr().out)
        assert out["steps"] > 0
        assert "val_metrics" in out
        assert ck.exists() and hist.exists() and manifest.exists()
        header = hist.read_text().splitlines()[0]
        assert header == "step,lr,task_loss,con_loss,reg_loss,total_loss"

        assert run_cli(["eval", "--data", str(cache), "--checkpoint",
                        str(ck), "--config", str(config)]) == 0
        metrics = json.loads(capsys.readouterr().out)
        assert 0.0 <= metrics["accuracy"] <= 1.0

        assert run_cli(["probe", "--data", str(cache), "--input", "concat",
                        "--classes", "2", "--epochs", "2"]) == 0
        probe = json.loads(capsys.readouterr().out)
        assert 0.0 <= probe["accuracy"] <= 1.0

        assert run_cli(["bench", "--checkpoint", str(ck), "--batch", "8",
                        "--iters", "30", "--warmup", "5", "--format",
                        "json-lines"]) == 0
        bench = json.loads(capsys.readouterr().out)
        assert bench["latency_ms"]["p50"] > 0

        assert run_cli(["info", "--checkpoint", str(ck)]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["has_optimizer"] is True
        assert info["param_count"] == sum(info["param_breakdown"].values())

    def test_train_determinism(self, cache, config, tmp_path):
        outs = []
        for tag in ("a", "b"):
            ck = tmp_path / f"{tag}.frvp"
            hist = tmp_path / f"{tag}.csv"
            assert run_cli(["train", "--data", str(cache), "--config",
                            str(config), "--out-checkpoint", str(ck),
                            "--history-csv", str(hist)]) == 0
            outs.append((ck.read_bytes(), hist.read_bytes()))
        assert outs[0] == outs[1]

    def test_resume_matches_straight_run(self, cache, config, tmp_path):
        base = tmp_path / "base.frvp"
        assert run_cli(["train", "--data", str(cache), "--config",
                        str(config), "--out-checkpoint", str(base)]) == 0

        # redo the second epoch from an epoch-1 checkpoint
        one_epoch = config.read_text().replace("epochs = 2", "epochs = 1") \
            .replace("total_steps = 0", "total_steps = 22")
        cfg1 = tmp_path / "one.toml"
        cfg1.write_text(one_epoch)
        mid = tmp_path / "mid.frvp"
        assert run_cli(["train", "--data", str(cache), "--config", str(cfg1),
                        "--out-checkpoint", str(mid)]) == 0
        resumed = tmp_path / "resumed.frvp"
        assert run_cli(["train", "--data", str(cache), "--config",
                        str(config), "--out-checkpoint", str(resumed),
                        "--resume", str(mid)]) == 0
        assert resumed.read_bytes() == base.read_bytes()

    def test_eval_checkpoint_config_mismatch(self, cache, config, tmp_path,
                                             capsys):
        ck = tmp_path / "model.frvp"
        assert run_cli(["train", "--data", str(cache), "--config",
                        str(config), "--out-checkpoint", str(ck)]) == 0
        other = tmp_path / "other.toml"
        other.write_text(MATCHING_TOML.replace("n_layers = 1",
                                               "n_layers = 2"))
        assert run_cli(["eval", "--data", str(cache), "--checkpoint",
                        str(ck), "--config", str(other)]) == 1

    def test_ablate(self, cache, config, capsys):
        rc = run_cli(["ablate", "--data", str(cache), "--config",
                      str(config), "--axis", "w/o contrastive"])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["axis"] == "w/o contrastive"
        assert set(doc) == {"axis", "default", "variant", "delta_accuracy"}

    def test_bottleneck(self, tmp_path, capsys):
        spec = tmp_path / "bn.toml"
        spec.write_text(
            "sweep = [[4, 0], [8, 1]]\n\n"
            "[spec]\nn_samples = 400\nd_v = 8\nd_t = 8\nseed = 2\n"
            "hidden_dim = 4\n\n[run]\nepochs = 1\nbatch_size = 32\n"
            "seed = 1\n")
        assert run_cli(["bottleneck", "--spec", str(spec)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["chance_level"] == 0.5
        assert len(doc["capacities"]) == 2
        assert "control_accuracy" in doc
