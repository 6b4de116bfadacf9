import json

import numpy as np
import pytest

from czsl import cli, data
from czsl.numerics import make_rng


def run_main(argv):
    return cli.main(argv)


def train_args(tmp_path, name, extra=()):
    return [
        "train",
        "--synth",
        "--protocol", "fixed",
        "--tasks", "3",
        "--seed", "7",
        "--synth-seen", "6",
        "--synth-unseen", "3",
        "--synth-feat-dim", "8",
        "--synth-attr-dim", "4",
        "--synth-samples-per-class", "6",
        "--epochs", "2",
        "--inner-steps", "2",
        "--n-way", "4",
        "--k-shot", "2",
        "--out-dir", str(tmp_path / name),
        *extra,
    ]


class TestSynthCommand:
    def test_writes_loadable_container(self, tmp_path):
        out = tmp_path / "toy.czsf"
        assert run_main(["synth", "--out", str(out), "--synth-seen", "4", "--synth-unseen", "2",
                         "--synth-feat-dim", "8", "--synth-attr-dim", "4",
                         "--synth-samples-per-class", "5", "--seed", "3"]) == 0
        c = data.read_container(out)
        assert c.n_classes == 6 and c.feat_dim == 8

    def test_matches_library_call(self, tmp_path):
        out = tmp_path / "toy.czsf"
        run_main(["synth", "--out", str(out), "--seed", "5"])
        direct = data.synth_dataset(20, 5, 64, 16, 0.1, 50, make_rng(5))
        again = data.read_container(out)
        assert np.array_equal(direct.features, again.features)


class TestTrainCommand:
    def test_two_runs_bitwise_identical(self, tmp_path):
        assert run_main(train_args(tmp_path, "r1")) == 0
        assert run_main(train_args(tmp_path, "r2")) == 0
        a, b = tmp_path / "r1", tmp_path / "r2"
        assert (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()
        ck_a = sorted(p.name for p in a.glob("task_*.mczp"))
        ck_b = sorted(p.name for p in b.glob("task_*.mczp"))
        assert ck_a == ck_b and len(ck_a) == 3
        for name in ck_a:
            assert (a / name).read_bytes() == (b / name).read_bytes()
        assert (a / "reservoir.czrv").read_bytes() == (b / "reservoir.czrv").read_bytes()

    def test_ablation_flag_recorded_in_provenance(self, tmp_path):
        assert run_main(train_args(tmp_path, "ab", extra=["--ablate", "no-meta"])) == 0
        cfg_text = (tmp_path / "ab" / "config.txt").read_text()
        assert "meta=false" in cfg_text
        parsed = cli.load_config_file(tmp_path / "ab" / "config.txt")
        assert parsed["meta"] is False

    def test_gzsl_run_produces_single_row(self, tmp_path):
        args = [
            "train", "--synth", "--protocol", "gzsl", "--seed", "1",
            "--synth-seen", "5", "--synth-unseen", "2",
            "--synth-feat-dim", "8", "--synth-attr-dim", "4",
            "--synth-samples-per-class", "6",
            "--epochs", "2", "--inner-steps", "1", "--n-way", "4", "--k-shot", "2",
            "--out-dir", str(tmp_path / "g"),
        ]
        assert run_main(args) == 0
        metrics = json.loads((tmp_path / "g" / "metrics.json").read_text())
        assert metrics["protocol"] == "gzsl"
        assert len(metrics["per_task"]) == 1


class TestEvalCommand:
    def test_eval_reproduces_train_metrics(self, tmp_path, capsys):
        run_main(train_args(tmp_path, "base"))
        run_dir = tmp_path / "base"
        out_path = tmp_path / "eval.json"
        assert run_main(["eval", "--run", str(run_dir), "--out", str(out_path)]) == 0
        assert out_path.read_bytes() == (run_dir / "metrics.json").read_bytes()

    def test_single_checkpoint_gzsl(self, tmp_path):
        args = [
            "train", "--synth", "--protocol", "gzsl", "--seed", "2",
            "--synth-seen", "5", "--synth-unseen", "2",
            "--synth-feat-dim", "8", "--synth-attr-dim", "4",
            "--synth-samples-per-class", "6",
            "--epochs", "2", "--inner-steps", "1", "--n-way", "4", "--k-shot", "2",
            "--out-dir", str(tmp_path / "g2"),
        ]
        run_main(args)
        container_path = tmp_path / "data.czsf"
        run_main(["synth", "--out", str(container_path), "--seed", "2",
                  "--synth-seen", "5", "--synth-unseen", "2",
                  "--synth-feat-dim", "8", "--synth-attr-dim", "4",
                  "--synth-samples-per-class", "6"])
        out_path = tmp_path / "ck.json"
        code = run_main(["eval", "--checkpoint", str(tmp_path / "g2" / "task_01.mczp"),
                         "--data", str(container_path), "--protocol", "gzsl",
                         "--out", str(out_path)])
        assert code == 0
        ours = json.loads(out_path.read_text())
        trained = json.loads((tmp_path / "g2" / "metrics.json").read_text())
        assert ours["aggregate"] == trained["aggregate"]

    def test_permuted_test_order_same_metrics(self, tmp_path):
        c = data.synth_dataset(5, 2, 8, 4, 0.1, 6, make_rng(4))
        permuted = data.DatasetContainer(
            c.features, c.labels, c.attributes,
            c.train_idx,
            c.test_seen_idx[::-1].copy(),
            c.test_unseen_idx[::-1].copy(),
        )
        p1, p2 = tmp_path / "a.czsf", tmp_path / "b.czsf"
        data.write_container(c, p1)
        data.write_container(permuted, p2)
        run_main(["train", "--dataset", str(p1), "--protocol", "gzsl", "--seed", "3",
                  "--epochs", "2", "--inner-steps", "1", "--n-way", "4", "--k-shot", "2",
                  "--out-dir", str(tmp_path / "run")])
        out_a, out_b = tmp_path / "ma.json", tmp_path / "mb.json"
        ckpt = str(tmp_path / "run" / "task_01.mczp")
        run_main(["eval", "--checkpoint", ckpt, "--data", str(p1), "--out", str(out_a)])
        run_main(["eval", "--checkpoint", ckpt, "--data", str(p2), "--out", str(out_b)])
        a = json.loads(out_a.read_text())
        b = json.loads(out_b.read_text())
        assert a["aggregate"] == b["aggregate"]

    def test_continual_eval_requires_run_dir(self, tmp_path):
        run_main(train_args(tmp_path, "c1"))
        code = run_main(["eval", "--checkpoint", str(tmp_path / "c1" / "task_01.mczp"),
                         "--data", "whatever.czsf", "--protocol", "fixed"])
        assert code == cli.EXIT_CONFIG


class TestReportCommand:
    def test_fixed_run_row_count_and_aggregates(self, tmp_path, capsys):
        run_main(train_args(tmp_path, "rep", extra=["--tasks", "5"]))
        capsys.readouterr()  # drop the training log
        assert run_main(["report", str(tmp_path / "rep")]) == 0
        csv_text = capsys.readouterr().out
        lines = [l for l in csv_text.strip().splitlines() if l]
        assert lines[0] == "task,seen_acc,unseen_acc,harmonic"
        rows = [l.split(",") for l in lines[1:]]
        assert len(rows) == 4  # K=5 fixed protocol stops at K-1
        metrics = json.loads((tmp_path / "rep" / "metrics.json").read_text())
        for col, key in ((1, "msa"), (2, "mua"), (3, "mh")):
            mean = sum(float(r[col]) for r in rows) / len(rows)
            assert abs(mean - metrics["aggregate"][key]) < 1e-9

    def test_roundtrip_through_parser(self, tmp_path):
        run_main(train_args(tmp_path, "rt"))
        out_csv = tmp_path / "r.csv"
        run_main(["report", str(tmp_path / "rt"), "--out", str(out_csv)])
        metrics = json.loads((tmp_path / "rt" / "metrics.json").read_text())
        lines = out_csv.read_text().strip().splitlines()
        for line, row in zip(lines[1:], metrics["per_task"]):
            task, sa, ua, h = line.split(",")
            assert int(task) == row["task"]
            assert float(sa) == row["seen_acc"]
            assert float(ua) == row["unseen_acc"]
            assert float(h) == row["harmonic"]

    def test_missing_metrics_is_config_error(self, tmp_path):
        assert run_main(["report", str(tmp_path / "nope")]) == cli.EXIT_CONFIG


class TestErrorPaths:
    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["train", "--bogus-flag", "1"])
        assert exc.value.code == 2

    def test_missing_dataset_file_is_data_error(self, tmp_path):
        code = run_main(["train", "--dataset", str(tmp_path / "absent.czsf"),
                         "--protocol", "gzsl", "--out-dir", str(tmp_path / "x")])
        assert code == cli.EXIT_DATA

    def test_unknown_config_key_is_config_error(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("not_a_key=1\n")
        code = run_main(["train", "--config", str(cfg), "--synth",
                         "--out-dir", str(tmp_path / "y")])
        assert code == cli.EXIT_CONFIG

    def test_conflicting_sources_is_config_error(self, tmp_path):
        code = run_main(["train", "--synth", "--dataset", "d.czsf",
                         "--out-dir", str(tmp_path / "z")])
        assert code == cli.EXIT_CONFIG

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # deliberate overflow
    def test_exploding_lr_is_numeric_error(self, tmp_path):
        args = train_args(tmp_path, "boom", extra=["--inner-lr", "1e30"])
        assert run_main(args) == cli.EXIT_NUMERIC

    def test_config_file_precedence(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed=9\nepochs=2\nsynth=true\nprotocol=gzsl\n"
                       "synth_seen=5\nsynth_unseen=2\nsynth_feat_dim=8\n"
                       "synth_attr_dim=4\nsynth_samples_per_class=6\n"
                       "inner_steps=1\nn_way=4\nk_shot=2\n")
        out = tmp_path / "prec"
        code = run_main(["train", "--config", str(cfg), "--seed", "11",
                         "--out-dir", str(out)])
        assert code == 0
        resolved = cli.load_config_file(out / "config.txt")
        assert resolved["seed"] == 11  # CLI beats file
        assert resolved["epochs"] == 2  # file beats default
