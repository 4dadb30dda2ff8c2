import json

import numpy as np
import pytest

from lutq.cli import cmd_quantize, cmd_report, cmd_train, main
from lutq.core.models.run import RunStatus
from lutq.core.storage.ledger import RunLedger
from lutq.core.storage.model_file import load_model, save_model
from lutq.data_models import BatchNormMode, QuantizerConfig
from lutq.errors import ConfigError
from lutq.nn.data import make_blobs
from lutq.nn.layers import BatchNormLayer
from lutq.nn.network import Network
from lutq.quantizers.dictionary import is_pow2_array
from lutq.settings import get_settings


@pytest.fixture(autouse=True)
def _isolated_settings(monkeypatch, tmp_path):
    for name in ("SEED", "DATABASE_URL", "FIXED_POINT_MANTISSA_BITS", "FIXED_POINT_SATURATE"):
        monkeypatch.delenv(f"LUTQ_{name}", raising=False)
    monkeypatch.chdir(tmp_path)
    get_settings.cache_clear()  # type: ignore[attr-defined]
    yield
    get_settings.cache_clear()  # type: ignore[attr-defined]


def _write_job(tmp_path, name="job.toml", **overrides):
    job = {
        "dataset": "blobs",
        "blobs_classes": 4,
        "blobs_samples": 400,
        "hidden_units": [8],
        "weight_constraint": "free",
        "weight_bits": 2,
        "epochs": 5,
        "learning_rate": 0.1,
        "seed": 0,
        "model_out": str(tmp_path / "model.lutq"),
        "trace_out": str(tmp_path / "trace.json"),
    }
    job.update(overrides)
    lines = []
    for key, value in job.items():
        if value is None:
            continue
        lines.append(f"{key} = {json.dumps(value)}")
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n")
    return path


def _write_samples(tmp_path, name="samples.csv", n=40):
    data = make_blobs(n, 4, seed=11)
    rows = np.column_stack([data.x, data.y])
    path = tmp_path / name
    np.savetxt(path, rows, delimiter=",", fmt="%.17g")
    return path


@pytest.fixture
def trained(tmp_path):
    assert main(["train", str(_write_job(tmp_path))]) == 0
    return tmp_path / "model.lutq"


def test_train_writes_model_and_trace(tmp_path, capsys):
    assert main(["train", str(_write_job(tmp_path))]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["epochs"] == 5
    trace = json.loads((tmp_path / "trace.json").read_text())
    assert [record["epoch"] for record in trace["epochs"]] == [1, 2, 3, 4, 5]
    assert trace["seed"] == 0
    assert summary["model_bytes"] == (tmp_path / "model.lutq").stat().st_size
    net = load_model(tmp_path / "model.lutq")
    assert all(layer.qweight.k == 4 for layer in net.weight_layers)


def test_train_is_reproducible(tmp_path):
    first = cmd_train(_write_job(tmp_path), model_out=str(tmp_path / "a.lutq"))
    second = cmd_train(_write_job(tmp_path), model_out=str(tmp_path / "b.lutq"))
    assert first["final_loss"] == second["final_loss"]
    assert (tmp_path / "a.lutq").read_bytes() == (tmp_path / "b.lutq").read_bytes()


def test_seed_override_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("LUTQ_SEED", "9")
    get_settings.cache_clear()  # type: ignore[attr-defined]
    cmd_train(_write_job(tmp_path))
    assert json.loads((tmp_path / "trace.json").read_text())["seed"] == 9


def test_train_from_delimited_file(tmp_path):
    samples = _write_samples(tmp_path, n=80)
    summary = cmd_train(_write_job(tmp_path, dataset=str(samples), weight_constraint="pow2", epochs=2))
    assert summary["epochs"] == 2
    assert summary["network_class"] == "fully multiplier-less"


def test_train_configuration_errors(tmp_path):
    assert main(["train", str(_write_job(tmp_path, dataset=str(tmp_path / "missing.csv")))]) == 2
    assert main(["train", str(_write_job(tmp_path, learning_rat=0.1))]) == 2
    assert main(["train", str(_write_job(tmp_path, weight_constraint="fixed"))]) == 2
    assert main(["train", str(tmp_path / "nope.toml")]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("dataset = \n")
    assert main(["train", str(bad)]) == 2


def test_quantize_reports_per_layer_dictionaries(trained, tmp_path, capsys):
    out = tmp_path / "q.lutq"
    assert main(["quantize", str(trained), "--k", "2", "--out", str(out)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert [layer["k"] for layer in payload["layers"]] == [2, 2]
    assert all(len(layer["dictionary"]) == 2 for layer in payload["layers"])
    net = load_model(out)
    assert all(np.unique(layer.w_full).size <= 2 for layer in net.weight_layers)


def test_quantize_single_entry_error_is_the_variance(trained, tmp_path):
    payload = cmd_quantize(trained, QuantizerConfig(k=1), tmp_path / "q1.lutq", keep_accumulators=True)
    source = load_model(trained)
    for layer, entry in zip(source.weight_layers, payload["layers"]):
        w = layer.w_full
        assert entry["dictionary"] == pytest.approx([w.mean()])
        assert entry["error"] == pytest.approx(w.var() * w.size / 2)


def test_quantize_pow2_and_oversized(trained, tmp_path, capsys):
    out = tmp_path / "p.lutq"
    assert main(["quantize", str(trained), "--bits", "2", "--constraint", "pow2", "--out", str(out)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["network_class"] == "fully multiplier-less"
    for layer in payload["layers"]:
        assert all(is_pow2_array(np.array(layer["dictionary"])))
    assert main(["quantize", str(trained), "--k", "4096", "--out", str(out)]) == 2
    assert main(["quantize", str(trained), "--constraint", "fixed", "--out", str(out)]) == 2
    with pytest.raises(ConfigError):
        cmd_quantize(trained, QuantizerConfig(k=10_000), out)


def test_quantize_fixed_values(trained, tmp_path, capsys):
    out = tmp_path / "ternary.lutq"
    argv = ["quantize", str(trained), "--constraint", "fixed", "--fixed-values=-1,0,1", "--out", str(out)]
    assert main(argv) == 0
    payload = json.loads(capsys.readouterr().out)
    assert all(layer["dictionary"] == [-1.0, 0.0, 1.0] for layer in payload["layers"])


def test_report_json(capsys):
    assert main(["report", "resnet20", "--plan", "lutq:16"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["plan"] == "lutq:16"
    assert report["param_mb"] == pytest.approx(0.13, rel=0.05)
    assert main(["report", "resnet50", "--plan", "lutq:4"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["multiplications"] / 1e6 == pytest.approx(44.46, rel=0.05)


def test_report_several_plans_and_table(capsys):
    reports = json.loads(cmd_report("resnet20", ["float", "lutq:2"]))
    assert [report["plan"] for report in reports] == ["float", "lutq:2"]
    assert main(["report", "resnet20", "--plan", "float", "--plan", "lutq:4", "--table"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("Net")


def test_report_errors(tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({"name": "empty", "input_maps": 3, "layers": []}))
    assert main(["report", str(empty)]) == 2
    assert main(["report", "resnet20", "--plan", "int8"]) == 2
    assert main(["report", "resnet20", "--prune", "1.5"]) == 2
    assert main(["report", str(tmp_path / "missing.json")]) == 2


def test_infer_kernels_agree(trained, tmp_path, capsys):
    samples = _write_samples(tmp_path)
    assert main(["infer", str(trained), str(samples), "--kernel", "naive"]) == 0
    naive = json.loads(capsys.readouterr().out)
    assert main(["infer", str(trained), str(samples), "--kernel", "grouped"]) == 0
    grouped = json.loads(capsys.readouterr().out)
    assert naive["predictions"] == grouped["predictions"]
    assert np.allclose(naive["logits"], grouped["logits"], rtol=1e-9, atol=1e-12)
    assert naive["counters"]["multiplications"] == 40 * (8 * 2 + 4 * 8)
    assert grouped["counters"]["multiplications"] <= 40 * (8 * 4 + 4 * 4)
    assert 0.0 <= naive["accuracy"] <= 1.0
    probabilities = np.array(naive["probabilities"])
    assert np.allclose(probabilities.sum(axis=1), 1.0)
    assert probabilities.argmax(axis=1).tolist() == naive["predictions"]


def test_infer_shift_needs_pow2(trained, tmp_path):
    assert main(["infer", str(trained), str(_write_samples(tmp_path)), "--kernel", "shift"]) == 4


def test_infer_shift_on_pow2_model(trained, tmp_path, capsys):
    pow2 = tmp_path / "pow2.lutq"
    assert main(["quantize", str(trained), "--k", "4", "--constraint", "pow2", "--out", str(pow2)]) == 0
    capsys.readouterr()
    assert main(["infer", str(pow2), str(_write_samples(tmp_path)), "--kernel", "shift"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["counters"]["multiplications"] == 0
    assert payload["counters"]["shifts"] > 0


def test_infer_input_errors(trained, tmp_path):
    assert main(["infer", str(trained), str(tmp_path / "missing.csv")]) == 2
    wide = tmp_path / "wide.csv"
    wide.write_text("1,2,3,4,5\n")
    assert main(["infer", str(trained), str(wide)]) == 2


def test_corrupt_and_missing_models(tmp_path):
    samples = _write_samples(tmp_path)
    corrupt = tmp_path / "corrupt.lutq"
    corrupt.write_bytes(b"LUTQ\x01\x00garbage")
    assert main(["infer", str(corrupt), str(samples)]) == 3
    assert main(["evaluate", str(corrupt), str(samples)]) == 3
    assert main(["infer", str(tmp_path / "missing.lutq"), str(samples)]) == 2


def test_evaluate(trained, tmp_path, capsys):
    assert main(["evaluate", str(trained), str(_write_samples(tmp_path))]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["loss"] > 0.0
    assert 0.0 <= payload["accuracy"] <= 1.0
    assert main(["evaluate", str(trained), "blobs", "--seed", "3"]) == 0


def test_unknown_subcommand_exits_with_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        main(["compress"])
    assert excinfo.value.code == 2


def test_runs_are_recorded_in_the_ledger(tmp_path, monkeypatch):
    url = f"sqlite:///{tmp_path / 'runs.db'}"
    monkeypatch.setenv("LUTQ_DATABASE_URL", url)
    get_settings.cache_clear()  # type: ignore[attr-defined]

    assert main(["train", str(_write_job(tmp_path))]) == 0
    assert main(["infer", str(tmp_path / "missing.lutq"), str(_write_samples(tmp_path))]) == 2

    ledger = RunLedger.from_database_url(url)
    (train_run,) = ledger.list_runs("train")
    assert train_run.status == RunStatus.SUCCEEDED
    assert train_run.seed == 0
    assert [row.epoch for row in ledger.list_epochs(train_run.id)] == [1, 2, 3, 4, 5]
    (infer_run,) = ledger.list_runs("infer")
    assert infer_run.status == RunStatus.FAILED
    assert infer_run.exit_code == 2


def test_train_from_seed_network(tmp_path):
    seed_model = tmp_path / "float.lutq"
    cmd_train(_write_job(tmp_path, "float.toml", weight_constraint=None, model_out=str(seed_model)))
    assert all(layer.qweight is None for layer in load_model(seed_model).weight_layers)

    job = _write_job(tmp_path, weight_constraint="pow2", epochs=1, init_model=str(seed_model))
    summary = cmd_train(job)
    assert summary["epochs"] == 1
    assert summary["network_class"] == "fully multiplier-less"
    net = load_model(tmp_path / "model.lutq")
    for layer in net.weight_layers:
        assert layer.qweight.k == 4
        assert all(is_pow2_array(layer.qweight.dictionary.values[layer.qweight.dictionary.values != 0]))


def test_infer_needs_a_weight_layer(tmp_path):
    bn_only = tmp_path / "bn.lutq"
    save_model(Network([BatchNormLayer.identity(2, mode=BatchNormMode.TRADITIONAL)]), bn_only)
    assert main(["infer", str(bn_only), str(_write_samples(tmp_path))]) == 2


def test_unwritable_outputs_are_configuration_errors(trained, tmp_path):
    missing = tmp_path / "no-such-dir"
    assert main(["train", str(_write_job(tmp_path, model_out=str(missing / "model.lutq")))]) == 2
    assert main(["train", str(_write_job(tmp_path, trace_out=str(missing / "trace.json")))]) == 2
    assert main(["quantize", str(trained), "--k", "2", "--out", str(missing / "q.lutq")]) == 2
