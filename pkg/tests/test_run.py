import json

from pytest import raises

from apjko.errors import CellFailure
from apjko.presets import preset
from apjko.run import METADATA_FILE, Run, current_run


def _config(tmp_path):
    return preset("riemann").model_copy(
        update={"output": preset("riemann").output.model_copy(update={"directory": tmp_path})}
    )


def test_run_records(tmp_path, monkeypatch):
    monkeypatch.setenv("APJKO_MACHINE_NAME", "bench")
    assert current_run() is None
    with Run(_config(tmp_path)) as run:
        assert current_run() is run
        # the record exists while the run is in progress
        meta = json.loads((tmp_path / METADATA_FILE).read_text())
        assert meta["status"] is None
        run.step(1, 0.5)
        run.output(tmp_path / "sub" / "file.csv")
    assert current_run() is None

    meta = json.loads((tmp_path / METADATA_FILE).read_text())
    assert meta["status"] == "completed"
    assert meta["kind"] == "riemann"
    assert meta["machine"]["name"] == "bench"
    assert meta["outputs"] == ["sub/file.csv"]
    assert meta["steps"][0]["step"] == 1
    assert meta["steps"][0]["time"] == 0.5
    assert meta["time"]["wall"] >= 0
    assert "torch" in meta["versions"]
    assert meta["cpu"]["torch_threads"] >= 1


def test_run_failure(tmp_path):
    with raises(CellFailure):
        with Run(_config(tmp_path)):
            raise CellFailure(3, 7, RuntimeError("diverged"))
    meta = json.loads((tmp_path / METADATA_FILE).read_text())
    assert meta["status"] == "failed"
    assert meta["failure"]["error"] == "CellFailure"
    assert meta["failure"]["cell"] == 3
    assert meta["failure"]["step"] == 7
    assert "diverged" in meta["failure"]["message"]


def test_run_aborted(tmp_path):
    with raises(KeyboardInterrupt):
        with Run(_config(tmp_path)):
            raise KeyboardInterrupt()
    meta = json.loads((tmp_path / METADATA_FILE).read_text())
    assert meta["status"] == "aborted"
    assert meta["failure"] is None


def test_end_requires_current(tmp_path):
    run = Run(_config(tmp_path))
    with raises(RuntimeError):
        run.end()
