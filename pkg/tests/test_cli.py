import csv
import hashlib
import subprocess
import sys
import time
from pathlib import Path

import pytest

from latentdecode.cli import main
from latentdecode.dataio import RoiMask, write_ids, write_matrix, write_ppm, write_roi_masks
from latentdecode.errors import IoFailure
from latentdecode.experiment import MANIFEST, Workspace
from latentdecode.oracle import ToyGenerator
from latentdecode.synthetic import SyntheticBrainConfig, make_synthetic, truth_images

SMOKE = Path(__file__).parents[1] / "configs" / "smoke.ini"

FAST = """
[oracle]
seed = 0

[data.synthetic]
n_train = 8
n_test = 4
n_voxels = 30
seed = 1
train_latents = true
{extra}

[inversion]
seed = 0

[decode]
random_seed = 0

[output]
dir = out
"""


def write_cfg(tmp_path, extra="", tail=""):
    p = tmp_path / "c.ini"
    p.write_text(FAST.format(extra=extra) + tail)
    return p


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return err[-1]


@pytest.fixture(scope="module")
def smoke_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    t0 = time.perf_counter()
    codes = [main(["synthetic", "--config", str(SMOKE), "--output", str(root / "a"), "--threads", "1"])]
    elapsed = time.perf_counter() - t0
    codes.append(main(["synthetic", "--config", str(SMOKE), "--output", str(root / "b"), "--threads", "2"]))
    return root, codes, elapsed


def test_smoke_run_succeeds_quickly(smoke_runs):
    root, codes, elapsed = smoke_runs
    assert codes == [0, 0]
    assert elapsed < 60.0
    out = root / "a"
    assert (out / MANIFEST).is_file()
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    # 3 variants x 3 metrics x (4 items + ALL)
    assert len(rows) == 3 * 3 * 5
    assert {p.name for p in (out / "roi").glob("*.ppm")} == {"A.ppm", "B.ppm", "DEAD.ppm"}
    assert len(list((out / "recon").glob("*.ppm"))) == 12
    assert not any(p.name.startswith(".") for p in out.iterdir())


def test_rerun_is_byte_identical(smoke_runs):
    root, _, _ = smoke_runs
    a, b = Workspace(root / "a"), Workspace(root / "b")
    assert a.files() == b.files()
    for rel in a.files():
        assert (root / "a" / rel).read_bytes() == (root / "b" / rel).read_bytes(), rel
    assert (root / "a" / MANIFEST).read_bytes() == (root / "b" / MANIFEST).read_bytes()


def test_manifest_lists_every_file(smoke_runs):
    root, _, _ = smoke_runs
    lines = (root / "a" / MANIFEST).read_text().splitlines()
    entries = dict(reversed(line.split("  ", 1)) for line in lines if "  " in line)
    files = Workspace(root / "a").files()
    assert sorted(entries) == sorted(p.as_posix() for p in files)
    for rel, digest in entries.items():
        assert hashlib.sha256((root / "a" / rel).read_bytes()).hexdigest() == digest


def test_ok_line(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["synthetic", "--config", str(cfg)]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("ok command=synthetic manifest=") and str(tmp_path / "out") in line


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["fit", "--config", str(tmp_path / "nope.ini")]) == 2
    assert last_error(capsys).startswith("error: kind=ConfigError message=")
    cfg = write_cfg(tmp_path, extra="bogus = 1")
    assert main(["fit", "--config", str(cfg)]) == 2
    assert not (tmp_path / "out").exists()


def test_data_error_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["fit", "--config", str(cfg)]) == 3
    assert last_error(capsys).startswith("error: kind=UpstreamMissing message=")


def test_numeric_error_exit_code_and_cleanup(tmp_path, capsys):
    cfg = write_cfg(tmp_path, tail="\n[ridge]\nlambda = 0\n")
    assert main(["synthetic", "--config", str(cfg)]) == 4
    assert last_error(capsys).startswith("error: kind=SingularDesign message=")
    out = tmp_path / "out"
    # extract finished, fit left nothing behind, the lock is released
    assert (out / "latents" / "train" / "H.ldm").is_file()
    assert not (out / "decoders").exists()
    assert sorted(p.name for p in out.iterdir()) == ["latents"]


def test_error_line_is_single_line(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[oracle\nseed = 0\n")
    assert main(["fit", "--config", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and err.startswith("error: kind=ConfigError")


def test_lock_held(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    (tmp_path / "out").mkdir()
    (tmp_path / "out" / ".lock").touch()
    assert main(["synthetic", "--config", str(cfg)]) == IoFailure.exit_code
    assert last_error(capsys).startswith("error: kind=IoFailure")
    assert (tmp_path / "out" / ".lock").exists()


def test_threads_validation(tmp_path, capsys, monkeypatch):
    cfg = write_cfg(tmp_path)
    assert main(["synthetic", "--config", str(cfg), "--threads", "0"]) == 2
    monkeypatch.setenv("LATENTDECODE_THREADS", "lots")
    assert main(["synthetic", "--config", str(cfg)]) == 2
    assert "LATENTDECODE_THREADS" in last_error(capsys)


def test_stage_discards_files_on_failure(tmp_path):
    ws = Workspace(tmp_path)
    with pytest.raises(RuntimeError):
        with ws.stage("x") as st:
            (st / "partial.txt").write_text("half")
            raise RuntimeError("boom")
    assert list(tmp_path.iterdir()) == []
    with ws.stage("x") as st:
        (st / "sub").mkdir()
        (st / "sub" / "done.txt").write_text("ok")
    assert [p.relative_to(tmp_path).as_posix() for p in tmp_path.rglob("*") if p.is_file()] == ["sub/done.txt"]


def test_lock_released_after_error(tmp_path):
    ws = Workspace(tmp_path)
    with pytest.raises(ValueError):
        with ws.locked():
            raise ValueError
    with ws.locked():
        with pytest.raises(IoFailure):
            with ws.locked():
                pass


def test_step_by_step_on_files(tmp_path):
    # the same steps driven from files on disk, as for a real subject
    gen = ToyGenerator(seed=0)
    data = make_synthetic(gen, SyntheticBrainConfig(n_train=6, n_test=3, n_voxels=24, repetitions=2, seed=2))
    ds = data.dataset
    write_matrix(tmp_path / "x_train.ldm", ds.x_train)
    write_matrix(tmp_path / "x_test.ldm", ds.x_test_trials)
    write_ids(tmp_path / "train_ids.txt", ds.train_stimulus_ids)
    write_ids(tmp_path / "test_ids.txt", ds.test_trial_stimulus_ids)
    for sub, ids, lat in (("train", ds.train_stimulus_ids, data.train_latents),
                          ("test", data.test_ids, data.test_latents)):
        (tmp_path / sub).mkdir()
        for sid, img in zip(ids, truth_images(gen, lat)):
            write_ppm(tmp_path / sub / f"{sid}.ppm", img)
    write_roi_masks(tmp_path / "rois.txt", [RoiMask("V1", range(0, 8)), RoiMask("V4", range(8, 16))])
    (tmp_path / "c.ini").write_text(
        "[oracle]\nseed = 0\n[data.paths]\nx_train = x_train.ldm\ntrain_ids = train_ids.txt\n"
        "x_test = x_test.ldm\ntest_ids = test_ids.txt\ntrain_images = train\ntest_images = test\n"
        "rois = rois.txt\n[inversion]\nseed = 0\nmax_evals = 100\nstage2_steps = 2\n"
        "[ridge]\nfolds = 3\n[decode]\nrandom_seed = 0\nvariants = dense\n[metrics]\nfeature_distance = no\n"
        "[roi]\nenabled = true\n[output]\ndir = out\n")
    cfg = str(tmp_path / "c.ini")
    for cmd in ("extract", "fit", "decode", "evaluate", "roi"):
        assert main([cmd, "--config", cfg, "--threads", "1"]) == 0, cmd
    out = tmp_path / "out"
    assert (out / "metrics.csv").is_file() and (out / "roi" / "V4.ppm").is_file()
    assert sorted(p.name for p in (out / "recon").iterdir()) == [f"te{i:04d}_dense.ppm" for i in range(3)]
    assert main(["synthetic", "--config", cfg]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "latentdecode", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "synthetic" in proc.stdout
