import math

import pytest

from latentdecode.config import load_config, parse_config
from latentdecode.errors import ConfigError
from latentdecode.pipeline import DEFAULT_LAMBDAS, Variant

BASE = """
[oracle]
seed = 0

[data.synthetic]
n_train = 8
n_test = 4
seed = 1
{extra_syn}

[inversion]
seed = 0

[decode]
random_seed = 0

[output]
dir = out
"""


def make(extra_syn="", tail=""):
    return BASE.format(extra_syn=extra_syn) + tail


def test_minimal_config_defaults(tmp_path):
    cfg = parse_config(make(), base_dir=tmp_path)
    assert cfg.synthetic and cfg.data.brain.n_train == 8 and cfg.data.brain.snr == 10.0
    assert cfg.data.train_latents == "extracted"
    assert cfg.ridge.candidates == DEFAULT_LAMBDAS and cfg.ridge.lam is None and cfg.ridge.zscore
    assert cfg.variants == (Variant.RANDOM, Variant.NOISE, Variant.DENSE)
    assert cfg.output_dir == tmp_path / "out"
    assert cfg.inversion.max_evals == 10_000 and cfg.metrics_enabled and not cfg.roi_enabled


def test_digest_ignores_layout_but_not_values():
    a = parse_config(make())
    b = parse_config(make().replace("seed = 1", "seed   =   1\n# comment"))
    c = parse_config(make().replace("n_test = 4", "n_test = 5"))
    assert a.digest == b.digest != c.digest
    assert len(a.digest) == 64


def test_values_parsed(tmp_path):
    cfg = parse_config(make("snr = inf\nrois = A:h:3, B:d:2\npure_noise = yes",
                            "\n[ridge]\nlambda = 2.5\ncandidates = 1, 10\nzscore = off\n"
                            "[roi]\nenabled = true\n"))
    assert math.isinf(cfg.data.brain.snr) and cfg.data.brain.pure_noise
    assert [r.name for r in cfg.data.brain.rois] == ["A", "B"]
    assert cfg.ridge.lam == 2.5 and cfg.ridge.candidates == (1.0, 10.0) and not cfg.ridge.zscore
    assert cfg.roi_enabled


def test_both_data_sections():
    text = make() + "\n[data.paths]\nx_train = a\ntrain_ids = b\nx_test = c\ntest_ids = d\ntrain_images = e\n"
    with pytest.raises(ConfigError, match="exactly one"):
        parse_config(text)


def test_no_data_section():
    text = "[oracle]\nseed = 0\n[inversion]\nseed = 0\n[decode]\nrandom_seed = 0\n[output]\ndir = o\n"
    with pytest.raises(ConfigError):
        parse_config(text)


@pytest.mark.parametrize("section,key", [("oracle", "seed"), ("data.synthetic", "seed"),
                                         ("inversion", "seed"), ("decode", "random_seed")])
def test_missing_seed(section, key):
    text = make()
    lines = text.splitlines()
    start = lines.index(f"[{section}]")
    for i in range(start + 1, len(lines)):
        if lines[i].startswith(f"{key} ="):
            del lines[i]
            break
    with pytest.raises(ConfigError, match=key):
        parse_config("\n".join(lines))


def test_unknown_key_and_section():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config(make("colour = blue"))
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config(make() + "\n[extras]\nx = 1\n")


@pytest.mark.parametrize("extra,tail", [
    ("n_train = many", ""),
    ("n_train = 1", ""),
    ("snr = 0", ""),
    ("rois = A:h", ""),
    ("train_latents = guessed", ""),
    ("", "\n[ridge]\nlambda = -1\n"),
    ("", "\n[ridge]\ncandidates = 1, x\n"),
    ("", "\n[metrics]\nenabled = maybe\n"),
])
def test_bad_values(extra, tail):
    with pytest.raises(ConfigError):
        parse_config(make(extra) + tail)


def test_unknown_variant():
    with pytest.raises(ConfigError, match="variant"):
        parse_config(make().replace("random_seed = 0", "random_seed = 0\nvariants = dense, blurry"))


def test_roi_enabled_needs_rois(tmp_path):
    with pytest.raises(ConfigError, match="no rois"):
        parse_config(make(tail="\n[roi]\nenabled = true\n"))
    paths = (
        "[oracle]\nseed = 0\n[data.paths]\nx_train = x.ldm\ntrain_ids = a.txt\nx_test = y.ldm\n"
        "test_ids = b.txt\ntrain_images = imgs\nrois = missing_rois.txt\n[inversion]\nseed = 0\n"
        "[decode]\nrandom_seed = 0\n[output]\ndir = o\n[roi]\nenabled = true\n"
    )
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config(paths, base_dir=tmp_path)
    (tmp_path / "missing_rois.txt").write_text("V1: 0-3\n")
    cfg = parse_config(paths, base_dir=tmp_path)
    assert cfg.data.rois == tmp_path / "missing_rois.txt" and not cfg.synthetic


def test_unparsable_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config("no header here")
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "absent.ini")
    (tmp_path / "c.ini").write_text(make())
    assert load_config(tmp_path / "c.ini").output_dir == tmp_path / "out"


def test_shipped_smoke_config_is_valid():
    from pathlib import Path
    cfg = load_config(Path(__file__).parents[1] / "configs" / "smoke.ini")
    assert cfg.roi_enabled and cfg.synthetic
