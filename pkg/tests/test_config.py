import pytest

from pbj.config import ExperimentConfig, image_preset, load_config, moons_preset


def write(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text)
    return path


def test_image_defaults():
    cfg = image_preset()
    assert (cfg.model.backbone, cfg.model.latent_dim, cfg.train.lr, cfg.train.gamma) == ("cnn3", 256, 0.05, 100.0)
    assert cfg.train.schedule == ((25, 0.1), (50, 0.1))
    assert cfg.seeds == (0, 1, 2, 3, 4) and cfg.k == 100


def test_parse_sections(tmp_path):
    cfg = load_config(write(tmp_path, """
[experiment]
seeds = 3, 4
output_dir = out ; trailing comment
[model]
backbone = mlp
hidden = 32, 16
projection_bias = yes
[train]
schedule = 5:0.5
epochs = 9
"""))
    assert cfg.seeds == (3, 4) and cfg.output_dir == "out"
    assert cfg.model.hidden == (32, 16) and cfg.model.projection_bias is True
    assert cfg.train.schedule == ((5, 0.5),) and cfg.train.epochs == 9
    assert cfg.model.latent_dim == 256


def test_moons_source_selects_moons_preset(tmp_path):
    cfg = load_config(write(tmp_path, "[data]\nsource = moons\n"))
    assert cfg.model.backbone == "mlp" and cfg.train.epochs == moons_preset().train.epochs


def test_empty_schedule(tmp_path):
    assert load_config(write(tmp_path, "[train]\nschedule =\n")).train.schedule == ()


@pytest.mark.parametrize(
    "text, match",
    [
        ("[bogus]\nx = 1\n", "unknown section"),
        ("[train]\nlearning_rate = 1\n", "unknown key"),
        ("[train]\nlr = -1\n", "lr"),
        ("[train]\nschedule = 5\n", "epoch:multiplier"),
        ("[experiment]\npreset = cifar\n", "unknown preset"),
    ],
)
def test_rejects(tmp_path, text, match):
    with pytest.raises(ValueError, match=match):
        load_config(write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "nope.ini")


def test_output_dir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("PBJ_OUTPUT_DIR", str(tmp_path / "env"))
    assert load_config(write(tmp_path, "[experiment]\noutput_dir = x\n")).output_dir == str(tmp_path / "env")


def test_hash_tracks_content():
    a, b = image_preset(), image_preset()
    assert a.hash == b.hash and len(a.hash) == 16
    assert a.with_seed(9).hash != a.hash
    assert isinstance(a.with_seed(9), ExperimentConfig)
