import pytest
import yaml

from src.core.config import expand_dotted_keys
from src.core.errors import ConfigError
from src.services.run_config import GridConfig, load_run_config

from .conftest import TOY, toy


def write(tmp_path, data, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return str(path)


def base(**extra):
    return {"experiment": "gaussian", "params": dict(TOY), "times": [0.0, 1.0], **extra}


def test_loads_valid_config(tmp_path):
    config = load_run_config(write(tmp_path, base()))
    assert config.experiment == "gaussian"
    assert config.t_final == 1.0
    assert config.params.omega == pytest.approx(0.1)


@pytest.mark.parametrize("times", [[], [1.0, 0.5], [-1.0, 1.0], [0.0, 0.0]])
def test_invalid_checkpoints(tmp_path, times):
    with pytest.raises(ConfigError):
        load_run_config(write(tmp_path, base(times=times)))


def test_missing_checkpoints(tmp_path):
    data = base()
    del data["times"]
    with pytest.raises(ConfigError):
        load_run_config(write(tmp_path, data))


def test_dotted_keys(tmp_path):
    data = base()
    data["params.N"] = 2
    data["grid.n_r"] = 512
    config = load_run_config(write(tmp_path, data))
    assert config.params.N == 2
    assert config.params.m == TOY["m"]
    assert config.grid.n_r == 512


def test_dotted_key_conflict():
    with pytest.raises(ValueError):
        expand_dotted_keys({"a": 1, "a.b": 2})


def test_sample_requires_witness(tmp_path):
    with pytest.raises(ConfigError, match="witness"):
        load_run_config(write(tmp_path, base(experiment="sample")))
    ok = load_run_config(write(tmp_path, base(experiment="sample", witness={"delta": 0.3})))
    assert ok.witness.delta == 0.3


def test_equivalence_requires_quadratic_potential(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(write(tmp_path, base(experiment="equivalence")))
    params = dict(TOY, N=2)
    assert load_run_config(write(tmp_path, base(experiment="equivalence", params=params))).params.N == 2


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(write(tmp_path, base(colour="blue")))


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "missing.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("experiment: [unclosed", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(str(bad))


def test_seed_override_reaches_ensemble(tmp_path):
    data = base(experiment="ensemble-2d", ensemble={"widths": [0.005, 0.1, 0.005, 0.1], "t_final": 0.3})
    path = write(tmp_path, data)
    config = load_run_config(path, seed=17, output=None)
    assert config.seed == 17
    assert config.ensemble.seed == 17
    assert load_run_config(path).ensemble.seed == 0


def test_digest_ignores_output(tmp_path):
    path = write(tmp_path, base())
    a = load_run_config(path, output=str(tmp_path / "a"))
    b = load_run_config(path, output=str(tmp_path / "b"))
    c = load_run_config(path, seed=3)
    assert a.output != b.output
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()
    assert len(a.digest()) == 64


class TestGridConfig:
    def test_partial_bounds_rejected(self):
        with pytest.raises(ValueError):
            GridConfig(r_min=-1.0)

    def test_stride_must_divide(self):
        with pytest.raises(ValueError):
            GridConfig(n_r=512, stride=3)

    def test_resolve_auto(self):
        state_grid, field_grid = GridConfig(n_r=512, n_p=128).resolve(toy(), 1.0)
        assert field_grid.n_r == 128
        assert field_grid.dr == pytest.approx(4 * state_grid.dr)
        assert field_grid.r_min == state_grid.r_min

    def test_momentum_range_defaults_wider(self):
        from src.core.scales import auto_grid
        state_grid, _ = GridConfig(n_r=512, n_p=128).resolve(toy(), 1.0)
        narrow = auto_grid(toy(), 1.0, n_r=512, n_p=128)
        assert (state_grid.r_min, state_grid.r_max) == (narrow.r_min, narrow.r_max)
        assert state_grid.p_max - state_grid.p_min > 1.9 * (narrow.p_max - narrow.p_min)

    @pytest.mark.parametrize("field", ["spread", "p_spread"])
    def test_spread_must_be_positive(self, field):
        with pytest.raises(ValueError):
            GridConfig(**{field: 0.0})

    def test_resolve_explicit(self):
        cfg = GridConfig(r_min=-4.0, r_max=4.0, p_min=-2.0, p_max=2.0, n_r=256, n_p=64, stride=2)
        state_grid, field_grid = cfg.resolve(toy(), 1.0)
        assert state_grid.r_max == 4.0
        assert field_grid.n_r == 128
