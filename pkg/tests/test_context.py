import pytest

from src.constants import ConfigError, Method
from src.context import Context


def test_defaults_validate():
    ctx = Context()
    ctx.validate()
    assert ctx.method == Method.heom
    assert ctx.enabled_methods() == [Method.heom]
    assert ctx.output_path("pt.ptmp") == "out/pt.ptmp"


def test_nested_overrides():
    ctx = Context({"methods": {"heom": {"depth": 6}}, "model": {"controls": [{"label": "z", "operator": "sz"},
                                                                              {"label": "x"}]}})
    assert ctx.methods.heom.depth == 6
    assert [channel.label for channel in ctx.model.controls] == ["z", "x"]
    assert ctx.model.controls[1].operator == "sx"
    assert Context().methods.heom.depth == 4


def test_unknown_key_names_its_path():
    with pytest.raises(ConfigError) as info:
        Context({"methods": {"heom": {"bogus": 1}}})
    assert "methods.heom.bogus" in str(info.value)
    with pytest.raises(ConfigError):
        Context({"grid": 5})


@pytest.mark.parametrize("overrides", [{"grid": {"dt": 0.}}, {"method": "bogus"}, {"bath": {"kind": "tabulated"}},
                                       {"compression": {"eps_rel": 1.}}, {"seed": -1},
                                       {"model": {"controls": [{"lower": 1., "upper": 0.}]}},
                                       {"grid": {"steps": "20"}}, {"grid": {"steps": 20.}},
                                       {"model": {"omega_q": float("inf")}}, {"bath": {"alpha": float("nan")}},
                                       {"methods": {"heom": {"depth": True}}},
                                       {"methods": {"stochastic": {"trajectories": 10}}},
                                       {"methods": {"stochastic": {"batches": 1}}},
                                       {"model": {"observables": ["sx", 3]}},
                                       {"model": {"controls": [{"scale": "big"}]}},
                                       {"compression": {"save_recompressed": 1}}])
def test_validation(overrides):
    with pytest.raises(ConfigError):
        Context(overrides).validate()


def test_config_from_environment(tmp_path, monkeypatch):
    path = tmp_path / "run.yaml"
    path.write_text("grid:\n  steps: 7\nseed: 3\n")
    monkeypatch.setenv("CONFIG", str(path))
    ctx = Context()
    assert ctx.grid.steps == 7 and ctx.seed == 3
    assert ctx.config()["grid"]["steps"] == 7


def test_type_errors_name_the_field():
    with pytest.raises(ConfigError) as info:
        Context({"model": {"controls": [{"label": "x"}, {"upper": float("inf")}]}}).validate()
    assert "model.controls[1].upper" in str(info.value)
    ctx = Context({"grid": {"dt": 1}, "wandb": {"name": "run"}, "methods": {"stochastic": {"trajectories": 20}}})
    ctx.validate()
    assert ctx.grid.dt == 1


def test_serialize_gives_a_plain_tree():
    ctx = Context({"model": {"controls": [{"label": "z", "operator": "sz"}]}})
    tree = ctx.config()
    assert tree["model"]["controls"] == [{"initial": 0., "label": "z", "lower": -10., "operator": "sz", "scale": 0.5,
                                          "upper": 10.}]
    assert tree["compression"] == {"eps_rel": 1e-7, "save_recompressed": False}
    assert Context().model.controls[0].label == "x"
