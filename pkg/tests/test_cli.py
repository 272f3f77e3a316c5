import json

import numpy as np
import pytest
import yaml

from src.constants import ExitCode
from src import main as cli
from src.main import main
from src.utils.checkpoint import load


def _config(tmp_path, name: str = "run.yaml", **sections) -> str:
    cfg = {"bath": {"kind": "lorentzian", "coupling": 0.3, "omega_0": 1., "kappa": 1.},
           "grid": {"dt": 0.05, "steps": 20},
           "methods": {"heom": {"depth": 3}, "augmented": {"fock": 4}},
           "model": {"initial_state": "zero", "observables": ["sz"]}}
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key] = {**cfg[key], **value}
        else:
            cfg[key] = value
    path = tmp_path / name
    path.write_text(yaml.dump(cfg))
    return str(path)


def _read_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def test_build_pt_then_dynamics(tmp_path):
    out = tmp_path / "out"
    config = _config(tmp_path)
    assert main(["build-pt", "--config", config, "--out", str(out)]) == ExitCode.ok
    pt = load(str(out / "pt.ptmp"))
    assert pt.steps == 20 and pt.system_dim == 2
    profile = (out / "bond_profile.csv").read_text().splitlines()
    assert profile[0] == "step,chi,chi_recompressed"
    assert len(profile) == 22

    assert main(["dynamics", "--config", config, "--out", str(out), "--pt", str(out / "pt.ptmp")]) == ExitCode.ok
    assert (out / "observables.csv").read_text().splitlines()[0] == "t,re_sz,im_sz,trace_defect"
    values = _read_csv(out / "observables.csv")
    assert values.shape == (21, 4)
    assert np.all(values[:, 3] <= 1e-8)


def test_uncoupled_rabi_oscillation(tmp_path):
    out = tmp_path / "out"
    config = _config(tmp_path, model={"coupling_scale": 0.})
    assert main(["dynamics", "--config", config, "--out", str(out)]) == ExitCode.ok
    values = _read_csv(out / "observables.csv")
    assert np.allclose(values[:, 0], 0.05 * np.arange(21))
    assert np.max(np.abs(values[:, 1] - np.cos(values[:, 0]))) < 1e-10


def test_ttm_dynamics(tmp_path):
    out = tmp_path / "out"
    config = _config(tmp_path, method="ttm", methods={"heom": {"depth": 3}, "ttm": {"cutoff": 20}})
    assert main(["dynamics", "--config", config, "--out", str(out)]) == ExitCode.ok
    assert len((out / "ttm_norms.csv").read_text().splitlines()) == 21
    assert _read_csv(out / "observables.csv").shape == (21, 4)


def test_tdvp_dynamics(tmp_path):
    out = tmp_path / "out"
    config = _config(tmp_path, method="tdvp", bath={"kind": "ohmic_exp", "alpha": 0.1},
                     methods={"tdvp": {"modes": 4, "omega_max": 4.}})
    assert main(["dynamics", "--config", config, "--out", str(out)]) == ExitCode.ok
    header = (out / "tdvp.csv").read_text().splitlines()[0]
    assert header.endswith(",magnetization") and header.startswith("t,re_x1")


def test_compare_reports_every_builder(tmp_path):
    out = tmp_path / "out"
    config = _config(tmp_path, methods={"heom": {"depth": 6}, "augmented": {"enabled": True, "fock": 8}})
    assert main(["compare", "--config", config, "--out", str(out)]) == ExitCode.ok
    report = json.loads((out / "compare.json").read_text())
    assert report["reference"] == "heom"
    assert set(report["methods"]) == {"heom", "augmented"}
    assert report["methods"]["heom"]["deviation"] == 0
    assert report["methods"]["augmented"]["deviation"] <= 1e-3
    assert report["methods"]["augmented"]["max_bond"] == 64


def test_compare_needs_two_methods(tmp_path):
    assert main(["compare", "--config", _config(tmp_path), "--out", str(tmp_path)]) == ExitCode.config


def test_unknown_key_is_a_config_error(tmp_path):
    config = _config(tmp_path, bogus=1)
    assert main(["dynamics", "--config", config, "--out", str(tmp_path)]) == ExitCode.config


def test_malformed_yaml(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("grid: [unclosed\n")
    assert main(["dynamics", "--config", str(path), "--out", str(tmp_path)]) == ExitCode.config


def test_missing_process_tensor_file(tmp_path):
    config = _config(tmp_path)
    code = main(["dynamics", "--config", config, "--out", str(tmp_path), "--pt", str(tmp_path / "missing.ptmp")])
    assert code == ExitCode.io


def test_grid_mismatch(tmp_path):
    out = tmp_path / "out"
    assert main(["build-pt", "--config", _config(tmp_path), "--out", str(out)]) == ExitCode.ok
    other = _config(tmp_path, "other.yaml", grid={"dt": 0.05, "steps": 10})
    assert main(["dynamics", "--config", other, "--out", str(out), "--pt", str(out / "pt.ptmp")]) == ExitCode.config


def test_unknown_command():
    with pytest.raises(SystemExit):
        main(["train"])


def test_recompressed_process_tensor_on_request(tmp_path):
    out = tmp_path / "out"
    config = _config(tmp_path, compression={"eps_rel": 1e-7, "save_recompressed": True})
    assert main(["build-pt", "--config", config, "--out", str(out)]) == ExitCode.ok
    pt = load(str(out / "pt.ptmp"))
    assert pt.metadata["recompressed"] == 1e-7
    bonds = _read_csv(out / "bond_profile.csv").astype(int)
    assert pt.bond_profile() == list(bonds[:, 2])
    assert np.all(bonds[:, 2] <= bonds[:, 1])


@pytest.mark.parametrize("overrides", [{"grid": {"dt": 0.05, "steps": "20"}},
                                       {"grid": {"dt": float("inf"), "steps": 20}},
                                       {"model": {"omega_q": float("nan")}},
                                       {"methods": {"heom": {"depth": True}}},
                                       {"methods": {"stochastic": {"enabled": True, "trajectories": 10}}}])
def test_invalid_values_are_config_errors(tmp_path, overrides):
    config = _config(tmp_path, **overrides)
    assert main(["compare", "--config", config, "--out", str(tmp_path / "out")]) == ExitCode.config
    assert not (tmp_path / "out").exists()


@pytest.mark.parametrize("error, code", [(ArithmeticError("overflow"), ExitCode.numerical),
                                         (FloatingPointError("nan"), ExitCode.numerical),
                                         (ValueError("shape"), ExitCode.config),
                                         (TypeError("operand"), ExitCode.config)])
def test_uncaught_errors_map_to_exit_codes(tmp_path, monkeypatch, error, code):
    def fail(ctx, args):
        raise error

    monkeypatch.setitem(cli.COMMANDS, "dynamics", fail)
    assert main(["dynamics", "--config", _config(tmp_path), "--out", str(tmp_path)]) == code
