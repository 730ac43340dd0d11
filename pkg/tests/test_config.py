import pytest
from hypothesis import given, strategies as st

from tsd.config import CVOptions, RunConfig
from tsd.core import Hyperparams, PreprocessSpec
from tsd.graph import GraphParams


def test_default_round_trip(tmp_path):
    cfg = RunConfig()
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    path = tmp_path / "c.yaml"
    path.write_text(cfg.dump())
    assert RunConfig.load(path) == cfg


@given(
    st.floats(0, 10), st.integers(1, 8), st.integers(1, 30), st.sampled_from(["minmax", "log1p_minmax", "none"]),
    st.booleans(), st.integers(0, 2**31),
)
def test_round_trip_properties(lam, k, window, scaling, blocked, seed):
    cfg = RunConfig(
        input="x.csv", target="methane", seed=seed,
        preprocess=PreprocessSpec(scaling=scaling),
        hyperparams=Hyperparams(lambda_s=lam, k_sources=k),
        graph=GraphParams(window_days=window),
        cv=CVOptions(blocked=blocked, grid=({"lambda_s": 0.0}, {"lambda_s": 1.0})),
    )
    assert RunConfig.from_dict(RunConfig.from_dict(cfg.to_dict()).to_dict()) == cfg
    assert RunConfig.from_dict(__import__("yaml").safe_load(cfg.dump())) == cfg


def test_unknown_keys_rejected():
    with pytest.raises(ValueError, match="bogus"):
        RunConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError, match="lambda_q"):
        RunConfig.from_dict({"hyperparams": {"lambda_q": 1}})


def test_flags_override_file_values():
    cfg = RunConfig(target="a", seed=1, hyperparams=Hyperparams(k_sources=2))
    out = cfg.override(target="b", seed=5, k=4, input=None)
    assert out.target == "b" and out.hyperparams.k_sources == 4
    assert out.hyperparams.seed == 5 and out.synth.seed == 5
    same = cfg.override()
    assert same.target == "a" and same.hyperparams.k_sources == 2
