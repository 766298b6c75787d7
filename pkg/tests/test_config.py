import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edg import config as C


def test_minimal_config_takes_dataset_defaults():
    cfg = C.parse_text("method=dda\ndataset=rotated_gaussian\n")
    assert (cfg.dda.alpha, cfg.dda.beta, cfg.dda.lam) == (2.0, 0.001, 0.5)
    assert cfg.dda.tau_temp == 2.0 and cfg.dda.inner_steps_src == 2 and cfg.dda.inner_steps_aug == 5
    assert cfg.dda.episodes == 2000


def test_sine_defaults():
    cfg = C.parse_text("dataset = sine")
    assert (cfg.dda.alpha, cfg.dda.beta, cfg.dda.lam) == (0.5, 0.01, 0.8)
    assert cfg.dda.transformer_dims == [2, 16, 16, 2] and cfg.dda.classifier_hidden == []
    assert cfg.dda.episodes == 3000 and cfg.dda.standardize and cfg.dda.activation == "tanh"


def test_lambda_out_of_range_names_the_bound():
    with pytest.raises(C.ConfigError, match=r"lambda must lie in \[0, 1\]"):
        C.parse_text("method=dda\nlambda=1.5")


def test_unknown_key_lists_valid_keys():
    with pytest.raises(C.ConfigError, match="valid keys:.*alpha"):
        C.parse_text("alhpa = 0.1")


def test_unknown_section():
    with pytest.raises(C.ConfigError, match="unknown section"):
        C.parse_text("[model]\nalpha = 1")


def test_sections_and_dotted_overrides():
    text = "[run]\nmethod = erm\nseeds = 1,2\n[dda]\nbatch_size = 8\n[erm]\nbatch_size = 32\n"
    cfg = C.parse_text(text, ["erm.lr=0.05", "alpha=0.3"])
    assert cfg.method == "erm" and cfg.seeds == [1, 2]
    assert cfg.dda.batch_size == 8 and cfg.erm.batch_size == 32
    assert cfg.erm.lr == 0.05 and cfg.dda.alpha == 0.3


def test_overrides_win_over_file():
    cfg = C.parse_text("[dda]\nlambda = 0.2", ["lambda=0.9"])
    assert cfg.dda.lam == 0.9


def test_data_keys_checked_against_generator():
    assert C.parse_text("dataset=sine\nn_per_domain=50").data == {"n_per_domain": 50}
    with pytest.raises(C.ConfigError, match="valid keys"):
        C.parse_text("dataset=sine\n[data]\ndelta_deg=3")


@pytest.mark.parametrize("text", ["seeds = 1,1", "seeds = ", "horizons = 0", "method = svm", "val_frac = 1"])
def test_run_constraints(text):
    with pytest.raises(C.ConfigError):
        C.parse_text(text)


def test_missing_file():
    with pytest.raises(C.ConfigError, match="cannot read"):
        C.parse_config("/nonexistent/run.ini")


@settings(max_examples=40, deadline=None)
@given(method=st.sampled_from(C.METHODS), dataset=st.sampled_from(["rotated_gaussian", "sine"]),
       lam=st.floats(0, 1), alpha=st.floats(1e-3, 10), steps=st.integers(0, 10),
       seeds=st.lists(st.integers(0, 1000), min_size=1, max_size=5, unique=True),
       order=st.booleans(), n=st.integers(2, 500))
def test_serialize_round_trip(method, dataset, lam, alpha, steps, seeds, order, n):
    text = (f"method={method}\ndataset={dataset}\nlambda={lam!r}\nalpha={alpha!r}\ninner_steps_aug={steps}\n"
            f"second_order={order}\nseeds={','.join(map(str, seeds))}\nn_per_domain={n}\n")
    cfg = C.parse_text(text)
    assert C.parse_text(C.serialize(cfg)) == cfg


def test_hash_ignores_seeds_and_output():
    a = C.parse_text("seeds=0,1\nout_dir=a")
    b = C.parse_text("seeds=5\nout_dir=b\nhorizons=1,2")
    c = C.parse_text("seeds=5\nalpha=0.1")
    assert C.config_hash(a) == C.config_hash(b) != C.config_hash(c)


def test_duplicate_key_is_a_config_error():
    with pytest.raises(C.ConfigError, match="malformed"):
        C.parse_text("alpha = 1\nalpha = 2")
