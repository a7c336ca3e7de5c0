import numpy as np
import pytest

from vta.errors import ConfigError, ParseError, TrainingDivergedError
from vta.seqcore import Hyperparams
from vta.synthgen import generate_pair, generate_pairs, raw_feature_config, scenario
from vta.trainer import (
    GRAD_TERMS,
    LOSS_COLUMNS,
    ToyEncoder,
    TrainConfig,
    batch_loss,
    grad_check,
    read_encoder,
    relative_error,
    train,
    write_encoder,
    write_loss_csv,
)


def _pairs(count=2, actions=3, seed=0):
    cfg = scenario("identical", seed, raw_feature_config(seed).replace(num_actions=actions))
    return [(x, y) for x, y, _ in generate_pairs(cfg, count)]


def test_zero_learning_rate_changes_nothing():
    pairs = _pairs()
    start = ToyEncoder.init(8, 4, seed=3)
    enc, curve = train(pairs, TrainConfig(learning_rate=0.0, steps=4, seed=3, hp=Hyperparams(psi_decay_steps=0)))
    for k in start.params:
        assert np.array_equal(enc.params[k], start.params[k])
    # warm-started solves differ from the cold first one only at rounding level
    assert np.allclose([b.total for b in curve], curve[0].total, rtol=1e-9, atol=0)


def test_descent_on_identical_noisy_pairs():
    _, curve = train(_pairs(1), TrainConfig(steps=150))
    assert curve[-1].total < 0.7 * curve[0].total


def test_training_is_reproducible_and_job_count_invariant():
    pairs = _pairs(4)
    cfg = TrainConfig(steps=15, batch_pairs=3, seed=1)
    e1, c1 = train(pairs, cfg)
    e2, c2 = train(pairs, cfg.replace(jobs=3))
    assert c1 == c2
    for k in e1.params:
        assert np.array_equal(e1.params[k], e2.params[k])


def test_adam_and_hidden_layer_run():
    enc, curve = train(_pairs(2), TrainConfig(steps=40, optimizer="adam", learning_rate=0.01, hidden=6))
    assert enc.hidden == 6 and enc.num_params() == 8 * 6 + 6 + 6 * 4 + 4
    assert curve[-1].total < curve[0].total


def test_divergence_is_reported_with_its_step():
    with pytest.raises(TrainingDivergedError) as info:
        train(_pairs(2), TrainConfig(learning_rate=1e200, steps=10))
    assert info.value.step >= 1
    assert "at step" in str(info.value)


def test_grad_check_zero_noise_identical_pair():
    x, y, _ = generate_pair(raw_feature_config(0).replace(num_actions=2, frames_per_action=(3, 4),
                                                          noise_std=0.0, nuisance_std=0.0, embed_dim=6,
                                                          nuisance_dims=2))
    report = grad_check(TrainConfig(embed_dim=3), pair=(x, y))
    assert report.max_relative_error <= 1e-4
    assert set(report.errors) == set(GRAD_TERMS)


@pytest.mark.parametrize("seed", range(3))
def test_grad_check_transport_only(seed):
    hp = Hyperparams(gamma=0.0, lambda1=0.0, lambda2=0.0)
    report = grad_check(TrainConfig(hp=hp), seed=seed)
    assert report.max_relative_error <= 1e-5


def test_grad_check_hidden_layer():
    report = grad_check(TrainConfig(hidden=5, embed_dim=3), seed=4, n=5, m=6)
    assert report.max_relative_error <= 1e-4
    assert report.num_params == 5 * 5 + 5 + 5 * 3 + 3


def test_relative_error():
    assert relative_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_error([0.0], [0.0]) == 0.0
    assert relative_error([1.0, 0.0], [0.5, 0.0]) == 0.5


def test_encoder_round_trip(tmp_path):
    enc = ToyEncoder.init(5, 3, hidden=4, seed=9)
    write_encoder(enc, tmp_path / "e.json")
    back = read_encoder(tmp_path / "e.json")
    frames = np.random.default_rng(0).standard_normal((7, 5))
    assert np.array_equal(back.embed(frames), enc.embed(frames))
    assert back.to_json() == enc.to_json()


def test_encoder_file_errors(tmp_path):
    with pytest.raises(ParseError):
        read_encoder(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ParseError):
        read_encoder(tmp_path / "bad.json")
    d = ToyEncoder.init(2, 2).to_dict()
    d["shapes"]["W1"] = [3, 2]
    with pytest.raises(ParseError):
        ToyEncoder.from_dict(d)
    d = ToyEncoder.init(2, 2).to_dict()
    d["params"]["W1"] = [[1.0, 2.0]]
    with pytest.raises(ParseError):
        ToyEncoder.from_dict(d)


def test_train_config_validation():
    for bad in (dict(steps=0), dict(batch_pairs=0), dict(optimizer="sgd"), dict(learning_rate=-1.0)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)
    with pytest.raises(ConfigError):
        train([], TrainConfig())


def test_loss_csv(tmp_path):
    pairs = _pairs(1)
    _, curve = train(pairs, TrainConfig(steps=3))
    write_loss_csv(curve, tmp_path / "loss.csv")
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == ",".join(LOSS_COLUMNS)
    assert len(lines) == 4
    assert float(lines[1].split(",")[1]) == curve[0].total


def test_batch_loss_matches_curve_start():
    pairs = _pairs(2)
    cfg = TrainConfig(steps=1)
    _, curve = train(pairs, cfg)
    enc = ToyEncoder.init(8, 4, seed=0)
    assert np.isclose(batch_loss(enc, pairs, cfg.hp, 0).total, curve[0].total, rtol=1e-9)
