"""Step/cfg MLPs: forward pass, plan mapping, loss, training, oracle labels."""

from __future__ import annotations

import numpy as np
import pytest

from sgic import controller
from sgic.controller import (
    CFG_MAX,
    LAMBDA_CFG,
    LAMBDA_STEPS,
    ORACLE_CFGS,
    ORACLE_STEPS,
    STEPS_MAX,
    STEPS_MIN,
    DiffusionPlan,
    Mlp,
    TrainConfig,
    forward,
    gradient_check,
    init_mlp,
    load_mlp,
    loss,
    oracle_labels,
    save_mlp,
    to_plan,
    train,
)
from sgic.embedding import ToyEmbedder
from sgic.errors import (
    DatasetTooSmall,
    EmptyBatch,
    InputOutOfRange,
    IoError,
    LengthMismatch,
    MalformedPayload,
    SchemaMismatch,
    Truncated,
)
from sgic.features import FeatureSchema


def _schema(dim: int = 8) -> FeatureSchema:
    return FeatureSchema(
        names=tuple("abcdefghijk"[:dim]), mean=np.zeros(dim), std=np.ones(dim)
    )


def _zero_mlp(schema: FeatureSchema) -> Mlp:
    m = init_mlp(schema)
    return Mlp(
        sizes=m.sizes,
        weights=[np.zeros_like(w) for w in m.weights],
        biases=[np.zeros_like(b) for b in m.biases],
        schema=schema,
    )


def test_plan_validation():
    p = DiffusionPlan(steps=40, cfg=4.0)
    assert (p.steps, p.cfg) == (40, 4.0)
    with pytest.raises(InputOutOfRange):
        DiffusionPlan(steps=1, cfg=4.0)
    with pytest.raises(InputOutOfRange):
        DiffusionPlan(steps=81, cfg=4.0)
    with pytest.raises(InputOutOfRange):
        DiffusionPlan(steps=40, cfg=0.0)
    with pytest.raises(InputOutOfRange):
        DiffusionPlan(steps=40, cfg=10.0)
    with pytest.raises(InputOutOfRange):
        DiffusionPlan(steps=40.0, cfg=4.0)


def test_mlp_architecture_enforced():
    schema = _schema()
    m = init_mlp(schema, seed=0)
    assert m.sizes == (8, 16, 16, 16, 1)
    with pytest.raises(SchemaMismatch):
        Mlp(sizes=(8, 16, 16, 1), weights=m.weights[:-1], biases=m.biases[:-1], schema=schema)
    with pytest.raises(SchemaMismatch):
        Mlp(sizes=(4, 16, 16, 16, 1), weights=m.weights, biases=m.biases, schema=schema)
    bad_w = [w.copy() for w in m.weights]
    bad_w[0][0, 0] = np.nan
    with pytest.raises(Exception):
        Mlp(sizes=m.sizes, weights=bad_w, biases=m.biases, schema=schema)


def test_forward_zero_model_is_half():
    schema = _schema()
    m = _zero_mlp(schema)
    assert forward(m, np.linspace(-1, 1, 8)) == 0.5


def test_forward_output_bias_ten():
    schema = _schema()
    m = _zero_mlp(schema)
    m.biases[-1][0] = 10.0
    got = forward(m, np.zeros(8))
    assert got == pytest.approx(1.0 / (1.0 + np.exp(-10.0)), abs=1e-12)
    assert got == pytest.approx(0.99995, abs=1e-5)


def test_forward_frozen_seeded_value():
    m = init_mlp(_schema(), seed=3)
    got = forward(m, np.linspace(-1.0, 1.0, 8))
    assert got == pytest.approx(0.5366959840671063, abs=1e-12)


def test_forward_schema_hash_guard():
    schema = _schema()
    m = init_mlp(schema, seed=0)
    f = np.zeros(8)
    assert 0.0 < forward(m, f, schema_hash=m.schema_hash) < 1.0
    other = FeatureSchema(names=schema.names, mean=np.ones(8), std=np.ones(8))
    with pytest.raises(SchemaMismatch):
        forward(m, f, schema_hash=other.schema_hash())
    with pytest.raises(SchemaMismatch):
        forward(m, np.zeros(5))


def test_to_plan_midpoint_and_bounds():
    p = to_plan(0.5, 0.5)
    assert (p.steps, p.cfg) == (41, 5.0)
    eps = 1e-9
    lo = to_plan(eps, eps)
    assert lo.steps == STEPS_MIN and 0.0 < lo.cfg < 1e-6
    hi = to_plan(1 - eps, 1 - eps)
    assert hi.steps == STEPS_MAX and CFG_MAX - 1e-6 < hi.cfg < CFG_MAX
    for bad in (0.0, 1.0, -0.1, 1.1):
        with pytest.raises(InputOutOfRange):
            to_plan(bad, 0.5)
        with pytest.raises(InputOutOfRange):
            to_plan(0.5, bad)


def test_to_plan_property_over_open_interval():
    rng = np.random.default_rng(123)
    for _ in range(2000):
        y_s, y_c = rng.uniform(1e-12, 1 - 1e-12, 2)
        p = to_plan(y_s, y_c)
        assert STEPS_MIN <= p.steps <= STEPS_MAX
        assert 0.0 < p.cfg < CFG_MAX


def test_loss_hand_values():
    assert loss(np.array([0.3, 0.7]), np.array([0.3, 0.7]), 0.0) == 0.0
    assert loss(np.array([0.5]), np.array([0.0]), 0.64) == pytest.approx(0.41, abs=1e-12)


def test_loss_lambda_zero_is_mse_and_term_uses_prediction():
    rng = np.random.default_rng(7)
    for _ in range(20):
        y_hat = rng.random(9)
        y = rng.random(9)
        assert loss(y_hat, y, 0.0) == pytest.approx(np.mean((y - y_hat) ** 2), abs=1e-15)
        lam = rng.random()
        # penalty is lam*mean(y_hat^2): zero prediction leaves plain MSE
        assert loss(np.zeros(9), y, lam) == pytest.approx(np.mean(y**2), abs=1e-15)
        assert loss(y_hat, np.zeros(9), lam) == pytest.approx(
            (1 + lam) * np.mean(y_hat**2), abs=1e-15
        )


def test_loss_batch_errors():
    with pytest.raises(EmptyBatch):
        loss(np.array([]), np.array([]), 0.0)
    with pytest.raises(LengthMismatch):
        loss(np.zeros(3), np.zeros(4), 0.0)


def test_gradient_check_zero_model_closed_form():
    schema = _schema()
    m = _zero_mlp(schema)
    f = np.linspace(-1.0, 1.0, 8)
    # at zero weights the output is 0.5; d loss / d output-bias for
    # y=0.25, lam=0.64 is (2*(0.5-0.25) + 2*0.64*0.5) * 0.25 = 0.285
    gw, gb, y_hat = controller._gradients(m, f[None, :], np.array([0.25]), 0.64)
    assert y_hat[0] == 0.5
    assert gb[-1][0] == pytest.approx(0.285, abs=1e-12)
    assert gradient_check(m, f, y=0.25, lam=0.64) < 1e-4


def test_gradient_check_random_model_both_lambdas():
    schema = _schema()
    m = init_mlp(schema, seed=9)
    f = np.random.default_rng(5).standard_normal(8)
    assert gradient_check(m, f, y=0.7, lam=LAMBDA_CFG) < 1e-4
    assert gradient_check(m, f, y=0.7, lam=LAMBDA_STEPS) < 1e-4


def test_train_learns_logistic_synthetic():
    schema = _schema()
    rng = np.random.default_rng(0)
    x = rng.standard_normal((800, 8))
    w = np.array([0.8, -0.5, 0.3, 0.0, 0.6, -0.2, 0.1, 0.4])
    y = 1.0 / (1.0 + np.exp(-(x @ w)))
    _, hist = train(
        init_mlp(schema, seed=1),
        x,
        y,
        0.0,
        TrainConfig(batch_size=16, epochs=800, lr=0.1, patience=300, seed=0),
    )
    assert hist["best_val"] < 1e-3


def test_train_shrinkage_with_prediction_penalty():
    schema = _schema()
    rng = np.random.default_rng(0)
    x = rng.standard_normal((200, 8))
    w = np.array([0.8, -0.5, 0.3, 0.0, 0.6, -0.2, 0.1, 0.4])
    y = 1.0 / (1.0 + np.exp(-(x @ w)))
    tc = TrainConfig(batch_size=16, epochs=150, lr=0.01, patience=150, seed=0)
    plain, _ = train(init_mlp(schema, seed=1), x, y, 0.0, tc)
    shrunk, _ = train(init_mlp(schema, seed=1), x, y, 0.64, tc)
    mean_plain = np.mean([forward(plain, f) for f in x])
    mean_shrunk = np.mean([forward(shrunk, f) for f in x])
    assert mean_shrunk <= mean_plain


def test_train_without_holdout_interpolates():
    schema = _schema()
    rng = np.random.default_rng(6)
    x = rng.standard_normal((20, 8))
    y = rng.random(20)
    tc = TrainConfig(batch_size=16, epochs=3000, lr=0.1, val_frac=0.0, patience=3000, seed=0)
    m, hist = train(init_mlp(schema, seed=1), x, y, 0.0, tc)
    # stopping metric is the training loss, and 20 points fit near exactly
    assert hist["best_val"] < 1e-3
    fit = np.array([forward(m, f) for f in x])
    assert np.mean((fit - y) ** 2) < 1e-3


def test_train_deterministic_given_seed():
    schema = _schema()
    rng = np.random.default_rng(2)
    x = rng.standard_normal((40, 8))
    y = rng.random(40)
    tc = TrainConfig(epochs=30, seed=3)
    a, _ = train(init_mlp(schema, seed=2), x, y, 0.0, tc)
    b, _ = train(init_mlp(schema, seed=2), x, y, 0.0, tc)
    assert all(np.array_equal(wa, wb) for wa, wb in zip(a.weights, b.weights))
    assert all(np.array_equal(ba, bb) for ba, bb in zip(a.biases, b.biases))


def test_train_rejects_tiny_or_mismatched_datasets():
    schema = _schema()
    with pytest.raises(DatasetTooSmall):
        train(init_mlp(schema), np.zeros((7, 8)), np.zeros(7), 0.0)
    with pytest.raises(LengthMismatch):
        train(init_mlp(schema), np.zeros((10, 8)), np.zeros(9), 0.0)


def test_oracle_labels_tie_break_to_cheapest():
    rng = np.random.default_rng(0)
    originals = [("img0", rng.random((16, 16, 3)))]
    fixed = originals[0][1].copy()

    def decode_fn(image_id, steps, cfg):
        return fixed

    labels, failures = oracle_labels(originals, decode_fn, ToyEmbedder())
    assert not failures
    assert (labels[0].best_steps, labels[0].best_cfg) == (ORACLE_STEPS[0], ORACLE_CFGS[0])


def test_oracle_labels_planted_minimum_and_plan_round_trip():
    rng = np.random.default_rng(1)
    original = rng.random((16, 16, 3))
    noise = rng.uniform(-1, 1, original.shape)

    def decode_fn(image_id, steps, cfg):
        dist = np.hypot((steps - 40) / 78.0, (cfg - 4.0) / 10.0)
        return np.clip(original + (0.02 + 0.5 * dist) * noise, 0, 1)

    labels, failures = oracle_labels([("img0", original)], decode_fn, ToyEmbedder())
    assert not failures
    lab = labels[0]
    assert (lab.best_steps, lab.best_cfg) == (40, 4.0)
    assert lab.best_steps in ORACLE_STEPS and lab.best_cfg in ORACLE_CFGS
    plan = to_plan(lab.y_steps, lab.y_cfg)
    assert plan.steps == lab.best_steps
    assert plan.cfg == pytest.approx(lab.best_cfg, abs=1e-12)


def test_oracle_labels_records_failures_per_image():
    rng = np.random.default_rng(2)
    originals = [("ok", rng.random((16, 16, 3))), ("boom", rng.random((16, 16, 3)))]

    def decode_fn(image_id, steps, cfg):
        if image_id == "boom":
            raise ValueError("synthetic decode failure")
        return originals[0][1]

    labels, failures = oracle_labels(originals, decode_fn, ToyEmbedder())
    assert [l.image_id for l in labels] == ["ok"]
    assert "boom" in failures and "synthetic decode failure" in failures["boom"]


def test_model_file_round_trip(tmp_path):
    schema = _schema()
    m = init_mlp(schema, seed=4)
    path = tmp_path / "model.sgmc"
    save_mlp(m, path, LAMBDA_STEPS)
    loaded, lam = load_mlp(path)
    assert lam == LAMBDA_STEPS
    assert loaded.sizes == m.sizes
    assert loaded.schema.schema_hash() == m.schema.schema_hash()
    assert all(np.array_equal(a, b) for a, b in zip(loaded.weights, m.weights))
    assert all(np.array_equal(a, b) for a, b in zip(loaded.biases, m.biases))
    f = np.linspace(-0.5, 0.5, 8)
    assert forward(loaded, f) == forward(m, f)


def test_model_file_corruption_rejected(tmp_path):
    schema = _schema()
    m = init_mlp(schema, seed=4)
    path = tmp_path / "model.sgmc"
    save_mlp(m, path, 0.0)
    raw = path.read_bytes()

    bad_magic = tmp_path / "bad_magic.sgmc"
    bad_magic.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(MalformedPayload):
        load_mlp(bad_magic)

    bad_version = tmp_path / "bad_version.sgmc"
    bad_version.write_bytes(raw[:4] + bytes([99]) + raw[5:])
    with pytest.raises(MalformedPayload):
        load_mlp(bad_version)

    cut = tmp_path / "cut.sgmc"
    cut.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(Truncated):
        load_mlp(cut)

    padded = tmp_path / "padded.sgmc"
    padded.write_bytes(raw + b"\x00")
    with pytest.raises(MalformedPayload):
        load_mlp(padded)

    with pytest.raises(IoError):
        load_mlp(tmp_path / "absent.sgmc")
