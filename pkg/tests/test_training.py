import struct

import numpy as np
import pytest

from aeroop import data as D
from aeroop import models as M
from aeroop import tensor as T
from aeroop import training as TR


def tiny_config(flavor="CoNO"):
    return M.ModelConfig(flavor=flavor, history_k=3, modes=2, width=4, n_layers=1, projection_hidden=8)


def tiny_split(seed=0, n_train=6, n_val=2):
    gen = np.random.default_rng(seed)
    values = gen.uniform(0.5, 1.5, size=(20, 6, 6))
    wins = D.make_windows(values, window_len=6, k=3)
    return D.shuffle_split(wins, n_train, n_val, seed=seed)


def tc(**kw):
    base = dict(epochs=3, lr0=1e-2, halve_every=2, n_rollout=2, batch_size=4)
    base.update(kw)
    return TR.TrainConfig(**base)


# -- losses and schedule ------------------------------------------------------


def test_rl2_examples():
    y = np.ones((4, 4))
    assert TR.rl2_loss(y, y).item() == 0.0
    assert TR.rl2_loss(y, 2 * y).item() == pytest.approx(1.0)
    assert TR.rl2_loss(np.array([3.0, 4.0]), np.zeros(2)).item() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        TR.rl2_loss(np.zeros(3), np.ones(3))


def test_rl2_gradient():
    gen = np.random.default_rng(0)
    y = gen.uniform(size=(3, 3))
    p = T.parameter(gen.uniform(size=(3, 3)))
    loss, tape = T.record_forward(lambda: TR.rl2_loss(y, p))
    d = p.data - y
    expect = d / (np.linalg.norm(d) * np.linalg.norm(y))
    assert np.abs(T.backward(tape, loss)[p] - expect).max() < 1e-14


def test_lr_schedule():
    c = TR.TrainConfig(lr0=1e-3, halve_every=100)
    assert TR.lr_at(0, c) == 1e-3
    assert TR.lr_at(99, c) == 1e-3
    assert TR.lr_at(100, c) == 5e-4
    assert TR.lr_at(250, c) == 2.5e-4
    with pytest.raises(ValueError):
        TR.lr_at(-1, c)


def test_train_config_strict():
    with pytest.raises(KeyError):
        TR.TrainConfig.from_dict({"learning_rate": 1.0})
    with pytest.raises(ValueError):
        TR.TrainConfig(epochs=0)


# -- Adam ---------------------------------------------------------------------


def test_adam_first_step_closed_form():
    c = TR.TrainConfig()
    p = {"w": T.parameter(np.array([1.0, -2.0, 0.5]))}
    g = {"w": np.array([0.3, -4.0, 0.0])}
    state = TR.AdamState.zeros(p)
    TR.adam_step(p, g, state, 0.1, c)
    # after one step m_hat = g and v_hat = g**2, so the step is lr * g / (|g| + eps)
    expect = np.array([1.0, -2.0, 0.5]) - 0.1 * g["w"] / (np.abs(g["w"]) + c.eps)
    assert np.abs(p["w"].data - expect).max() < 1e-15
    assert state.t == 1


def test_adam_complex_is_componentwise():
    c = TR.TrainConfig()
    z = {"z": T.parameter(np.array([1 + 1j]))}
    TR.adam_step(z, {"z": np.array([2.0 - 0.5j])}, TR.AdamState.zeros(z), 0.01, c)
    assert z["z"].data[0] == pytest.approx((1 - 0.01) + (1 + 0.01) * 1j, abs=1e-9)


def test_adam_zero_gradient_no_move():
    p = {"w": T.parameter(np.arange(3.0))}
    state = TR.AdamState.zeros(p)
    for _ in range(5):
        TR.adam_step(p, {"w": np.zeros(3)}, state, 0.1, TR.TrainConfig())
    assert np.array_equal(p["w"].data, np.arange(3.0))


def test_adam_descends_bowl():
    p = {"w": T.parameter(np.array([3.0, -2.0]))}
    state = TR.AdamState.zeros(p)
    for _ in range(500):
        TR.adam_step(p, {"w": 2 * p["w"].data}, state, 0.05, TR.TrainConfig())
    assert np.abs(p["w"].data).max() < 1e-2


def test_adam_rejects_nonfinite():
    p = {"w": T.parameter(np.zeros(2))}
    with pytest.raises(TR.NumericFailure):
        TR.adam_step(p, {"w": np.array([np.nan, 0.0])}, TR.AdamState.zeros(p), 0.1, TR.TrainConfig())


# -- rollout loss ---------------------------------------------------------------


def test_two_step_loss_matches_manual_chain():
    model = M.init_model(tiny_config(), (6, 6), 1)
    w = tiny_split().train[0]
    x = w.inputs[None]
    p1 = M.forward(model, x).data
    x2 = np.concatenate([x[:, 1:], p1], axis=1)
    p2 = M.forward(model, x2).data
    t = w.targets
    manual = np.linalg.norm(p1[0, 0] - t[0]) / np.linalg.norm(t[0]) + np.linalg.norm(p2[0, 0] - t[1]) / np.linalg.norm(t[1])
    assert TR.rollout_loss(model, w, 2).item() == pytest.approx(manual, rel=1e-12)


def test_batch_loss_is_mean_of_samples():
    model = M.init_model(tiny_config("FNO"), (6, 6), 2)
    ws = tiny_split().train[:3]
    each = [TR.rollout_loss(model, w, 2).item() for w in ws]
    assert TR.rollout_loss(model, TR.stack_windows(ws, 2), 2).item() == pytest.approx(np.mean(each), rel=1e-12)


def test_detach_changes_gradient_only():
    model = M.init_model(tiny_config(), (6, 6), 3)
    batch = TR.stack_windows(tiny_split().train[:2], 2)
    v1, g1 = TR.gradients(model, batch, 2)
    v2, g2 = TR.gradients(model, batch, 2, detach=True)
    assert v1 == v2
    assert any(not np.allclose(g1[k], g2[k]) for k in g1)


def test_rollout_loss_needs_targets():
    model = M.init_model(tiny_config(), (6, 6), 0)
    with pytest.raises(ValueError):
        TR.rollout_loss(model, tiny_split().train[0], 4)


# -- checkpoints ----------------------------------------------------------------


def trained(tmp_path=None, seed=0, **kw):
    model = M.init_model(tiny_config(), (6, 6), seed)
    split = tiny_split()
    return TR.train(model, split, tc(seed=seed, **kw), normalizer=D.Normalizer(0.0, 2.0),
                    checkpoint_dir=tmp_path)


def test_checkpoint_round_trip(tmp_path):
    model, _ = trained()
    ck = TR.Checkpoint.from_state(TR.final_state(model), tc())
    p1, p2 = tmp_path / "a.aoc", tmp_path / "b.aoc"
    TR.save_checkpoint(ck, p1)
    back = TR.load_checkpoint(p1)
    m2 = back.to_model()
    for name, p in model.named_parameters().items():
        assert p.data.tobytes() == m2.named_parameters()[name].data.tobytes()
    assert m2.alphas() == model.alphas()
    assert back.adam_t == ck.adam_t and back.epoch == 3
    assert back.get_normalizer() == D.Normalizer(0.0, 2.0)
    TR.save_checkpoint(back, p2)
    assert p1.read_bytes() == p2.read_bytes()
    x = tiny_split().val[0].inputs
    assert np.array_equal(M.forward(model, x).data, M.forward(m2, x).data)


def test_checkpoint_corruption(tmp_path):
    model = M.init_model(tiny_config(), (6, 6), 0)
    p = tmp_path / "c.aoc"
    TR.save_checkpoint(TR.Checkpoint.from_model(model), p)
    good = p.read_bytes()
    p.write_bytes(b"NOPE" + good[4:])
    with pytest.raises(TR.CheckpointError, match="magic"):
        TR.load_checkpoint(p)
    p.write_bytes(good[:-5])
    with pytest.raises(TR.CheckpointError, match="truncated"):
        TR.load_checkpoint(p)
    p.write_bytes(good + b"x")
    with pytest.raises(TR.CheckpointError, match="trailing"):
        TR.load_checkpoint(p)


def test_checkpoint_shape_mismatch(tmp_path):
    model = M.init_model(tiny_config(), (6, 6), 0)
    ck = TR.Checkpoint.from_model(model)
    ck.params["lift.weight"] = np.zeros((1, 1))
    p = tmp_path / "s.aoc"
    TR.save_checkpoint(ck, p)
    with pytest.raises(TR.CheckpointError):
        TR.load_checkpoint(p)


def test_checkpoint_header_is_sorted_json(tmp_path):
    model = M.init_model(tiny_config(), (6, 6), 0)
    p = tmp_path / "h.aoc"
    TR.save_checkpoint(TR.Checkpoint.from_model(model), p)
    buf = p.read_bytes()
    version, n = struct.unpack_from("<IQ", buf, 4)
    import json

    text = buf[16 : 16 + n].decode()
    assert version == 1
    assert text == json.dumps(json.loads(text), sort_keys=True)


# -- training loop ----------------------------------------------------------------


def test_training_reduces_loss():
    _, hist = trained(epochs=6)
    assert hist.train[-1] < hist.train[0]
    assert len(hist.val) == 6 and all(v is not None for v in hist.val)


def test_train_is_deterministic(tmp_path):
    trained(tmp_path / "a", checkpoint_every=3)
    trained(tmp_path / "b", checkpoint_every=3)
    a = (tmp_path / "a" / "epoch_0003.aoc").read_bytes()
    b = (tmp_path / "b" / "epoch_0003.aoc").read_bytes()
    assert a == b


def test_resume_equals_uninterrupted(tmp_path):
    split = tiny_split()
    cfg = tc(epochs=4, checkpoint_every=2)
    full, _ = TR.train(M.init_model(tiny_config(), (6, 6), 0), split, cfg, checkpoint_dir=tmp_path / "full")
    TR.train(M.init_model(tiny_config(), (6, 6), 0), split, cfg, checkpoint_dir=tmp_path / "part", stop_after=2)
    ck = TR.load_checkpoint(tmp_path / "part" / "epoch_0002.aoc")
    resumed, hist = TR.train(None, split, cfg, resume=ck, checkpoint_dir=tmp_path / "resumed")
    assert len(hist.train) == 4
    assert (tmp_path / "full" / "epoch_0004.aoc").read_bytes() == (tmp_path / "resumed" / "epoch_0004.aoc").read_bytes()
    for name, p in full.named_parameters().items():
        assert np.array_equal(p.data, resumed.named_parameters()[name].data)


def test_nan_aborts_with_diagnostic(tmp_path):
    model = M.init_model(tiny_config("FNO"), (6, 6), 0)
    model.named_parameters()["proj1.weight"].data[:] = 1e300
    with pytest.raises(TR.NumericFailure) as exc:
        TR.train(model, tiny_split(), tc(), checkpoint_dir=tmp_path)
    assert exc.value.checkpoint is not None
    assert TR.load_checkpoint(exc.value.checkpoint).epoch == 0


def test_loss_csv(tmp_path):
    rec = TR.LossRecord([1.0, 0.5], [0.9, None], [0.1, 0.1])
    rec.write_csv(tmp_path / "loss.csv")
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss"
    assert len(lines) == 3
