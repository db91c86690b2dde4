import math
import struct

import numpy as np
import pytest

from docseq.codec import PAD
from docseq.errors import (
    InvalidInputError,
    NotACheckpointError,
    TrainingAborted,
    TruncatedCheckpointError,
    UnsupportedVersionError,
)
from docseq.net import ModelConfig, forward, init_params
from docseq.train import (
    Checkpoint,
    OptimizerState,
    TrainConfig,
    adam_update,
    clip_gradients,
    load_checkpoint,
    loss_kl,
    lr_schedule,
    save_checkpoint,
    smoothed_target,
    train,
    train_step,
)


def test_smoothed_target():
    np.testing.assert_array_equal(smoothed_target(2, 4, 0.0), [0, 0, 1, 0])
    np.testing.assert_allclose(smoothed_target(0, 2, 0.1), [0.9, 0.1])
    rng = np.random.default_rng(0)
    for _ in range(50):
        V = int(rng.integers(2, 600))
        q = smoothed_target(int(rng.integers(0, V)), V, float(rng.uniform(0, 0.99)))
        assert abs(q.sum() - 1) < 1e-12


def test_loss_is_cross_entropy_without_smoothing():
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((3, 5, 9))
    targets = rng.integers(1, 9, size=(3, 5))
    loss, _ = loss_kl(logits, targets, eps=0.0)
    lse = np.log(np.exp(logits).sum(-1))
    ce = np.mean(lse - np.take_along_axis(logits, targets[..., None], -1)[..., 0])
    assert abs(loss - ce) < 1e-9


def test_loss_matches_direct_kl_with_smoothing():
    rng = np.random.default_rng(1)
    logits = rng.standard_normal((4, 7))
    targets = np.array([1, 2, 3, 6])
    loss, _ = loss_kl(logits, targets, eps=0.1)
    p = np.exp(logits) / np.exp(logits).sum(-1, keepdims=True)
    kls = [np.sum(q * (np.log(q) - np.log(pi))) for q, pi in ((smoothed_target(t, 7, 0.1), p[i]) for i, t in enumerate(targets))]
    assert loss == pytest.approx(np.mean(kls), abs=1e-12)


def test_loss_gradient_finite_difference():
    rng = np.random.default_rng(2)
    logits = rng.standard_normal((2, 3, 6))
    targets = np.array([[1, 2, 0], [3, 0, 0]])
    _, d = loss_kl(logits, targets, eps=0.1)
    for idx in [(0, 0, 1), (0, 1, 4), (1, 0, 3), (1, 2, 2)]:
        lp, lm = logits.copy(), logits.copy()
        lp[idx] += 1e-6
        lm[idx] -= 1e-6
        num = (loss_kl(lp, targets, eps=0.1)[0] - loss_kl(lm, targets, eps=0.1)[0]) / 2e-6
        assert num == pytest.approx(d[idx], abs=1e-8)


def test_uniform_logits_give_log_v():
    loss, _ = loss_kl(np.zeros((4, 10)), np.array([1, 2, 3, 4]))
    assert loss == pytest.approx(math.log(10), abs=1e-12)


def test_pad_positions_have_zero_gradient():
    logits = np.random.default_rng(0).standard_normal((1, 4, 6))
    targets = np.array([[3, 2, PAD, PAD]])
    _, d = loss_kl(logits, targets, eps=0.1)
    assert np.all(d[0, 2:] == 0)
    with pytest.raises(InvalidInputError):
        loss_kl(logits, np.zeros((1, 4), dtype=int))


def test_lr_schedule():
    cfg = TrainConfig(lr=1e-3, warmup_steps=100)
    assert lr_schedule(100, cfg) == 1e-3
    assert lr_schedule(50, cfg) == pytest.approx(5e-4)
    assert lr_schedule(5000, cfg) == 1e-3
    with pytest.raises(InvalidInputError):
        lr_schedule(0, cfg)


def test_adam_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    st = OptimizerState.zeros_like(p)
    adam_update(p, {"w": np.zeros(2)}, st, 1e-3)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    assert st.step == 1


@pytest.mark.parametrize("g", [1e-3, 0.5, -3.0, 0.9])
def test_adam_first_step_is_lr(g):
    p = {"w": np.array([0.25])}
    st = OptimizerState.zeros_like(p)
    adam_update(p, {"w": np.array([g])}, st, lr=1e-3, clip=None)
    # bias-corrected first step: lr * g / (|g| + eps)
    assert abs(abs(p["w"][0] - 0.25) - 1e-3) < 1e-6


def test_clipping_against_brute_force_norm():
    rng = np.random.default_rng(0)
    grads = {"a": rng.standard_normal((3, 4)) * 5, "b": rng.standard_normal(7)}
    brute = math.sqrt(sum(float(x) ** 2 for g in grads.values() for x in g.ravel()))
    before = {k: v.copy() for k, v in grads.items()}
    norm = clip_gradients(grads, 1.0)
    assert norm == pytest.approx(brute, rel=1e-12)
    after = math.sqrt(sum(float(x) ** 2 for g in grads.values() for x in g.ravel()))
    assert after == pytest.approx(1.0, rel=1e-12)
    for k in grads:
        np.testing.assert_allclose(grads[k], before[k] / brute, rtol=1e-12)


def test_non_finite_gradient_aborts():
    p = {"w": np.ones(2)}
    st = OptimizerState.zeros_like(p)
    with pytest.raises(TrainingAborted) as err:
        adam_update(p, {"w": np.array([1.0, np.nan])}, st, 1e-3)
    assert err.value.diagnostics["tensors"] == ["w"]
    assert st.step == 0 and np.all(p["w"] == 1)


CFG = ModelConfig(vocab_size=40, context_length=24, d_model=16, n_layers=2, n_heads=2)


def _seqs(n=6, seed=0):
    rng = np.random.default_rng(seed)
    return [[1] + list(rng.integers(5, 40, size=int(rng.integers(4, 20)))) + [2] for _ in range(n)]


def test_initial_loss_near_log_v():
    cfg = ModelConfig(vocab_size=522, context_length=64, d_model=64, n_layers=2, n_heads=4)
    p = init_params(cfg, 0)
    rng = np.random.default_rng(0)
    tokens = rng.integers(1, 522, size=(4, 40))
    logits, _ = forward(p, cfg, tokens[:, :-1])
    loss, _ = loss_kl(logits, tokens[:, 1:], eps=0.0)
    assert abs(loss - math.log(522)) / math.log(522) < 0.05


def test_padding_does_not_change_loss():
    cfg = ModelConfig(vocab_size=40, context_length=24, d_model=16, n_layers=2, n_heads=2, dtype="float64")
    seq = _seqs(1)[0]
    tc = TrainConfig(label_smoothing=0.1)
    results = []
    for batch in ([seq], [seq + [PAD] * 5]):
        p = init_params(cfg, 0)
        opt = OptimizerState.zeros_like(p)
        results.append((train_step(p, opt, cfg, tc, batch), p))
    assert abs(results[0][0] - results[1][0]) < 1e-9
    for k in results[0][1]:
        np.testing.assert_allclose(results[0][1][k], results[1][1][k], atol=1e-12)


def test_training_is_deterministic():
    tc = TrainConfig(lr=1e-2, warmup_steps=5, total_steps=20, batch_size=3, seed=4)
    curves = []
    for _ in range(2):
        p = init_params(CFG, 0)
        curves.append(train(p, OptimizerState.zeros_like(p), CFG, tc, _seqs()))
    assert np.max(np.abs(np.subtract(*curves))) <= 1e-6


def test_overlong_sequences_are_skipped(caplog):
    tc = TrainConfig(total_steps=2, batch_size=2)
    p = init_params(CFG, 0)
    seqs = _seqs(3) + [[1] + [5] * 40 + [2]]
    losses = train(p, OptimizerState.zeros_like(p), CFG, tc, seqs)
    assert len(losses) == 2
    assert "skipped 1" in caplog.text


def _checkpoint(step=3):
    p = init_params(CFG, 0)
    opt = OptimizerState.zeros_like(p)
    tc = TrainConfig(lr=1e-2, warmup_steps=2, total_steps=step, batch_size=2)
    train(p, opt, CFG, tc, _seqs())
    return Checkpoint(CFG, tc, {"categories": ["a"]}, p, opt, opt.step, {"note": "x"})


def test_checkpoint_round_trip(tmp_path):
    ck = _checkpoint()
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, ck)
    back = load_checkpoint(path)
    assert back.model_config == ck.model_config and back.train_config == ck.train_config
    assert back.step == ck.step == back.opt.step and back.vocab == ck.vocab and back.extra == ck.extra
    for src, dst in ((ck.params, back.params), (ck.opt.m, back.opt.m), (ck.opt.v, back.opt.v)):
        assert list(src) == list(dst)
        for k in src:
            assert src[k].dtype == dst[k].dtype and src[k].tobytes() == dst[k].tobytes()
    save_checkpoint(tmp_path / "again.ckpt", back)
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, _checkpoint(1))
    data = path.read_bytes()
    assert data[:4] == b"DSV2" and struct.unpack("<I", data[4:8]) == (1,)
    (tmp_path / "bad").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(NotACheckpointError):
        load_checkpoint(tmp_path / "bad")
    (tmp_path / "future").write_bytes(data[:4] + struct.pack("<I", 2) + data[8:])
    with pytest.raises(UnsupportedVersionError):
        load_checkpoint(tmp_path / "future")
    (tmp_path / "short").write_bytes(data[:-10])
    with pytest.raises(TruncatedCheckpointError):
        load_checkpoint(tmp_path / "short")


def test_resume_matches_uninterrupted(tmp_path):
    tc = TrainConfig(lr=1e-2, warmup_steps=10, total_steps=200, batch_size=3, seed=1)
    seqs = _seqs(8)
    p = init_params(CFG, 0)
    full = train(p, OptimizerState.zeros_like(p), CFG, tc, seqs)

    p = init_params(CFG, 0)
    opt = OptimizerState.zeros_like(p)
    first = train(p, opt, CFG, tc, seqs, until_step=100)
    save_checkpoint(tmp_path / "half.ckpt", Checkpoint(CFG, tc, {}, p, opt, opt.step))
    ck = load_checkpoint(tmp_path / "half.ckpt")
    second = train(ck.params, ck.opt, CFG, tc, seqs)
    assert len(first) + len(second) == 200
    assert np.max(np.abs(np.array(first + second) - np.array(full))) <= 1e-5
