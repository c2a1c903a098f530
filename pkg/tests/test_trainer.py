import math

import numpy as np
import pytest

from patchfree import data as D
from patchfree.checkpoint import load_checkpoint
from patchfree.errors import ConfigError, DomainError, NumericError, ShapeError
from patchfree.freenet import FreeNetConfig, build, predict_labels
from patchfree.layers import Dense
from patchfree.metrics import ConfusionMatrix, overall_accuracy
from patchfree.tensor import Tensor, backward
from patchfree.trainer import (OptimizerState, masked_cross_entropy, poly_lr, sgd_step, train)

TINY = dict(encoder_widths=(8, 16, 24, 32), decoder_width=16, reduction_ratio=4)


def param(value):
    return Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)


# -- loss ----------------------------------------------------------------------------


def test_uniform_logits_give_log_n(rng):
    labels = rng.integers(1, 6, (4, 4))
    pos = np.argwhere(np.ones((4, 4)))
    loss = masked_cross_entropy(Tensor(np.zeros((5, 4, 4))), labels, pos)
    assert abs(loss.item() - math.log(5)) < 1e-12


def test_two_class_hand_value():
    logits = np.zeros((2, 1, 1))
    logits[1, 0, 0] = math.log(3)
    loss = masked_cross_entropy(Tensor(logits), np.array([[2]]), [[0, 0]])
    assert abs(loss.item() + math.log(0.75)) < 1e-12
    assert abs(loss.item() - 0.2877) < 1e-4


def test_peaked_logits_give_near_zero_loss():
    logits = np.zeros((3, 1, 1))
    logits[0] = 60.0
    assert masked_cross_entropy(Tensor(logits), np.array([[1]]), [[0, 0]]).item() < 1e-20


def test_loss_only_sees_sampled_positions(rng):
    logits = rng.standard_normal((3, 6, 6))
    labels = rng.integers(1, 4, (6, 6))
    pos = np.array([[0, 1], [3, 3], [5, 2]])
    base = masked_cross_entropy(Tensor(logits), labels, pos).item()
    other = logits.copy()
    keep = np.zeros((6, 6), bool)
    keep[pos[:, 0], pos[:, 1]] = True
    other[:, ~keep] = rng.standard_normal((3, (~keep).sum())) * 100
    assert masked_cross_entropy(Tensor(other), labels, pos).item() == base


def test_loss_gradient_is_local_and_mean(rng):
    x = Tensor(rng.standard_normal((3, 4, 4)), requires_grad=True)
    labels = rng.integers(1, 4, (4, 4))
    pos = np.array([[1, 1], [2, 3]])
    backward(masked_cross_entropy(x, labels, pos))
    g = x.grad
    assert np.count_nonzero(np.abs(g).sum(axis=0)) == 2
    # softmax minus one-hot, divided by n
    z = x.data[:, 1, 1]
    p = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
    p[labels[1, 1] - 1] -= 1
    np.testing.assert_allclose(g[:, 1, 1], p / 2, atol=1e-12)


def test_loss_contract_errors():
    logits = Tensor(np.zeros((2, 3, 3)))
    labels = np.array([[1, 0, 2], [1, 1, 1], [2, 2, 3]])
    with pytest.raises(DomainError, match="unlabeled"):
        masked_cross_entropy(logits, labels, [[0, 1]])
    with pytest.raises(DomainError):
        masked_cross_entropy(logits, labels, [[2, 2]])
    with pytest.raises(ShapeError):
        masked_cross_entropy(logits, labels, [[3, 0]])
    with pytest.raises(DomainError):
        masked_cross_entropy(logits, labels, np.zeros((0, 2)))


# -- schedule and optimizer ---------------------------------------------------------------


def test_poly_lr_examples():
    st = OptimizerState()
    assert poly_lr(0, st) == 1e-4
    assert poly_lr(1000, st) == 0
    assert abs(poly_lr(500, st) - 5.3589e-5) < 1e-9
    assert abs(poly_lr(500, st) - 1e-4 * 0.5 ** 0.9) < 1e-18
    with pytest.raises(DomainError):
        poly_lr(1001, st)
    with pytest.raises(DomainError):
        poly_lr(-1, st)


def test_poly_lr_strictly_decreasing():
    st = OptimizerState(max_iter=997)
    lrs = [poly_lr(i, st) for i in range(998)]
    assert all(a > b for a, b in zip(lrs, lrs[1:]))


def test_plain_sgd_step():
    w = param([[1.0]])
    lr = sgd_step([w], OptimizerState(base_lr=0.1, momentum=0, weight_decay=0, max_iter=10), 0,
                  [np.array([[2.0]])])
    assert lr == 0.1 and w.data[0, 0] == pytest.approx(0.8, abs=1e-15)


def test_momentum_hand_trace():
    w = param([[0.0]])
    st = OptimizerState(base_lr=1.0, momentum=0.9, weight_decay=0, max_iter=10 ** 9)
    sgd_step([w], st, 0, [np.ones((1, 1))])
    assert w.data[0, 0] == -1.0
    sgd_step([w], st, 0, [np.ones((1, 1))])
    assert abs(w.data[0, 0] + 2.9) < 1e-12


def test_zero_gradient_decays_velocity():
    w = param([[3.0]])
    st = OptimizerState(base_lr=1.0, momentum=0.5, weight_decay=0, max_iter=10 ** 9)
    sgd_step([w], st, 0, [np.full((1, 1), 2.0)])
    v1 = st.velocity[id(w)].copy()
    before = w.data.copy()
    sgd_step([w], st, 0, [np.zeros((1, 1))])
    np.testing.assert_array_equal(st.velocity[id(w)], 0.5 * v1)
    np.testing.assert_array_equal(w.data, before - 0.5 * v1)


def test_weight_decay_scalar_oracle():
    w = param([[0.7, -0.2]])
    b = param([0.5])
    st = OptimizerState(base_lr=0.01, momentum=0.9, weight_decay=1e-4, max_iter=100)
    lr0 = 0.01 * (1 - 3 / 100) ** 0.9
    sgd_step([w, b], st, 3, [np.array([[0.3, 0.1]]), np.array([0.4])])
    assert abs(w.data[0, 0] - (0.7 - lr0 * (0.3 + 1e-4 * 0.7))) < 1e-12
    assert abs(w.data[0, 1] - (-0.2 - lr0 * (0.1 + 1e-4 * -0.2))) < 1e-12
    # biases are not decayed
    assert abs(b.data[0] - (0.5 - lr0 * 0.4)) < 1e-12


def test_sgd_clears_grads_and_checks_shapes():
    d = Dense(3, 2, rng=0)
    d.weight.grad = np.ones((2, 3), np.float32)
    sgd_step(d.parameters(), OptimizerState(), 0)
    assert d.weight.grad is None
    with pytest.raises(ShapeError):
        sgd_step(d.parameters(), OptimizerState(), 0, [np.ones(3)])


# -- training loop ----------------------------------------------------------------------------


def small_scene(seed=0, size=16, per_class=6):
    s = D.generate_synthetic_scene(size, size, 6, 3, 0.1, seed)
    s.cube = D.normalize_bands(s.cube)
    s.train_mask, s.test_mask = D.random_split(s.labels, per_class, seed)
    return s


def tiny_model(seed=0):
    return build(FreeNetConfig(6, 3, **TINY), seed)


def test_zero_iterations_keep_initialisation(tmp_path):
    m = tiny_model()
    before = {n: p.data.copy() for n, p in m.named_parameters()}
    rep = train(m, small_scene(), optimizer=OptimizerState(max_iter=0),
                checkpoint_path=str(tmp_path / "c.fpga"), echo=False)
    assert len(rep) == 0
    saved = load_checkpoint(tmp_path / "c.fpga")
    assert all(saved[n].tobytes() == v.tobytes() for n, v in before.items())


def test_training_reduces_loss_and_logs(tmp_path, capsys):
    m = tiny_model()
    log = tmp_path / "log.txt"
    rep = train(m, small_scene(), alpha=2, optimizer=OptimizerState(max_iter=40, base_lr=1e-2),
                log_file=str(log))
    assert len(rep) == len(rep.lrs) == len(rep.seconds) == 40
    assert np.mean(rep.losses[-5:]) < rep.losses[0]
    lines = log.read_text().splitlines()
    assert len(lines) == 40 and lines == capsys.readouterr().out.splitlines()
    it, loss, lr, sec = lines[3].split()
    assert int(it) == 3 and float(loss) == pytest.approx(rep.losses[3], rel=1e-5)
    assert float(lr) == pytest.approx(rep.lrs[3])


def test_training_is_deterministic(tmp_path):
    paths = []
    for run in range(2):
        paths.append(tmp_path / f"c{run}.fpga")
        train(tiny_model(3), small_scene(3), alpha=2, optimizer=OptimizerState(max_iter=8, base_lr=1e-2),
              seed=5, checkpoint_path=str(paths[-1]), echo=False)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_training_cycles_epochs():
    # 6 pixels per class, alpha=2 -> 3 batches per epoch; 8 iterations spans 3 epochs
    rep = train(tiny_model(), small_scene(), alpha=2, optimizer=OptimizerState(max_iter=8),
                echo=False)
    assert len(rep) == 8


def test_divergence_aborts():
    m = tiny_model()
    with pytest.raises(NumericError, match="iteration"), np.errstate(all="ignore"):
        train(m, small_scene(), optimizer=OptimizerState(max_iter=50, base_lr=1e6), echo=False)


def test_config_mismatch():
    with pytest.raises(ConfigError):
        train(build(FreeNetConfig(5, 3, **TINY)), small_scene(), echo=False)
    s = small_scene()
    s.train_mask = None
    with pytest.raises(ConfigError):
        train(tiny_model(), s, echo=False)


def desk_run(alpha, seed, iters=300):
    s = D.generate_synthetic_scene(seed=seed)
    s.cube = D.normalize_bands(s.cube)
    s.train_mask, s.test_mask = D.random_split(s.labels, 20, seed)
    m = build(FreeNetConfig(8, 4), seed)
    train(m, s, alpha=alpha, optimizer=OptimizerState(max_iter=iters), seed=seed, echo=False)
    pred = predict_labels(m, s.cube)
    return overall_accuracy(ConfusionMatrix(4).accumulate(pred, s.labels, s.test_mask))


@pytest.mark.slow
def test_stratified_batches_match_or_beat_full_batches():
    # alpha=5 gives 4 class-balanced batches per epoch; 10**9 is one full-set batch
    wins = sum(desk_run(5, seed) >= desk_run(10 ** 9, seed) for seed in range(5))
    assert wins >= 3
