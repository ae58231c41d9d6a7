import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afm.errors import ConfigError, DataError, ShapeError
from afm.losses import (LossBreakdown, afm_total, discrimination_loss, feature_mapping_loss,
                        parse_record, saafm_total, senone_ce_loss)


def test_fm_loss_identity_is_zero(rng):
    y = rng.normal(size=(5, 29))
    assert feature_mapping_loss(y, y).item() == 0.0


def test_fm_loss_hand_value():
    assert feature_mapping_loss([[1.0], [2.0]], [[0.0], [0.0]]).item() == pytest.approx(2.5, abs=1e-6)


def test_fm_loss_sums_dims_averages_frames():
    y_hat = np.array([[1.0, 1.0, 1.0]])
    assert feature_mapping_loss(y_hat, np.zeros((1, 3))).item() == 3.0


def test_fm_loss_symmetric_and_permutation_invariant(rng):
    a, b = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    perm = rng.permutation(6)
    ab = feature_mapping_loss(a, b).item()
    assert ab == pytest.approx(feature_mapping_loss(b, a).item(), rel=1e-12)
    assert ab == pytest.approx(feature_mapping_loss(a[perm], b[perm]).item(), rel=1e-12)


def test_fm_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        feature_mapping_loss(np.zeros((2, 3)), np.zeros((3, 3)))


def test_discrimination_loss_hand_values():
    assert discrimination_loss([0.5], [0.5]).item() == pytest.approx(1.3863, abs=1e-4)
    assert discrimination_loss([0.5], [0.5]).item() == pytest.approx(2 * math.log(2), abs=1e-12)
    assert discrimination_loss([0.9], [0.1]).item() == pytest.approx(0.2107, abs=1e-4)
    assert discrimination_loss([0.9], [0.1]).item() == pytest.approx(-2 * math.log(0.9), abs=1e-12)


def test_discrimination_loss_perfect_limit():
    vals = [discrimination_loss([1 - e], [e]).item() for e in (1e-2, 1e-4, 1e-8)]
    assert vals[0] > vals[1] > vals[2] > 0
    assert vals[2] < 1e-7
    # endpoints are clamped rather than producing inf
    assert math.isfinite(discrimination_loss([1.0], [1.0]).item())


def test_discrimination_loss_rejects_out_of_range():
    with pytest.raises(DataError):
        discrimination_loss([1.2], [0.5])
    with pytest.raises(DataError):
        discrimination_loss([0.5], [-0.1])


@settings(max_examples=50)
@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_discrimination_loss_nonnegative(a, b):
    assert discrimination_loss([a], [b]).item() >= 0


def test_chance_point_has_balanced_output_gradients():
    from afm import autodiff as ad
    dc = ad.Tensor(np.array([0.5]), requires_grad=True)
    de = ad.Tensor(np.array([0.5]), requires_grad=True)
    with ad.Tape() as tape:
        loss = discrimination_loss(dc, de)
    ad.backward(tape, loss)
    assert abs(dc.grad[0]) == pytest.approx(abs(de.grad[0]))
    assert dc.grad[0] < 0 < de.grad[0]


def test_afm_total_examples():
    assert afm_total(2.5, 1.0, 60) == pytest.approx(-57.5, abs=1e-6)
    assert afm_total(2.5, 1.0, 0.0) == 2.5
    assert afm_total(2.5, 0.0, 60) == 2.5
    with pytest.raises(ConfigError):
        afm_total(1.0, 1.0, -1.0)


def test_senone_ce_examples():
    uniform = np.full((3, 4), 0.25)
    assert senone_ce_loss(uniform, [0, 3, 1]).item() == pytest.approx(1.3863, abs=1e-4)
    onehot = np.eye(4)[[2, 0]]
    assert senone_ce_loss(onehot, [2, 0]).item() == pytest.approx(0.0, abs=1e-12)
    post = np.array([[0.5, 0.5], [0.75, 0.25]])
    assert senone_ce_loss(post, [0, 1]).item() == pytest.approx(1.0397, abs=1e-4)
    assert senone_ce_loss(post, [0, 1]).item() == pytest.approx(
        -(math.log(0.5) + math.log(0.25)) / 2, abs=1e-12)


def test_senone_ce_label_range():
    with pytest.raises(DataError):
        senone_ce_loss(np.full((2, 4), 0.25), [0, 4])
    with pytest.raises(DataError):
        senone_ce_loss(np.full((2, 4), 0.25), [-1, 0])


def test_saafm_total_examples():
    assert saafm_total(1, 1, 1, 1, 1) == pytest.approx(1.0, abs=1e-6)
    assert saafm_total(2.5, 1.0, 7.0, 60, 0.0) == afm_total(2.5, 1.0, 60)
    assert saafm_total(1, 1, 2, 1, 0.5) > saafm_total(1, 1, 1, 1, 0.5)
    with pytest.raises(ConfigError):
        saafm_total(1, 1, 1, 1, -0.1)


def test_breakdown_total_and_record():
    bd = LossBreakdown(l_f=2.5, l_d=1.0, l_m=0.5, frames=10, lam1=60.0, lam2=2.0)
    assert bd.total == pytest.approx(saafm_total(2.5, 1.0, 0.5, 60.0, 2.0), abs=1e-6)
    rec = parse_record(bd.record(epoch=3))
    assert rec["epoch"] == 3 and rec["l_f"] == 2.5 and rec["total"] == bd.total
    fm = parse_record(LossBreakdown(l_f=1.0).record())
    assert math.isnan(fm["l_d"]) and fm["total"] == 1.0
