import math

import numpy as np
import pytest

from pclink import mdma, sse
from pclink.channel import ChannelConfig
from pclink.codec import Codec, CodecConfig
from pclink.metrics import mse_c2c, psnr

MICRO = CodecConfig(cube_side=8, widths=(4, 8, 16), latent_channels=4)


def scan_oracle(table, snr_db, g_th, p_th, frac, cap):
    """Exhaustive reference for optimize(): max phi, ties to smaller sor."""
    dists = [abs(float(s) - snr_db) for s in table.snr_values]
    col = dists.index(min(dists))
    best = None
    for i, sor in enumerate(table.sor_values):
        sor = float(sor)
        if sor > cap + 1e-12:
            continue
        g = float(table.gains[i][col])
        p = frac * g / (2.0 - sor)
        if g < g_th or p < p_th:
            continue
        if best is None or (p, -sor) > (best[2], -best[0]):
            best = (sor, g, p)
    if best is None:
        return sse.OptimizeResult(False, math.nan, math.nan, math.nan,
                                  float(table.snr_values[col]))
    return sse.OptimizeResult(True, *best, float(table.snr_values[col]))


def random_table(rng):
    n_sor = rng.integers(2, 8)
    n_snr = rng.integers(1, 6)
    sor = np.sort(rng.choice(np.round(np.linspace(0, 1, 21), 2), n_sor, replace=False))
    snr = np.sort(rng.choice(np.arange(0.0, 20.0), n_snr, replace=False))
    return sse.GTable(sor, snr, rng.uniform(10, 60, (n_sor, n_snr)))


def results_equal(a, b):
    if a.feasible != b.feasible or a.snr_db != b.snr_db:
        return False
    if not a.feasible:
        return True
    return (a.sor, a.gain, a.phi) == (b.sor, b.gain, b.phi)


def test_optimize_matches_full_scan():
    rng = np.random.default_rng(3)
    for _ in range(50):
        table = random_table(rng)
        snr_db = float(rng.uniform(-2, 20))
        g_th = float(rng.uniform(0, 50))
        p_th = float(rng.uniform(0, 30))
        frac = float(rng.uniform(0.2, 1.0))
        cap = float(rng.choice([0.5, 0.8, 1.0]))
        got = sse.optimize(table, snr_db, g_th, p_th, frac, cap)
        want = scan_oracle(table, snr_db, g_th, p_th, frac, cap)
        assert results_equal(got, want), (got, want)


def test_phi_values():
    assert sse.phi(30.0, 0.0) == 15.0
    assert sse.phi(30.0, 1.0) == 30.0
    assert sse.phi(60.0, 0.5, info_fraction=0.5) == 20.0
    with pytest.raises(ValueError):
        sse.phi(30.0, 1.5)


def test_optimize_tie_prefers_smaller_sor():
    # 30 / (2 - 0) and 22.5 / (2 - 0.5) are both exactly 15.0
    table = sse.GTable([0.0, 0.5], [10.0], [[30.0], [22.5]])
    res = sse.optimize(table, 10.0, 0.0, 0.0)
    assert res.feasible and res.sor == 0.0 and res.phi == 15.0


def test_optimize_respects_sor_cap():
    table = sse.GTable([0.0, 0.9, 1.0], [10.0], [[20.0], [90.0], [99.0]])
    res = sse.optimize(table, 10.0, 0.0, 0.0)
    assert res.sor == 0.0
    res = sse.optimize(table, 10.0, 0.0, 0.0, sor_cap=1.0)
    assert res.sor == 1.0 and res.gain == 99.0


def test_optimize_infeasible():
    table = sse.GTable([0.0, 0.4], [0.0, 6.0], [[20.0, 25.0], [21.0, 26.0]])
    res = sse.optimize(table, 6.0, gain_threshold=50.0, phi_threshold=0.0)
    assert not res.feasible
    assert math.isnan(res.sor) and math.isnan(res.gain) and math.isnan(res.phi)
    assert res.snr_db == 6.0


def test_nearest_snr_column_prefers_lower_on_tie():
    table = sse.GTable([0.0], [0.0, 2.0, 4.0], [[10.0, 20.0, 30.0]])
    assert table.nearest_snr_column(2.9) == 1
    assert table.nearest_snr_column(3.0) == 1
    assert table.nearest_snr_column(3.1) == 2
    assert sse.optimize(table, 100.0, 0.0, 0.0).gain == 30.0


def test_gtable_csv_round_trip():
    rng = np.random.default_rng(11)
    table = random_table(rng)
    text = table.to_csv()
    back = sse.GTable.from_csv(text)
    np.testing.assert_array_equal(back.sor_values, table.sor_values)
    np.testing.assert_array_equal(back.snr_values, table.snr_values)
    np.testing.assert_array_equal(back.gains, table.gains)
    assert back.to_csv() == text


def test_gtable_validation():
    with pytest.raises(ValueError, match="header"):
        sse.GTable.from_csv("snr,0.0\n0.0,1.0\n")
    with pytest.raises(ValueError, match="line 2"):
        sse.GTable.from_csv("sor,0.0,2.0\n0.0,1.0\n")
    with pytest.raises(ValueError, match="strictly increasing"):
        sse.GTable([0.5, 0.5], [0.0], [[1.0], [2.0]])
    with pytest.raises(ValueError, match="shape"):
        sse.GTable([0.0, 0.5], [0.0], [[1.0]])


@pytest.fixture(scope="module")
def codec():
    return Codec(MICRO, seed=29)


@pytest.fixture(scope="module")
def pairs():
    rng = np.random.default_rng(5)
    out = []
    for _ in range(2):
        a = (rng.random((8, 8, 8)) < 0.12).astype(np.uint8)
        b = (rng.random((8, 8, 8)) < 0.12).astype(np.uint8)
        a[0, 0, 0] = b[0, 0, 0] = 1
        out.append((a, b))
    return out


def test_build_g_table_shape_and_determinism(codec, pairs):
    kw = dict(sor_values=(0.0, 0.5, 1.0), snr_values=(0.0, 10.0),
              n_reps=1, base_seed=7)
    table = sse.build_g_table(codec, pairs, **kw)
    assert table.gains.shape == (3, 2)
    assert np.all(np.isfinite(table.gains))
    assert np.all(table.gains <= 100.0)
    again = sse.build_g_table(codec, pairs, **kw)
    np.testing.assert_array_equal(again.gains, table.gains)


def test_build_g_table_matches_downlink(codec, pairs):
    """The batched table builder must agree with per-pair downlink runs."""
    sor, snr, base = 0.5, 10.0, 7
    table = sse.build_g_table(codec, pairs, sor_values=(sor,), snr_values=(snr,),
                              n_reps=1, base_seed=base)
    vals = []
    for p_idx, (occ1, occ2) in enumerate(pairs):
        seed = int(np.random.SeedSequence((base, p_idx, 0)).generate_state(1)[0])
        res = mdma.downlink(codec, occ1, occ2, sor, ChannelConfig(snr_db=snr, seed=seed))
        for occ, occ_hat in ((occ1, res.occupancy1), (occ2, res.occupancy2)):
            mse = mse_c2c(np.argwhere(occ), np.argwhere(occ_hat))
            vals.append(min(psnr(mse, 3), 100.0))
    assert math.isclose(table.gains[0, 0], np.mean(vals), rel_tol=0, abs_tol=1e-9)
