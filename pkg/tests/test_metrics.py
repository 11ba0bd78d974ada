import math

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from filmfuse import kernels, metrics
from filmfuse.errors import ContractError

import oracles


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def test_constant_image_scores_zero():
    c = np.full((16, 16), 0.37)
    assert metrics.en(c) == 0.0
    assert metrics.sd(c) == 0.0
    assert metrics.sf(c) == 0.0
    assert metrics.ag(c) == 0.0


def test_en_uniform_histogram_is_8_bits():
    f = (np.arange(256 * 4) % 256).reshape(32, 32) / 255.0
    assert metrics.en(f) == pytest.approx(8.0, abs=1e-12)


def test_en_two_bins():
    f = np.zeros((4, 4))
    f[2:] = 1.0
    assert metrics.en(f) == pytest.approx(1.0, abs=1e-12)


def test_sd_two_valued():
    f = np.zeros((4, 4))
    f[:, ::2] = 1.0
    assert metrics.sd(f) == pytest.approx(127.5, abs=1e-12)


def test_sf_single_column_has_only_vertical_term():
    f = np.array([[0.0], [1.0], [0.0]])
    # CF = sqrt(mean(255^2, 255^2)) = 255; no horizontal pairs
    assert metrics.sf(f) == pytest.approx(255.0, abs=1e-9)


def test_sf_checkerboard_by_hand():
    f = np.indices((4, 4)).sum(axis=0) % 2 * 1.0
    # every horizontal and vertical neighbour differs by 255
    assert metrics.sf(f) == pytest.approx(math.sqrt(2 * 255.0**2), abs=1e-9)


def test_ag_horizontal_ramp():
    f = np.tile(np.arange(10) / 255.0, (6, 1))
    assert metrics.ag(f) == pytest.approx(math.sqrt(0.5), abs=1e-12)


@pytest.mark.parametrize(
    "fn,oracle",
    [
        (metrics.en, oracles.en_loop),
        (metrics.sd, oracles.sd_loop),
        (metrics.sf, oracles.sf_loop),
        (metrics.ag, oracles.ag_loop),
    ],
)
def test_single_image_metrics_match_loops(fn, oracle, rng):
    for _ in range(20):
        f = rng.random((16, 16))
        assert fn(f) == pytest.approx(oracle(f), abs=1e-8)


def test_qabf_matches_loop(rng):
    for _ in range(10):
        f, a, b = rng.random((3, 16, 16))
        assert metrics.qabf(f, a, b) == pytest.approx(oracles.qabf_oracle(f, a, b), abs=1e-8)


def test_vif_matches_oracle(rng):
    for _ in range(3):
        f, a, b = rng.random((3, 32, 32))
        assert metrics.vif(f, a, b) == pytest.approx(oracles.vif_oracle(f, a, b), abs=1e-8)


def test_vif_self_fidelity(rng):
    f = rng.random((32, 32))
    assert metrics.vif(f, f, f) == pytest.approx(1.0, abs=1e-6)


def test_vif_blur_loses_information(rng):
    a = rng.random((48, 48))
    f = gaussian_filter(a, 3.0)
    assert metrics.vif(f, a, a) < 1.0


def test_vif_needs_32(rng):
    with pytest.raises(ContractError):
        metrics.vif(*rng.random((3, 31, 40)))


def test_qabf_self_fusion_value(rng):
    a = rng.random((16, 16))
    expected = oracles.qabf_oracle(a, a, a)
    # identical images: both preservation factors saturate at G = A = 1
    closed = 0.9994 / (1 + math.exp(-15 * 0.5)) * 0.9879 / (1 + math.exp(-22 * 0.2))
    assert expected == pytest.approx(closed, abs=1e-12)
    assert metrics.qabf(a, a, a) == pytest.approx(expected, abs=1e-12)


def test_qabf_constant_fused_near_zero(rng):
    a, b = rng.random((2, 16, 16))
    f = np.full((16, 16), 0.5)
    val = metrics.qabf(f, a, b)
    assert val == pytest.approx(oracles.qabf_oracle(f, a, b), abs=1e-12)
    assert 0.0 <= val < 1e-3


def test_qabf_symmetric_and_bounded(rng):
    for _ in range(20):
        f, a, b = rng.random((3, 16, 16))
        q = metrics.qabf(f, a, b)
        assert q == pytest.approx(metrics.qabf(f, b, a), abs=1e-12)
        assert 0.0 <= q <= 1.0


def test_qabf_flat_sources_warn(caplog):
    c = np.full((8, 8), 0.2)
    assert metrics.qabf(c, c, c) == 0.0
    assert "flat" in caplog.text


def test_vif_symmetric_in_sources(rng):
    f, a, b = rng.random((3, 32, 32))
    assert metrics.vif(f, a, b) == pytest.approx(metrics.vif(f, b, a), abs=1e-12)


def test_metrics_invariant_to_pad_then_crop(rng):
    f, a, b = rng.random((3, 33, 33))
    padded = [np.pad(x, ((0, 1), (0, 0)), mode="edge")[:-1] for x in (f, a, b)]
    r1 = metrics.report(f, a, b)
    r2 = metrics.report(*padded)
    assert r1.values() == r2.values()


def test_report_columns_and_mean(rng):
    f, a, b = rng.random((3, 32, 32))
    r = metrics.report(f, a, b, "x")
    assert all(math.isfinite(v) for v in r.values())
    m = metrics.mean_report([r, r, r])
    np.testing.assert_allclose(m.values(), r.values(), rtol=1e-15)
    table = metrics.format_table([r])
    header = table.splitlines()[0].split()
    assert header[1:] == ["EN", "SD", "SF", "AG", "VIF", "Qabf"]
    assert len(table.splitlines()) == 3
    assert metrics.to_csv([r]).splitlines()[0] == "image,EN,SD,SF,AG,VIF,Qabf"


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")
def test_compiled_and_fallback_kernels_agree(rng):
    img = rng.random((37, 29))
    for a, b in zip(kernels.sobel(img, "cython"), kernels.sobel(img, "python")):
        np.testing.assert_allclose(a, b, atol=1e-12)
    taps = metrics.gaussian_taps(4.0)
    np.testing.assert_allclose(
        kernels.correlate_separable(img, taps, "cython"),
        kernels.correlate_separable(img, taps, "python"),
        atol=1e-12,
    )
    f, a, b = rng.random((3, 32, 32))
    assert metrics.qabf(f, a, b, "cython") == pytest.approx(metrics.qabf(f, a, b, "python"), abs=1e-12)
    assert metrics.vif(f, a, b, "cython") == pytest.approx(metrics.vif(f, a, b, "python"), abs=1e-12)


def test_fallback_matches_oracles(rng):
    f, a, b = rng.random((3, 32, 32))
    assert metrics.qabf(f, a, b, "python") == pytest.approx(oracles.qabf_oracle(f, a, b), abs=1e-8)
    assert metrics.vif(f, a, b, "python") == pytest.approx(oracles.vif_oracle(f, a, b), abs=1e-8)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.sobel(np.zeros((3, 3)), "fortran")
