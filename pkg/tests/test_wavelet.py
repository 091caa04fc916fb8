import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdsr.autograd import GeometryError, Tensor, grad_check, make_rng
from gdsr.wavelet import (
    WaveletFilter, WaveletLossConfig, dual_group, dual_group_views, dump_planes, get_filter, haar,
    hf_subband_error, load_filter, multiscale_wavelet_loss, parse_filter, qmf, rgb_to_y, swt2, total_loss,
)
from gdsr.degradation import load_pgm

# -- independent dense oracle -------------------------------------------------


def circulant(n, taps, dil):
    """Matrix M with (M x)[i] = sum_k taps[k] x[(i + k*dil) mod n]."""
    m = np.zeros((n, n))
    for i in range(n):
        for k, t in enumerate(taps):
            m[i, (i + k * dil) % n] += t
    return m


def dense_swt(y, h, g, levels):
    out, ll = [], y
    for j in range(levels):
        hr_, gr = circulant(ll.shape[0], h, 2 ** j), circulant(ll.shape[0], g, 2 ** j)
        hc, gc = circulant(ll.shape[1], h, 2 ** j), circulant(ll.shape[1], g, 2 ** j)
        bands = {"LL": hr_ @ ll @ hc.T, "LH": gr @ ll @ hc.T, "HL": hr_ @ ll @ gc.T, "HH": gr @ ll @ gc.T}
        out.append(bands)
        ll = bands["LL"]
    return out


def keys(x):
    x = abs(x)
    if x <= 1:
        return 1.5 * x ** 3 - 2.5 * x ** 2 + 1
    if x < 2:
        return -0.5 * x ** 3 + 2.5 * x ** 2 - 4 * x + 2
    return 0.0


def shrink_1d(n, f):
    """Antialiased bicubic reduction by integer factor f with edge clamping, built element by element."""
    m = np.zeros((n // f, n))
    for o in range(n // f):
        c = (o + 0.5) * f - 0.5
        ws = {}
        for t in range(int(math.floor(c - 2 * f)), int(math.ceil(c + 2 * f)) + 1):
            ws[t] = keys((t - c) / f)
        total = sum(ws.values())
        for t, w in ws.items():
            m[o, min(max(t, 0), n - 1)] += w / total
    return m


def oracle_loss(sr, hr, lam_l, lam_h, alphas, levels):
    h = np.array([1, 1]) / math.sqrt(2)
    g = np.array([1, -1]) / math.sqrt(2)
    w = np.array([0.299, 0.587, 0.114])
    ys, yh = np.tensordot(w, sr, axes=(0, 0)), np.tensordot(w, hr, axes=(0, 0))
    total = 0.0
    for a, f in zip(alphas, (1, 2, 4)):
        if f == 1:
            ds, dh = ys, yh
        else:
            m = shrink_1d(ys.shape[0], f)
            ds, dh = m @ ys @ m.T, m @ yh @ m.T
        ps, ph = dense_swt(ds, h, g, levels)[-1], dense_swt(dh, h, g, levels)[-1]
        low = np.mean(np.abs(ps["LL"] - ph["LL"]))
        high = np.mean([np.abs(ps[b] - ph[b]) for b in ("LH", "HL", "HH")])
        total += a * (lam_l * low + lam_h * high)
    return total


# -- filters ------------------------------------------------------------------


def test_haar_filter_pair():
    f = haar()
    np.testing.assert_allclose(f.h, [2 ** -0.5] * 2)
    np.testing.assert_allclose(f.g, [2 ** -0.5, -(2 ** -0.5)])


def test_bundled_sym19_is_orthogonal():
    f = get_filter("sym19")
    assert f.length == 38
    assert abs(np.sum(f.h) - math.sqrt(2)) < 1e-10
    for shift in range(1, 19):
        assert abs(np.dot(f.h[2 * shift:], f.h[:-2 * shift])) < 1e-10
    np.testing.assert_array_equal(f.g, qmf(f.h))


def test_filter_file_errors(tmp_path):
    with pytest.raises(ValueError):
        parse_filter("x\n3\n0.1\n0.2\n")
    with pytest.raises(ValueError):
        parse_filter("x\n2\n1\n1\n")  # energy 2
    with pytest.raises(ValueError):
        parse_filter("x\n2\nabc\n0.5\n")
    with pytest.raises(FileNotFoundError):
        get_filter(str(tmp_path / "missing.txt"))
    p = tmp_path / "h.txt"
    p.write_text(f"mine\n2\n{2 ** -0.5!r}\n{2 ** -0.5!r}\n")
    assert load_filter(p).name == "mine"
    assert get_filter(str(p)).length == 2


def test_filter_rejects_inconsistent_highpass():
    with pytest.raises(ValueError):
        WaveletFilter("bad", haar().h, g=np.array([1.0, 1.0]))


# -- transform ----------------------------------------------------------------


def test_haar_constant_image_gain_and_zero_detail():
    pyr = swt2(np.full((8, 8), 0.5), haar(), 2)
    np.testing.assert_allclose(pyr[1]["LL"].data, 2.0, atol=1e-15)
    for j in range(2):
        for band in ("LH", "HL", "HH"):
            assert not pyr[j][band].data.any()


def test_sym19_constant_image_detail_vanishes():
    pyr = swt2(np.full((8, 8), 0.3), get_filter("sym19"), 2)
    np.testing.assert_allclose(pyr[1]["LL"].data, 0.3 * 4, atol=1e-10)
    assert max(np.abs(pyr[j][b].data).max() for j in range(2) for b in ("LH", "HL", "HH")) <= 1e-10


@pytest.mark.parametrize("name", ["haar", "sym19"])
def test_impulse_response_matches_dense_oracle(name):
    f = get_filter(name)
    n = 16
    for pos in [(0, 0), (5, 11), (15, 3)]:
        y = np.zeros((n, n))
        y[pos] = 1.0
        ours = swt2(y, f, 2)
        ref = dense_swt(y, f.h, f.g, 2)
        for j in range(2):
            for band in ("LL", "LH", "HL", "HH"):
                np.testing.assert_allclose(ours[j][band].data, ref[j][band], atol=1e-10, rtol=0)


def test_band_orientation():
    # rows constant along width, varying along height: only the height-highpass band LH sees it
    y = np.tile(np.array([0.0, 1.0] * 4)[:, None], (1, 8))
    p = swt2(y, haar(), 1)[0]
    assert np.abs(p["LH"].data).max() > 0.5
    assert not p["HL"].data.any() and not p["HH"].data.any()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(seed, a, b):
    rng = make_rng(seed)
    x, y = rng.normal(size=(16, 16)), rng.normal(size=(16, 16))
    f = haar()
    px, py, pz = swt2(x, f, 2), swt2(y, f, 2), swt2(a * x + b * y, f, 2)
    for j in range(2):
        for s in px[j]:
            np.testing.assert_allclose(pz[j][s].data, a * px[j][s].data + b * py[j][s].data, atol=1e-12, rtol=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(0, 15), st.integers(0, 15))
def test_circular_shift_equivariance(seed, dy, dx):
    x = make_rng(seed).normal(size=(16, 16))
    f = get_filter("sym19")
    p, q = swt2(x, f, 2), swt2(np.roll(x, (dy, dx), axis=(0, 1)), f, 2)
    for j in range(2):
        for s in p[j]:
            np.testing.assert_array_equal(q[j][s].data, np.roll(p[j][s].data, (dy, dx), axis=(0, 1)))


def test_swt_geometry_and_batch_axes(rng):
    with pytest.raises(GeometryError):
        swt2(np.zeros((12, 16)), haar(), 3)
    with pytest.raises(ValueError):
        swt2(np.zeros((8, 8)), haar(), 0)
    x = rng.normal(size=(2, 3, 8, 8))
    batched = swt2(x, haar(), 2)
    single = swt2(x[1, 2], haar(), 2)
    np.testing.assert_allclose(batched[1]["HL"].data[1, 2], single[1]["HL"].data, atol=1e-15)


def test_dual_group_layout(rng):
    x = rng.normal(size=(2, 8, 8))
    pyr = swt2(x, haar(), 2)
    low, high = dual_group(pyr)
    assert low.shape == (2, 1, 8, 8) and high.shape == (2, 3, 8, 8)
    np.testing.assert_array_equal(high.data[:, 1], pyr[-1]["HL"].data)
    np.testing.assert_array_equal(low.data[:, 0], pyr[-1]["LL"].data)


# -- luma ---------------------------------------------------------------------


def test_rgb_to_y_examples():
    px = np.zeros((3, 1, 3))
    px[:, 0, 0] = 1.0
    px[0, 0, 1] = 1.0
    px[:, 0, 2] = [0.0, 2.0, -1.0]
    y = rgb_to_y(px).data[0]
    np.testing.assert_allclose(y[:2], [1.0, 0.299])
    assert y[2] == pytest.approx(0.587)
    assert rgb_to_y(px, clamp=False).data[0, 2] == pytest.approx(2 * 0.587 - 0.114)
    with pytest.raises(GeometryError):
        rgb_to_y(np.zeros((4, 2, 2)))


# -- loss ---------------------------------------------------------------------

LOSS_16_EXPECTED = 0.01043448823469607  # frozen from the dense oracle below


def _loss_pair():
    rng = make_rng(4242)
    return rng.random((3, 16, 16)), rng.random((3, 16, 16))


def test_loss_matches_dense_oracle():
    sr, hr = _loss_pair()
    cfg = WaveletLossConfig(0.05, 0.01, (0.6, 0.3, 0.1), levels=1, filter="haar")
    ours = multiscale_wavelet_loss(sr, hr, cfg).item()
    ref = oracle_loss(sr, hr, 0.05, 0.01, (0.6, 0.3, 0.1), 1)
    assert abs(ours - ref) <= 1e-10
    assert abs(ours - LOSS_16_EXPECTED) <= 1e-10


def test_loss_oracle_two_levels():
    sr, hr = _loss_pair()
    sr, hr = np.tile(sr, (1, 2, 2)), np.tile(hr, (1, 2, 2))
    cfg = WaveletLossConfig(0.05, 0.01, (0.6, 0.3, 0.1), levels=2, filter="haar")
    assert abs(multiscale_wavelet_loss(sr, hr, cfg).item() - oracle_loss(sr, hr, 0.05, 0.01, cfg.alphas, 2)) <= 1e-10


def test_loss_zero_on_identity_and_homogeneous(rng):
    sr, hr = rng.random((2, 3, 16, 16)), rng.random((2, 3, 16, 16))
    cfg = WaveletLossConfig(levels=1)
    assert multiscale_wavelet_loss(hr, hr, cfg).item() == 0.0
    base = multiscale_wavelet_loss(sr, hr, cfg).item()
    assert multiscale_wavelet_loss(3 * sr, 3 * hr, cfg).item() == pytest.approx(3 * base, rel=1e-12)
    assert multiscale_wavelet_loss(hr, sr, cfg).item() == pytest.approx(base, rel=1e-12)


def test_loss_defaults_and_validation():
    cfg = WaveletLossConfig()
    assert (cfg.lambda_low, cfg.lambda_high, cfg.alphas, cfg.levels) == (0.05, 0.01, (0.6, 0.3, 0.1), 2)
    with pytest.raises(ValueError):
        WaveletLossConfig(alphas=(0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        WaveletLossConfig(alphas=(1.0, 0.0))
    with pytest.raises(GeometryError):
        multiscale_wavelet_loss(np.zeros((3, 12, 12)), np.zeros((3, 12, 12)), WaveletLossConfig(levels=1))
    with pytest.raises(GeometryError):
        multiscale_wavelet_loss(np.zeros((3, 16, 16)), np.zeros((3, 8, 8)))


def test_total_loss_modes():
    hr = np.zeros((3, 8, 8))
    sr = hr + 0.1
    cfg = WaveletLossConfig(levels=1, filter="haar")
    assert total_loss(sr, hr, cfg, "rec").item() == pytest.approx(0.1)
    # uniform luma offset 0.1: LL at scale 1/k differs by 2*0.1 after one Haar level, HF identical
    expected = 0.1 + 0.05 * 0.2
    assert total_loss(sr, hr, cfg, "rec_plus_wav").item() == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError):
        total_loss(sr, hr, cfg, "wav")


def test_loss_gradient():
    sr, hr = _loss_pair()
    sr, hr = sr[:, :8, :8], hr[:, :8, :8]
    cfg = WaveletLossConfig(levels=1, filter="haar")
    assert grad_check(lambda t: multiscale_wavelet_loss(t, hr, cfg), Tensor(sr)) < 1e-5
    # gradient survives out-of-range predictions
    x = Tensor(sr + 1.5, requires_grad=True)
    multiscale_wavelet_loss(x, hr, cfg).backward()
    assert np.abs(x.grad).sum() > 0


def test_hf_subband_error(rng):
    a = rng.random((3, 16, 16))
    assert hf_subband_error(a, a, haar(), 2) == 0.0
    assert hf_subband_error(0.5 * a, 0.5 * a + 0.2, haar(), 2) == pytest.approx(0.0, abs=1e-14)
    assert hf_subband_error(a, rng.random((3, 16, 16)), haar(), 2) > 0


def test_dump_planes_round_trip(tmp_path, rng):
    y = rng.random((16, 16))
    planes = dual_group_views(y, haar(), 1)
    assert sorted(planes) == sorted(f"s{k}_{t}" for k in (1, 2, 4) for t in ("L", "H_LH", "H_HL", "H_HH"))
    assert planes["s2_L"].shape == (8, 8)
    lines = dump_planes(planes, tmp_path)
    name, off, scale = lines[0].split()
    back = float(off.split("=")[1]) + float(scale.split("=")[1]) * load_pgm(tmp_path / name)
    np.testing.assert_allclose(back, planes[name[:-4]], atol=float(scale.split("=")[1]) / 65535)
