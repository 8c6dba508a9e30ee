import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hilbertdoa.beamform import (
    BeamformerBank,
    DegenerateCovarianceError,
    GeometryMismatchError,
    beam_pattern,
    beam_power,
    complex_to_real_vector,
    covariance_analytic,
    covariance_real,
    covariance_spectral,
    design_bank_analytic,
    design_bank_snn,
    quadrature_rotate,
    real_stack,
    real_to_complex_vector,
    snn_front_end,
    spiking_doa,
    top_vector,
)
from hilbertdoa.geometry import ArrayGeometry, DoaGrid, steering_vector, wrap_angle
from hilbertdoa.hilbert import SthtKernel, analytic_full, stht
from hilbertdoa.signalgen import bandpass, gen_sinusoid, propagate, propagation_lead
from hilbertdoa.snn import LifConfig

FS = 48000.0


def _bandlimited(rng, m, n, lo=40, hi=None):
    """Real signals with energy only in DFT bins [lo, hi): no DC or Nyquist content."""
    hi = hi or n // 2 - 40
    X = np.zeros((m, n // 2 + 1), complex)
    X[:, lo:hi] = rng.standard_normal((m, hi - lo)) + 1j * rng.standard_normal((m, hi - lo))
    return np.fft.irfft(X, n, axis=1)


def test_rank_one_top_vector(geom):
    s = steering_vector(geom, 2000.0, 0.8)
    a = np.exp(1j * np.linspace(0, 40, 3000)) * (1 + 0.3 * np.sin(np.linspace(0, 9, 3000)))
    u, _ = top_vector(covariance_analytic(s[:, None] * a[None, :]))
    assert abs(np.vdot(u, s / np.sqrt(7))) >= 0.999


def test_top_vector_normalisation():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((4, 200)) + 1j * rng.standard_normal((4, 200))
    u, lam = top_vector(covariance_analytic(X))
    k = np.argmax(np.abs(u))
    assert u[k].imag == 0 and u[k].real > 0
    assert np.linalg.norm(u) == pytest.approx(1.0)
    assert lam == pytest.approx(np.linalg.eigvalsh(covariance_analytic(X))[-1])
    with pytest.raises(DegenerateCovarianceError):
        top_vector(np.zeros((3, 3)))


@pytest.mark.parametrize("n", [1000, 1001])
def test_time_and_spectral_covariance_agree(n):
    x = np.random.default_rng(n).standard_normal((5, n))
    Ct = covariance_analytic(analytic_full(x))
    Cf = covariance_spectral(x)
    assert np.linalg.norm(Ct - Cf) / np.linalg.norm(Ct) <= 1e-12


def test_raw_covariance_is_ambiguous_analytic_is_not():
    geom = ArrayGeometry.circular(8, 0.045)
    src = gen_sinusoid(2000.0, 0.5)
    lead = propagation_lead(geom)
    theta = 0.4
    xa = propagate(src, geom, theta).samples[:, lead:]
    xb = propagate(src, geom, theta + np.pi).samples[:, lead:]
    Ra, Rb = xa @ xa.T / xa.shape[1], xb @ xb.T / xb.shape[1]
    assert np.linalg.norm(Ra - Rb) / np.linalg.norm(Ra) < 1e-3
    Ca, Cb = covariance_analytic(analytic_full(xa)), covariance_analytic(analytic_full(xb))
    assert np.linalg.norm(Ca - Cb) / np.linalg.norm(Ca) > 0.5


def test_real_covariance_block_structure():
    x = _bandlimited(np.random.default_rng(0), 7, 4096)
    C = covariance_real(real_stack(analytic_full(x).complex))
    Cii, Ciq, Cqi, Cqq = C[:7, :7], C[:7, 7:], C[7:, :7], C[7:, 7:]
    scale = np.abs(C).max()
    assert np.abs(Cii - Cqq).max() <= 1e-6 * scale
    assert np.abs(Cqi + Ciq).max() <= 1e-6 * scale


@given(st.integers(0, 2**31))
def test_real_singular_values_pair_with_complex(seed):
    x = _bandlimited(np.random.default_rng(seed), 7, 1024)
    xa = analytic_full(x).complex
    lc = np.sort(np.linalg.eigvalsh(covariance_analytic(xa)))[::-1]
    lr = np.sort(np.linalg.eigvalsh(covariance_real(real_stack(xa))))[::-1]
    np.testing.assert_allclose(lr[0::2], lr[1::2], rtol=1e-9)
    np.testing.assert_allclose(2 * lr[0::2], lc, rtol=1e-9)


def test_arbitrary_real_covariance_is_psd():
    X = np.random.default_rng(1).standard_normal((6, 300))
    C = covariance_real(X)
    np.testing.assert_allclose(C, C.T)
    assert np.linalg.eigvalsh(C).min() >= -1e-12
    assert np.abs(C[:3, :3] - C[3:, 3:]).max() > 1e-3
    with pytest.raises(ValueError):
        covariance_real(np.ones((3, 10)))


def test_vector_conversions():
    w = np.array([1 + 2j, -0.5j, 3.0])
    r = complex_to_real_vector(w)
    np.testing.assert_array_equal(real_to_complex_vector(r), w)
    np.testing.assert_allclose(real_to_complex_vector(quadrature_rotate(r)), 1j * w)
    x = np.random.default_rng(0).standard_normal((3, 5)) * (1 + 1j)
    np.testing.assert_allclose(r @ real_stack(x), np.real(w.conj() @ x))


def test_narrowband_bank_is_steering(geom):
    grid = DoaGrid.uniform(16)
    bank = design_bank_analytic(gen_sinusoid(2000.0, 0.2), geom, grid)
    for g, th in enumerate(grid.angles):
        s = steering_vector(geom, 2000.0, th) / np.sqrt(7)
        assert abs(np.vdot(bank.vectors[g], s)) >= 0.999


def test_phase_rotated_template_same_bank(geom):
    x = propagate(gen_sinusoid(1900.0, 0.2), geom, 1.1).samples[:, 200:]
    xa = analytic_full(x).complex
    u1, _ = top_vector(covariance_analytic(xa))
    u2, _ = top_vector(covariance_analytic(np.exp(0.77j) * xa))
    assert abs(np.vdot(u1, u2)) == pytest.approx(1.0, abs=1e-9)


def test_snn_bank_main_lobe_matches_analytic(geom):
    grid = DoaGrid.uniform(64)
    tmpl = gen_sinusoid(2000.0, 0.4)
    an = design_bank_analytic(tmpl, geom, grid, transform="stht", kernel=SthtKernel.from_duration(10))
    sn = design_bank_snn(tmpl, geom, grid, kernel=SthtKernel.from_duration(10))
    W = real_to_complex_vector(sn.vectors)
    overlap = np.abs(W.conj() @ an.vectors.T)  # (snn g, analytic h)
    best = np.argmax(overlap, axis=1)
    d = np.abs((best - np.arange(64) + 32) % 64 - 32)
    assert d.max() <= 2
    np.testing.assert_allclose(np.linalg.norm(sn.vectors, axis=1), 1.0, atol=1e-12)


def test_split_layout_down_weights_are_negated_up_weights(geom):
    grid = DoaGrid.uniform(8)
    bank = design_bank_snn(gen_sinusoid(2000.0, 0.4), geom, grid, mode="unipolar-split",
                           kernel=SthtKernel.from_duration(10))
    m2 = 2 * geom.n_mics
    up, down = bank.vectors[:, :m2], bank.vectors[:, m2:]
    cos = np.sum(up * -down, axis=1) / (np.linalg.norm(up, axis=1) * np.linalg.norm(down, axis=1))
    assert np.all(1 - cos <= 0.05)


def test_bank_io_and_geometry_check(tmp_path, geom):
    grid = DoaGrid.uniform(12)
    bank = design_bank_analytic(gen_sinusoid(2000.0, 0.2), geom, grid)
    bank.save(tmp_path / "b.bin")
    b2 = BeamformerBank.load(tmp_path / "b.bin", geom)
    np.testing.assert_array_equal(b2.vectors, bank.vectors)
    np.testing.assert_array_equal(b2.grid.angles, grid.angles)
    assert b2.meta == bank.meta and b2.kind == "complex"
    assert (tmp_path / "b.bin").read_bytes() == bank.to_bytes()
    with pytest.raises(GeometryMismatchError):
        BeamformerBank.load(tmp_path / "b.bin", ArrayGeometry.circular(7, 0.05))
    with pytest.raises(ValueError):
        BeamformerBank.from_bytes(b"XXXX")


def test_bank_validation():
    grid = DoaGrid.uniform(4)
    with pytest.raises(ValueError):
        BeamformerBank(grid, np.ones((4, 3)))
    with pytest.raises(ValueError):
        BeamformerBank(grid, np.eye(3))
    with pytest.raises(ValueError):
        BeamformerBank(grid, np.eye(4), kind="quaternion")


def test_design_rejects_small_grid(geom):
    with pytest.raises(ValueError):
        design_bank_analytic(gen_sinusoid(2000.0, 0.2), geom, DoaGrid.uniform(7))
    with pytest.raises(ValueError):
        design_bank_analytic(gen_sinusoid(2000.0, 0.001), geom, DoaGrid.uniform(12), transform="stht")


@pytest.mark.parametrize("g", [0, 2, 3])
def test_power_argmax_on_orthogonal_bank(g):
    bank = BeamformerBank(DoaGrid.uniform(4), np.eye(4, dtype=complex))
    a = np.exp(1j * np.linspace(0, 30, 500))
    x = np.zeros((4, 500), complex)
    x[g] = a
    assert beam_power(x, bank).index[0] == g


@given(st.floats(0, 2 * np.pi))
def test_power_invariant_to_global_phase(gamma):
    rng = np.random.default_rng(0)
    V = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
    bank = BeamformerBank(DoaGrid.uniform(6), V / np.linalg.norm(V, axis=1, keepdims=True))
    x = rng.standard_normal((3, 400)) + 1j * rng.standard_normal((3, 400))
    np.testing.assert_allclose(beam_power(np.exp(1j * gamma) * x, bank).power,
                               beam_power(x, bank).power, rtol=1e-12)


@given(st.floats(1e-3, 1e3))
def test_argmax_scale_invariance(scale):
    rng = np.random.default_rng(3)
    V = rng.standard_normal((9, 4)) + 1j * rng.standard_normal((9, 4))
    bank = BeamformerBank(DoaGrid.uniform(9), V / np.linalg.norm(V, axis=1, keepdims=True))
    x = rng.standard_normal((4, 400)) + 1j * rng.standard_normal((4, 400))
    assert np.array_equal(beam_power(scale * x, bank, 100).index, beam_power(x, bank, 100).index)


def test_narrowband_estimate_near_zero(geom, analytic_bank):
    x = propagate(gen_sinusoid(2000.0, 1.0), geom, 0.0, snr_db=20.0, seed=1).samples
    x = bandpass(x[:, propagation_lead(geom):], 1500.0, 2500.0)
    tr = beam_power(stht(x, SthtKernel.from_duration(10)), analytic_bank)
    assert abs(int(tr.index[0]) - analytic_bank.grid.nearest_index(0.0)) <= 2


def test_windows_and_times(geom, analytic_bank):
    x = propagate(gen_sinusoid(2000.0, 1.0), geom, 0.5).samples
    tr = beam_power(stht(x, SthtKernel.from_duration(10)), analytic_bank, window=9600)
    assert len(tr) == (48000 - 480) // 9600
    np.testing.assert_allclose(np.diff(tr.t_start), 0.2)
    assert tr.t_start[0] == pytest.approx(480 / FS)
    idx, pw = tr.top(5)
    assert idx.shape == (len(tr), 5)
    assert np.all(np.diff(pw, axis=1) <= 0)
    np.testing.assert_array_equal(idx[:, 0], tr.index)


def test_silent_input_spiking_counts_invalid(snn_bank):
    ras = np.zeros((14, 5000), dtype=np.int8)
    tr, sat = spiking_doa(ras, snn_bank, LifConfig.for_band(2000.0), quantized=True)
    assert tr.power.sum() == 0 and not tr.valid[0] and not sat
    tr, _ = spiking_doa(ras, snn_bank, LifConfig.for_band(2000.0), quantized=False)
    assert not tr.valid[0]


def test_spiking_doa_needs_real_bank(analytic_bank):
    with pytest.raises(ValueError):
        spiking_doa(np.zeros((14, 100)), analytic_bank, LifConfig.for_band(2000.0))


def test_front_end_shape(geom):
    x = propagate(gen_sinusoid(2000.0, 0.2), geom, 0.0).samples
    ras = snn_front_end(x, kernel=SthtKernel.from_duration(4))
    assert ras.n_channels == 14 and ras.n_samples == x.shape[1] - 192


def test_pattern_diagonal_is_one(analytic_bank, snn_bank):
    for bank in (analytic_bank, snn_bank):
        np.testing.assert_allclose(np.diag(beam_pattern(bank)), 1.0, atol=1e-9)


def test_real_pattern_equals_complex_for_true_iq(analytic_bank):
    real = BeamformerBank(analytic_bank.grid, complex_to_real_vector(analytic_bank.vectors), "real")
    np.testing.assert_allclose(beam_pattern(real), beam_pattern(analytic_bank), atol=1e-6)


def test_linear_array_pattern_mirror_symmetry():
    geom = ArrayGeometry.linear(5, 0.03)
    grid = DoaGrid.uniform(36)
    bank = design_bank_analytic(gen_sinusoid(2000.0, 0.2), geom, grid)
    P = beam_pattern(bank)
    # mirror about the x axis: theta -> -theta
    mirror = np.array([grid.nearest_index(-a) for a in grid.angles])
    np.testing.assert_allclose(P[np.ix_(mirror, mirror)], P, atol=1e-6)


def test_best_and_worst_case_rows_differ(geom, narrowband_bank_full):
    P = beam_pattern(narrowband_bank_full)
    grid = narrowband_bank_full.grid
    best = grid.nearest_index(geom.mic_angles[0])
    worst = grid.nearest_index(float(wrap_angle(geom.mic_angles[0] + np.pi / 7)))
    rb = np.roll(P[best], grid.size // 2 - best)
    rw = np.roll(P[worst], grid.size // 2 - worst)
    # with 7 mics at kR ~ 1.7 the response is nearly rotation invariant; the
    # on-mic and between-mic rows differ only through high-order Bessel terms
    diff = np.abs(rb - rw).max()
    assert 1e-8 < diff < 1e-3
    assert np.argmax(P[best]) == best and np.argmax(P[worst]) == worst
