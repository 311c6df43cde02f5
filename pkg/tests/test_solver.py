import io
import math

import numpy as np
import pytest

from immap.cg import cg_solve
from immap.core import DimensionError, NumericalError, draw_complex_gaussian, make_rng
from immap.denoisers import FunctionDenoiser, GaussianDenoiser, GMMDenoiser, IdentityDenoiser, WaveletDenoiser
from immap.metrics import nrmse
from immap.operators import EncodingOperator, NoiseModel, SamplingMask, ifft2c, sigma_t_operator
from immap.simulation import cartesian_mask, shepp_logan, simulate_acquisition, synth_sensitivities, whiten
from immap.solver import (
    ImmapConfig,
    ImmapTrace,
    estimate_sigma,
    immap_reconstruct,
    injected_noise_scale,
    likelihood_gradient,
    prior_sample,
    step_size,
)

from conftest import crandn


def small_problem(n=16, coils=2, accel=2, sigma_y=0.1, seed=0):
    maps = synth_sensitivities(n, coils, seed)
    mask = cartesian_mask(n, accel)
    x = draw_complex_gaussian((n, n), 1.0, make_rng(seed + 100))
    y = simulate_acquisition(x, maps, mask, sigma_y, seed + 200)
    enc = EncodingOperator(maps, mask)
    return enc, y, NoiseModel.white(sigma_y, enc.kspace_shape)


# ------------------------------------------------------------------ schedules


def test_default_config_values():
    cfg = ImmapConfig()
    assert (cfg.beta, cfg.sigma_min, cfg.h0) == (0.05, 0.01, 0.01)
    assert (cfg.cg_tol, cfg.cg_max_iter, cfg.max_outer_iter) == (1e-6, 100, 1000)


@pytest.mark.parametrize(
    "kw", [dict(beta=0), dict(beta=1.5), dict(sigma_min=0), dict(h0=0), dict(h0=2), dict(cg_tol=0), dict(max_outer_iter=0)]
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ImmapConfig(**kw)


def test_step_size_values():
    assert step_size(1, 0.01) == 0.01
    assert math.isclose(step_size(2, 0.01), 0.02 / 1.01)
    assert all(step_size(t, 1.0) == 1.0 for t in range(1, 20))
    h = [step_size(t, 0.01) for t in range(1, 5000)]
    assert np.all(np.diff(h) >= 0) and 0.97 < h[-1] < 1
    with pytest.raises(ValueError):
        step_size(0, 0.01)


def test_injected_noise_scale_values():
    assert injected_noise_scale(3.0, 0.4, 1.0) == 0.0
    assert math.isclose(injected_noise_scale(1.0, 1.0, 0.05) ** 2, 0.9025)
    assert math.isclose(injected_noise_scale(2.0, 0.01, 0.05) ** 2, 4 * 0.01890025, rel_tol=1e-12)
    for bad in [(1.0, 0.0, 0.5), (1.0, 0.5, 0.0), (-1.0, 0.5, 0.5), (1.0, 1.5, 0.5)]:
        with pytest.raises(ValueError):
            injected_noise_scale(*bad)


def test_estimate_sigma_simple_cases(rng):
    z = crandn(rng, 8, 8)
    assert estimate_sigma(z, z) == 0
    phases = np.exp(2j * np.pi * rng.random((8, 8)))
    assert math.isclose(estimate_sigma(z + 0.3 * phases, z), 0.3)
    with pytest.raises(DimensionError):
        estimate_sigma(z, z[:4])


def test_estimate_sigma_matches_linear_denoiser_prediction():
    c, sigma, n = 0.5, 0.4, 64
    rng = make_rng(3)
    x = draw_complex_gaussian((n, n), c, rng)
    z = x + draw_complex_gaussian((n, n), sigma**2, rng)
    zhat = GaussianDenoiser(0.0, c).denoise(z, sigma)
    # residual is sigma^2/(c+sigma^2) (z - mu), and z has variance c + sigma^2
    predicted = sigma**2 / math.sqrt(c + sigma**2)
    assert abs(estimate_sigma(zhat, z) / predicted - 1) < 0.1


# ------------------------------------------------------------------ likelihood gradient


def test_likelihood_gradient_exact_for_unit_gaussian_prior():
    enc, y, noise = small_problem()
    A = enc.dense()
    sigma = 0.6
    z = crandn(np.random.default_rng(5), *enc.image_shape)
    k = 1.0 / (1.0 + sigma**2)
    cov = np.diag(noise.variance.ravel()) + sigma**2 / (1 + sigma**2) * A @ A.conj().T
    # y | z ~ CN(A k z, cov) exactly; gradient w.r.t. conj(z) of its log-density
    exact = -k * A.conj().T @ np.linalg.solve(cov, A @ (k * z.ravel()) - y.ravel())
    u, rep = likelihood_gradient(z, sigma, y, enc, noise, GaussianDenoiser(0.0, 1.0), ImmapConfig(cg_tol=1e-12))
    assert rep.converged
    assert np.linalg.norm(u.ravel() - exact) <= 1e-8 * np.linalg.norm(exact)


def test_likelihood_gradient_invariant_under_whitening():
    maps = synth_sensitivities(16, 3, 1)
    mask = cartesian_mask(16, 2)
    enc = EncodingOperator(maps, mask)
    rng = make_rng(2)
    noise = NoiseModel(np.exp(rng.standard_normal(enc.kspace_shape)) * 0.01)
    y = crandn(np.random.default_rng(0), *enc.kspace_shape)
    z = crandn(np.random.default_rng(1), 16, 16)
    cfg = ImmapConfig(cg_tol=1e-13, cg_max_iter=500)
    d = WaveletDenoiser(levels=2)
    u1, _ = likelihood_gradient(z, 0.3, y, enc, noise, d, cfg)
    yw, unit = whiten(y, noise)
    u2, _ = likelihood_gradient(z, 0.3, yw, enc.whitened(noise), unit, d, cfg)
    assert np.linalg.norm(u1 - u2) <= 1e-8 * np.linalg.norm(u1)


@pytest.mark.parametrize("alpha", [1e-3, 20.0])
def test_sigma_t_subproblem_scale_invariance(alpha):
    enc, y, noise = small_problem()
    r = enc.forward(crandn(np.random.default_rng(0), 16, 16)) - y
    op = sigma_t_operator(noise, enc, 0.4)
    v1, _ = cg_solve(op, r, tol=1e-12, max_iter=500)
    v2, _ = cg_solve(lambda v: alpha * op(v), alpha * r, tol=1e-12, max_iter=500)
    assert np.linalg.norm(v1 - v2) <= 1e-8 * np.linalg.norm(v1)


# ------------------------------------------------------------------ reconstruction


def test_near_noiseless_full_sampling_recovers_inverse_dft():
    x = shepp_logan(32) + 0j
    enc = EncodingOperator(np.ones((1, 32, 32)), SamplingMask.full((32, 32)))
    y = enc.forward(x) + draw_complex_gaussian(enc.kspace_shape, 1e-12, make_rng(1))
    ref = ifft2c(y.reshape(32, 32))
    noise = NoiseModel.white(1e-6, enc.kspace_shape)
    errs = []
    for sigma_min in (0.01, 0.003):
        z, trace = immap_reconstruct(y, enc, None, noise, WaveletDenoiser(), ImmapConfig(sigma_min=sigma_min))
        assert trace.converged
        errs.append(nrmse(ref, z))
    # the returned iterate sits about sigma_min from the denoised image, so the
    # error floor shrinks with the stopping level
    assert errs[1] < 0.02
    assert errs[1] < errs[0]


def test_same_seed_bit_identical():
    enc, y, noise = small_problem()
    cfg = ImmapConfig(seed=11)
    z1, t1 = immap_reconstruct(y, enc, None, noise, WaveletDenoiser(levels=2), cfg)
    z2, t2 = immap_reconstruct(y, enc, None, noise, WaveletDenoiser(levels=2), cfg)
    assert z1.tobytes() == z2.tobytes()
    assert t1.records == t2.records
    z3, _ = immap_reconstruct(y, enc, None, noise, WaveletDenoiser(levels=2), ImmapConfig(seed=12))
    assert not np.array_equal(z1, z3)


def test_beta_one_is_deterministic_after_start():
    enc, y, noise = small_problem()
    seen = []
    _, trace = immap_reconstruct(
        y, enc, None, noise, WaveletDenoiser(levels=2), ImmapConfig(beta=1.0), callback=lambda r, z, zh: seen.append(r)
    )
    assert all(r.gamma_t == 0 for r in trace.records) and len(seen) == len(trace)


def test_termination_and_trace_contents():
    enc, y, noise = small_problem()
    z, trace = immap_reconstruct(y, enc, None, noise, WaveletDenoiser(levels=2), ImmapConfig())
    assert trace.converged and z.shape == (16, 16)
    s = trace.sigmas
    assert s[-1] <= 0.01 and s[-1] < s[0]
    r = trace.records[3]
    assert r.t == 4 and r.cg_iters > 0 and r.cg_converged and r.data_residual > 0
    assert math.isclose(r.h_t, step_size(4, 0.01))
    assert math.isclose(r.gamma_t, injected_noise_scale(r.sigma_t, r.h_t, 0.05))


def test_trace_csv():
    enc, y, noise = small_problem()
    _, trace = immap_reconstruct(y, enc, None, noise, IdentityDenoiser(), ImmapConfig(max_outer_iter=5))
    trace = ImmapTrace(trace.records[:3], False) if len(trace) >= 3 else trace
    buf = io.StringIO()
    trace.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,sigma_t,h_t,gamma_t,cg_iters,data_residual"
    assert len(lines) == len(trace) + 1
    assert float(lines[1].split(",")[1]) == trace.records[0].sigma_t


def test_max_outer_iter_returns_lowest_sigma_iterate():
    enc, y, noise = small_problem()
    iterates = []
    with pytest.warns(RuntimeWarning, match="max_outer_iter"):
        z, trace = immap_reconstruct(
            y, enc, None, noise, WaveletDenoiser(levels=2), ImmapConfig(max_outer_iter=5),
            callback=lambda r, znext, zh: iterates.append(znext),
        )  # fmt: skip
    assert not trace.converged and len(trace) == 5
    # sigma_t at record t measures the iterate entering iteration t
    starts = [None] + iterates[:-1]
    best = int(np.argmin(trace.sigmas))
    if best > 0:
        assert np.array_equal(z, starts[best])


@pytest.mark.filterwarnings("ignore:stopped at max_outer_iter")
def test_cg_non_convergence_warns_and_continues():
    enc, y, noise = small_problem()
    with pytest.warns(RuntimeWarning, match="CG did not converge"):
        _, trace = immap_reconstruct(
            y, enc, None, noise, WaveletDenoiser(levels=2), ImmapConfig(cg_tol=1e-15, cg_max_iter=1, max_outer_iter=3)
        )
    assert not trace.records[0].cg_converged


def test_non_finite_iterate_raises():
    enc, y, noise = small_problem()
    blowup = FunctionDenoiser(lambda z, s: z * 1e308 * 10, lambda z, s, v: v)
    with pytest.raises(NumericalError, match="iteration 1"):
        with np.errstate(over="ignore", invalid="ignore"):
            immap_reconstruct(y, enc, None, noise, blowup)


def test_input_validation():
    enc, y, noise = small_problem()
    with pytest.raises(DimensionError):
        immap_reconstruct(y[:, :-1], enc, None, noise, IdentityDenoiser())
    with pytest.raises(TypeError):
        immap_reconstruct(y, enc, None, 0.1, IdentityDenoiser())
    with pytest.raises(ValueError):
        immap_reconstruct(y, enc, None, noise, IdentityDenoiser(), likelihood_weight=0.5)


def test_accepts_raw_maps_and_mask():
    enc, y, noise = small_problem()
    cfg = ImmapConfig(max_outer_iter=3)
    with pytest.warns(RuntimeWarning):
        a, _ = immap_reconstruct(y, enc.maps, enc.mask, noise, WaveletDenoiser(levels=2), cfg)
    with pytest.warns(RuntimeWarning):
        b, _ = immap_reconstruct(y, enc, None, noise, WaveletDenoiser(levels=2), cfg)
    assert np.array_equal(a, b)


# ------------------------------------------------------------------ prior sampling


def test_likelihood_off_reproduces_prior_sampler_step_for_step():
    enc, y, noise = small_problem()
    d = WaveletDenoiser(levels=2)
    cfg = ImmapConfig(seed=4)
    a_steps, b_steps = [], []
    za, ta = immap_reconstruct(y, enc, None, noise, d, cfg, likelihood_weight=0, callback=lambda r, z, zh: a_steps.append(z))
    zb, tb = prior_sample(d, cfg, enc.image_shape, callback=lambda r, z, zh: b_steps.append(z))
    assert len(a_steps) == len(b_steps) > 10
    assert all(np.array_equal(p, q) for p, q in zip(a_steps, b_steps))
    assert np.array_equal(za, zb)
    rows = lambda tr: np.array([[getattr(r, k) for k in ImmapTrace.CSV_FIELDS] for r in tr.records], dtype=float)
    assert np.array_equal(rows(ta), rows(tb), equal_nan=True)


def test_prior_sample_gaussian_mean():
    mu, c = 1.0 - 0.5j, 0.01
    samples = np.array([prior_sample(GaussianDenoiser(mu, c), ImmapConfig(seed=s), (8, 8))[0] for s in range(200)])
    for part in (np.real, np.imag):
        vals = part(samples)
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - part(mu)) < 3 * se


def test_prior_sample_gmm_covers_both_modes():
    d = GMMDenoiser(weights=[0.5, 0.5], means=[-2.0, 2.0], variances=[0.1, 0.1])
    ends = np.array([prior_sample(d, ImmapConfig(seed=s), (1, 2))[0].ravel() for s in range(200)])
    near_pos = np.sum(np.abs(ends - 2).max(axis=1) < 1)
    near_neg = np.sum(np.abs(ends + 2).max(axis=1) < 1)
    assert near_pos + near_neg >= 190
    # equal responsibilities: binomial(200, 1/2) within 3 standard deviations
    assert abs(near_pos - 100) <= 3 * math.sqrt(50)


def test_prior_sample_beta_one_reproducible():
    d = WaveletDenoiser(levels=2)
    a, _ = prior_sample(d, ImmapConfig(beta=1.0, seed=9), (16, 16))
    b, _ = prior_sample(d, ImmapConfig(beta=1.0, seed=9), (16, 16))
    assert a.tobytes() == b.tobytes()
