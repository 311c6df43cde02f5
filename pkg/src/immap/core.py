"""Complex-vector primitives and seeded random generation.

All solver arrays are ``complex128`` numpy arrays.  Random draws go through an
explicit :class:`numpy.random.Generator` backed by the counter-based Philox
bit generator, so streams are identical across platforms for a given seed.
"""

import numpy as np

__all__ = [
    "DimensionError",
    "NumericalError",
    "ModelError",
    "make_rng",
    "child_seed",
    "hermitian_inner",
    "real_inner",
    "norm",
    "draw_complex_gaussian",
]


class DimensionError(ValueError):
    """Array shapes are inconsistent with the operator or model."""


class ModelError(ValueError):
    """A statistical model is ill-posed (e.g. non-positive noise variance)."""


class NumericalError(ArithmeticError):
    """Non-finite values appeared during an iterative computation."""


def make_rng(seed):
    """Return a Philox-backed generator for ``seed`` (int or SeedSequence)."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(seed))


def child_seed(seed, *path):
    """Derive a reproducible 64-bit seed from ``seed`` and integer path keys.

    Derivation depends only on the values, never on call order, so parallel
    workers can compute their own seeds.
    """
    ss = np.random.SeedSequence([int(seed), *[int(p) for p in path]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def hermitian_inner(a, b):
    """Return ``sum(conj(a) * b)`` over all entries."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.size != b.size:
        raise DimensionError(f"length mismatch: {a.size} vs {b.size}")
    return np.vdot(a.ravel(), b.ravel())


def real_inner(a, b):
    """Real part of the Hermitian inner product, i.e. the dot product in R^2N."""
    return float(np.real(hermitian_inner(a, b)))


def norm(a):
    return float(np.linalg.norm(np.asarray(a).ravel()))


def draw_complex_gaussian(shape, variance, rng):
    """Draw i.i.d. circular complex Gaussian entries with ``E|v|^2 = variance``.

    Real and imaginary parts are independent with variance ``variance / 2``.
    """
    if variance < 0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    if isinstance(shape, (int, np.integer)):
        shape = (int(shape),)
    scale = np.sqrt(variance / 2.0)
    parts = rng.standard_normal((2, *shape))
    return scale * parts[0] + 1j * (scale * parts[1])
