import math

import numpy as np
import pytest

from nonautolin import (
    CouplingSpec,
    DriverSpec,
    OperatorSeq,
    SpaceSpec,
    SystemSpec,
    WeightSeq,
    system_by_name,
)

LN2 = math.log(2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def ex1():
    return system_by_name("ex1", lam=LN2, gamma_scale=0.9)


@pytest.fixture
def ex1_mild():
    return system_by_name("ex1", lam=LN2, gamma_scale=0.5)


@pytest.fixture
def ex2():
    return system_by_name("ex2", theta_ratio=2.0, rotation_angle=0.4, gamma_scale=0.9)


@pytest.fixture
def end_cfg():
    return system_by_name("end_cfg", gamma_scale=0.9)


@pytest.fixture
def emo():
    return system_by_name("emo", lam=1.0, c=0.01)


def random_invertible_system(rng, dim=2, count=12, norm_kind="max"):
    """A system over a periodic table of random well-conditioned operators,
    with zero coupling by default.  The table makes brute-force oracles easy."""
    mats = []
    for _ in range(count):
        while True:
            m = rng.uniform(-1.0, 1.0, (dim, dim)) + 2.0 * np.eye(dim)
            if abs(np.linalg.det(m)) > 0.3:
                mats.append(m)
                break

    def a_mat(n):
        return mats[n % count]

    return SystemSpec(
        space=SpaceSpec(dim_x=dim, dim_y=0, norm_kind=norm_kind),
        a=OperatorSeq(a_mat),
        p=WeightSeq.constant(np.eye(dim)),
        f=CouplingSpec.zero(dim, 0),
        g=DriverSpec.trivial(),
    ), mats


def nonlinear_driver_system(dim_half=1):
    """A = P = Id with a genuinely nonlinear diffeomorphism driver
    g(y) = y + 0.3 tanh(y) (inverse by Newton, Dg varies with y) and a
    y-dependent coupling.  Carries no tail envelopes, so every series
    window must come from ratio extrapolation."""
    dim_x, dim_y = 2 * dim_half, 2
    a = 0.3

    def g(n, y):
        y = np.asarray(y, dtype=float)
        return y + a * np.tanh(y)

    def g_inv(n, z):
        z = np.asarray(z, dtype=float)
        y = z.copy()
        for _ in range(80):
            t = np.tanh(y)
            step = (y + a * t - z) / (1.0 + a * (1.0 - t * t))
            y = y - step
            if np.max(np.abs(step)) < 1e-15:
                break
        return y

    def gamma(k):
        return 0.1 * 0.25 ** abs(k)

    def rho(k):
        return 0.05 * 0.25 ** abs(k)

    idx = np.array([i % dim_y for i in range(dim_x)])

    def f(n, x, y):
        out = gamma(n) * np.tanh(np.asarray(x, dtype=float))
        return out + rho(n) * np.tanh(np.asarray(y, dtype=float)[idx])

    def jac_y(n, x, y):
        out = np.zeros((dim_x, dim_y))
        d = 1.0 - np.tanh(np.asarray(y, dtype=float)) ** 2
        for i in range(dim_x):
            out[i, idx[i]] = rho(n) * d[idx[i]]
        return out

    eye = np.eye(dim_x)
    return SystemSpec(
        space=SpaceSpec(dim_x=dim_x, dim_y=dim_y, norm_kind="max"),
        a=OperatorSeq(lambda n: eye, lambda n: eye,
                      norm_bound=lambda n: 1.0, inv_norm_bound=lambda n: 1.0),
        p=WeightSeq.constant(eye),
        f=CouplingSpec(
            eval=f,
            jac_x=lambda n, x, y: gamma(n) * np.diag(1 - np.tanh(np.asarray(x)) ** 2),
            jac_y=jac_y,
            mu=lambda n: gamma(n) + rho(n),
            gamma=gamma,
            rho=rho,
        ),
        g=DriverSpec(
            eval=g,
            eval_inv=g_inv,
            jac=lambda n, y: np.diag(1.0 + a * (1.0 - np.tanh(np.asarray(y)) ** 2)),
            tau=lambda n: 1.0 + a,
            sigma=lambda n: 1.0,
        ),
    )


def with_coupling(sys, gamma, kind="max"):
    """Replace the zero coupling by gamma * tanh (per-index constant gamma)."""
    dim = sys.space.dim_x
    scale = 1.0 if kind == "max" else 1.0 / math.sqrt(dim)

    gamma_fn = gamma if callable(gamma) else (lambda n: gamma)
    return SystemSpec(
        space=sys.space,
        a=sys.a,
        p=sys.p,
        f=CouplingSpec(
            eval=lambda n, x, y: gamma_fn(n) * scale * np.tanh(np.asarray(x, dtype=float)),
            jac_x=lambda n, x, y: gamma_fn(n)
            * scale
            * np.diag(1.0 - np.tanh(np.asarray(x, dtype=float)) ** 2),
            jac_y=lambda n, x, y: np.zeros((dim, sys.space.dim_y)),
            mu=gamma_fn,
            gamma=gamma_fn,
            rho=lambda n: 0.0,
        ),
        g=sys.g,
        envelopes=None,
    )
