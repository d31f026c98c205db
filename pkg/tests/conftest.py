import os
from pathlib import Path

import numpy as np
import pytest

MNIST_DIR = Path(os.environ.get("L0SPARSE_MNIST_DIR", "/root/data/mnist"))


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rel=1e-5, abs_=1e-8):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    err = np.abs(analytic - numeric)
    ok = (err <= abs_) | (err <= rel * np.maximum(np.abs(analytic), np.abs(numeric)))
    assert ok.all(), f"max abs err {err.max():.3e}\nanalytic={analytic}\nnumeric={numeric}"


@pytest.fixture(scope="session")
def mnist_dir():
    needed = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
    found = {}
    for name in needed:
        for cand in (MNIST_DIR / name, MNIST_DIR / (name + ".gz")):
            if cand.exists():
                found[name] = cand
                break
        else:
            pytest.skip(f"MNIST file {name} not found under {MNIST_DIR}")
    return found


def written_out_pdf(params, x):
    """Stretched concrete density from the alpha-power form, independent of the library's sigmoid form."""
    a, b = np.exp(params.log_alpha), params.beta
    s = (x - params.gamma) / (params.zeta - params.gamma)
    q = b * a * s ** (-b - 1) * (1 - s) ** (-b - 1) / (a * s ** (-b) + (1 - s) ** (-b)) ** 2
    return q / (params.zeta - params.gamma)


def quadrature_kl(q, p):
    """Full KL(q(z) || p(z)) of two hard concrete gates: both atoms plus a quadrature over (0, 1)."""
    from scipy import integrate
    from scipy.special import expit, logit

    def atoms(par):
        w = par.zeta - par.gamma
        zero = expit(par.beta * logit(-par.gamma / w) - par.log_alpha)
        one = 1.0 - expit(par.beta * logit((1 - par.gamma) / w) - par.log_alpha)
        return zero, one

    (q0, q1), (p0, p1) = atoms(q), atoms(p)
    discrete = q0 * np.log(q0 / p0) + q1 * np.log(q1 / p1)
    cont, _ = integrate.quad(
        lambda x: written_out_pdf(q, x) * np.log(written_out_pdf(q, x) / written_out_pdf(p, x)),
        0.0, 1.0, limit=400, epsabs=1e-12, epsrel=1e-10,
    )
    return float(discrete), float(cont)
