import math

import numpy as np
import torch

import hypothesis.strategies as st
from hypothesis import assume, given
from pytest import approx, mark, raises

from apjko.errors import DomainError
from apjko.kernels import (
    KernelParams,
    l1_to_maxwellian,
    landau_A,
    landau_A_div,
    log_maxwellian,
)

separations = st.integers(2, 3).flatmap(
    lambda d: st.lists(st.floats(-4, 4), min_size=d, max_size=d)
)


@given(separations)
def test_landau_A_symmetric_psd(z):
    z = torch.tensor(z, dtype=torch.float64)
    assume(float(z.norm()) > 1e-3)
    a = landau_A(z, KernelParams(d_v=len(z)))
    assert torch.allclose(a, a.T)
    eig = torch.linalg.eigvalsh(a)
    assert float(eig.min()) >= -1e-10 * float(eig.max().abs())


@given(separations)
def test_landau_A_annihilates_separation(z):
    z = torch.tensor(z, dtype=torch.float64)
    assume(float(z.norm()) > 1e-3)
    a = landau_A(z, KernelParams(d_v=len(z)))
    assert float((a @ z).norm()) <= 1e-10 * (1 + float(a.norm()) * float(z.norm()))


def test_landau_A_coulomb_scale():
    z = torch.tensor([2.0, 0.0], dtype=torch.float64)
    a = landau_A(z, KernelParams())
    # |z|^-1 on the orthogonal direction
    assert float(a[1, 1]) == approx(0.5)
    assert float(a[0, 0]) == approx(0.0, abs=1e-15)


def test_landau_A_zero_inside_cutoff():
    params = KernelParams(r_cut=1e-3)
    z = torch.tensor([[1e-4, 0.0], [0.0, 0.0]], dtype=torch.float64)
    assert torch.all(landau_A(z, params) == 0)
    assert torch.all(landau_A_div(z, params) == 0)


@mark.parametrize("d", [2, 3])
@mark.parametrize("gamma", [-3.0, 0.0, 1.0])
def test_landau_A_div_matches_autograd(d, gamma):
    params = KernelParams(gamma=gamma, d_v=d)
    gen = torch.Generator().manual_seed(d)
    z = torch.randn(d, generator=gen, dtype=torch.float64) + 0.5

    jac = torch.autograd.functional.jacobian(lambda x: landau_A(x, params), z)
    # jac[a, b, c] = d A_ab / d z_c; row divergence sums over b == c
    div = torch.einsum("abb->a", jac)
    assert torch.allclose(landau_A_div(z, params), div, rtol=1e-10, atol=1e-12)


def test_kernel_params_checks():
    with raises(ValueError):
        KernelParams(d_v=4)
    with raises(ValueError):
        KernelParams(r_cut=0.0)


def test_log_maxwellian_peak():
    v = torch.zeros(1, 3, dtype=torch.float64)
    lm = log_maxwellian(2.0, torch.zeros(3), 0.5, v)
    assert float(lm[0]) == approx(math.log(2.0) - 1.5 * math.log(math.pi))


def test_log_maxwellian_rejects_bad_moments():
    v = torch.zeros(1, 2, dtype=torch.float64)
    with raises(DomainError):
        log_maxwellian(1.0, torch.zeros(2), 0.0, v)
    with raises(DomainError):
        log_maxwellian(-1.0, torch.zeros(2), 1.0, v)


def test_l1_zero_at_own_maxwellian():
    gen = torch.Generator().manual_seed(7)
    v = torch.randn(500, 2, generator=gen, dtype=torch.float64) * 1.3 + 0.2
    w = 1 / 500
    u = v.mean(0)
    T = float(((v - u) ** 2).sum(-1).mean()) / 2
    logf = log_maxwellian(w * 500, u, T, v)
    assert l1_to_maxwellian(v, logf, w) == approx(0.0, abs=1e-14)


def test_l1_positive_for_mismatch():
    gen = torch.Generator().manual_seed(8)
    v = torch.randn(500, 2, generator=gen, dtype=torch.float64)
    logf = torch.full((500,), np.log(0.01), dtype=torch.float64)
    assert l1_to_maxwellian(v, logf, 1 / 500) > 0.01
