import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from slowfast import examples as E
from slowfast.errors import DegenerateFrequency
from slowfast.persistence import (ReducedFamily, ReducedSystem, gap_set_scan, monodromy, stroboscopic_map,
                                  default_steps)
from slowfast._kernels import fallback

JMAT = np.array([[0.0, 1.0], [-1.0, 0.0]])


def _constant(eps, omega, freq=1.0):
    A = omega * np.eye(2)
    return ReducedSystem(eps, 1, 0.5, freq, lambda psi: np.broadcast_to(A, np.shape(psi) + (2, 2)))


@pytest.mark.parametrize("eps", [0.1, 0.05])
def test_constant_multipliers(eps):
    omega = 1.3
    s = _constant(eps, omega)
    r = monodromy(s)
    theta = s.period * omega / eps
    want = np.sort_complex(np.array([np.exp(1j * theta), np.exp(-1j * theta)]))
    assert np.abs(np.sort_complex(r.multipliers) - want).max() <= 1e-8
    assert np.abs(r.Psi_T - expm(JMAT * omega * s.period / eps)).max() <= 1e-8


def test_zero_linear_part_is_identity():
    s = ReducedSystem(0.1, 1, 0.5, 1.0, lambda psi: np.zeros(np.shape(psi) + (2, 2)))
    r = monodromy(s, nsteps=64)
    assert np.array_equal(r.Psi_T, np.eye(2)) and np.all(r.multipliers == 1) and r.gap_margin == 0


def test_rotor_rotation_angle_and_det():
    fam = E.build("rotor", eps=0.1, a=0.3)
    grid = np.linspace(0.2, 1.2, 100)
    res = fam.monodromy_grid(grid)
    for Ei, r in zip(grid, res):
        th = E.oracle("rotor", "rotation_angle", Ei, eps=0.1)[0]
        assert abs(r.det - 1) <= 1e-8
        want = np.sort_complex(np.array([np.exp(-1j * th), np.exp(1j * th)]))
        assert np.abs(np.sort_complex(r.multipliers) - want).max() <= 1e-8


def test_two_oscillators_union_of_pairs():
    om = (1.0, math.sqrt(2))
    fam = E.build("rotor", eps=0.1, omegas=om, a=0.2)
    r = fam.monodromy_grid([0.37])[0]
    th = E.oracle("rotor", "rotation_angle", 0.37, eps=0.1, omegas=om)
    want = np.sort_complex(np.exp(1j * np.r_[th, -th]))
    assert np.abs(np.sort_complex(r.multipliers) - want).max() <= 1e-8
    # block structure survives integration
    assert np.abs(r.Psi_T[np.ix_([0, 2], [1, 3])]).max() <= 1e-12


def test_step_halving():
    s = E.build("rotor", eps=0.1, a=0.4).at(0.41)
    n = default_steps(0.1)
    errs = []
    exact = np.sort_complex(np.exp(1j * np.array([-1, 1]) * s.period / 0.1))
    for k in (n // 8, n // 4, n // 2):
        errs.append(np.abs(np.sort_complex(monodromy(s, nsteps=k).multipliers) - exact).max())
    a, b = monodromy(s, nsteps=n), monodromy(s, nsteps=2 * n)
    assert np.abs(a.multipliers - b.multipliers).max() <= 1e-9
    assert 12 <= errs[0] / errs[1] <= 20


def test_kernel_matches_python_rk4():
    fam = E.build("rotor", eps=0.2, omegas=(1.0, 1.5), a=0.3)
    s = fam.at(0.8)
    Cc, Cs, fr = s.trig
    fast = monodromy(s, nsteps=512).Psi_T
    ref = fallback.rk4_linear_trig(Cc[None], Cs[None], [fr], 0.2, [s.period], 512)[0]
    s.trig = None
    slow = monodromy(s, nsteps=512).Psi_T
    assert np.abs(fast - ref).max() <= 1e-12 and np.abs(fast - slow).max() <= 1e-12


def test_stroboscopic_map_rotation():
    s = E.build("rotor", eps=0.1).at(0.3)
    th = s.period / 0.1
    z = stroboscopic_map(s, [0.1, 0.0])
    assert np.abs(z - [0.1 * math.cos(th), -0.1 * math.sin(th)]).max() <= 1e-9
    assert np.all(stroboscopic_map(s, [0.0, 0.0]) == 0)


def test_nonlinear_map_is_symplectic():
    def Q(psi, z):
        x, y = z[0], z[1]
        return 0.5 * (1 + 0.2 * np.cos(psi[..., None])) * (x * x + y * y) + 0.1 * x * x * x
    s = ReducedSystem(0.5, 1, 0.5, 1.0, lambda psi: None, Q=Q)
    z0 = np.array([0.05, -0.03])
    h = 1e-6
    cols = [(stroboscopic_map(s, z0 + h * e, 2000) - stroboscopic_map(s, z0 - h * e, 2000)) / (2 * h)
            for e in np.eye(2)]
    D = np.stack(cols, axis=1)
    assert np.abs(D.T @ JMAT @ D - JMAT).max() <= 1e-7


def test_degenerate_frequency():
    fam = E.build("rotor", eps=0.1)
    with pytest.raises(DegenerateFrequency):
        monodromy(fam.at(0.0))
    scan = gap_set_scan(fam, [0.0, 0.1, 0.2], 1e-4)
    assert scan.degenerate == [0.0] and scan.admissible[0] is False


def test_gap_scan_constant_multipliers_admissible():
    fam = ReducedFamily(0.1, 1, lambda Ei: 1.0, lambda Ei, psi: 1.05 * np.eye(2) * np.ones(np.shape(psi) + (1, 1)))
    scan = gap_set_scan(fam, np.linspace(0, 1, 5), 1e-4, nsteps=256)
    assert all(scan.admissible) and scan.excluded_measure == 0


def test_crossing_width_scales_like_sqrt_mu():
    fam = E.build("rotor", eps=0.1)
    grid = np.linspace(0.49, 0.51, 2001)  # one resonance at E = 0.5
    res = fam.monodromy_grid(grid, nsteps=4096)
    widths = []
    for mu in (1e-2, 2.5e-3):
        scan = gap_set_scan(fam, grid, mu, results=res)
        assert len(scan.excluded_intervals) == 1
        a, b = scan.excluded_intervals[0]
        widths.append(b - a)
        # theta(E) = 2 pi / (eps sqrt(2E)); |theta'| at E = 0.5 is 2 pi / eps
        assert b - a == pytest.approx(2 * math.sqrt(mu) / (2 * math.pi / 0.1), rel=0.02)
    assert widths[0] / widths[1] == pytest.approx(2, rel=0.02)


@settings(max_examples=10, deadline=None)
@given(st.floats(1e-5, 1e-1))
def test_excluded_measure_monotone_in_mu(mu):
    fam = E.build("rotor", eps=0.1, a=0.2)
    grid = np.linspace(0.2, 1.0, 100)
    res = fam.monodromy_grid(grid, nsteps=2048)
    a = gap_set_scan(fam, grid, mu, results=res).excluded_measure
    b = gap_set_scan(fam, grid, mu / 2, results=res).excluded_measure
    assert b <= a


def test_invalid_scan_inputs():
    fam = E.build("rotor")
    with pytest.raises(ValueError):
        gap_set_scan(fam, [0.3, 0.2], 1e-3)
    with pytest.raises(ValueError):
        gap_set_scan(fam, [0.2, 0.3], 0.0)
