import warnings

import numpy as np
import pytest
import scipy.stats
from hypothesis import given
from hypothesis import strategies as st

from pwainv.cli import load_model
from pwainv.errors import (
    DecouplingFailed,
    EigenvalueOnUnitCircle,
    NoPredecessor,
    SwitchingClassMismatch,
)
from pwainv.inversion import InversePwaSystem, invert_mu1
from pwainv.io import read_series_csv
from pwainv.lifted import build_lifted, finite_difference_jacobian, jacobian
from pwainv.pwa import HyperplaneArrangement, PwaSystem
from pwainv.stable_inversion import (
    PaddingWarning,
    SwitchingClass,
    decouple,
    lifted_stable_inverse,
    modal_split,
    settling_samples,
    stable_invert_stable_switching,
    stable_invert_unstable_switching,
)

from conftest import MODELS


def padded_bump(n=200, pad=60):
    r = read_series_csv(MODELS / "bump_reference.csv")
    return np.concatenate([np.zeros(pad), r[:n], np.zeros(pad)])


def _forward_check(sys, u, x0, r, mu=1):
    y = sys.simulate(x0, np.concatenate([u, np.zeros(mu)])).y
    return np.max(np.abs(y[mu:mu + len(r)] - r))


def test_modal_split_diagonal():
    s = modal_split(np.diag([0.5, 2.0]))
    assert s.n_s == 1
    M = s.V @ np.diag([0.5, 2.0]) @ s.V_inv
    np.testing.assert_allclose(M, np.diag([0.5, 2.0]), atol=1e-14)


def test_modal_split_rejects_unit_circle():
    with pytest.raises(EigenvalueOnUnitCircle):
        modal_split(np.diag([0.5, 1.0 + 1e-8]))
    modal_split(np.diag([0.5, 1.0 + 1e-3]))  # outside the default band
    with pytest.raises(EigenvalueOnUnitCircle):
        modal_split(np.diag([0.5, 1.0 + 1e-3]), eps_unit=1e-2)


@given(seed=st.integers(0, 2**32 - 1))
def test_modal_split_recovers_conjugated_blocks(seed):
    rng = np.random.default_rng(seed)
    lam = np.concatenate([rng.uniform(-0.9, 0.9, 2), rng.choice([-1, 1], 2) * rng.uniform(1.2, 3, 2)])
    Q = scipy.stats.ortho_group.rvs(4, random_state=rng)
    A = Q @ np.diag(lam) @ Q.T
    s = modal_split(A)
    assert s.n_s == 2
    M = s.V @ A @ s.V_inv
    assert np.max(np.abs(M[:2, 2:])) < 1e-10 and np.max(np.abs(M[2:, :2])) < 1e-10
    np.testing.assert_allclose(np.sort(np.linalg.eigvals(M[:2, :2]).real), np.sort(lam[:2]), atol=1e-10)
    np.testing.assert_allclose(np.sort(np.linalg.eigvals(M[2:, 2:]).real), np.sort(lam[2:]), atol=1e-10)


def test_printhead_inverse_decouples(printhead):
    dec = decouple(printhead.inverse(), eps_unit=1e-6)
    assert dec.switching_class is SwitchingClass.STABLE
    assert max(dec.offdiag_residuals.values()) < 1e-9
    assert dec.n_u_modes == 2  # the zeros at 33.1 and 2.21
    with pytest.raises(EigenvalueOnUnitCircle):
        decouple(printhead.inverse(), eps_unit=40.0)


def test_decoupling_fails_without_shared_subspaces():
    A0 = np.diag([0.5, 2.0])
    A1 = np.array([[0.5, 1.0], [0.3, 2.0]])
    sys = PwaSystem([{"A": A0, "B": [0.0, 0.0], "C": [1.0, 0.0]},
                     {"A": A1, "B": [0.0, 0.0], "C": [1.0, 0.0]}],
                    HyperplaneArrangement([[1.0, 0.0]], [0.0]), [["0"], ["1"]])
    with pytest.raises(DecouplingFailed):
        decouple(InversePwaSystem(sys, preview=1))


def test_lti_matches_explicit_sums(rng):
    """Bounded LTI solution against the convolution with the split kernel."""
    sys = load_model(MODELS / "mu1_stable_switching.json")
    one = PwaSystem([{k: v for k, v in zip("ABFCDG", sys.matrices(0))}])
    dec = decouple(invert_mu1(one))
    r = rng.standard_normal(80)
    sol = stable_invert_stable_switching(dec, r, warn_padding=False)
    b = dec.blocks(0)
    L = len(r)
    xs = np.array([sum((np.linalg.matrix_power(b.A_s, k - 1 - j) @ b.B_s * r[j]
                        for j in range(k)), np.zeros(dec.n_s)) for k in range(L)])
    Au_inv = np.linalg.inv(b.A_u)
    xu = np.array([-sum((np.linalg.matrix_power(Au_inv, j - k + 1) @ b.B_u * r[j]
                         for j in range(k, L - 1)), np.zeros(dec.n_u_modes)) for k in range(L)])
    np.testing.assert_allclose(sol.xs_traj, xs, atol=1e-12)
    np.testing.assert_allclose(sol.xu_traj, xu, atol=1e-12)
    assert sol.boundary_residuals["xs_start"] == 0.0 and sol.boundary_residuals["xu_end"] == 0.0


def test_stable_switching_round_trip():
    sys = load_model(MODELS / "mu1_stable_switching.json")
    dec = decouple(invert_mu1(sys))
    assert dec.switching_class is SwitchingClass.STABLE
    r = padded_bump()
    sol = stable_invert_stable_switching(dec, r)
    assert len(set(sol.locations.tolist())) == 2
    assert _forward_check(sys, sol.u, sol.x_traj[0], r) < 1e-8


def test_unstable_switching_round_trip():
    sys = load_model(MODELS / "mu1_unstable_switching.json")
    dec = decouple(invert_mu1(sys))
    assert dec.switching_class is SwitchingClass.UNSTABLE
    r = padded_bump()
    sol = stable_invert_unstable_switching(dec, r)
    assert len(set(sol.locations.tolist())) == 2
    assert np.max(np.abs(sol.u)) < 10 * np.max(np.abs(r))
    assert _forward_check(sys, sol.u, sol.x_traj[0], r) < 1e-8


def test_class_mismatch_is_refused():
    stable = decouple(invert_mu1(load_model(MODELS / "mu1_stable_switching.json")))
    unstable = decouple(invert_mu1(load_model(MODELS / "mu1_unstable_switching.json")))
    with pytest.raises(SwitchingClassMismatch):
        stable_invert_unstable_switching(stable, np.zeros(10))
    with pytest.raises(SwitchingClassMismatch):
        stable_invert_stable_switching(unstable, np.zeros(10))
    with pytest.raises(SwitchingClassMismatch):
        lifted_stable_inverse(unstable, 20)


def _scalar_unstable(F0, F1):
    sys = PwaSystem([{"A": [[2.0]], "B": [0.0], "C": [1.0], "F": [F0]},
                     {"A": [[2.0]], "B": [0.0], "C": [1.0], "F": [F1]}],
                    HyperplaneArrangement([[1.0]], [0.0]), [["0"], ["1"]])
    return decouple(InversePwaSystem(sys, preview=1))


def test_tie_goes_to_lower_location():
    dec = _scalar_unstable(1.0, -1.0)
    sol = stable_invert_unstable_switching(dec, np.zeros(6), warn_padding=False)
    assert sol.locations[:-1].tolist() == [0] * 5
    prefer_high = stable_invert_unstable_switching(
        dec, np.zeros(6), selector_cost=lambda nxt, cand: -float(cand[0]), warn_padding=False)
    assert prefer_high.locations[:-1].tolist() == [1] * 5


def test_no_predecessor():
    dec = _scalar_unstable(-10.0, 10.0)
    with pytest.raises(NoPredecessor):
        stable_invert_unstable_switching(dec, np.zeros(4), warn_padding=False)


def test_padding_warning():
    dec = decouple(invert_mu1(load_model(MODELS / "mu1_stable_switching.json")))
    lead, trail = settling_samples(dec.eigenvalues)
    assert lead > 0 and trail > 0
    with pytest.warns(PaddingWarning):
        stable_invert_stable_switching(dec, np.ones(50))
    with warnings.catch_warnings():
        warnings.simplefilter("error", PaddingWarning)
        stable_invert_stable_switching(dec, padded_bump())


def test_lifted_inverse_composes_to_identity():
    sys = load_model(MODELS / "mu1_stable_switching.json")
    dec = decouple(invert_mu1(sys))
    r = padded_bump()
    N = len(r)
    inv = lifted_stable_inverse(dec, N)
    u = np.asarray(inv(r))
    x0 = np.asarray(stable_invert_stable_switching(dec, r, warn_padding=False).x_traj[0])
    fwd = build_lifted(sys, x0, N, 1)
    assert np.max(np.abs(np.asarray(fwd(u)) - r)) < 1e-8


def test_stable_inverse_bounded_where_naive_diverges():
    sys = load_model(MODELS / "mu1_stable_switching.json")
    inv = invert_mu1(sys)
    r = padded_bump()
    with np.errstate(all="ignore"):
        naive = np.ravel(inv.simulate(np.zeros(sys.n_x), r).y)
    stable = np.asarray(stable_invert_stable_switching(decouple(inv), r).u)
    assert not np.all(np.isfinite(naive)) or np.max(np.abs(naive)) > 1e6
    assert np.max(np.abs(stable)) < 10 * np.max(np.abs(r))


def test_lifted_inverse_jacobian_matches_finite_differences(rng):
    sys = load_model(MODELS / "mu1_stable_switching.json")
    dec = decouple(invert_mu1(sys))
    r = rng.standard_normal(60)
    inv = lifted_stable_inverse(dec, len(r))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        J = jacobian(inv, r)
    np.testing.assert_allclose(J, finite_difference_jacobian(inv, r), atol=1e-6)
