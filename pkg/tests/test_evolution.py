import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from mixed_dqpt import fockspace as fs
from mixed_dqpt.amplitude import mode_gloa_from_trajectory, total_rate_function, closed_form_series
from mixed_dqpt.errors import (DegenerateSpectrum, DegenerateSteadyState, NonPhysical, NullLindblad,
                               TrackingLost)
from mixed_dqpt.evolution import (DissipationSpec, Liouvillian, TimeGrid,
                                  add_engineered_dissipation, add_natural_dissipation,
                                  build_hamiltonian_liouvillian, build_liouvillian,
                                  closed_form_mode_gloa, default_substeps, dissipator,
                                  evolve_mode, evolve_protocol, initial_state,
                                  kitaev_uv, steady_state, unvec, vec)
from mixed_dqpt.model import QuenchProtocol, TwoBandModel, make_k_grid, overlap_coefficients

OPS = fs.mode_operators()
TFIM0, TFIM10 = TwoBandModel.tfim(0.0), TwoBandModel.tfim(10.0)


def zero_liouvillian(k=(0.5,)):
    k = np.asarray(k, dtype=float)
    return Liouvillian(np.zeros((k.size, 16, 16), dtype=complex), k,
                       np.zeros((k.size, 4, 4), dtype=complex), False)


def projector(i):
    p = np.zeros((4, 4), dtype=complex)
    p[i, i] = 1
    return p


def random_density(rng):
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    m = a @ a.conj().T
    return m / np.trace(m)


def test_vec_roundtrip_and_sandwich():
    rng = np.random.default_rng(0)
    a, x = rng.normal(size=(2, 4, 4)) + 1j * rng.normal(size=(2, 4, 4))
    assert np.allclose(unvec(vec(x)), x)
    d = dissipator(a)
    lhs = unvec(d @ vec(x))
    ad = a.conj().T
    rhs = a @ x @ ad - 0.5 * (ad @ a @ x + x @ ad @ a)
    assert np.allclose(lhs, rhs)


def test_hamiltonian_liouvillian_examples():
    z = build_hamiltonian_liouvillian(TwoBandModel.custom(lambda k: np.zeros(k.shape + (3,))), [0.3])
    assert np.all(z.matrix == 0)
    liou = build_hamiltonian_liouvillian(TFIM10, [0.3, 1.2])
    assert np.allclose(liou.apply(np.broadcast_to(np.eye(4) / 4, (2, 4, 4))), 0)
    # h = (0, 0, 1): the even coherence |00><11| oscillates at frequency 2
    hz = TwoBandModel.custom(lambda k: np.stack([0 * k, 0 * k, 1 + 0 * k], -1))
    liou = build_hamiltonian_liouvillian(hz, [0.0])
    coh = np.zeros((1, 4, 4), dtype=complex)
    coh[0, 0, 1] = 1
    assert np.allclose(liou.apply(coh), -2j * coh)


def test_trace_preservation_of_generators():
    k = make_k_grid(8).points
    specs = [DissipationSpec.natural(0.3, 1.7), DissipationSpec.engineered(1.5, 0.0),
             DissipationSpec.engineered(10.0, 0.0, gamma_plus=0.2, gamma_minus=0.1)]
    ident = vec(np.eye(4))
    for spec in specs + [None]:
        liou = build_liouvillian(TFIM10, k, spec)
        assert np.max(np.abs(ident.conj() @ liou.matrix)) <= 1e-12


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 3.0))
def test_generated_maps_are_cptp_on_random_states(seed, t):
    rng = np.random.default_rng(seed)
    liou = build_liouvillian(TFIM10, [0.9], DissipationSpec.natural(*rng.uniform(0, 2, 2)))
    rho = random_density(rng)
    out = unvec(expm(liou.matrix[0] * t) @ vec(rho))
    assert np.max(np.abs(out - out.conj().T)) <= 1e-12
    assert abs(np.trace(out) - 1) <= 1e-12
    assert np.min(np.linalg.eigvalsh(out)) >= -1e-12


def test_natural_steady_states():
    zero = zero_liouvillian()
    loss = steady_state(add_natural_dissipation(zero, 0.0, 1.0))
    gain = steady_state(add_natural_dissipation(zero, 1.0, 0.0))
    assert np.allclose(loss[0], projector(0), atol=1e-12)
    assert np.allclose(gain[0], projector(1), atol=1e-12)
    gp, gm = 0.3, 1.1
    both = steady_state(add_natural_dissipation(zero, gp, gm))[0]
    n = gp / (gp + gm)
    single = np.diag([1 - n, n])
    expect = np.kron(single, single)  # ordering (n_k, n_-k): 00, 01, 10, 11
    occ = {(0, 0): expect[0, 0], (0, 1): expect[1, 1], (1, 0): expect[2, 2], (1, 1): expect[3, 3]}
    assert np.allclose(np.diag(both).real, [occ[b] for b in fs.BASIS], atol=1e-12)
    assert np.allclose(both - np.diag(np.diag(both)), 0, atol=1e-12)


def test_engineered_limits():
    zero = zero_liouvillian()
    inj = add_engineered_dissipation(zero, np.array([0.0]), np.array([1.0]))
    ref = dissipator(OPS.a_k_dag) + dissipator(OPS.a_mk_dag)
    assert np.allclose(inj.matrix[0], ref)
    loss = add_engineered_dissipation(zero, np.array([1.0]), np.array([0.0]))
    ref = dissipator(-OPS.a_mk) + dissipator(OPS.a_k)
    assert np.allclose(loss.matrix[0], ref)
    with pytest.raises(NullLindblad):
        add_engineered_dissipation(zero, np.array([0.0]), np.array([0.0]))


def test_engineered_dark_state():
    k = make_k_grid(16).points
    spec = DissipationSpec.engineered(0.4)
    liou = build_liouvillian(TFIM0, k, spec)
    rho = steady_state(liou)
    assert np.max(np.abs(liou.apply(rho))) <= 1e-10
    u, v = kitaev_uv(k, 0.4)
    lk = v[:, None, None] * OPS.a_k_dag - u[:, None, None] * OPS.a_mk
    lmk = v[:, None, None] * OPS.a_mk_dag + u[:, None, None] * OPS.a_k
    assert np.max(np.abs(lk @ rho)) <= 1e-10
    assert np.max(np.abs(lmk @ rho)) <= 1e-10
    # dark state is proportional to u|00> - v|11>
    psi = np.stack([u, -v], -1) / np.hypot(u, v)[:, None]
    assert np.allclose(fs.even_block(rho), psi[:, :, None] * psi[:, None, :], atol=1e-10)


def test_engineered_steady_state_matches_long_time_evolution():
    k = make_k_grid(6).points
    p = QuenchProtocol(TFIM0, TFIM0, 1.0, DissipationSpec.engineered(2.0, 0.0))
    tr = evolve_protocol(p, k, TimeGrid(40.0, 200), keep_states=True)
    ss = steady_state(build_liouvillian(TFIM0, k, p.dissipation))
    assert np.max(np.abs(tr.densities[:, -1] - ss)) <= 1e-8


def test_degenerate_steady_state():
    with pytest.raises(DegenerateSteadyState):
        steady_state(build_hamiltonian_liouvillian(TFIM10, [0.4]))


def test_spec_validation():
    with pytest.raises(ValueError):
        DissipationSpec.natural(0.0, 0.0)
    with pytest.raises(ValueError):
        DissipationSpec.natural(-1.0, 1.0)
    with pytest.raises(ValueError):
        DissipationSpec.engineered(1.0, family="unknown")
    with pytest.raises(ValueError):
        DissipationSpec.engineered(1.0).initial_spec()


def test_zero_generator_gives_constant_trajectory():
    rho0 = fs.thermal_mode_state(TFIM0, 1.0, np.array([0.5]))
    liou = Liouvillian(np.zeros((1, 16, 16), dtype=complex), np.array([0.5]), None, True)
    tr = evolve_mode(rho0, liou, TimeGrid(1.0, 10), keep_states=True)
    assert np.allclose(tr.densities, rho0[:, None])
    g = mode_gloa_from_trajectory(tr).values
    assert np.allclose(g, 1.0, atol=1e-14)


def test_stationary_mixture_has_constant_eigenvalues():
    k = np.array([0.7, 2.1])
    rho0 = fs.thermal_mode_state(TFIM10, 0.6, k)
    tr = evolve_mode(rho0, build_hamiltonian_liouvillian(TFIM10, k), TimeGrid(1.0, 50))
    assert np.max(np.abs(tr.eigenvalues - tr.initial_eigenvalues[:, None])) <= 1e-12


def test_natural_relaxation_reaches_rate_equation_fixed_point():
    gp, gm = 0.5, 1.5
    flat = TwoBandModel.custom(lambda k: np.zeros(np.shape(k) + (3,)))
    p = QuenchProtocol(TFIM0, flat, 1.0, DissipationSpec.natural(gp, gm))
    k = np.array([0.4, 1.9])
    tr = evolve_protocol(p, k, TimeGrid(12.0, 240), keep_states=True)
    rho = tr.densities[:, -1]
    n = gp / (gp + gm)
    ops = fs.mode_operators()
    occ_k = np.real(np.trace(rho @ (ops.a_k_dag @ ops.a_k), axis1=-2, axis2=-1))
    occ_mk = np.real(np.trace(rho @ (ops.a_mk_dag @ ops.a_mk), axis1=-2, axis2=-1))
    assert np.max(np.abs(occ_k - n)) <= 1e-6 and np.max(np.abs(occ_mk - n)) <= 1e-6
    assert tr.max_trace_error <= 1e-9 and tr.min_eigenvalue >= -1e-9


def test_closed_form_examples():
    p = QuenchProtocol(TFIM0, TFIM10, 0.7)
    k = make_k_grid(20).points
    assert np.allclose(closed_form_mode_gloa(p, k, 0.0), 1.0, atol=1e-15)
    same = QuenchProtocol(TFIM10, TFIM10, 0.7)
    t = np.linspace(0, 3, 31)
    assert np.allclose(closed_form_mode_gloa(same, k[:, None], t), 1.0, atol=1e-14)
    kc = np.arccos(0.1)
    g, e = overlap_coefficients(TFIM0, TFIM10, kc)
    assert g == pytest.approx(0.5, abs=1e-15)
    eps = np.sqrt(99)
    assert np.allclose(closed_form_mode_gloa(p, kc, t), np.cos(eps * t), atol=1e-13)
    assert abs(closed_form_mode_gloa(p, kc, np.pi / (2 * eps))) <= 1e-14


@given(st.floats(-2.5, 2.5), st.floats(-2.5, 2.5),
       st.floats(0.05, 3) | st.floats(-3, -0.05))
def test_trajectory_matches_closed_form(hi, hf, beta):
    for h in (hi, hf):
        if abs(abs(h) - 1) < 0.05:
            return
    p = QuenchProtocol(TwoBandModel.tfim(hi), TwoBandModel.tfim(hf), beta)
    k = make_k_grid(6).points
    grid = TimeGrid(2.0, 40)
    traj = mode_gloa_from_trajectory(evolve_protocol(p, k, grid)).values
    ref = closed_form_series(p, k, grid.times).values
    assert np.max(np.abs(traj - ref)) <= 1e-8


def test_infinite_temperature_gauge_is_undetermined():
    # beta = 0 gives a maximally mixed even block that the Hamiltonian rotates
    p = QuenchProtocol(TFIM0, TFIM10, 0.0)
    with pytest.raises(DegenerateSpectrum):
        evolve_protocol(p, [0.5], TimeGrid(1.0, 10))


def test_symmetric_odd_block_degeneracy_is_allowed():
    # natural dissipation fills |01> and |10> equally; the pair decays isotropically
    p = QuenchProtocol(TFIM0, TFIM0, 1.0,
                       DissipationSpec.engineered(10.0, 0.0, gamma_plus=0.1, gamma_minus=0.1))
    rho0 = initial_state(p, [0.7])
    odd = np.linalg.eigvalsh(fs.odd_block(rho0[0]))
    assert odd[0] > 1e-6 and abs(odd[1] - odd[0]) < 1e-12
    tr = evolve_protocol(p, [0.7], TimeGrid(0.01, 20))
    assert tr.max_trace_error <= 1e-9


def test_step_refinement_consistency():
    p = QuenchProtocol(TFIM0, TFIM10, 1.0, DissipationSpec.natural(0.2, 0.7))
    k = make_k_grid(5).points
    a = evolve_protocol(p, k, TimeGrid(0.5, 25), keep_states=True)
    b = evolve_protocol(p, k, TimeGrid(0.5, 50), keep_states=True)
    assert np.max(np.abs(a.densities - b.densities[:, ::2])) <= 1e-12
    ga = mode_gloa_from_trajectory(a).values
    gb = mode_gloa_from_trajectory(b).values[:, ::2]
    assert np.max(np.abs(ga - gb)) <= 1e-8


def test_weak_dissipation_continuity():
    k = make_k_grid(30).points
    grid = TimeGrid(1.0, 200)
    unitary = QuenchProtocol(TFIM0, TFIM10, 1.0)
    g0 = total_rate_function(closed_form_series(unitary, k, grid.times)).rate
    devs = []
    for gam in (1e-3, 1e-2):
        p = QuenchProtocol(TFIM0, TFIM10, 1.0, DissipationSpec.natural(gam, gam))
        g = total_rate_function(mode_gloa_from_trajectory(evolve_protocol(p, k, grid))).rate
        devs.append(np.max(np.abs(g - g0)))
    assert devs[0] < devs[1]
    assert devs[1] / devs[0] == pytest.approx(10, rel=0.2)  # linear in the rate


def test_non_physical_generator_detected():
    k = np.array([0.5])
    rho0 = fs.thermal_mode_state(TFIM0, 1.0, k)
    leak = Liouvillian(-0.1 * np.eye(16, dtype=complex)[None], k, None, True)
    with pytest.raises(NonPhysical):
        evolve_mode(rho0, leak, TimeGrid(1.0, 10))


def test_tracking_lost_on_coarse_grid():
    # in a 2x2 block the best assignment always keeps overlap >= cos(pi/4), so a
    # floor above that is needed to see a lost track
    p = QuenchProtocol(TFIM0, TFIM10, 1.0)
    with pytest.raises(TrackingLost) as info:
        evolve_protocol(p, [1.47], TimeGrid(0.79, 10), substeps=1, max_halvings=0,
                        transport="basic", overlap_floor=0.9)
    assert info.value.suggested_steps == 2
    # automatic halving recovers
    tr = evolve_protocol(p, [1.47], TimeGrid(0.79, 10), substeps=1, max_halvings=8)
    ref = closed_form_mode_gloa(p, 1.47, tr.times)
    assert np.max(np.abs(mode_gloa_from_trajectory(tr).values[0] - ref)) <= 1e-3


def test_default_substeps():
    assert default_substeps(TimeGrid(1.0, 100), 10.0) == 10
    assert default_substeps(TimeGrid(1.0, 100), 1.0, 50.0) == 50
    assert default_substeps(TimeGrid(1.0, 1000), 0.5) == 1


def test_engineered_initial_state_is_pre_quench_steady_state():
    k = make_k_grid(4).points
    p = QuenchProtocol(TFIM0, TFIM0, 1.0, DissipationSpec.engineered(10.0, 0.0))
    rho = initial_state(p, k)
    pre = build_liouvillian(TFIM0, k, p.dissipation.initial_spec())
    assert np.max(np.abs(pre.apply(rho))) <= 1e-10
