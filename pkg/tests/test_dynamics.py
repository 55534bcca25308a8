import numpy as np
import pytest

import confint as c

SQRT2_INV = 0.7071067811865476


@pytest.fixture(scope="module")
def harmonic():
    return c.build_particle("harmonic")


@pytest.fixture(scope="module")
def free():
    return c.build_particle("free")


def state(x, y, px, py):
    return c.PhaseState([x, y], [px, py])


class TestPhaseState:
    def test_lengths_must_match(self):
        with pytest.raises(c.DimensionMismatchError):
            c.PhaseState([0.0, 1.0], [0.0])

    def test_entries_must_be_finite(self):
        with pytest.raises(ValueError):
            c.PhaseState([0.0, np.nan], [0.0, 0.0])
        with pytest.raises(ValueError):
            c.PhaseState([0.0, 0.0], [np.inf, 0.0])

    def test_round_trip(self):
        s = state(0.1, -0.2, 0.3, 0.4)
        again = c.PhaseState.from_array(s.as_array())
        assert np.array_equal(again.q, s.q) and np.array_equal(again.p, s.p)

    def test_immutable(self):
        s = state(0.0, 0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            s.q[0] = 5.0


class TestHamiltonian:
    def test_harmonic_unit_energy(self, harmonic):
        assert c.eval_hamiltonian(harmonic, state(0, 0, 1, 1)) == pytest.approx(1.0, abs=1e-15)

    def test_free_zero_state(self, free):
        assert c.eval_hamiltonian(free, state(0, 0, 0, 0)) == 0.0

    def test_harmonic_potential_only(self, harmonic):
        assert c.eval_hamiltonian(harmonic, state(1, 0, 0, 0)) == pytest.approx(0.5, abs=1e-15)

    def test_dimension_mismatch(self, harmonic):
        with pytest.raises(c.DimensionMismatchError):
            c.eval_hamiltonian(harmonic, c.PhaseState([0.0], [0.0]))


class TestConformalFactor:
    def test_at_origin(self, free):
        assert c.eval_conformal_factor(free, state(0, 0, 0, 0)) == 1.0

    def test_at_unit_height(self, free):
        assert c.eval_conformal_factor(free, state(0, 1, 0, 0)) == pytest.approx(SQRT2_INV, abs=1e-15)

    def test_even_in_y(self, free):
        up = c.eval_conformal_factor(free, state(0, 1, 0, 0))
        down = c.eval_conformal_factor(free, state(0, -1, 0, 0))
        assert up == down

    def test_array_path_matches(self, harmonic):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1, 1, (32, 4))
        vec = harmonic.conformal_factor_array(pts)
        per = [c.eval_conformal_factor(harmonic, c.PhaseState.from_array(row)) for row in pts]
        np.testing.assert_allclose(vec, per, rtol=0, atol=1e-15)


class TestConformalField:
    def test_harmonic_reference_state(self, harmonic):
        t = c.conformal_vector_field(harmonic, state(0, 0, 1, 1))
        np.testing.assert_allclose(t.dq, [1.0, 1.0], atol=1e-15)
        np.testing.assert_allclose(t.dp, [0.0, 0.0], atol=1e-15)

    def test_free_equilibrium(self, free):
        t = c.conformal_vector_field(free, state(0, 0, 0, 0))
        assert np.all(t.as_array() == 0.0)

    def test_free_off_axis(self, free):
        t = c.conformal_vector_field(free, state(0, 1, 1, 1))
        np.testing.assert_allclose(t.dq, [SQRT2_INV, np.sqrt(2.0)], atol=1e-15)
        np.testing.assert_allclose(t.dp, [0.0, -SQRT2_INV], atol=1e-15)

    def test_array_path_matches(self, harmonic):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-1, 1, (32, 4))
        vec = harmonic.vector_field_array(pts)
        per = [c.conformal_vector_field(harmonic, c.PhaseState.from_array(r)).as_array() for r in pts]
        np.testing.assert_allclose(vec, per, rtol=0, atol=1e-14)


class TestAlteredSystem:
    def test_hamiltonian_on_level_set(self, harmonic):
        assert c.altered_hamiltonian(harmonic, state(0, 0, 1, 1), 1.0) == pytest.approx(0.0, abs=1e-15)

    def test_hamiltonian_off_level_set(self, harmonic):
        assert c.altered_hamiltonian(harmonic, state(0, 0, 1, 1), 0.0) == pytest.approx(1.0, abs=1e-15)

    def test_hamiltonian_free(self, free):
        value = c.altered_hamiltonian(free, state(0, 1, 0, 0), 1.0)
        assert value == pytest.approx(-SQRT2_INV, abs=1e-15)

    def test_extra_term_value(self, harmonic):
        t = c.altered_vector_field(harmonic, state(0, 1, 1, 1), 0.0)
        assert t.dp[1] == pytest.approx(-SQRT2_INV, abs=1e-14)

    def test_zero_at_full_equilibrium(self, free):
        for energy in (-1.0, 0.0, 2.5):
            t = c.altered_vector_field(free, state(0, 0, 0, 0), energy)
            assert np.all(t.as_array() == 0.0)

    def test_agrees_with_conformal_on_level_set(self, harmonic):
        rng = np.random.default_rng(2)
        for _ in range(100):
            s = c.PhaseState(rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2))
            energy = c.eval_hamiltonian(harmonic, s)
            diff = (
                c.altered_vector_field(harmonic, s, energy).as_array()
                - c.conformal_vector_field(harmonic, s).as_array()
            )
            assert np.linalg.norm(diff) <= 1e-12


def _fd_gradient(fn, s, step=1e-5):
    base = s.as_array()
    out = np.empty(base.size)
    for j in range(base.size):
        shift = np.zeros(base.size)
        shift[j] = step
        out[j] = (
            fn(c.PhaseState.from_array(base + shift)) - fn(c.PhaseState.from_array(base - shift))
        ) / (2 * step)
    return out


class TestGradientsAndInvariants:
    @pytest.mark.parametrize("potential", ["harmonic", "free"])
    def test_gradients_match_finite_differences(self, potential):
        system = c.build_particle(potential)
        rng = np.random.default_rng(3)
        for _ in range(100):
            s = c.PhaseState(rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2))
            gh = np.asarray(system.grad_h(s))
            gh_fd = _fd_gradient(lambda t: c.eval_hamiltonian(system, t), s)
            assert np.linalg.norm(gh - gh_fd) <= 1e-6 * max(1.0, np.linalg.norm(gh_fd))
            gn = np.asarray(system.grad_n(s))
            gn_fd = _fd_gradient(lambda t: c.eval_conformal_factor(system, t), s)
            assert np.linalg.norm(gn - gn_fd) <= 1e-6 * max(1.0, np.linalg.norm(gn_fd))

    def test_positivity_and_skew_identity(self, harmonic):
        rng = np.random.default_rng(4)
        for _ in range(100):
            s = c.PhaseState(rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2))
            assert c.eval_conformal_factor(harmonic, s) > 0.0
            grad = np.asarray(harmonic.grad_h(s))
            field = c.conformal_vector_field(harmonic, s).as_array()
            assert abs(grad @ field) <= 1e-12

    def test_energy_conserved_along_reference_flow(self, harmonic):
        s0 = state(0, 0, 1, 1)
        traj = c.reference_trajectory(harmonic, s0, 0.25, 40, c.ReferenceConfig(1000))
        h0 = c.eval_hamiltonian(harmonic, s0)
        drift = max(abs(c.eval_hamiltonian(harmonic, s) - h0) for s in traj)
        assert drift <= 1e-8


class TestPhiSimpleReduction:
    def test_particle_closed_forms(self):
        model = c.particle_model("harmonic")
        system = c.phi_simple_to_conformal(model)
        rng = np.random.default_rng(5)
        for _ in range(50):
            s = c.PhaseState(rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2))
            x, y = s.q
            px, py = s.p
            h_expect = 0.5 * (px**2 + (1 + y**2) * py**2) + 0.5 * (x**2 + y**2)
            assert c.eval_hamiltonian(system, s) == pytest.approx(h_expect, abs=1e-14)
            assert c.eval_conformal_factor(system, s) == pytest.approx(1 / np.sqrt(1 + y**2), abs=1e-14)

    def test_identity_reduction(self):
        model = c.MechanicalModel(
            n=2,
            mass_metric=lambda q: np.eye(2),
            d_mass_metric=lambda q: np.zeros((2, 2, 2)),
            d2_mass_metric=lambda q: np.zeros((2, 2, 2, 2)),
            potential=lambda q: 0.5 * float(q @ q),
            grad_potential=lambda q: q.copy(),
            hess_potential=lambda q: np.eye(2),
            phi=lambda q: 0.0,
            grad_phi=lambda q: np.zeros(2),
            hess_phi=lambda q: np.zeros((2, 2)),
            label="plain",
        )
        system = c.phi_simple_to_conformal(model)
        rng = np.random.default_rng(6)
        for _ in range(20):
            s = c.PhaseState(rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2))
            assert c.eval_conformal_factor(system, s) == 1.0
            expect = 0.5 * float(s.p @ s.p) + 0.5 * float(s.q @ s.q)
            assert c.eval_hamiltonian(system, s) == pytest.approx(expect, abs=1e-14)

    def test_field_matches_reduced_equations(self):
        system = c.build_particle("harmonic")
        rng = np.random.default_rng(7)
        for _ in range(20):
            s = c.PhaseState(rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2))
            x, y = s.q
            px, py = s.p
            factor = 1 / np.sqrt(1 + y**2)
            expect = np.array(
                [factor * px, np.sqrt(1 + y**2) * py, -factor * x, -factor * (y * py**2 + y)]
            )
            got = c.conformal_vector_field(system, s).as_array()
            assert np.linalg.norm(got - expect) <= 1e-14

    def test_singular_metric_rejected(self):
        model = c.particle_model("free")
        bad = c.MechanicalModel(
            n=2,
            mass_metric=lambda q: np.zeros((2, 2)),
            d_mass_metric=model.d_mass_metric,
            d2_mass_metric=model.d2_mass_metric,
            potential=model.potential,
            grad_potential=model.grad_potential,
            hess_potential=model.hess_potential,
            phi=model.phi,
            grad_phi=model.grad_phi,
            hess_phi=model.hess_phi,
        )
        system = c.phi_simple_to_conformal(bad)
        with pytest.raises(c.ModelDomainError):
            c.eval_hamiltonian(system, c.PhaseState([0.0, 0.0], [1.0, 1.0]))


class TestBuildParticle:
    def test_named_potentials(self):
        assert c.eval_hamiltonian(c.build_particle("harmonic"), state(0, 0, 1, 1)) == pytest.approx(1.0)
        assert c.eval_hamiltonian(c.build_particle("free"), state(0, 0, 1, 1)) == pytest.approx(1.0)

    def test_custom_linear_potential(self):
        pot = c.Potential(value=lambda q: float(q[0]), grad=lambda q: np.array([1.0, 0.0]))
        system = c.build_particle(pot)
        rng = np.random.default_rng(8)
        for _ in range(10):
            s = c.PhaseState(rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2))
            assert np.asarray(system.grad_h(s))[0] == pytest.approx(1.0, abs=1e-14)

    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError):
            c.build_particle("quartic")
