import numpy as np
import pytest

from mbdopt.errors import ParameterError
from mbdopt.schedules import (
    build_lp_schedule,
    build_vp_schedule,
    proposal_std,
    proposal_stds,
    serialize_schedule,
    vp_coefficients,
)


def vp_stds_by_hand(beta0, beta1, steps):
    """Independent oracle: cumulative product written out longhand."""
    betas = [beta0 + (beta1 - beta0) * i / (steps - 1) for i in range(steps)] if steps > 1 else [beta0]
    stds, ab = [], 1.0
    for b in betas:
        ab *= 1.0 - b
        stds.append(((1.0 - ab) / ab) ** 0.5)
    return np.array(stds)


class TestVpSchedule:
    def test_two_step_stds_match_printed_values(self):
        sched = build_vp_schedule(1e-4, 1e-2, 2)
        stds = proposal_stds(sched)
        # printed pair is [0.1, 0.01] in descending step order
        assert stds[1] == pytest.approx(0.1, rel=0.02)
        assert stds[0] == pytest.approx(0.01, rel=0.02)
        np.testing.assert_allclose(stds, vp_stds_by_hand(1e-4, 1e-2, 2), rtol=1e-12)

    def test_five_step_max_std(self):
        sched = build_vp_schedule(1e-4, 1e-2, 5)
        assert proposal_stds(sched).max() == pytest.approx(0.16, rel=0.02)

    def test_beta_endpoints_and_interpolation(self):
        sched = build_vp_schedule(1e-4, 1e-2, 5)
        assert sched.betas[0] == 1e-4
        assert sched.betas[-1] == 1e-2
        np.testing.assert_allclose(np.diff(sched.betas), np.diff(sched.betas)[0])

    def test_single_step_constant_beta(self):
        sched = build_vp_schedule(0.5, 0.5, 1)
        np.testing.assert_array_equal(sched.betas, [0.5])
        np.testing.assert_array_equal(sched.alpha_bars, [0.5])

    def test_alpha_bar_strictly_decreasing(self):
        sched = build_vp_schedule(1e-3, 0.3, 20)
        assert np.all(np.diff(sched.alpha_bars) < 0)

    @pytest.mark.parametrize("beta0,beta1,steps", [
        (1e-4, 1e-2, 2), (1e-4, 1e-2, 50), (0.05, 0.4, 7), (0.3, 0.3, 1),
    ])
    def test_variance_preservation(self, beta0, beta1, steps):
        sched = build_vp_schedule(beta0, beta1, steps)
        for i in range(steps):
            c0, c1 = vp_coefficients(sched, i)
            assert abs(c0**2 + c1**2 - 1.0) < 1e-12

    def test_coefficients_examples(self):
        sched = build_vp_schedule(1e-4, 1e-2, 2)
        c0, c1 = vp_coefficients(sched, 1)
        assert c1 / c0 == pytest.approx(0.1010, abs=1e-4)
        half = build_vp_schedule(0.5, 0.5, 1)
        c0, c1 = vp_coefficients(half, 0)
        assert c0 == pytest.approx(np.sqrt(0.5))
        assert c1 == pytest.approx(np.sqrt(0.5))

    @pytest.mark.parametrize("bad", [(-0.1, 0.5, 3), (0.0, 0.5, 3), (0.5, 0.1, 3),
                                     (0.5, 1.0, 3), (1e-4, 1e-2, 0)])
    def test_parameter_errors(self, bad):
        with pytest.raises(ParameterError):
            build_vp_schedule(*bad)

    def test_steps_change_max_std(self):
        # the VP coupling: same betas, different steps, different noise cap
        s2 = proposal_stds(build_vp_schedule(1e-4, 1e-2, 2)).max()
        s5 = proposal_stds(build_vp_schedule(1e-4, 1e-2, 5)).max()
        assert s2 == pytest.approx(0.101, abs=1e-3)
        assert s5 == pytest.approx(0.16, rel=0.02)
        assert s2 != s5


class TestLpSchedule:
    def test_two_step_grid_and_stds(self):
        sched = build_lp_schedule(1.8, 2)
        np.testing.assert_allclose(sched.t_grid, [0.0, 1.8 / 2.8], rtol=1e-15)
        assert proposal_std(sched, 0) == 0.0
        assert proposal_std(sched, 1) == 1.8

    def test_t_max_relation(self):
        for steps in (2, 7, 31):
            sched = build_lp_schedule(1.8, steps)
            assert sched.t_max == 1.8 / 2.8
            assert sched.t_grid[0] == 0.0
            assert sched.t_grid[-1] == sched.t_max

    def test_three_step_stds(self):
        sched = build_lp_schedule(1.0, 3)
        stds = proposal_stds(sched)
        np.testing.assert_allclose(stds, [0.0, (0.25) / 0.75, 1.0], rtol=1e-12)

    def test_std_matches_t_over_one_minus_t(self):
        sched = build_lp_schedule(2.3, 9)
        expect = sched.t_grid / (1.0 - sched.t_grid)
        np.testing.assert_allclose(proposal_stds(sched), expect, rtol=1e-12)

    def test_monotone_increasing(self):
        stds = proposal_stds(build_lp_schedule(0.7, 17))
        assert np.all(np.diff(stds) > 0)

    @pytest.mark.parametrize("steps", range(2, 51))
    def test_max_std_invariant_under_steps(self, steps):
        # the decoupling property: steps never move the noise cap
        assert proposal_std(build_lp_schedule(1.8, steps), steps - 1) == 1.8

    @pytest.mark.parametrize("bad", [(0.0, 5), (-1.0, 5), (1.8, 1)])
    def test_parameter_errors(self, bad):
        with pytest.raises(ParameterError):
            build_lp_schedule(*bad)

    def test_index_out_of_range(self):
        sched = build_lp_schedule(1.8, 4)
        with pytest.raises(IndexError):
            proposal_std(sched, 4)
        with pytest.raises(IndexError):
            proposal_std(sched, -1)


def test_serialization_round_trips_values():
    for sched in (build_vp_schedule(1e-4, 1e-2, 3), build_lp_schedule(1.8, 4)):
        text = serialize_schedule(sched)
        fields = dict(line.split("=", 1) for line in text.splitlines())
        assert fields["kind"] == sched.kind
        assert int(fields["steps"]) == sched.steps
        stds = np.array([float(x) for x in fields["proposal_stds"].split(",")])
        np.testing.assert_array_equal(stds, proposal_stds(sched))


def test_schedules_immutable():
    sched = build_vp_schedule(1e-4, 1e-2, 3)
    with pytest.raises(ValueError):
        sched.betas[0] = 0.5
