from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonlocal_lwr import (ConfigurationError, InitialProfile, Kernel, MicroState, StepSizeError,
                          VelocityModel, WindowParams, load_config, micro_init, micro_lyapunov,
                          micro_step, micro_velocities, run_micro)
from nonlocal_lwr.micro import (CrossingEvent, _membership_events, attribute_jumps, detect_jumps,
                                window_members)

LIN = VelocityModel.linear()
CONST = Kernel.constant(1.0)
P = WindowParams(0.0, 0.5, 1.0)
FIG = InitialProfile.from_segments([(0.0, 1.0), (math.inf, 0.5)])


def test_init_uniform_jam():
    s = micro_init(InitialProfile.constant(1.0), 0.01, 0.0, -1.0)
    np.testing.assert_allclose(s.positions[-5:], [-0.04, -0.03, -0.02, -0.01, 0.0], atol=1e-14)
    np.testing.assert_allclose(s.densities, 1.0, rtol=1e-10)
    assert s.positions[0] <= -1.0 < s.positions[1]


def test_init_half_density():
    s = micro_init(InitialProfile.constant(0.5), 0.01, 0.0, -1.0)
    np.testing.assert_allclose(s.gaps, 0.02, rtol=1e-10)


def test_init_piecewise_gaps_hold_mass():
    prof = InitialProfile.from_segments([(-0.5, 0.01), (0.0, 0.35), (math.inf, 0.5)])
    s = micro_init(prof, 0.01, 0.0, -3.0)
    x = s.positions
    # each gap carries exactly h of rho0
    for a, b in zip(x[:-1], x[1:]):
        mass = 0.01 * max(0.0, min(b, -0.5) - a) + 0.35 * max(0.0, b - max(a, -0.5))
        assert mass == pytest.approx(0.01, rel=1e-9)


def test_init_errors():
    with pytest.raises(ConfigurationError):
        micro_init(FIG, 2.0, 0.0, -3.0, eta=1.0)
    with pytest.raises(ConfigurationError):
        micro_init(FIG, 0.0, 0.0, -3.0)


def test_equilibrium_speeds_and_lyapunov():
    s = micro_init(InitialProfile.constant(0.5), 0.01, 0.0, -3.0, vbar=0.5)
    V = micro_velocities(s, CONST, LIN, 0.5)
    np.testing.assert_allclose(V, 0.5, atol=1e-12)
    assert micro_lyapunov(s, CONST, LIN, P, 0.5) <= 1e-24


def test_initial_speed_profile():
    s = micro_init(FIG, 0.01, 0.0, -3.0, vbar=0.5)
    V = micro_velocities(s, CONST, LIN, 0.5)
    x = s.positions
    inside = (x >= -1.0) & (x < 0.0)
    np.testing.assert_allclose(V[inside], 0.5 + 0.5 * x[inside], atol=0.01)


def test_jam_gap_gives_jam_speed():
    s = MicroState(positions=np.array([-4.0, -2.0, 0.0]), h=2.0, t=0.0, vbar=0.5, b=0.0)
    V = micro_velocities(s, CONST, LIN, 0.5)
    np.testing.assert_allclose(V[:-1], LIN.eval(1.0), atol=1e-15)


def test_single_follower_far_behind():
    s = MicroState(positions=np.array([-5.0, 0.0]), h=0.5, t=0.0, vbar=0.5, b=0.0)
    V = micro_velocities(s, CONST, LIN, 0.5)
    assert V[0] == pytest.approx(0.9, abs=1e-15)
    new = micro_step(s, CONST, LIN, 0.5, 0.1)
    assert new.positions[0] == pytest.approx(-5.0 + 0.09, abs=1e-15)
    assert new.leader == pytest.approx(0.05, abs=1e-15)


@pytest.mark.parametrize("kind", ["linear", "concave"])
def test_general_kernel_path_matches_constant(kind):
    prof = InitialProfile.from_segments([(-0.5, 0.3), (0.0, 0.9), (math.inf, 0.5)])
    s = micro_init(prof, 0.01, 0.0, -3.0, vbar=0.5)
    fast = micro_velocities(s, CONST, LIN, 0.5)
    slow = micro_velocities(s, Kernel.custom(lambda y: 1.0 + 0.0 * y, 1.0), LIN, 0.5)
    np.testing.assert_allclose(slow, fast, atol=1e-12)
    # the nonconstant kernels still give admissible speeds
    V = micro_velocities(s, Kernel.from_name(kind), LIN, 0.5)
    assert np.all((V >= 0) & (V <= 1))


def test_step_equilibrium_translation_and_zero_dt():
    s = micro_init(InitialProfile.constant(0.5), 0.01, 0.0, -2.0, vbar=0.5)
    new = micro_step(s, CONST, LIN, 0.5, 0.01)
    np.testing.assert_allclose(new.positions - s.positions, 0.005, atol=1e-12)
    assert micro_step(s, CONST, LIN, 0.5, 0.0) is s


def test_step_collision_raises():
    s = MicroState(positions=np.array([-1.0, -0.99, 0.0]), h=0.01, t=0.0, vbar=0.0, b=0.0)
    with pytest.raises(StepSizeError):
        micro_step(s, CONST, LIN, 1.0 - 1e-9, 10.0)


def test_lyapunov_initial_value_and_convergence():
    errs = []
    for h in (0.02, 0.01, 0.005):
        s = micro_init(FIG, h, 0.0, -3.0, vbar=0.5)
        L = micro_lyapunov(s, CONST, LIN, P, 0.5)
        errs.append(abs(L - 1 / 12))
        if h == 0.01:
            assert math.log(L) == pytest.approx(-2.485, abs=0.05)
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.1)


def test_micro_macro_initial_consistency(preset_run):
    macro_L0 = preset_run("fig1-const").diagnostics.records[0].L
    s = micro_init(FIG, 0.005, 0.0, -3.0, vbar=0.5)
    assert abs(math.log(micro_lyapunov(s, CONST, LIN, P, 0.5)) - math.log(macro_L0)) <= 0.05


def test_window_members_and_events():
    s = MicroState(positions=np.array([-1.5, -1.0, -0.5, 0.0]), h=0.5, t=0.0, vbar=0.5, b=0.0)
    assert window_members(s, P) == (1, 2)
    ev = _membership_events(1.0, (1, 2), (2, 2))
    assert ev == [CrossingEvent(1.0, 1, "left", "exit")]
    ev = _membership_events(1.0, (1, 2), (0, 3))
    assert {(e.vehicle, e.edge, e.direction) for e in ev} == {(0, "left", "enter"),
                                                              (3, "right", "enter")}


def test_detect_and_attribute_jumps():
    t = np.linspace(0, 1, 101)
    lnL = -2.5 - t
    lnL[60:] -= 0.3
    jumps = detect_jumps(t, lnL)
    assert jumps == [60]
    ev = [CrossingEvent(float(t[60]) - 0.004, 7, "left", "exit"),
          CrossingEvent(0.1, 3, "left", "exit")]
    att = attribute_jumps(t, jumps, ev)
    assert [c.vehicle for c in att[0]["crossings"]] == [7]
    assert detect_jumps(t, -2.5 - t) == []


def test_short_run_orders_and_leader():
    cfg = load_config({**_preset("fig3-micro"), "grid.t_end": "2", "output.cadence": "0.01"})
    run = run_micro(cfg, keep_trajectory=True)
    fs = run.final_state
    assert fs.leader == 0.5 * 2.0
    assert np.all(np.diff(fs.positions) > 0)
    assert run.min_gap > 0
    assert len(run.trajectory) == 201
    L = run.diagnostics.column("L")
    assert np.all(L >= 0)


def _preset(name):
    from nonlocal_lwr.config import PRESETS
    return dict(PRESETS[name])


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.05, 1.0), min_size=1, max_size=3), st.sampled_from([0.02, 0.05]))
def test_step_property_no_overtaking(values, h):
    """Steps at the safe size keep the order and the densities admissible."""
    breaks = [-0.7 * (len(values) - i) for i in range(len(values))]
    prof = InitialProfile.from_segments(list(zip(breaks, values)) + [(math.inf, 0.5)])
    s = micro_init(prof, h, 0.0, -4.0, vbar=0.5)
    for _ in range(20):
        V = micro_velocities(s, CONST, LIN, 0.5)
        dt = 0.5 * h / max(V[:-1].max(), 1e-12)
        s = micro_step(s, CONST, LIN, 0.5, dt, V)
        d = s.densities
        assert np.all(d > 0) and np.all(d <= 1.0 + 1e-12)
    assert np.all(np.diff(s.positions) > 0)
