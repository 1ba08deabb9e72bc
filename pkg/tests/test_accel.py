import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from approxcal import accel
from approxcal.accel import (
    SIGNALS, APPROX_TRUNCATION, SIGNAL_WIDTHS, DatapathConfig, DsePoint, EnergyModel,
    HeteroBackend, LinearPowerModel, SignalSpec, energy_savings, explore_dse, make_backend,
    run_hetero,
)
from approxcal.datagen import CalibrationProblem, synthesize
from approxcal.errors import SingularDenominatorError, ValidationError
from approxcal.fixedpoint import FixedFormat
from approxcal.stefcal import CORE_ACCURATE, CORE_APPROXIMATE, StefcalConfig, diff_rel, run

from oracles import datapath_iteration

ACC = DatapathConfig.accurate()
AX = DatapathConfig.approximate()
CFG = StefcalConfig()


def tiny_datapath(trunc=(0, 0, 0, 0, 0, 0)):
    """Four- to six-bit datapath small enough for exact-rational checking."""
    fmts = {"h": "Q4.2", "t": "Q4.2", "e_sac": "Q5.2", "f_sac": "Q5.3",
            "e_mac": "Q5.2", "f_mac": "Q6.3"}
    sig = {s: SignalSpec(FixedFormat.parse(fmts[s]), k) for s, k in zip(SIGNALS, trunc)}
    return DatapathConfig(sig, FixedFormat(5, 2), guard_bits=2)


# ---------------------------------------------------------------- configuration


def test_default_datapath_presets():
    assert {s: ACC.fmt(s).word_len for s in SIGNALS} == SIGNAL_WIDTHS
    assert ACC.truncation == (0,) * 6
    assert dict(zip(SIGNALS, AX.truncation)) == APPROX_TRUNCATION
    assert AX.total_truncated_bits == 36
    assert all(ACC.fmt(s).word_len <= 28 for s in SIGNALS) and ACC.gain_fmt.word_len <= 28


@pytest.mark.parametrize("change", [
    dict(trunc={"f_mac": 24}),
    dict(fmt={"e_mac": "Q29.20"}),
    dict(fmt={"t": "Q18.16"}),
])
def test_datapath_validation(change):
    d = ACC.to_dict()
    for s, k in change.get("trunc", {}).items():
        d["signals"][s]["truncation"] = k
    for s, f in change.get("fmt", {}).items():
        d["signals"][s]["format"] = f
    with pytest.raises(ValidationError):
        DatapathConfig.from_dict(d)


def test_datapath_dict_round_trip():
    assert DatapathConfig.from_dict(AX.to_dict()) == AX
    assert DatapathConfig.from_dict(json.loads(json.dumps(ACC.to_dict()))) == ACC


def test_accel_config_file(tmp_path):
    cfg = accel.default_accel_config()
    accel.save_accel_config(cfg, tmp_path / "a.json")
    back = accel.load_accel_config(tmp_path / "a.json")
    assert back.accurate == cfg.accurate and back.approximate == cfg.approximate
    assert back.power_model == cfg.power_model
    (tmp_path / "b.json").write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ValidationError):
        accel.load_accel_config(tmp_path / "b.json")


# ---------------------------------------------------------------- datapath arithmetic


@pytest.mark.parametrize("trunc", [(0, 0, 0, 0, 0, 0), (0, 0, 1, 2, 1, 2), (1, 1, 2, 2, 2, 3)])
@pytest.mark.parametrize("seed", range(3))
def test_iteration_matches_exact_rational_oracle(trunc, seed):
    dp = tiny_datapath(trunc)
    rng = np.random.default_rng(seed)
    P = 3
    M = (rng.integers(-8, 8, (P, P)) + 1j * rng.integers(-8, 8, (P, P))) / 4
    V = (rng.integers(-16, 16, (P, P)) + 1j * rng.integers(-16, 16, (P, P))) / 4
    g = (rng.integers(-8, 8, P) + 1j * rng.integers(-8, 8, P)) / 4
    sess = make_backend(dp).bind(CalibrationProblem(M=M, V=V))
    num, den = sess.fused(g, 1)
    for p, ((nr, ni), d) in enumerate(datapath_iteration(dp, M, V, g)):
        assert Fraction(num[p].real) == nr and Fraction(num[p].imag) == ni
        assert Fraction(den[p]) == d


def test_column_gain_update_matches_oracle():
    dp = tiny_datapath((0, 0, 1, 1, 1, 1))
    rng = np.random.default_rng(7)
    M = (rng.integers(-8, 8, (4, 4)) + 1j * rng.integers(-8, 8, (4, 4))) / 4
    V = (rng.integers(-16, 16, (4, 4)) + 1j * rng.integers(-16, 16, (4, 4))) / 4
    g = (rng.integers(1, 8, 4) + 1j * rng.integers(-4, 4, 4)) / 4
    be = make_backend(dp)
    want = datapath_iteration(dp, M, V, g)
    for p in range(4):
        Z = be.z_column(M[:, p], g)
        (nr, ni), d = want[p]
        if d == 0:
            with pytest.raises(SingularDenominatorError):
                be.gain_update(V[:, p], Z, p=p)
            continue
        assert be.gain_update(V[:, p], Z, p=p) == pytest.approx(
            complex(float(nr), float(ni)) / float(d), rel=1e-15)


def test_zero_truncation_approximate_equals_accurate():
    pr = synthesize(16, seed=3)
    a = run(pr, CFG, make_backend(ACC))
    b = run(pr, CFG, make_backend(ACC.with_truncation((0,) * 6)))
    assert [r.gains.tobytes() for r in a.records] == [r.gains.tobytes() for r in b.records]
    assert {r.core for r in b.records} == {CORE_APPROXIMATE}


def test_accurate_core_meets_fixed_vs_float_criterion():
    pr = synthesize(8, seed=0)
    ref = run(pr, CFG)
    fx = run(pr, CFG, make_backend(ACC))
    assert fx.converged
    assert diff_rel(ref.final_gains, fx.final_gains, phase_reference=True) <= 1e-5


@pytest.mark.parametrize("P", [8, 32, 124])
def test_accurate_core_never_saturates(P):
    for seed in range(3):
        trace = run(synthesize(P, seed=seed), CFG, make_backend(ACC))
        assert trace.quant_stats.saturations == 0


def test_saturation_is_reported_not_hidden():
    pr = synthesize(8, seed=0)
    squeezed = ACC.to_dict()
    squeezed["signals"]["f_mac"]["format"] = "Q24.23"
    trace = run(pr, CFG, make_backend(DatapathConfig.from_dict(squeezed)))
    assert trace.quant_stats.by_signal["f_mac"] > 0


# ---------------------------------------------------------------- heterogeneous runs


def test_hetero_zero_budget_is_accurate_run():
    pr = synthesize(32, seed=0)
    acc = run(pr, CFG, make_backend(ACC))
    assert run_hetero(pr, CFG, ACC, AX, 0).same_as(acc)


def test_hetero_full_budget_is_approximate_run():
    pr = synthesize(32, seed=0)
    ax = run(pr, CFG, make_backend(AX))
    het = run_hetero(pr, CFG, ACC, AX, CFG.max_iters)
    assert het.same_as(ax)


@given(st.integers(0, 30))
def test_hetero_with_identical_cores_is_accurate_run(n_ax):
    pr = synthesize(8, seed=1)
    acc = run(pr, CFG, make_backend(ACC))
    het = run(pr, CFG, HeteroBackend(make_backend(ACC), make_backend(ACC), n_ax))
    assert [r.gains.tobytes() for r in het.records] == [r.gains.tobytes() for r in acc.records]


def test_hetero_tags_cores():
    pr = synthesize(124, seed=0)
    het = run_hetero(pr, CFG, ACC, AX, 5)
    cores = [r.core for r in het.records]
    assert cores[:5] == [CORE_APPROXIMATE] * 5
    assert set(cores[5:]) == {CORE_ACCURATE}


def test_hetero_rejects_negative_budget():
    with pytest.raises(ValidationError):
        HeteroBackend(make_backend(ACC), make_backend(AX), -1)


# ---------------------------------------------------------------- energy


def test_energy_examples():
    assert energy_savings(EnergyModel(3.55, 2.08, 92, 52)).S_E == pytest.approx(0.2340, abs=5e-4)
    assert energy_savings(EnergyModel(3.55, 3.55, 92, 52)).S_E == 0
    assert energy_savings(EnergyModel(3.55, 2.08, 92, 0)).S_E == 0
    with pytest.raises(ValidationError):
        EnergyModel(3.55, 2.08, 92, 93)
    with pytest.raises(ValidationError):
        EnergyModel(0, 2.08, 92, 10)


@given(st.floats(0.1, 100), st.floats(0, 1), st.integers(1, 1000), st.data())
def test_energy_algebra_matches_totals(p_acc, ratio, n_acc, data):
    n_ax = data.draw(st.integers(0, n_acc))
    rep = energy_savings(EnergyModel(p_acc, p_acc * ratio, n_acc, n_ax))
    E_a = p_acc * n_acc
    E_h = p_acc * ratio * n_ax + p_acc * (n_acc - n_ax)
    assert rep.E_a == pytest.approx(E_a, rel=1e-12)
    assert rep.E_h == pytest.approx(E_h, rel=1e-12)
    assert rep.S_E == pytest.approx((E_a - E_h) / E_a, rel=1e-12, abs=1e-15)


def test_unequal_frequency_uses_iteration_times():
    rep = energy_savings(EnergyModel(4.0, 2.0, 10, 5, equal_frequency=False, t_acc=1.0, t_ax=1.5))
    assert rep.E_ax == 3.0
    assert rep.S_E == pytest.approx((4.0 - 3.0) * 5 / (4.0 * 10))


def test_linear_power_model_anchors():
    pm = LinearPowerModel()
    assert pm((0,) * 6) == pytest.approx(3.55)
    assert pm(AX.truncation) == pytest.approx(2.08)
    assert pm((0, 0, 4, 4, 4, 6)) == pytest.approx((3.55 + 2.08) / 2)


# ---------------------------------------------------------------- DSE


def test_dse_point_arithmetic_reproduces_reported_saving():
    pt = DsePoint(AX.truncation, 52, 92, 2.08, 3.55, ())
    assert pt.S_E == pytest.approx(0.234, abs=5e-4)


def test_dse_zero_truncation_saves_nothing():
    pts = explore_dse(synthesize(32, seed=0), CFG, ACC, [(0,) * 6])
    assert pts[0].S_E == 0


NESTED = [(0, 0, 4, 4, 4, 6), (0, 0, 8, 8, 8, 12), (0, 0, 10, 10, 10, 14),
          (0, 0, 12, 12, 12, 16), (2, 2, 14, 14, 14, 18)]


@pytest.mark.parametrize("seed", range(3))
def test_dse_feasible_budget_shrinks_with_truncation(seed):
    pts = explore_dse(synthesize(124, seed=seed), CFG, ACC, NESTED)
    by_trunc = {p.truncation: p.N_ax for p in pts}
    budgets = [by_trunc[t] for t in NESTED]
    assert budgets == sorted(budgets, reverse=True)
    assert [p.S_E for p in pts] == sorted((p.S_E for p in pts), reverse=True)


def test_dse_independent_of_jobs():
    pr = synthesize(124, seed=0)
    one = explore_dse(pr, CFG, ACC, NESTED, jobs=1)
    many = explore_dse(pr, CFG, ACC, NESTED, jobs=3)
    assert [p.as_dict() for p in one] == [p.as_dict() for p in many]
