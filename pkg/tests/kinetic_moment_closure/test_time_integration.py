"""Tests for the SSP tableaux, their storage and the step driver."""

import json
import math

import numpy as np
import pytest
from pydantic import ValidationError

from kinetic_moment_closure.errors import (
    InvalidArgumentError,
    NeedsStartupError,
    TableauError,
)
from kinetic_moment_closure.time_integration import (
    CFL_TOLERANCE,
    EFFECTIVE_CFL,
    TABLEAU_DIR_ENV,
    TABLEAU_NAMES,
    Integrator,
    SspTableau,
    StepHistory,
    as_evaluator,
    check_effective_cfl,
    design_tableau,
    euler_step,
    export_tableau,
    load_tableau,
    ssp_step,
    ssprk_n2_3,
    ssprk_s2,
    startup,
    tableau,
)

CLOSED_FORM = ["SSPRK(1,1,1)", "SSPRK(1,2,20)", "SSPRK(1,3,16)", "SSPRK(1,4,10)"]


def _two_step_euler() -> SspTableau:
    """Forward Euler dressed as a two-step method, to drive the startup."""
    return SspTableau(
        name="two-step Euler",
        steps=2,
        order=1,
        stages=1,
        rho=1.0,
        past_plain=((0.0, 0.0),),
        past_euler=((0.0, 0.0),),
        stage_plain=((0.0,),),
        stage_euler=((1.0,),),
    )


def _riccati(t, u):
    return -(u**2)


def _riccati_error(tab: SspTableau, n_steps: int) -> float:
    integrator = Integrator(tab, _riccati, 1.0 / n_steps)
    u = integrator.run(np.array([1.0]), n_steps)
    return abs(float(u[0]) - 0.5)


class TestClosedFormTableaux:
    @pytest.mark.parametrize(
        "name,stages,order,rho",
        [
            ("SSPRK(1,1,1)", 1, 1, 1.0),
            ("SSPRK(1,2,20)", 20, 2, 19.0),
            ("SSPRK(1,3,16)", 16, 3, 12.0),
            ("SSPRK(1,4,10)", 10, 4, 6.0),
        ],
    )
    def test_parameters(self, name, stages, order, rho):
        tab = tableau(name)
        assert (tab.stages, tab.order, tab.rho) == (stages, order, rho)
        assert tab.steps == 1
        assert tab.target_rho is None
        assert tab.effective_cfl == pytest.approx(rho / stages)

    @pytest.mark.parametrize("name", CLOSED_FORM)
    def test_order_certificate(self, name):
        tab = tableau(name)
        assert np.max(np.abs(tab.order_defects())) < 1e-12
        tab.check_certificate()
        # the order is sharp
        assert np.max(np.abs(tab.order_defects(tab.order + 1))) > 1e-6

    @pytest.mark.parametrize("name", CLOSED_FORM)
    def test_rows_are_convex(self, name):
        a = tableau(name).arrays
        sums = sum(arr.sum(axis=1) for arr in a.values())
        np.testing.assert_allclose(sums, 1.0, atol=1e-14)
        assert all(np.all(arr >= 0.0) for arr in a.values())

    def test_euler_chain_abscissae(self):
        np.testing.assert_allclose(tableau("SSPRK(1,2,20)").abscissae, np.arange(20) / 19)

    def test_other_stage_counts(self):
        assert ssprk_s2(5).rho == 4.0
        assert ssprk_n2_3(3).rho == 6.0
        assert np.max(np.abs(ssprk_n2_3(3).order_defects())) < 1e-12
        with pytest.raises(InvalidArgumentError):
            ssprk_s2(1)

    def test_name_lookup_is_forgiving(self):
        assert tableau("ssprk(1, 4, 10)").name == "SSPRK(1,4,10)"

    def test_unknown_name(self):
        with pytest.raises(InvalidArgumentError):
            tableau("RK4")

    def test_names_listed(self):
        assert set(CLOSED_FORM) < set(TABLEAU_NAMES)
        assert len(TABLEAU_NAMES) == 8

    def test_one_step_has_no_low_storage_form(self):
        with pytest.raises(InvalidArgumentError):
            tableau("SSPRK(1,3,16)").low_storage()


class TestTableauValidation:
    def test_rejects_future_stage(self):
        with pytest.raises(ValidationError):
            SspTableau(
                name="bad",
                steps=1,
                order=1,
                stages=2,
                rho=1.0,
                past_plain=((0.0,), (0.0,)),
                past_euler=((0.0,), (0.0,)),
                stage_plain=((0.0, 0.0), (0.0, 0.0)),
                stage_euler=((0.0, 1.0), (0.0, 1.0)),
            )

    def test_rejects_non_convex_row(self):
        with pytest.raises(ValidationError):
            SspTableau(
                name="bad",
                steps=1,
                order=1,
                stages=1,
                rho=1.0,
                past_plain=((0.5,),),
                past_euler=((0.0,),),
                stage_plain=((0.0,),),
                stage_euler=((0.8,),),
            )

    def test_rejects_negative_coefficient(self):
        with pytest.raises(ValidationError):
            SspTableau(
                name="bad",
                steps=1,
                order=1,
                stages=1,
                rho=1.0,
                past_plain=((-0.5,),),
                past_euler=((0.0,),),
                stage_plain=((0.0,),),
                stage_euler=((1.5,),),
            )


class TestStorage:
    def test_export_and_load(self, tmp_path):
        tab = tableau("SSPRK(1,4,10)")
        path = export_tableau(tab, tmp_path)
        assert path.name == "ssprk_1_4_10.json"
        loaded = load_tableau(path)
        assert loaded.model_dump() == tab.model_dump()
        assert json.loads(path.read_text())["sha256"] == tab.checksum()

    def test_tampered_coefficient(self, tmp_path):
        path = export_tableau(tableau("SSPRK(1,4,10)"), tmp_path)
        payload = json.loads(path.read_text())
        payload["tableau"]["rho"] = 7.0
        path.write_text(json.dumps(payload))
        with pytest.raises(TableauError, match="Checksum"):
            load_tableau(path)

    def test_order_is_rechecked(self, tmp_path):
        """A consistent checksum does not hide a broken order condition."""
        data = tableau("SSPRK(1,4,10)").model_dump()
        past = [list(row) for row in data["past_plain"]]
        euler = [list(row) for row in data["stage_euler"]]
        past[9][0] = 2.0 / 25.0
        euler[9][4] = 8.0 / 25.0
        data["past_plain"] = past
        data["stage_euler"] = euler
        broken = SspTableau.model_validate(data)
        path = export_tableau(broken, tmp_path)
        with pytest.raises(TableauError, match="order conditions"):
            load_tableau(path)

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(TableauError):
            load_tableau(path)


class TestConvergence:
    @pytest.mark.parametrize("name", CLOSED_FORM)
    def test_observed_order(self, name):
        """Riccati equation u' = -u**2, u(1) = 1/2."""
        tab = tableau(name)
        coarse = _riccati_error(tab, 10)
        fine = _riccati_error(tab, 20)
        assert math.log2(coarse / fine) >= tab.order - 0.3

    def test_contractive_on_decay(self):
        """Nonincreasing |u| for u' = -u at the SSP limit."""
        tab = tableau("SSPRK(1,3,16)")
        dt = tab.rho
        history = StepHistory()
        history.push(0.0, np.array([1.0]))
        u = ssp_step(tab, history, lambda t, v: -v, dt)
        assert 0.0 <= u[0] <= 1.0


class TestStepHistory:
    def test_latest_of_empty(self):
        with pytest.raises(NeedsStartupError):
            StepHistory().latest

    def test_times_must_increase(self):
        history = StepHistory()
        history.push(0.0, np.zeros(1))
        with pytest.raises(InvalidArgumentError):
            history.push(0.0, np.zeros(1))

    def test_window_and_prune(self):
        history = StepHistory()
        for t in (0.0, 0.5, 1.0, 1.5):
            history.push(t, np.array([t]))
        found = history.window(0.5, 3)
        assert [e.t for e in found] == [1.5, 1.0, 0.5]
        with pytest.raises(NeedsStartupError):
            history.window(1.0, 3)
        history.prune(1.0)
        assert history.times == (1.0, 1.5)

    def test_euler_evaluates_once(self):
        calls = []

        def rhs(t, u):
            calls.append(t)
            return -u

        history = StepHistory()
        entry = history.push(0.0, np.array([2.0]))
        for _ in range(3):
            value = entry.euler(as_evaluator(rhs), 0.5)
        assert value.tolist() == [1.0]
        assert len(calls) == 1


class TestStartup:
    def test_substeps_double(self):
        result = startup(_two_step_euler(), np.array([1.0]), _riccati, 0.1, q=2)
        np.testing.assert_allclose(result.substeps, [0.025, 0.025, 0.05])
        assert result.history.times == pytest.approx((0.0, 0.025, 0.05, 0.1))

    def test_one_step_method_needs_nothing(self):
        result = startup(tableau("SSPRK(1,1,1)"), np.array([1.0]), _riccati, 0.1)
        assert result.substeps == []
        assert len(result.history) == 1

    def test_short_run_finishes_in_startup(self):
        result = startup(
            _two_step_euler(), np.array([1.0]), _riccati, 0.1, q=2, t_end=0.03
        )
        assert result.history.latest.t == pytest.approx(0.03)
        assert result.substeps == pytest.approx([0.025, 0.005])
        assert sum(result.substeps) == pytest.approx(0.03)

    def test_negative_exponent(self):
        with pytest.raises(InvalidArgumentError):
            startup(_two_step_euler(), np.array([1.0]), _riccati, 0.1, q=-1)


class TestIntegrator:
    def test_callback_at_every_step(self):
        seen = []
        integrator = Integrator(_two_step_euler(), _riccati, 0.1)
        integrator.run(np.array([1.0]), 4, callback=lambda n, t, u: seen.append((n, t)))
        assert [n for n, _ in seen] == [1, 2, 3, 4]
        assert seen[-1][1] == pytest.approx(0.4)
        assert integrator.n_steps == 4
        assert integrator.substeps == pytest.approx([0.025, 0.025, 0.05])

    def test_monitor_sees_euler_steps(self):
        sizes = []
        tab = tableau("SSPRK(1,2,20)")
        integrator = Integrator(tab, _riccati, 1.9, monitor=sizes.append)
        integrator.run(np.array([1.0]), 1)
        assert len(sizes) == 20
        assert sizes[0] == pytest.approx(0.1)

    def test_rejects_non_positive_step(self):
        with pytest.raises(InvalidArgumentError):
            Integrator(tableau("SSPRK(1,1,1)"), _riccati, 0.0)

    def test_euler_step(self):
        assert euler_step(np.array([2.0]), _riccati, 0.25).tolist() == [1.0]


class TestEffectiveCfl:
    @pytest.mark.parametrize("name", CLOSED_FORM)
    def test_closed_forms_match_the_registry(self, name):
        tab = tableau(name)
        assert tab.effective_cfl == pytest.approx(EFFECTIVE_CFL[name], abs=CFL_TOLERANCE)

    def test_registry_values(self):
        assert EFFECTIVE_CFL["TSRK(2,5,8)"] == 0.4474
        assert EFFECTIVE_CFL["MSRK(5,7,12)"] * 12 == pytest.approx(3.7068)
        assert set(EFFECTIVE_CFL) == set(TABLEAU_NAMES)

    def test_rho_off_the_registry(self):
        slow = tableau("SSPRK(1,2,20)").model_copy(update={"rho": 15.0})
        with pytest.raises(TableauError, match="effective CFL 0.7500"):
            check_effective_cfl(slow)

    def test_within_tolerance(self):
        close = tableau("SSPRK(1,2,20)").model_copy(update={"rho": 18.95})
        check_effective_cfl(close)

    def test_wrong_shape_for_name(self):
        impostor = _two_step_euler().model_copy(update={"name": "TSRK(2,5,8)"})
        with pytest.raises(TableauError, match="steps, order, stages"):
            check_effective_cfl(impostor)

    def test_unregistered_names_pass(self):
        check_effective_cfl(_two_step_euler())


class TestStoredMultistep:
    @pytest.fixture(autouse=True)
    def fresh_cache(self):
        tableau.cache_clear()
        yield
        tableau.cache_clear()

    def test_stored_file_must_reach_its_cfl(self, tmp_path, monkeypatch):
        impostor = _two_step_euler().model_copy(update={"name": "TSRK(2,5,8)"})
        export_tableau(impostor, tmp_path)
        monkeypatch.setenv(TABLEAU_DIR_ENV, str(tmp_path))
        with pytest.raises(TableauError, match="TSRK\\(2,5,8\\)"):
            tableau("TSRK(2,5,8)")

    def test_stored_file_with_other_name(self, tmp_path, monkeypatch):
        path = export_tableau(_two_step_euler(), tmp_path)
        path.rename(tmp_path / "tsrk_2_6_12.json")
        monkeypatch.setenv(TABLEAU_DIR_ENV, str(tmp_path))
        with pytest.raises(TableauError, match="named two-step Euler"):
            tableau("TSRK(2,6,12)")

    def test_tampered_stored_file(self, tmp_path, monkeypatch):
        path = export_tableau(_two_step_euler(), tmp_path)
        payload = json.loads(path.read_text())
        payload["tableau"]["name"] = "TSRK(2,7,12)"
        (tmp_path / "tsrk_2_7_12.json").write_text(json.dumps(payload))
        monkeypatch.setenv(TABLEAU_DIR_ENV, str(tmp_path))
        with pytest.raises(TableauError, match="Checksum"):
            tableau("TSRK(2,7,12)")


class TestDesign:
    def test_design_stays_in_the_cfl_window(self):
        tab = design_tableau("three-stage", 1, 2, 3, 2.0)
        assert tab.target_rho == 2.0
        assert 2.0 - CFL_TOLERANCE * 3 <= tab.rho < 2.0
        assert tab.effective_cfl == pytest.approx(2.0 / 3.0, abs=CFL_TOLERANCE)
        tab.check_certificate()

    def test_infeasible_design_raises_without_warning(self, recwarn):
        """No two-stage second-order method has rho above 1."""
        with pytest.raises(TableauError, match="Could not design"):
            design_tableau("two-stage", 1, 2, 2, 1.3, restarts=1)
        assert not [w for w in recwarn if "kinetic_moment_closure" in w.filename]


def _five_step_euler() -> SspTableau:
    """Forward Euler dressed as a five-step method with a larger rho."""
    return SspTableau(
        name="five-step Euler",
        steps=5,
        order=1,
        stages=1,
        rho=1.5,
        past_plain=((0.0,) * 5,),
        past_euler=((0.0,) * 5,),
        stage_plain=((0.0,),),
        stage_euler=((1.0,),),
    )


class TestFiveStepStartup:
    def test_substeps_are_capped_by_the_helper(self):
        dt = 0.1
        result = startup(
            _five_step_euler(), np.array([1.0]), _riccati, dt, q=2, helper=_two_step_euler()
        )
        np.testing.assert_allclose(result.substeps, [dt / 4, dt / 4] + [dt / 2] * 7)
        assert max(result.substeps) <= dt / 2
        assert sum(result.substeps) == pytest.approx(4 * dt)
        assert result.history.latest.t == pytest.approx(4 * dt)

    def test_helper_must_have_two_steps(self):
        with pytest.raises(InvalidArgumentError, match="two-step"):
            startup(
                _five_step_euler(),
                np.array([1.0]),
                _riccati,
                0.1,
                helper=tableau("SSPRK(1,1,1)"),
            )


def _riccati_at(tab: SspTableau, n_steps: int, q_init: int) -> float:
    """u' = -u**2, u(0) = 1 integrated to t = 4."""
    integrator = Integrator(tab, _riccati, 4.0 / n_steps, q_init=q_init)
    return float(integrator.run(np.array([1.0]), n_steps)[0])


def _richardson_order(tab: SspTableau, n_steps: int) -> float:
    # a fine first startup step keeps the fourth-order starter below the method error
    q_init = 6 if tab.steps > 1 else 2
    coarse, mid, fine = (_riccati_at(tab, n, q_init) for n in (n_steps, 2 * n_steps, 4 * n_steps))
    return math.log2(abs(coarse - mid) / abs(mid - fine))


MULTISTEP = ["TSRK(2,5,8)", "TSRK(2,6,12)", "TSRK(2,7,12)", "MSRK(5,7,12)"]


@pytest.mark.parametrize(
    "name",
    CLOSED_FORM + [pytest.param(name, marks=pytest.mark.slow) for name in MULTISTEP],
)
def test_richardson_order(name):
    tab = tableau(name)
    assert _richardson_order(tab, 10) >= tab.order - 0.2


@pytest.mark.slow
@pytest.mark.parametrize("name", MULTISTEP)
def test_multistep_tableaux(name):
    tab = tableau(name)
    assert tab.effective_cfl == pytest.approx(EFFECTIVE_CFL[name], abs=CFL_TOLERANCE)
    assert np.max(np.abs(tab.order_defects())) <= 1e-10
    if tab.steps == 2:
        storage = tab.low_storage()
        assert storage["q"].shape == (tab.stages - 1, tab.stages)


@pytest.mark.slow
def test_five_step_startup_uses_half_steps():
    dt = 0.05
    result = startup(tableau("MSRK(5,7,12)"), np.array([1.0]), _riccati, dt, q=3)
    assert max(result.substeps) <= dt / 2 + 1e-15
    assert sum(result.substeps) == pytest.approx(4 * dt)


@pytest.mark.slow
def test_two_step_order_on_riccati():
    tab = tableau("TSRK(2,5,8)")
    coarse = _riccati_error(tab, 8)
    fine = _riccati_error(tab, 16)
    assert math.log2(coarse / fine) >= 4.5
