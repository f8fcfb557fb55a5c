import numpy as np
import pytest

from mfcontrol.binary_control import ControlSet, hjb_solve
from mfcontrol.model import ConfigError, CostBreakdown
from mfcontrol.presets import (
    benchmark_calibration,
    benchmark_cost,
    evaluate_method,
    get_preset,
    suggested_relaxation,
)


class TestPresets:
    def test_sznajd_parameters(self):
        p = get_preset("sznajd")
        c = p.config
        assert (c.sigma, c.gamma, c.x_d, c.T) == (0.01, 0.5, -0.5, 8.0)
        assert (c.dt, c.dx, c.L, c.n_samples) == (2.5e-3, 2.5e-2, 1.0, 500_000)
        assert p.kernel.kind == "sznajd" and p.kernel.beta == -1.0
        assert p.initial.kind == "sznajd_bivariate"
        assert c.n_steps == 3200

    def test_hk_parameters(self):
        p = get_preset("hk")
        c = p.config
        assert (c.sigma, c.gamma, c.x_d, c.T) == (1e-5, 2.5, 0.0, 20.0)
        assert p.kernel.kind == "bounded_confidence" and p.kernel.kappa == 0.15
        assert p.initial.kind == "hk_perturbed_uniform"
        assert c.n_steps == 8000

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            get_preset("voter")

    def test_literal_initial_flag(self):
        p = get_preset("sznajd", literal_initial=True)
        assert p.initial.literal

    def test_relaxation_scales_with_gamma(self):
        p = get_preset("sznajd")
        assert suggested_relaxation(p.config) == pytest.approx(0.2)
        assert suggested_relaxation(p.config.with_overrides(gamma=0.05)) == \
            pytest.approx(0.02)
        assert suggested_relaxation(p.config.with_overrides(gamma=2.5)) == 0.5


class TestBenchmarkCost:
    def test_doubles_every_field(self):
        c = CostBreakdown.from_terms(0.25, 0.5, std_error=0.01)
        d = benchmark_cost(c)
        assert (d.J, d.state_term, d.control_term, d.std_error) == \
            (1.5, 0.5, 1.0, 0.02)


class TestCalibration:
    def test_published_configurations_have_entries(self):
        a = benchmark_calibration("sznajd", 0.5)
        assert a.ic_mode.variant == "scaled_kinetic" and a.hjb_drift == "copy"
        b = benchmark_calibration("sznajd", 0.05)
        assert b.ic_mode.variant == "scaled_gamma_bar"
        c = benchmark_calibration("hk", 2.5)
        assert c.ic_mode.variant == "scaled_gamma_bar"

    def test_off_benchmark_falls_back_to_defaults(self):
        cal = benchmark_calibration("sznajd", 0.33)
        assert cal.hjb_drift == "swap"
        assert cal.ic_mode == get_preset("sznajd").ic_mode


class TestEvaluateMethod:
    def small(self):
        p = get_preset("sznajd")
        return p, p.config.with_overrides(T=0.05, n_samples=1500)

    def test_uncontrolled_dispatch(self):
        p, cfg = self.small()
        out = evaluate_method("uncontrolled", p, cfg)
        assert out.control is not None
        assert np.all(out.control.values == 0.0)
        assert out.cost.control_term == 0.0

    def test_ic_dispatch_reports_empirical_cost(self):
        p, cfg = self.small()
        out = evaluate_method("ic", p, cfg)
        assert out.control_stats is not None
        assert out.cost.std_error > 0.0

    def test_fh_requires_table(self):
        p, cfg = self.small()
        with pytest.raises(ConfigError, match="hjb"):
            evaluate_method("fh", p, cfg)

    def test_fh_with_table(self):
        p, cfg = self.small()
        _, table = hjb_solve(cfg, p.kernel, ControlSet(u_max=2, n_u=5),
                             keep_value=False)
        out = evaluate_method("fh", p, cfg, table=table)
        assert out.cost.J >= 0.0

    def test_oc_dispatch(self):
        p, cfg = self.small()
        out = evaluate_method("oc", p, cfg)
        assert out.sweep_report is not None
        assert out.control is not None

    def test_unknown_method(self):
        p, cfg = self.small()
        with pytest.raises(ConfigError):
            evaluate_method("zen", p, cfg)
