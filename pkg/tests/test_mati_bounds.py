import csv
import math

import numpy as np
import pytest

from conftest import draw_feasible_parameters
from ncsim.bench import benchmark_constants
from ncsim.mati_bounds import (
    InfeasibleError,
    ProtocolConstants,
    StabilityCertificate,
    contraction_rate,
    prop5_constants,
    sweep_lambda_rho,
    sweep_ps,
    tau_star,
    tau_star_ode,
    ugasp_protocol_check,
    write_lr_sweep_csv,
    write_ps_sweep_csv,
)


class TestTauStar:
    def test_robot_arm_published_values(self):
        consts, cert = benchmark_constants("robot-arm", "tod")
        assert tau_star(consts, cert, 1.0).tau_star == pytest.approx(0.006874, abs=1e-5)
        consts, cert = benchmark_constants("robot-arm", "rr")
        assert tau_star(consts, cert, 1.0).tau_star == pytest.approx(0.005482, abs=1e-5)

    def test_equal_rates_branch_by_hand(self):
        consts = ProtocolConstants(rho=0.5, lam=1.0)
        res = tau_star(consts, StabilityCertificate(L=1.0, gamma=1.0), 1.0)
        assert res.branch == "gamma=L"
        assert res.tau_star == pytest.approx((1 - 0.25) / (1.5 * 1.5), abs=1e-15)

    def test_batch_reactor_deterministic_vs_oracle(self):
        consts, cert = benchmark_constants("batch-reactor", "tod")
        res = tau_star(consts, cert, 1.0)
        assert res.tau_star == pytest.approx(0.01084, abs=1e-5)
        assert res.tau_star == pytest.approx(tau_star_ode(consts, cert, 1.0), abs=1e-8)

    def test_infeasible_returns_flag(self):
        consts = ProtocolConstants(rho=math.sqrt(0.5), lam=math.sqrt(2.0))
        res = tau_star(consts, StabilityCertificate(L=1.0, gamma=2.0), 0.5)
        assert not res.feasible
        assert math.isnan(res.tau_star)
        assert res.rho_prime > 1.0

    def test_rho_prime_definition(self):
        consts = ProtocolConstants(rho=0.6, lam=1.3)
        res = tau_star(consts, StabilityCertificate(L=3.0, gamma=5.0), 0.9)
        assert res.rho_prime == pytest.approx(contraction_rate(consts, 0.9) / 0.6, rel=1e-15)
        assert res.feasible and consts.rho * res.rho_prime < 1.0

    def test_branch_tags(self):
        consts = ProtocolConstants(rho=0.5, lam=1.0)
        assert tau_star(consts, StabilityCertificate(L=1.0, gamma=2.0), 1.0).branch == "gamma>L"
        assert tau_star(consts, StabilityCertificate(L=2.0, gamma=1.0), 1.0).branch == "gamma<L"
        assert (
            tau_star(consts, StabilityCertificate(L=2.0, gamma=2.0 * (1 + 1e-13)), 1.0).branch
            == "gamma=L"
        )

    def test_arctanh_argument_stays_in_domain(self, rng):
        """In the gamma < L branch the arctanh argument is provably < 1 for
        feasible parameters; exercised across random draws."""
        for consts, cert, ps in draw_feasible_parameters(rng, 200, branch_cycle=False):
            cert_lo = StabilityCertificate(L=cert.L, gamma=cert.L * 0.5)
            res = tau_star(consts, cert_lo, ps)
            assert res.feasible and res.tau_star > 0.0

    def test_invalid_inputs(self):
        consts = ProtocolConstants(rho=0.5, lam=1.0)
        cert = StabilityCertificate(L=1.0, gamma=1.0)
        with pytest.raises(ValueError):
            tau_star(consts, cert, 0.0)
        with pytest.raises(ValueError):
            tau_star(ProtocolConstants(rho=0.0, lam=1.0), cert, 0.9)


class TestTauStarOde:
    def test_agrees_with_closed_form_across_branches(self, rng):
        worst = 0.0
        for consts, cert, ps in draw_feasible_parameters(rng, 100):
            closed = tau_star(consts, cert, ps).tau_star
            ode = tau_star_ode(consts, cert, ps, tol=1e-11)
            worst = max(worst, abs(closed - ode))
        assert worst <= 1e-8

    def test_infeasible_raises(self):
        consts = ProtocolConstants(rho=math.sqrt(0.5), lam=math.sqrt(2.0))
        with pytest.raises(InfeasibleError):
            tau_star_ode(consts, StabilityCertificate(L=1.0, gamma=2.0), 0.5)

    def test_continuity_across_branches(self):
        consts = ProtocolConstants(rho=0.6, lam=1.2)
        for L in (5.0, 15.0):
            mid = tau_star(consts, StabilityCertificate(L=L, gamma=L), 0.9).tau_star
            hi = tau_star(consts, StabilityCertificate(L=L, gamma=L * (1 + 1e-9)), 0.9).tau_star
            lo = tau_star(consts, StabilityCertificate(L=L, gamma=L * (1 - 1e-9)), 0.9).tau_star
            assert abs(hi - mid) <= 1e-6
            assert abs(lo - mid) <= 1e-6


class TestUgasp:
    def test_threshold_two_minus_sqrt2(self):
        consts = ProtocolConstants(rho=math.sqrt(0.5), lam=math.sqrt(2.0))
        thr = 2.0 - math.sqrt(2.0)
        assert ugasp_protocol_check(consts, thr + 1e-9)[1]
        assert not ugasp_protocol_check(consts, thr - 1e-9)[1]

    def test_no_dropouts_always_stable(self):
        for rho in (0.1, 0.5, 0.99):
            rho_bar, ok = ugasp_protocol_check(ProtocolConstants(rho=rho, lam=1.7), 1.0)
            assert ok and rho_bar == pytest.approx(rho)

    def test_robot_arm_arithmetic(self):
        consts = ProtocolConstants(rho=math.sqrt(2.0 / 3.0), lam=1.0)
        rho_bar, ok = ugasp_protocol_check(consts, 0.808)
        assert ok
        assert rho_bar == pytest.approx(0.192 + math.sqrt(2.0 / 3.0) * 0.808, abs=1e-12)


class TestProp5Constants:
    def test_tod_two_nodes(self):
        consts, L = prop5_constants("tod", 2, 15.73)
        assert consts.rho == pytest.approx(math.sqrt(0.5))
        assert consts.lam == 1.0
        assert consts.alpha1w == consts.alpha2w == 1.0
        assert L == pytest.approx(15.73)

    def test_rr_two_nodes(self):
        consts, L = prop5_constants("rr", 2, 15.73)
        assert consts.lam == pytest.approx(math.sqrt(2.0))
        assert consts.alpha2w == pytest.approx(math.sqrt(2.0))
        assert L == pytest.approx(math.sqrt(2.0) * 15.73)

    def test_single_node_resets_fully(self):
        consts, _ = prop5_constants("tod", 1, 3.0)
        assert consts.rho == 0.0


class TestSweeps:
    def test_ps_sweep_monotone_and_matches_deterministic_endpoint(self):
        consts, cert = benchmark_constants("batch-reactor", "tod")
        pts = sweep_ps(consts, cert, [0.05 * k for k in range(1, 21)])
        taus = [p.result.tau_star for p in pts]
        assert all(p.result.feasible for p in pts)
        assert all(b > a for a, b in zip(taus, taus[1:]))
        assert taus[-1] == pytest.approx(tau_star(consts, cert, 1.0).tau_star, rel=1e-12)

    def test_rr_feasibility_boundary(self):
        consts, cert = benchmark_constants("batch-reactor", "rr")
        assert not tau_star(consts, cert, 2.0 / 3.0).feasible
        assert tau_star(consts, cert, 2.0 / 3.0 + 1e-9).feasible
        pts = sweep_ps(consts, cert, [0.1, 0.3, 0.5, 2.0 / 3.0, 0.7, 0.9])
        feas = [p.result.feasible for p in pts]
        assert feas == [False, False, False, False, True, True]

    def test_stochastic_strictly_tighter_than_deterministic(self):
        consts, cert = benchmark_constants("batch-reactor", "tod")
        det = tau_star(consts, cert, 1.0).tau_star
        for ps in (0.3, 0.6, 0.9, 0.999):
            assert tau_star(consts, cert, ps).tau_star < det

    def test_infeasibility_monotone(self, rng):
        for consts, cert, _ in draw_feasible_parameters(rng, 30):
            grid = np.linspace(0.01, 1.0, 60)
            feas = [tau_star(consts, cert, float(p)).feasible for p in grid]
            # once feasible, stays feasible as ps grows
            first = feas.index(True) if True in feas else len(feas)
            assert all(feas[first:])

    def test_lambda_rho_shapes(self):
        _, cert = benchmark_constants("batch-reactor", "rr")
        lams = [1.0, 1.4, 1.8]
        rhos = [0.05 * k for k in range(1, 20)]
        pts = sweep_lambda_rho(cert, 0.8, lams, rhos)
        by_lam = {lam: [] for lam in lams}
        for pt in pts:
            by_lam[pt.lam].append(pt.result.tau_star if pt.result.feasible else None)
        # fixed rho: tau* non-increasing in lambda
        for idx in range(len(rhos)):
            col = [by_lam[lam][idx] for lam in lams if by_lam[lam][idx] is not None]
            assert all(b <= a + 1e-15 for a, b in zip(col, col[1:]))
        # lambda = 1 at ps = 1 reproduces the deterministic curve
        det = sweep_lambda_rho(cert, 1.0, [1.0], rhos)
        for pt in det:
            direct = tau_star(ProtocolConstants(rho=pt.rho, lam=1.0), cert, 1.0)
            assert pt.result.tau_star == pytest.approx(direct.tau_star, rel=1e-14)

    def test_csv_formats(self, tmp_path):
        consts, cert = benchmark_constants("batch-reactor", "rr")
        pts = sweep_ps(consts, cert, [0.5, 0.9])
        path = tmp_path / "ps.csv"
        write_ps_sweep_csv(pts, path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["ps", "tau_star"]
        assert rows[1][1] == ""  # infeasible cell stays empty
        assert float(rows[2][1]) > 0.0

        lr = sweep_lambda_rho(cert, 0.5, [1.0, 1.9], [0.5])
        path2 = tmp_path / "lr.csv"
        write_lr_sweep_csv(lr, path2)
        rows2 = list(csv.reader(open(path2)))
        assert rows2[0] == ["lambda", "rho", "tau_star"]
        assert float(rows2[1][2]) > 0.0
        assert rows2[2][2] == ""  # lam=1.9 at ps=0.5 is infeasible
