import numpy as np
import pytest

import floodcoarse.bench
import floodcoarse.cli
import floodcoarse.optimize
import floodcoarse.solver
from floodcoarse.grid import ElevationMap
from floodcoarse.solver import BoundaryConditions, Segment, SolverParams

MASS_TOL = 1e-8
DEFICIT_TOL = 1e-6

# every simulate() call made by any test: (mass balance error, deficit / volume)
AUDIT = []
# acceptance lines, echoed in the terminal summary
ACCEPTANCE = []


def _audited(real):
    def simulate(z, bc, params=SolverParams(), h0=None, log_rows=True):
        state, log = real(z, bc, params, h0, log_rows)
        err = log.mass_balance_error()
        vol = max(log.final_volume, log.influx_volume, log.initial_volume)
        deficit = abs(log.clamp_deficit) / vol if vol > 0 else 0.0
        AUDIT.append((err, deficit if params.alpha == 0.7 else 0.0))
        assert err <= MASS_TOL, f"mass balance error {err:.3g} > {MASS_TOL}"
        if params.alpha == 0.7:
            assert deficit <= DEFICIT_TOL, f"clamp deficit {deficit:.3g} of volume > {DEFICIT_TOL}"
        return state, log
    return simulate


# Installed at import, before test modules bind the name, so that every
# simulation in the suite goes through the conservation check.
_SIMULATE = _audited(floodcoarse.solver.simulate)
for _mod in (floodcoarse.solver, floodcoarse.bench, floodcoarse.cli, floodcoarse.optimize):
    _mod.simulate = _SIMULATE


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
    if not AUDIT:
        return
    errs = np.array(AUDIT)
    ok = errs[:, 0].max() <= MASS_TOL and errs[:, 1].max() <= DEFICIT_TOL
    terminalreporter.write_line(
        f"[{'PASS' if ok else 'FAIL'}] criterion 3 (suite-wide): {len(AUDIT)} simulations, "
        f"max mass-balance error {errs[:, 0].max():.2e} (tol {MASS_TOL:g}), "
        f"max clamp deficit {errs[:, 1].max():.2e} of volume (tol {DEFICIT_TOL:g})")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_valley():
    """16x16 V-valley draining east with influx on the west edge."""
    i = np.arange(16)[:, None]
    j = np.arange(16)[None, :]
    z = 0.004 * 16 * np.abs(i - 7.5) - 0.002 * 16 * j
    bc = BoundaryConditions(Segment("W", 5, 6), 20.0, Segment("E", 5, 6), 1e-3)
    return ElevationMap(z, 16.0), bc, SolverParams(horizon_T=1800.0)
