import os
import subprocess
import sys
import time
from pathlib import Path

import pytest

from divctl import pide, verify
from divctl.gbm import build_solution
from divctl.params import Exponential, GbmDiscount, RiskModel, VasicekDiscount

# Frozen closed-form values for the two reference cases, taken from the
# implementation once its formulas were checked against the independent
# smooth-fit root finder and the integro-ODE residual.
P1_B_STAR = 6.452148038303382
P1_F_AT_B = 27.0382204497621


@pytest.fixture(scope="session")
def p1():
    return verify.P1


@pytest.fixture(scope="session")
def p2():
    return verify.P2


@pytest.fixture(scope="session")
def p1_sol():
    return build_solution(*verify.P1)


@pytest.fixture(scope="session")
def p2_sol():
    return build_solution(*verify.P2)


@pytest.fixture(scope="session")
def risk():
    return RiskModel(c=2.0, lam=1.0, claims=Exponential(1.0), M=1.0)


@pytest.fixture(scope="session")
def vd_frozen():
    """Vasicek rate with no volatility, started at its mean."""
    return VasicekDiscount(r0=0.03, a=1.0, b_bar=0.03, delta_bar=0.0)


@pytest.fixture(scope="session")
def vd_diffusive():
    return VasicekDiscount(r0=0.02, a=1.0, b_bar=0.05, delta_bar=0.1)


@pytest.fixture(scope="session")
def timings():
    """Wall-clock seconds of the expensive session fixtures, by name."""
    return {}


@pytest.fixture(scope="session")
def frozen_field(risk, vd_frozen, timings):
    """Degenerate constant-rate solve on the reference grid (2001 x 9)."""
    t0 = time.perf_counter()
    grid = pide.build_grid(vd_frozen, risk, pide.Domain(40.0, 2001, 9))
    fld = pide.solve(grid, risk, vd_frozen, tol=1e-8, max_iter=2_000_000)
    timings["frozen_field"] = time.perf_counter() - t0
    return fld


@pytest.fixture(scope="session")
def frozen_refinement(risk, vd_frozen, timings):
    t0 = time.perf_counter()
    rep = pide.refine_and_compare(risk, vd_frozen, pide.Domain(40.0, 501, 9), levels=3)
    timings["frozen_refinement"] = time.perf_counter() - t0
    return rep


@pytest.fixture(scope="session")
def diffusive_pair(risk, vd_diffusive):
    """Diffusive-rate fields on a grid and its halved refinement."""
    rep = pide.refine_and_compare(risk, vd_diffusive, pide.Domain(40.0, 401, 17), levels=2)
    return rep.fields


@pytest.fixture(scope="session")
def gbm_zero_growth():
    return GbmDiscount(r0=0.0, m=0.0, delta=0.0)


@pytest.fixture(scope="session")
def default_reports():
    """The full built-in verification suite at its reference settings."""
    return verify.default_suite()


# --- subprocess runs of every command under different worker counts ----------

P1_CONFIG = """
# reference case B
risk.c = 2
risk.lam = 1
risk.claims = exponential
risk.beta = 1
risk.M = 1
gbm.r0 = 0
gbm.m = 0.05
gbm.delta = 0.2
"""

VASICEK_CONFIG = """
risk.c = 2
risk.lam = 1
risk.beta = 1
risk.M = 1
vasicek.r0 = 0.02
vasicek.a = 1
vasicek.b_bar = 0.05
vasicek.delta_bar = 0.1
"""

DETERMINISM_CONFIGS = {
    "gbm.cfg": P1_CONFIG + "mc.x0 = 0, 3\nmc.horizon = 500\ncurve.n = 51\nrun.seed = 5\n",
    "vas.cfg": VASICEK_CONFIG + "grid.x_max = 20\ngrid.n_x = 101\ngrid.n_r = 9\nmc.x0 = 1, 4\n"
                                "mc.threshold = 3\nrun.seed = 6\n",
}

DETERMINISM_COMMANDS = [
    ("solve-gbm", "gbm.cfg", []),
    ("mc", "gbm.cfg", ["--paths", "400"]),
    ("mc", "vas.cfg", ["--paths", "400"]),
    ("solve-vasicek", "vas.cfg", []),
    ("bound", "vas.cfg", []),
    ("verify", None, ["--paths", "300", "--nx", "201", "--nr", "9", "--max-iter", "400000"]),
]


def run_every_command(workdir: Path, threads: int, tag: str) -> dict[str, bytes]:
    """CSV bytes of every command, keyed by command index and relative path."""
    env = dict(os.environ, DIVCTL_THREADS=str(threads))
    for name, text in DETERMINISM_CONFIGS.items():
        (workdir / name).write_text(text)
    outputs = {}
    for k, (cmd, cfg, extra) in enumerate(DETERMINISM_COMMANDS):
        out = workdir / f"{tag}-{k}"
        args = [sys.executable, "-m", "divctl.cli", cmd, "--out", str(out), *extra]
        if cfg:
            args += ["--config", str(workdir / cfg)]
        proc = subprocess.run(args, env=env, capture_output=True, text=True)
        # the reduced verify run may miss its oracles; only its bytes matter here
        if proc.returncode not in ((0, 2) if cmd == "verify" else (0,)):
            raise AssertionError(f"{cmd} exited {proc.returncode}: {proc.stderr}")
        for f in sorted(out.rglob("*.csv")):
            outputs[f"{k}/{f.relative_to(out)}"] = f.read_bytes()
    return outputs


@pytest.fixture(scope="session")
def determinism_runs(tmp_path_factory, timings):
    base = tmp_path_factory.mktemp("determinism")
    t0 = time.perf_counter()
    runs = [run_every_command(base, 1, "t1"), run_every_command(base, 4, "t4a"),
            run_every_command(base, 4, "t4b")]
    timings["determinism"] = time.perf_counter() - t0
    return runs
