import numpy as np
import pytest

from gii import auxiliary as aux
from gii import criterion as cr
from gii.models import StructuralConfig, draw_shocks, generate_observed


class M1Fixture:
    """M1 with (b, r) = (1, 0.4), n = 1000, T = 5, aux #3, LR at lambda = 0.03, M = 10."""

    def __init__(self, seed=11, kind="LR", lam=0.03, M=10, n=1000, T=5):
        self.cfg = StructuralConfig("M1", [1.0, 0.4], n=n, T=T)
        self.shocks = draw_shocks(self.cfg, M, seed)
        self.data = generate_observed(self.cfg, self.shocks)
        self.Y = self.data.outcome_batch()
        self.spec = aux.make_spec("M1", "#3", T)
        self.design = aux.AuxiliaryDesign(self.spec, self.shocks.x)
        self.M = M
        self.seed = seed

    def criterion(self, kind="LR", lam=0.03, M=None, **kw):
        ccfg = cr.CriterionConfig(kind, lam, self.M if M is None else M, **kw)
        return cr.make_criterion(self.cfg, self.shocks, self.spec, self.Y, ccfg,
                                 design=self.design)


@pytest.fixture(scope="session")
def m1():
    return M1Fixture()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# acceptance report: one PASS/FAIL line per criterion at the end of the run


@pytest.fixture
def record_acceptance(request):
    lines = request.config.__dict__.setdefault("_gii_acceptance", {})

    def record(number, title, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}  {title}: {detail}"
        lines[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_gii_acceptance")
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])
