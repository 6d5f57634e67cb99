import functools

import pytest

from tssdn.runner import RunConfig, run_scenario
from tssdn.scenario import load_reference


@functools.lru_cache(maxsize=None)
def reference():
    return load_reference()


@functools.lru_cache(maxsize=None)
def reference_run(variant="tssdn", update="sync", seed=1, sr_at_s=None, gates=True, t_end_s=None):
    cfg = RunConfig(variant=variant, update=update, seed=seed, sr_at_s=sr_at_s, gates=gates, t_end_s=t_end_s)
    return run_scenario(reference(), cfg)


@pytest.fixture(scope="session")
def ref():
    return reference()


@pytest.fixture(scope="session")
def tssdn_sync():
    return reference_run()


@pytest.fixture(scope="session")
def tsn_static():
    return reference_run("tsn")


@pytest.fixture(scope="session")
def tssdn_ordered():
    return reference_run(update="ordered")


@pytest.fixture(scope="session")
def tssdn_split():
    return reference_run(update="split")


# --- acceptance summary ---------------------------------------------------------------

ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE.setdefault(number, []).append((bool(ok), detail))
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[number]
        ok = all(passed for passed, _ in checks)
        details = "; ".join(detail for _, detail in checks)
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {details}")
