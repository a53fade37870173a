import numpy as np
import pytest

from lego.imagecore import build_dct_basis


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def basis32():
    return build_dct_basis(32, 32, 48)


@pytest.fixture(scope="session")
def small_world(basis32):
    """Generator, clean/weak/strong sets, fitted oracle and calibrated gate (seeded)."""
    from types import SimpleNamespace

    from lego.gate import GateConfig, calibrate
    from lego.imagecore import encode
    from lego.oracle import build_oracle
    from lego.synthgen import degrade_set, generator_prior, make_clean_set, preset_strong, preset_weak

    rng = np.random.default_rng(7)
    gen = generator_prior(basis32, 8, rng)
    clean, affine = make_clean_set(gen, basis32, 512, rng)
    weak, _ = degrade_set(clean, preset_weak(), rng)
    strong, _ = degrade_set(clean, preset_strong(), rng)
    held, _ = make_clean_set(gen, basis32, 256, rng, affine)
    prior = build_oracle(encode(clean, basis32), encode(strong, basis32), 8, np.random.default_rng(8))
    a, b = calibrate(prior, basis32, clean)
    return SimpleNamespace(basis=basis32, gen=gen, affine=affine, clean=clean, weak=weak, strong=strong,
                           held=held, prior=prior, gate=GateConfig(4.2, a, b))


# criterion number -> (name, passed, detail); filled by test_acceptance, printed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  C{n:<2d} {name}: {detail}")
