import pytest

from rainbow_vectors import synth


@pytest.fixture(scope="session")
def skysat_scene():
    return synth.render_scene(synth.random_scene("skysat", seed=11))


@pytest.fixture(scope="session")
def superdove_scene():
    return synth.render_scene(synth.random_scene("superdove", n_static=0, seed=11, snr=20))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
