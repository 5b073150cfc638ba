from pathlib import Path

import numpy as np
import pytest

from delaycrn import HistoryFunction, load_network, parse_network, stoichiometric_subspace

NETWORKS = Path(__file__).resolve().parent.parent / "networks"

DIMER_TEXT = "2 X1 -> X2 : rate=1, delay=0\nX2 -> 2 X1 : rate=2, delay=0.5"

# complex balanced reference points for the corpus (checked in test_stoichiometry)
CORPUS_EQUILIBRIA = {
    "dimer": [2.0, 2.0],
    "dimer_nodelay": [2.0, 2.0],
    "cycle3": [6.0, 3.0, 2.0],
    "binding": [1.0, 1.0, 1.0],
    "inflow": [0.5],
    "two_linkage": [1.0, 1.0, 1.0, 2.0],
}

_criteria: dict[str, tuple[bool, str]] = {}


def corpus(name):
    return load_network(NETWORKS / f"{name}.crn")


@pytest.fixture
def dimer():
    return parse_network(DIMER_TEXT)


@pytest.fixture
def dimer_report(dimer):
    return stoichiometric_subspace(dimer)


def dimer_with_delay(tau):
    return parse_network(DIMER_TEXT).with_delays([0.0, tau])


def const(values, net):
    return HistoryFunction.constant(values, net.max_delay)


def wavy_history(net, x_bar, amplitude, seed):
    """Positive sampled history x_bar + perturbation with sup-norm distance <= amplitude."""
    rng = np.random.default_rng(seed)
    tau = net.max_delay
    t = np.linspace(-tau, 0.0, 41) if tau > 0 else np.array([0.0])
    n = net.n_species
    freq = rng.uniform(0.5, 3.0, n)
    phase = rng.uniform(0, 2 * np.pi, n)
    direction = rng.normal(size=n)
    direction /= np.linalg.norm(direction)
    x_bar = np.asarray(x_bar, dtype=float)
    pert = amplitude * direction[None, :] * np.cos(freq[None, :] * t[:, None] + phase[None, :])
    samples = np.maximum(x_bar[None, :] + pert, 1e-3)
    return HistoryFunction.sampled(t, samples, tau)


@pytest.fixture
def record_criterion():
    def record(label, passed, detail=""):
        _criteria[label] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_criteria, key=lambda s: int(s.split()[0])):
        passed, detail = _criteria[label]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {label}  {detail}")
