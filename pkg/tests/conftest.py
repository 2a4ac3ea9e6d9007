import numpy as np
from hypothesis import HealthCheck, settings

from nvsplit.models import ModelSpec
from nvsplit.params import GenSabrParams, HestonParams, MultiSabrParams

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

# correlation matrix of the four-asset experiment as given (row-major, not symmetric)
PRINTED_RHO = np.array([
    [1, 0.0111, 0.6395, -0.1081, -0.3414, -0.0642, -0.2054, -0.0236],
    [0.0111, 1, 0.2698, 0.2770, 0.1651, -0.3504, -0.8186, -0.4383],
    [0.6395, 0.2698, 1, -0.1381, -0.1379, -0.0031, -0.3169, -0.0161],
    [-0.1081, 0.2770, -0.1381, 1, 0.7312, -0.9030, 0.0419, -0.8121],
    [-0.3414, 0.1651, -0.1379, 0.7312, 1, -0.5969, 0.0747, -0.6703],
    [-0.6420, -0.3504, -0.0031, -0.9030, -0.5969, 1, 0.1878, 0.8790],
    [-0.2054, -0.8186, -0.3169, 0.0419, 0.0747, 0.1878, 1, 0.2796],
    [-0.0236, -0.4383, -0.0161, -0.8121, -0.6703, 0.8790, 0.2796, 1],
])
UPPER_RHO = np.triu(PRINTED_RHO) + np.triu(PRINTED_RHO, 1).T

HESTON = HestonParams(mu=0.05, kappa=2.0, theta=0.09, xi=0.3, rho=-0.6)
SABR = GenSabrParams.sabr(beta=0.9, a=1.0, b=0.4, rho=-0.7)
GENSABR = GenSabrParams(a=1.0, b=0.5, alpha=0.5, beta=1.0, kappa=2.0, theta=0.3, rho=-0.7)


def multi_params(rho=UPPER_RHO):
    return MultiSabrParams(a=[1, 0.5, 0.3, 0.7], b=[0.5, 0.8, 0.4, 0.6], alpha=[0.5, 1, 0.7, 0.8],
                           beta=[0.6, 0.7, 0.8, 0.9], kappa=[0.2, 0.7, 0.5, 0.9],
                           theta=[0.3, 0.4, 0.6, 0.2], rho=rho)


class GeometricBrownian(ModelSpec):
    """One-noise test model with linear fields."""

    name = "gbm"
    n_state = 1
    n_noise = 1
    closed_flows = frozenset({0, 1})

    def __init__(self, mu=0.05, sigma=0.3):
        self.mu, self.sigma = mu, sigma

    def drift(self, x):
        return (self.mu - 0.5 * self.sigma**2) * np.asarray(x)

    def ito_drift(self, x):
        return self.mu * np.asarray(x)

    def diffusion(self, j, x):
        return self.sigma * np.asarray(x)

    def flow(self, j, s, x, diag=None, cfg=None):
        rate = self.mu - 0.5 * self.sigma**2 if j == 0 else self.sigma
        return np.asarray(x) * np.exp(rate * np.asarray(s))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
