"""Shared helpers: small random networks and finite-difference oracles.

The finite-difference routines are intentionally naive (loops, one probe
per coordinate) so they stay an independent check on the analytic code
paths rather than a re-export of them.
"""

import numpy as np

from casokit import netcore as nc

ACCEPTANCE_VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance report")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)


def random_relu_net(rng, d=8, hidden=12, c=4):
    spec = nc.NetworkSpec(
        (nc.LayerSpec(d, hidden, "relu"), nc.LayerSpec(hidden, c, "identity"))
    )
    return nc.init_network(spec, seed=int(rng.integers(0, 2**31)))


def fd_loss_gradient(net, x, y, r=1e-6):
    """Central difference of the loss, coordinate by coordinate."""
    d = x.shape[0]
    g = np.zeros(d)
    for j in range(d):
        e = np.zeros(d)
        e[j] = r
        lp = nc.forward(net, x + e, y).loss
        lm = nc.forward(net, x - e, y).loss
        g[j] = (lp - lm) / (2.0 * r)
    return g


def fd_loss_hessian(net, x, y, r=1e-5):
    """Central difference of the exact gradient, column by column,
    symmetrized."""
    d = x.shape[0]
    H = np.zeros((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = r
        gp = nc.input_gradient(net, x + e, y)
        gm = nc.input_gradient(net, x - e, y)
        H[:, j] = (gp - gm) / (2.0 * r)
    return 0.5 * (H + H.T)
