"""Regenerate frozen_oracles.json from implementations independent of the package.

Energies come from a Kronecker-product Hamiltonian; network amplitudes from a
plain-Python sum over every hidden and deep configuration.  Run from the
repository root: ``python tests/data/freeze_oracles.py``.
"""

import itertools
import json
import math
from pathlib import Path

import numpy as np

SX = np.array([[0, 1], [1, 0]]) / 2
SY = np.array([[0, -1j], [1j, 0]]) / 2
SZ = np.array([[1, 0], [0, -1]]) / 2


def site_op(op, i, n):
    # site 1 is the least significant bit: it is the rightmost kron factor
    mats = [np.eye(2)] * n
    mats[n - 1 - i] = op
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def xxz_sector_energy(n, J, Delta):
    H = np.zeros((2**n, 2**n), complex)
    for i in range(n):
        k = (i + 1) % n
        H += -J * (site_op(SX, i, n) @ site_op(SX, k, n) + site_op(SY, i, n) @ site_op(SY, k, n))
        H += Delta * site_op(SZ, i, n) @ site_op(SZ, k, n)
    sector = [s for s in range(2**n) if bin(s).count("1") == n // 2]
    block = H[np.ix_(sector, sector)]
    return float(np.linalg.eigvalsh(block)[0])


def brute_amplitude(net, sigma):
    """Literal partition sum for a network given as nested lists."""
    N, NT, n, m = net["N"], net["NT"], net["n"], net["m"]
    c, b, a, w, wt, wh = (net[k] for k in ("c", "b", "a", "w", "w_tilde", "w_hat"))
    total = 0j
    for d in itertools.product((1, -1), repeat=NT * n):
        d = [d[j * n:(j + 1) * n] for j in range(NT)]
        for h in itertools.product((1, -1), repeat=NT * m):
            h = [h[j * m:(j + 1) * m] for j in range(NT)]
            energy = -sum(c[i] * sigma[i] for i in range(N))
            for j in range(NT):
                nxt = d[(j + 1) % NT]
                energy -= sum(a[j][v] * d[j][v] for v in range(n))
                for mu in range(m):
                    field = b[j][mu] + sum(sigma[i] * w[i][j][mu] for i in range(N))
                    field += sum(wt[j][mu][v] * d[j][v] + wh[j][mu][v] * nxt[v] for v in range(n))
                    energy += h[j][mu] * field
            total += complex(np.exp(-energy))
    return total


def random_network(rng, N, NT, n, m, open_boundary):
    def draw(*shape):
        return (rng.uniform(-0.5, 0.5, shape) + 1j * rng.uniform(-1.5, 1.5, shape))

    net = {"N": N, "NT": NT, "n": n, "m": m,
           "c": draw(N), "b": draw(NT, m), "a": draw(NT, n), "w": draw(N, NT, m),
           "w_tilde": draw(NT, m, n), "w_hat": draw(NT, m, n)}
    if open_boundary:
        net["w_hat"][-1] = 0
    return net


def to_lists(net):
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in net.items()}


def pairs(z):
    z = np.asarray(z)
    return np.stack([z.real, z.imag], axis=-1).tolist()


def main():
    rng = np.random.default_rng(20240611)
    networks = []
    for boundary in ("periodic", "open"):
        for _ in range(3):
            net = random_network(rng, 3, 3, 1, 2, boundary == "open")
            lists = to_lists(net)
            configs = [list(s) for s in itertools.product((1, -1), repeat=3)]
            amps = [brute_amplitude(lists, s) for s in configs]
            networks.append({
                "boundary": boundary,
                "shape": {"n_sites": 3, "n_blocks": 3, "deep_per_block": 1, "hidden_per_block": 2},
                "weights": {k: pairs(net[k]) for k in ("c", "b", "a", "w", "w_tilde", "w_hat")},
                "configs": configs,
                "amplitudes": pairs(amps),
            })
    doc = {
        "xxz_sector0": [
            {"n_sites": n, "J": J, "Delta": D, "energy": xxz_sector_energy(n, J, D)}
            for n, J, D in ((4, 1.0, 1.0), (8, 1.0, 0.5), (12, 1.0, 1.0))
        ],
        "aklt_n6_all_zero": 2.0 / 27.0,
        "bell_s2": math.log(2.0),
        "networks": networks,
    }
    path = Path(__file__).with_name("frozen_oracles.json")
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
