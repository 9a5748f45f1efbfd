import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tquant.blocks import split_blocks
from tquant.codec.tqz import BlockCode, CompressedModel, LayerCode, SectionCode
from tquant.model import Network, WeightTensor
from tquant.quantizer import index_range

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_net(seed=0, arch=((3, 3, 3), (4, 2, 2), (5, 1, 1)), input_shape=(2, 5, 5), acts=None):
    """Small chain; ``arch`` lists (n, a, b) per layer."""
    rng = np.random.default_rng(seed)
    layers = []
    m, h, w = input_shape
    for i, (n, a, b) in enumerate(arch):
        kind = "dense" if (a, b) == (1, 1) and (h, w) == (1, 1) else "conv"
        layers.append(WeightTensor(rng.standard_normal((n, m, a, b)) / np.sqrt(m * a * b),
                                   0.1 * rng.standard_normal(n), kind, f"l{i}"))
        m, h, w = n, h - a + 1, w - b + 1
    if acts is None:
        return Network.chain(layers, input_shape)
    return Network(tuple(layers), tuple(acts), input_shape)


def _section(rng, role, shape, axis, blocks, bits_choices):
    parts = split_blocks(shape[axis], blocks)
    codes = []
    for lo, hi in parts:
        bshape = list(shape)
        bshape[axis] = hi - lo
        r = int(rng.choice(bits_choices))
        if r == 0:
            codes.append(BlockCode(0, 0.0, np.zeros(bshape, dtype=np.int64)))
        else:
            lo_i, hi_i = index_range(r)
            codes.append(BlockCode(r, float(rng.uniform(1e-4, 2.0)), rng.integers(lo_i, hi_i + 1, bshape)))
    return SectionCode(role, tuple(shape), axis, parts, codes)


def random_model(seed, bits_choices=tuple(range(17))):
    rng = np.random.default_rng(seed)
    transform = str(rng.choice(["none", "klt", "elt", "2d"]))
    axis = "row" if transform in ("klt", "elt") and rng.random() < 0.5 else "column"
    layers = []
    for _ in range(int(rng.integers(1, 4))):
        n, m, a = (int(v) for v in rng.integers(1, 6, 3))
        b = int(rng.integers(1, 3))
        shape = (n, m, a, b)
        kind = "conv" if a * b > 1 or rng.random() < 0.5 else "dense"
        bias = rng.standard_normal(n).astype(np.float32).astype(np.float64) if rng.random() < 0.8 else None
        if transform == "none" and rng.random() < 0.2:
            layers.append(LayerCode(kind, shape, bias, fallback=rng.standard_normal(shape).astype(np.float32)))
            continue
        nb = int(rng.integers(1, 5))
        secs = {}
        if transform == "none":
            secs["T"] = _section(rng, "T", shape, 0, nb, bits_choices)
        elif transform == "2d":
            ro, ri = min(n, m * a * b), min(m, n * a * b)
            secs["T"] = _section(rng, "T", (ro, ri, a, b), 0, nb, bits_choices)
            secs["S_out"] = _section(rng, "S_out", (n, ro), 1, nb, bits_choices)
            secs["S_in"] = _section(rng, "S_in", (m, ri), 1, nb, bits_choices)
        elif axis == "column":
            r = min(n, m * a * b)
            secs["T"] = _section(rng, "T", (r, m, a, b), 0, nb, bits_choices)
            secs["S_out"] = _section(rng, "S_out", (n, r), 1, nb, bits_choices)
        else:
            r = min(m, n * a * b)
            secs["T"] = _section(rng, "T", (n, r, a, b), 1, nb, bits_choices)
            secs["S_in"] = _section(rng, "S_in", (m, r), 1, nb, bits_choices)
        t = secs["T"]
        k = sum(hi - lo for (lo, hi), c in zip(t.blocks, t.codes) if c.bits > 0)
        layers.append(LayerCode(kind, shape, bias, nb, k, secs))
    return CompressedModel(transform, axis, float(rng.uniform(0, 1)), layers)


@pytest.fixture
def small_net():
    return random_net()


@pytest.fixture
def small_calib(small_net):
    return np.random.default_rng(7).standard_normal((6,) + small_net.input_shape)


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
