import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tsd.core import ChemDataset
from tsd.synth import SynthSpec, generate

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def make_dataset(n=12, m=4, seed=0, with_target=True):
    rng = np.random.default_rng(seed)
    return ChemDataset(
        features=rng.uniform(0, 1, size=(n, m)),
        target=rng.normal(size=n) if with_target else np.full(n, np.nan),
        latitude=40 + rng.uniform(0, 0.5, n),
        longitude=-77 + rng.uniform(0, 0.5, n),
        timestamp=np.datetime64("2012-01-01") + rng.integers(0, 366, n).astype("timedelta64[D]"),
        analyte_names=tuple(f"a{j}" for j in range(m)),
        target_name="y" if with_target else None,
        sample_ids=tuple(f"s{i}" for i in range(n)),
    )


@pytest.fixture
def small_ds():
    return make_dataset()


@pytest.fixture(scope="session")
def synth_small():
    return generate(SynthSpec(n=60, m=6, k=2, noise_std=0.0, seed=3))


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in criterion order."""
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", []))
            if "criterion" in props and rep.when == "call":
                rows.append((props["criterion"], outcome, props.get("detail", "")))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for num, outcome, detail in sorted(rows, key=lambda r: r[0]):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d}: {verdict}  {detail}")
