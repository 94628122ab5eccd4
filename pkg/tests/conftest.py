import pytest

from gait import dataset as ds
from gait.networks import DiscriminatorConfig, GeneratorConfig
from gait.training import TrainConfig


def tiny_config(**kw) -> TrainConfig:
    base = dict(seed=0, batch_size=2, steps=6, image_size=16, checkpoint_every=3,
                generator=GeneratorConfig(base_channels=4, n_res_blocks=1),
                discriminator=DiscriminatorConfig(base_channels=4))
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_data():
    src, tgt = ds.render(ds.DatasetSpec(n_images=6, image_size=16, seed=0))
    return ds.stack(src), ds.stack(tgt)


# ------------------------------------------------ acceptance verdict summary

_CRITERIA = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.split("::")[-1]
    if not name.startswith("test_criterion_"):
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = dict(report.user_properties).get("detail", "")
        if report.when == "setup":
            detail = "setup failed"
        _CRITERIA[name] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda n: int(n.split("_")[2])):
        verdict, detail = _CRITERIA[name]
        number, label = name.split("_")[2], " ".join(name.split("_")[3:])
        terminalreporter.write_line(f"criterion {number} [{verdict}] {label}: {detail}")
