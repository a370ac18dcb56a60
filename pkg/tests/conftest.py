import pytest

from edformer.data import make_toy_dataset, make_windows, split_chronological, stack_windows, standardize
from edformer.model import EDformer
from edformer.train import train
from helpers import TOY_H, TOY_L, toy_config, toy_train_config


@pytest.fixture(scope="session")
def toy_splits():
    ds = make_toy_dataset(1000, seed=0)
    tr, va, te = split_chronological(len(ds), TOY_L, TOY_H)
    values, mean_, std_ = standardize(ds.values, tr)
    w = {name: stack_windows(make_windows(values, r, TOY_L, TOY_H))
         for name, r in zip(("train", "val", "test"), (tr, va, te))}
    w["mean"], w["std"] = mean_, std_
    return w


@pytest.fixture(scope="session")
def trained_toy(toy_splits):
    model = EDformer(toy_config())
    model, history = train(model, toy_splits["train"], toy_splits["val"], toy_train_config())
    return model, history


_CRITERIA: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: call with (ok, detail) before asserting."""
    name = request.node.name

    def record(ok: bool, detail: str) -> bool:
        _CRITERIA[name] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in sorted(_CRITERIA.items()):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
