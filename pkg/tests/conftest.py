import numpy as np
import pytest

from slaterec.models import EmbeddingBank, ListCvae, PivotCvae


def tiny_bank(n_items=12, dim=4, n_users=3, seed=0):
    rng = np.random.default_rng(seed)
    return EmbeddingBank(rng.normal(size=(n_items, dim)), rng.normal(size=(n_users, dim)))


def tiny_batch(model, B=4, J=5, seed=1):
    rng = np.random.default_rng(seed)
    n = model.bank.n_items
    slates = rng.integers(0, n, size=(B, model.K))
    resp = rng.integers(0, 2, size=(B, model.K))
    users = rng.integers(0, 3, size=B)
    c = model.constraints(resp, users)
    noise = rng.normal(size=(B, model.m))
    negs = rng.integers(0, n, size=(B, model.K, J))
    return slates, c, noise, negs


@pytest.fixture
def tiny_list():
    return ListCvae(tiny_bank(), latent_dim=3, hidden=6, beta=0.7, rng=np.random.default_rng(2))


@pytest.fixture(params=["GT-PI", "SGT-PI", "GT-SPI", "SGT-SPI"])
def tiny_pivot(request):
    return PivotCvae(tiny_bank(), variant=request.param, latent_dim=3, hidden=6, beta=0.7,
                     rng=np.random.default_rng(3))


# one PASS/FAIL line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
