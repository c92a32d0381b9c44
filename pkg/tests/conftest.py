import numpy as np
import pytest

from minimt import tensor as T
from minimt.data import make_batch
from minimt.rnn import RnnModel
from minimt.tensor import RngState
from minimt.training import init_parameters
from minimt.transformer import TransformerModel


def tiny_rnn(seed=0, src_vocab=12, trg_vocab=12, **kw):
    opts = dict(rnn_type="gru", emb_size=8, enc_hidden=8, dec_hidden=8, attention="mlp", bridge="bridge")
    opts.update(kw)
    return init_parameters(RnnModel(src_vocab, trg_vocab, **opts), RngState(seed))


def tiny_transformer(seed=0, src_vocab=12, trg_vocab=12, **kw):
    opts = dict(d=16, num_heads=2, enc_layers=1, dec_layers=1)
    opts.update(kw)
    model = init_parameters(TransformerModel(src_vocab, trg_vocab, **opts), RngState(seed))
    # perturb the norm parameters off their (1, 0) init so they matter in tests
    rng = RngState(seed + 1000)
    for name, p in model.named_parameters():
        if ".norm." in name:
            p.data += 0.2 * (rng.uniform_array(p.shape) - 0.5)
    return model


def random_batch(seed=0, sizes=((3, 2), (1, 3), (4, 4)), vocab=12):
    rng = np.random.default_rng(seed)
    src = [rng.integers(4, vocab, n).tolist() for n, _ in sizes]
    trg = [rng.integers(4, vocab, m).tolist() for _, m in sizes]
    return make_batch(src, trg)


@pytest.fixture(autouse=True)
def _clean_tape():
    T.clear_tape()
    yield
    T.clear_tape()


# -- acceptance summary: one PASS/FAIL line per criterion ------------------------

CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    entry = CRITERIA.setdefault(number, {"title": title, "passed": True, "failed": []})
    if not report.passed:
        entry["passed"] = False
        entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        entry = CRITERIA[number]
        status = "PASS" if entry["passed"] else "FAIL (" + ", ".join(entry["failed"]) + ")"
        terminalreporter.write_line(f"criterion {number} [{entry['title']}]: {status}")
