import os
import struct

import numpy as np
import pytest

from app.errors import IncompleteRoundError, PayloadDecodeError
from app.models import BlockForm, CommTrace, Hypothesis, SitePayload, TaskRequest, TaskType
from app.protocol import (
    FileDropTransport,
    InProcessTransport,
    SiteNode,
    decode_payload,
    decode_payload_json,
    encode_payload,
    encode_payload_json,
    make_transport,
    run_round,
)
from conftest import random_site

REQUESTS = {
    "mle": TaskRequest(task=TaskType.MLE_ONLY),
    "columns": TaskRequest(task=TaskType.MLE_PLUS_POSTERIOR, K=2, seed=1),
    "gram": TaskRequest(task=TaskType.MLE_PLUS_POSTERIOR, K=6, seed=1),
    "gradient": TaskRequest(task=TaskType.CSL_GRADIENT, beta_bar=np.array([0.1, 0.2, 0.3])),
    "wald": TaskRequest(task=TaskType.WALD_STATS, hypothesis=Hypothesis()),
    "stats": TaskRequest(task=TaskType.SUFFICIENT_STATS),
}


def _assert_same(a: SitePayload, b: SitePayload):
    assert (a.site_id, a.n, a.p) == (b.site_id, b.n, b.p)
    assert a.sigma_hat_sq == b.sigma_hat_sq
    np.testing.assert_array_equal(a.beta_hat, b.beta_hat)
    for name in ("gradient", "wald"):
        x, y = getattr(a, name), getattr(b, name)
        assert (x is None) == (y is None)
        if x is not None:
            np.testing.assert_array_equal(x, y)
    assert (a.block is None) == (b.block is None)
    if a.block is not None:
        assert (a.block.form, a.block.K, a.block.psi) == (b.block.form, b.block.K, b.block.psi)
        np.testing.assert_array_equal(a.block.data, b.block.data)
    if a.stats is not None:
        np.testing.assert_array_equal(a.stats.S, b.stats.S)
        np.testing.assert_array_equal(a.stats.Xty, b.stats.Xty)
        assert (a.stats.yty, a.stats.n) == (b.stats.yty, b.stats.n)


@pytest.fixture
def node(rng):
    return SiteNode(random_site(rng, 20, 3, site_id=5))


@pytest.mark.parametrize("kind", sorted(REQUESTS))
def test_binary_codec_is_lossless(node, kind):
    payload = node.handle(REQUESTS[kind])
    _assert_same(decode_payload(encode_payload(payload)), payload)
    _assert_same(decode_payload_json(encode_payload_json(payload)), payload)


def test_block_form_on_the_wire(node):
    assert node.handle(REQUESTS["columns"]).block.form == BlockForm.COLUMNS
    assert node.handle(REQUESTS["gram"]).block.form == BlockForm.GRAM


def test_gram_block_is_smaller_than_columns(node):
    gram = encode_payload(node.handle(REQUESTS["gram"]))
    columns_equivalent = 8 * 3 * 6
    assert len(gram) < len(encode_payload(node.handle(REQUESTS["mle"]))) + columns_equivalent


def test_truncated_payload(node):
    buf = encode_payload(node.handle(REQUESTS["columns"]))
    with pytest.raises(PayloadDecodeError, match="truncated"):
        decode_payload(buf[:-4], site_id=5)


def test_trailing_bytes(node):
    buf = encode_payload(node.handle(REQUESTS["mle"]))
    with pytest.raises(PayloadDecodeError, match="trailing"):
        decode_payload(buf + b"\x00")


def test_bad_magic_and_version(node):
    buf = bytearray(encode_payload(node.handle(REQUESTS["mle"])))
    wrong_magic = b"XXXX" + bytes(buf[4:])
    with pytest.raises(PayloadDecodeError, match="magic"):
        decode_payload(wrong_magic)
    struct.pack_into("<H", buf, 4, 2)
    with pytest.raises(PayloadDecodeError, match="version") as err:
        decode_payload(bytes(buf))
    assert err.value.site_id == 5


def test_non_finite_values_rejected(node):
    buf = bytearray(encode_payload(node.handle(REQUESTS["mle"])))
    # first beta_hat entry follows the header and sigma_hat_sq
    struct.pack_into("<d", buf, struct.calcsize("<4sHHIQI") + 8, float("nan"))
    with pytest.raises(PayloadDecodeError, match="NaN"):
        decode_payload(bytes(buf))


@pytest.mark.parametrize("psi", [float("inf"), float("nan"), 0.0, -1.0])
def test_block_scale_must_be_finite_and_positive(node, psi):
    buf = bytearray(encode_payload(node.handle(REQUESTS["columns"])))
    # block header follows the header, sigma_hat_sq and beta_hat; psi is its last field
    offset = struct.calcsize("<4sHHIQI") + 8 * (1 + 3) + struct.calcsize("<BI")
    struct.pack_into("<d", buf, offset, psi)
    with pytest.raises(PayloadDecodeError, match="psi"):
        decode_payload(bytes(buf))


def test_payload_has_no_raw_data_fields():
    assert not {"X", "y"} & set(SitePayload.model_fields)


def test_posterior_seed_depends_on_site(rng):
    a = SiteNode(random_site(rng, 20, 2, site_id=2))
    b = SiteNode(a._data.model_copy(update={"site_id": 3}))
    req = TaskRequest(task=TaskType.MLE_PLUS_POSTERIOR, K=2, seed=4)
    assert not np.array_equal(a.handle(req).block.data, b.handle(req).block.data)


def test_run_round_counts_rounds_and_bytes(rng):
    nodes = [SiteNode(random_site(rng, 15, 2, site_id=m)) for m in (2, 3)]
    payloads, trace = run_round(InProcessTransport(nodes), REQUESTS["mle"], [3, 2])
    assert [pl.site_id for pl in payloads] == [2, 3]
    assert trace.rounds == 1
    assert trace.bytes_per_round[0] == sum(trace.per_site_bytes.values())
    _, trace = run_round(InProcessTransport(nodes), REQUESTS["mle"], [2, 3], trace)
    assert trace.rounds == 2


def test_no_remote_sites_means_no_round():
    payloads, trace = run_round(InProcessTransport([]), REQUESTS["mle"], [])
    assert payloads == [] and trace.rounds == 0


def test_missing_site_fails_the_round(rng):
    nodes = [SiteNode(random_site(rng, 15, 2, site_id=2))]
    with pytest.raises(IncompleteRoundError) as err:
        run_round(InProcessTransport(nodes), REQUESTS["mle"], [2, 3])
    assert err.value.missing == [3]


def test_file_drop_layout(tmp_path, rng):
    nodes = [SiteNode(random_site(rng, 15, 3, site_id=m)) for m in (2, 3)]
    transport = FileDropTransport(str(tmp_path), nodes)
    payloads, trace = run_round(transport, REQUESTS["columns"], [2, 3])
    assert os.path.exists(tmp_path / "round1" / "request.json")
    assert os.path.exists(tmp_path / "round1" / "round1_site2.payload")
    assert os.path.exists(tmp_path / "round1" / "DONE")
    expected, _ = run_round(InProcessTransport(nodes), REQUESTS["columns"], [2, 3], CommTrace())
    for a, b in zip(payloads, expected):
        _assert_same(a, b)


def test_file_drop_without_done_marker(tmp_path, rng):
    transport = FileDropTransport(str(tmp_path))
    request = REQUESTS["mle"].model_copy(update={"round_id": 1})
    transport.post_request(request, [2])
    with pytest.raises(IncompleteRoundError):
        transport.collect(1, [2])


def test_file_drop_site_that_never_answers(tmp_path, rng):
    transport = make_transport("filedrop", [SiteNode(random_site(rng, 15, 2, site_id=2))], str(tmp_path))
    with pytest.raises(IncompleteRoundError) as err:
        run_round(transport, REQUESTS["mle"], [2, 4])
    assert err.value.missing == [4]
