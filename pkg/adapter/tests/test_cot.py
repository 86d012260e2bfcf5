"""Reasoning client: parsing, the repair round, endpoint failures."""

import pytest

from cir_adapter.config import AdapterConfig, check_endpoint
from cir_adapter.cot import CotClient, extract_object
from cir_adapter.errors import EndpointUnavailableError, UnparseableAfterRepairError

from conftest import VALID_COT

IMAGE = b"\x89PNG fake bytes for hashing"


def client_for(url):
    return CotClient(AdapterConfig(mllm_endpoint=url), timeout=10.0)


class TestExtractObject:
    def test_bare_object(self):
        assert extract_object('{"retained": "a", "deleted": "b", "target": "c"}') == {
            "retained": "a", "deleted": "b", "target": "c",
        }

    def test_object_after_prose(self):
        assert extract_object(VALID_COT)["retained"] == "green field background"

    def test_garbage_is_none(self):
        assert extract_object("no json here at all") is None


class TestReason:
    def test_valid_first_response(self, stub_server):
        url, state = stub_server
        result = client_for(url).reason(IMAGE, "swap the square for a circle")
        assert result.retained and result.deleted and result.target
        assert state.posts == 1
        assert len(result.transcript) == 2  # prompt + reply

    def test_malformed_then_repaired(self, stub_server):
        url, state = stub_server
        state.responses = ["I cannot produce JSON, here is prose.", VALID_COT]
        result = client_for(url).reason(IMAGE, "swap it")
        assert result.target == "a blue circle on a green field"
        assert state.posts == 2
        # Transcript shows both turns plus the repair request.
        roles = [entry["role"] for entry in result.transcript]
        assert roles == ["user", "assistant", "user", "assistant"]

    def test_unparseable_after_repair(self, stub_server):
        url, state = stub_server
        state.responses = ["prose only", '{"retained": "", "deleted": "x", "target": "y"}']
        with pytest.raises(UnparseableAfterRepairError):
            client_for(url).reason(IMAGE, "swap it")
        assert state.posts == 2

    def test_endpoint_down(self):
        dead = "http://127.0.0.1:9/v1"
        with pytest.raises(EndpointUnavailableError):
            client_for(dead).reason(IMAGE, "swap it")
        with pytest.raises(EndpointUnavailableError):
            check_endpoint(AdapterConfig(mllm_endpoint=dead), timeout=2.0)

    def test_check_endpoint_accepts_any_http_response(self, stub_server):
        url, _ = stub_server
        check_endpoint(AdapterConfig(mllm_endpoint=url))
