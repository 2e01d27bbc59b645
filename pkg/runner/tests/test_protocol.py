import pytest

from kernelevo_runner import protocol


class TestProtocol:
    def test_round_trip(self):
        line = protocol.encode("hello", {"mode": "cuda", "device": "0"})
        kind, payload = protocol.decode(line)
        assert kind == "hello"
        assert payload == {"mode": "cuda", "device": "0"}
        assert protocol.encode(kind, payload) == line

    def test_canonical_key_order(self):
        a = protocol.encode("case_result", {"a": 1, "b": 2})
        b = protocol.encode("case_result", {"b": 2, "a": 1})
        assert a == b

    @pytest.mark.parametrize("line", ["nope", "[]", '{"kind": "x"}', '{"payload": {}}'])
    def test_malformed(self, line):
        with pytest.raises(protocol.ProtocolError):
            protocol.decode(line)

    def test_version_constant(self):
        assert protocol.PROTOCOL_VERSION == 1
        assert '"protocol_version":1' in protocol.encode("bye", {})
