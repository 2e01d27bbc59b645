import collections
import random

import pytest

from kernelevo.gateway import (
    ContextTooLong,
    CostLedger,
    EmptyPool,
    LlmGateway,
    MockTransport,
    ParseError,
    SamplerSettings,
    TokenUsage,
    TransportError,
    draw_ensemble_settings,
    parse_kernel_response,
    record_cost,
)

from .conftest import make_gateway

SETTINGS = SamplerSettings(model_id="mock-model", temperature=0.5, max_tokens=256)
FAIL = {"error": "transient"}


class TestSample:
    def test_scripted_response_and_usage(self):
        gateway = make_gateway(scripts={"cuda": ["X"]})
        exchange = gateway.sample(SETTINGS, "sys", [("user", "hello")], purpose="cuda")
        assert exchange.response == "X"
        assert exchange.usage.prompt_tokens >= 1
        assert exchange.usage.completion_tokens >= 1
        assert exchange.settings == SETTINGS

    def test_two_failures_then_success(self):
        transport = MockTransport(scripts={"cuda": ["ok"]})
        attempts = []

        def flaky(settings, system, messages, purpose, call_index):
            attempts.append(call_index)
            if len(attempts) < 3:
                raise TransportError("transient")
            return "ok", TokenUsage(1, 1)

        transport.complete = flaky
        gateway = LlmGateway(transport, retry_wait_s=0.0)
        exchange = gateway.sample(SETTINGS, "", [("user", "x")])
        assert exchange.response == "ok"
        assert len(attempts) == 3

    def test_four_failures_exhaust_retries(self):
        calls = []

        def always_down(settings, system, messages, purpose, call_index):
            calls.append(1)
            raise TransportError("down")

        transport = MockTransport()
        transport.complete = always_down
        gateway = LlmGateway(transport, retry_wait_s=0.0)
        with pytest.raises(TransportError):
            gateway.sample(SETTINGS, "", [("user", "x")])
        assert len(calls) == 4

    def test_context_too_long_not_retried(self):
        calls = []

        def overflow(settings, system, messages, purpose, call_index):
            calls.append(1)
            raise ContextTooLong("too big")

        transport = MockTransport()
        transport.complete = overflow
        gateway = LlmGateway(transport, retry_wait_s=0.0)
        with pytest.raises(ContextTooLong):
            gateway.sample(SETTINGS, "", [("user", "x")])
        assert len(calls) == 1

    def test_script_error_entries(self):
        entry = {"error": "transient", "times": 2, "then": "fine"}
        gateway = make_gateway(scripts={"cuda": [entry]})
        exchange = gateway.sample(SETTINGS, "", [("user", "x")])
        assert exchange.response == "fine"

    def test_script_permanent_error_entry(self):
        gateway = make_gateway(scripts={"cuda": [FAIL]})
        with pytest.raises(TransportError):
            gateway.sample(SETTINGS, "", [("user", "x")])

    def test_sample_many_preserves_order_and_indices(self):
        gateway = make_gateway(
            responder=lambda purpose, idx, settings, system, messages: f"r{idx}"
        )
        requests = [(SETTINGS, "", [("user", f"q{i}")]) for i in range(8)]
        results = gateway.sample_many(requests, purpose="cuda")
        assert [r.response for r in results] == [f"r{i}" for i in range(8)]

    def test_ledger_recording(self):
        gateway = make_gateway(
            scripts={"cuda": ["abcd" * 10]}, prices={"mock-model": (1e-6, 4e-6)}
        )
        gateway.sample(SETTINGS, "sys", [("user", "hello")])
        assert len(gateway.ledger.entries) == 1
        entry = gateway.ledger.entries[0]
        assert entry.purpose == "cuda"
        assert entry.dollars > 0


class TestSamplerSettings:
    def test_temperature_bounds(self):
        with pytest.raises(ValueError):
            SamplerSettings(model_id="m", temperature=2.5)

    def test_effort_values(self):
        with pytest.raises(ValueError):
            SamplerSettings(model_id="m", reasoning_effort="extreme")

    def test_max_tokens_positive(self):
        with pytest.raises(ValueError):
            SamplerSettings(model_id="m", max_tokens=0)


class TestDrawEnsembleSettings:
    def test_single_model_single_temp(self):
        drawn = draw_ensemble_settings(["m"], [0.5], [], n=3, rng_seed=0)
        assert len(drawn) == 3
        assert all(s.model_id == "m" and s.temperature == 0.5 for s in drawn)
        assert len(set(drawn)) == 1

    def test_deterministic_for_seed(self):
        pool = ["o4-mini", "gpt-4.1", "claude-3-7-sonnet-20250219"]
        a = draw_ensemble_settings(pool, [0.0, 1.0], ["low", "high"], n=16, rng_seed=9)
        b = draw_ensemble_settings(pool, [0.0, 1.0], ["low", "high"], n=16, rng_seed=9)
        assert a == b

    def test_eight_over_five_models(self):
        pool = [
            "o4-mini",
            "claude-3-7-sonnet-20250219",
            "gemini-2.5-pro-preview-05-06",
            "gpt-4.1",
            "o3-2025-04-16",
        ]
        drawn = draw_ensemble_settings(
            pool, [0.0, 0.5, 0.75, 1.0], ["auto", "high", "medium", "low"], n=8, rng_seed=1
        )
        assert len(drawn) == 8
        assert all(s.model_id in pool for s in drawn)

    def test_reasoning_models_get_effort_not_temperature(self):
        drawn = draw_ensemble_settings(
            ["o3-2025-04-16", "gpt-4.1"], [0.5], ["high"], n=40, rng_seed=3
        )
        for s in drawn:
            if s.model_id.startswith("o3"):
                assert s.reasoning_effort == "high" and s.temperature is None
            else:
                assert s.temperature == 0.5 and s.reasoning_effort is None

    def test_empty_pool(self):
        with pytest.raises(EmptyPool):
            draw_ensemble_settings([], [0.5], [], n=1, rng_seed=0)

    def test_model_choice_roughly_uniform(self):
        # chi-square over model frequencies; 99.9% critical value, df=4
        pool = ["a", "b", "c", "d", "e"]
        critical = 18.47
        for seed in (0, 1, 2):
            drawn = draw_ensemble_settings(pool, [0.5], ["low"], n=5000, rng_seed=seed)
            counts = collections.Counter(s.model_id for s in drawn)
            expected = 5000 / len(pool)
            chi2 = sum((counts[m] - expected) ** 2 / expected for m in pool)
            assert chi2 < critical, f"seed {seed}: chi2 {chi2}"


class TestParseKernelResponse:
    def test_full_schema(self):
        text = "<name>fused_ln</name><description>d</description><cuda>__global__ void k() {}</cuda>"
        parsed = parse_kernel_response(text)
        assert parsed.kernel_name == "fused_ln"
        assert parsed.description == "d"
        assert parsed.cuda_source == "__global__ void k() {}"

    def test_missing_cuda(self):
        with pytest.raises(ParseError) as err:
            parse_kernel_response("<name>n</name><description>d</description>")
        assert err.value.missing_tag == "cuda"

    def test_missing_tag_order(self):
        with pytest.raises(ParseError) as err:
            parse_kernel_response("<cuda>k</cuda>")
        assert err.value.missing_tag == "name"

    def test_forward_mode_requires_only_cuda(self):
        parsed = parse_kernel_response("<cuda>k()</cuda>", required=("cuda",))
        assert parsed.cuda_source == "k()"
        assert parsed.kernel_name  # defaulted, non-empty

    def test_prose_and_fences_preserved(self):
        inner = "```cpp\n__global__ void k() {}\n```"
        text = f"Sure! Here's my reasoning...\n<name>k</name>\n<description>uses fences</description>\n<cuda>\n{inner}\n</cuda>\nHope this helps."
        parsed = parse_kernel_response(text)
        assert parsed.cuda_source == inner

    def test_wrap_then_parse_is_identity(self):
        rng = random.Random(5)
        for _ in range(25):
            name = "k_" + str(rng.randint(0, 999))
            desc = f"desc {rng.random()}"
            src = f"void k(){{ int x = {rng.randint(0, 9)}; }}"
            wrapped = (
                f"prefix\n<name>{name}</name>\n<description>{desc}</description>"
                f"\n<cuda>{src}</cuda>\nsuffix"
            )
            parsed = parse_kernel_response(wrapped)
            assert (parsed.kernel_name, parsed.description, parsed.cuda_source) == (
                name,
                desc,
                src,
            )

    def test_closing_before_opener_rejected(self):
        with pytest.raises(ParseError):
            parse_kernel_response("</cuda> oops <cuda>code</cuda2>")

    def test_empty_tag_counts_as_missing(self):
        with pytest.raises(ParseError) as err:
            parse_kernel_response("<name>n</name><description>d</description><cuda>  </cuda>")
        assert err.value.missing_tag == "cuda"


class TestCostLedger:
    def test_arithmetic(self):
        ledger = CostLedger(price_table={"m": (1e-6, 4e-6)})
        entry = record_cost(ledger, "cuda", TokenUsage(1000, 1000), "m")
        assert entry.dollars == pytest.approx(0.005)
        assert ledger.total() == pytest.approx(0.005)

    def test_empty_ledger_total_zero(self):
        assert CostLedger(price_table={}).total() == 0

    def test_unknown_model(self):
        ledger = CostLedger(price_table={"m": (1e-6, 4e-6)})
        with pytest.raises(KeyError):
            record_cost(ledger, "cuda", TokenUsage(1, 1), "other")

    def test_total_is_fold_of_entries(self):
        rng = random.Random(2)
        ledger = CostLedger(price_table={"m": (1.5e-6, 6e-6)})
        expected = 0.0
        for _ in range(200):
            usage = TokenUsage(rng.randint(0, 10000), rng.randint(0, 10000))
            entry = record_cost(ledger, rng.choice(["cuda", "verifier"]), usage, "m")
            expected += entry.dollars
        assert ledger.total() == pytest.approx(expected, rel=1e-12)
        assert ledger.total() == pytest.approx(
            sum(ledger.total_by_purpose().values()), rel=1e-12
        )
