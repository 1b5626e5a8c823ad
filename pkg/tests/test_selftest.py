"""The built-in invariant suite passes, and fails once a backward rule is perturbed."""

from mprnet.selftest import run_selftest


def _by_name(results):
    return {(r.group, r.name): r for r in results}


class TestSelftest:
    def test_all_checks_pass(self):
        results = run_selftest()
        failed = [f"{r.group}/{r.name} {r.detail}" for r in results if not r.passed]
        assert failed == []
        assert {r.group for r in results} == {"gradients", "identities", "roundtrips", "arithmetic"}

    def test_conv_fault_is_caught(self):
        results = _by_name(run_selftest(fault="conv2d"))
        for name in ("conv2d", "charbonnier", "edge_loss", "model"):
            assert not results[("gradients", name)].passed, name
        assert results[("gradients", "max_pool2")].passed
        assert results[("identities", "zero_model")].passed

    def test_fault_is_scoped(self):
        run_selftest(fault="max_pool2")
        assert all(r.passed for r in run_selftest())
