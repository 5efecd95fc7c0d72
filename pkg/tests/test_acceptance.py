"""Release acceptance: each criterion at its fixed tolerance, one PASS/FAIL line each."""

from __future__ import annotations

import pytest

from nlpoint2d import selftest

CRITERIA = [
    ("01_sonine_identity", selftest.check_sonine),
    ("02_kernel_asymptotics", selftest.check_kernel_asymptotics),
    ("03_moment_exactness", selftest.check_moment_exactness),
    ("04_bound_state_ground_truth", selftest.check_bound_state),
    ("05_oracle_equivalence", selftest.check_oracles),
    ("06_conservation", selftest.check_conservation),
    ("07_blowup_alternative", selftest.check_blowup_alternative),
    ("08_contraction_trend", selftest.check_contraction),
    ("09_self_convergence", selftest.check_self_convergence),
    ("10_determinism", selftest.check_determinism),
]


@pytest.mark.slow
@pytest.mark.parametrize("name, check", CRITERIA, ids=[c[0] for c in CRITERIA])
def test_criterion(name, check, capsys):
    result = check()
    with capsys.disabled():
        print(f"\n[{name}] {result.line()}")
    assert result.passed, result.line()
