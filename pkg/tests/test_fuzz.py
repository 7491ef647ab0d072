"""Fuzzer determinism and short differential sweeps (the full 10k-case run
lives in the acceptance suite)."""

from xvliw.fuzz import (
    FuzzCase,
    case_seed,
    compare_results,
    fuzz,
    generate_case,
    minimize,
    run_case,
)


def test_generator_deterministic():
    a = generate_case(123456)
    b = generate_case(123456)
    assert a.program_text == b.program_text
    assert a.packet_hex == b.packet_hex
    assert a.map_config == b.map_config
    assert a.ingress_port == b.ingress_port


def test_case_sequence_deterministic():
    seq1 = [case_seed(5, i) for i in range(20)]
    seq2 = [case_seed(5, i) for i in range(20)]
    assert seq1 == seq2
    assert len(set(seq1)) == 20


def test_generated_programs_use_interesting_features():
    kinds = set()
    for i in range(60):
        text = generate_case(case_seed(31, i)).program_text
        if "call map_lookup" in text:
            kinds.add("lookup")
        if "call map_update" in text:
            kinds.add("update")
        if "call adjust_head" in text:
            kinds.add("adjust")
        if "call csum_diff" in text:
            kinds.add("csum")
        if "u48" in text:
            kinds.add("wide")
        if "goto abort" in text:
            kinds.add("bounds")
        if "goto L" in text:
            kinds.add("branch")
    assert {"lookup", "update", "adjust", "csum", "wide", "bounds",
            "branch"} <= kinds


def test_short_sweep_all_passes():
    summary = fuzz(200, seed=1, minimize_failures=False)
    assert summary.ok, [d.detail for d in summary.divergences]


def test_sweep_with_peephole_disabled():
    passes = {name: False for name in
              ("boundary_checks", "zeroing", "three_operand",
               "load_store_6b", "early_exit")}
    summary = fuzz(120, seed=2, passes=passes, minimize_failures=False)
    assert summary.ok


def test_sweep_without_code_motion():
    summary = fuzz(120, seed=3, enable_code_motion=False,
                   minimize_failures=False)
    assert summary.ok


def test_sweep_two_lanes():
    summary = fuzz(100, seed=4, lanes=2, minimize_failures=False)
    assert summary.ok


def test_replay_is_identical():
    case = generate_case(case_seed(9, 17))
    ok1, d1 = run_case(case)
    ok2, d2 = run_case(case)
    assert (ok1, d1) == (ok2, d2)


def test_minimize_keeps_passing_case_intact():
    case = generate_case(case_seed(9, 3))
    assert minimize(case) == case.program_text


def test_minimize_shrinks_synthetic_divergence():
    # a case that the toolchain rejects (r10 write) minimizes to the culprit
    bad = FuzzCase(0, "  r3 += 1\n  r4 += 2\n  r10 = 5\n  exit\n",
                   "00" * 64, 0, "")
    mini = minimize(bad)
    lines = [l.strip() for l in mini.splitlines() if l.strip()]
    assert "r10 = 5" in lines
    assert len(lines) <= 2


def test_compare_results_reports_fields():
    from xvliw.vm import XdpResult
    a = XdpResult(2, 2, b"aa", {1: {b"k": b"v"}})
    b = XdpResult(2, 2, b"aa", {1: {b"k": b"v"}})
    ok, detail = compare_results(a, b)
    assert ok and detail == "equal"
    c = XdpResult(1, 1, b"ab", {1: {b"k": b"x"}})
    ok, detail = compare_results(a, c)
    assert not ok
    assert "action" in detail and "packet" in detail and "map" in detail
