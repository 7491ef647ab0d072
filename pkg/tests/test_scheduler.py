"""List scheduling, lane assignment and upward code motion."""

import pytest

from conftest import brute_force_min_rows
from xvliw.analysis import build_ddg, build_program_cfg, liveness
from xvliw.asm import parse_asm
from xvliw.compiler import compile_program
from xvliw.isa import Kind
from xvliw.schedule import LaneConstraints
from xvliw.scheduler import assign_lanes, code_motion, list_schedule
from xvliw.vliwsim import exec_vliw, hazard_check
from xvliw.vm import MapStore, PacketContext, exec_sequential


def schedule_single_block(src, lanes=4):
    prog = parse_asm(src)
    cfg = build_program_cfg(prog)
    cons = LaneConstraints(lanes=lanes)
    ddg = build_ddg(cfg.blocks[0], prog)
    bs = list_schedule(cfg.blocks[0], ddg, cons, prog)
    laned = assign_lanes(bs.rows, lanes)
    assert laned is not None
    return prog, bs, laned


class TestListSchedule:
    def test_four_independent_ops_one_row(self):
        _, bs, _ = schedule_single_block("""
          r2 += 1
          r3 += 1
          r4 += 1
          r5 += 1
          exit
        """)
        assert len(bs.rows) == 2          # alu row + the exit row
        assert len(bs.rows[0]) == 4

    def test_raw_chain_three_rows_one_lane(self):
        _, bs, laned = schedule_single_block("""
          r2 = 5
          r3 = r2
          r4 = r3
          exit
        """)
        chain_rows = [r for r in laned
                      if any(s is not None and s.instr.kind in
                             (Kind.MOV_IMM, Kind.MOV_REG) for s in r)]
        assert len(chain_rows) == 3
        lanes_used = set()
        for row in chain_rows:
            for lane, s in enumerate(row):
                if s is not None and s.instr.kind is not Kind.EXIT:
                    lanes_used.add(lane)
        assert len(lanes_used) == 1       # back-to-back dependents share a lane

    def test_six_independent_two_rows_minimal(self):
        src = "\n".join(f"  r{i} += 1" for i in (2, 3, 4, 5, 7, 8)) + "\nexit\n"
        prog, bs, _ = schedule_single_block(src)
        body_rows = [r for r in bs.rows
                     if not any(s.instr.kind is Kind.EXIT for s in r)]
        occupancy = sorted((len(r) for r in body_rows), reverse=True)
        # exit shares the second row, so occupancies are 4 and 2+exit
        assert len(bs.rows) == 2
        assert occupancy[0] == 4
        edges = {}
        assert brute_force_min_rows(6, edges, 4) == 2

    def test_helper_serialization(self):
        _, bs, _ = schedule_single_block("""
          r5 = 1
          call map_lookup
          exit
        """)
        call_rows = [i for i, r in enumerate(bs.rows)
                     if any(s.instr.kind is Kind.CALL for s in r)]
        assert len(call_rows) == 1

    def test_branch_last_row_lane_zero(self):
        prog = parse_asm("""
          r2 += 1
          r3 += 1
          if r2 > r3 goto out
          r0 = 2
          exit
        out:
          r0 = 1
          exit
        """)
        cfg = build_program_cfg(prog)
        cons = LaneConstraints()
        ddg = build_ddg(cfg.blocks[0], prog)
        bs = list_schedule(cfg.blocks[0], ddg, cons, prog)
        laned = assign_lanes(bs.rows, 4)
        last = laned[-1]
        branch_lanes = [l for l, s in enumerate(last)
                        if s is not None and s.instr.kind is Kind.BRANCH]
        assert branch_lanes == [0]

    def test_rows_never_grow_with_more_lanes_on_corpus(self):
        from xvliw.corpus import CORPUS
        for name, entry in CORPUS.items():
            prog = parse_asm(entry.source)
            prev = None
            for lanes in range(2, 9):
                _, rep = compile_program(prog, LaneConstraints(lanes=lanes))
                if prev is not None:
                    assert rep.vliw_rows <= prev, (name, lanes)
                prev = rep.vliw_rows


class TestLaneAssignment:
    def test_forwarding_pin_respected(self):
        _, bs, laned = schedule_single_block("""
          r2 = 5
          r3 = 7
          r4 = r2
          exit
        """)
        lane_of = {}
        for row in laned:
            for lane, s in enumerate(row):
                if s is not None:
                    lane_of[s.src_index] = lane
        # r4 = r2 (index 2) consumes index 0 from the previous row
        assert lane_of[2] == lane_of[0]

    def test_infeasible_double_pin_needs_gap(self):
        # one consumer of two same-row producers cannot sit in the next row
        prog, bs, laned = schedule_single_block("""
          *(u32 *)(r10 - 8) = 4
          *(u64 *)(r10 - 24) = 9
          r3 = *(u64 *)(r6 + 4)
          exit
        """)
        # provenance: r6 is zero -> the load may alias any memory region
        ddg = None
        row_of = {}
        for r, row in enumerate(laned):
            for s in (x for x in row if x is not None):
                row_of[s.src_index] = r
        assert row_of[2] >= row_of[0] + 2
        assert row_of[2] >= row_of[1] + 2


class TestCodeMotion:
    def _pipeline(self, src, lanes=4):
        prog = parse_asm(src)
        cfg = build_program_cfg(prog)
        cons = LaneConstraints(lanes=lanes)
        live = liveness(cfg, prog)
        ddgs = {b.id: build_ddg(b, prog, live) for b in cfg.blocks}
        schedules = {b.id: list_schedule(b, ddgs[b.id], cons, prog)
                     for b in cfg.blocks}
        moved = code_motion(schedules, cfg, live, cons, prog, ddgs)[1]
        return prog, cfg, schedules, moved

    def test_no_candidates_unchanged(self):
        prog, cfg, schedules, moved = self._pipeline("r3 += 1\nexit\n")
        assert moved == []

    def test_chain_pull_up(self):
        src = """
          r2 += 1
          goto next
        next:
          r3 += 1
          r0 = 0
          exit
        """
        prog, cfg, schedules, moved = self._pipeline(src)
        assert any(frm == 1 and to == 0 for _idx, frm, to in moved)

    def test_diamond_hoists_only_control_equivalent(self):
        src = """
          r2 = *(u32 *)(r1 + 0)
          if r2 > 100 goto b
          r4 += 1
          goto d
        b:
          r5 += 1
        d:
          r7 += 1
          r8 += 2
          r0 = 2
          exit
        """
        prog, cfg, schedules, moved = self._pipeline(src)
        join = cfg.block_of(6)
        hoisted_from = {frm for _idx, frm, to in moved if to == 0}
        assert hoisted_from <= {join}
        assert any(frm == join for _idx, frm, to in moved)
        then_block, else_block = cfg.block_of(2), cfg.block_of(4)
        assert then_block not in hoisted_from
        assert else_block not in hoisted_from

    def test_motion_equivalence(self):
        src = """
          r2 = *(u32 *)(r1 + 0)
          if r2 > 100 goto b
          r4 += 1
          goto d
        b:
          r5 += 1
        d:
          r7 += 3
          r0 = 2
          exit
        """
        prog = parse_asm(src)
        for motion in (False, True):
            vliw, rep = compile_program(prog, enable_code_motion=motion)
            assert hazard_check(vliw) == []
            res, st = exec_vliw(vliw, PacketContext(bytes(range(64))),
                                MapStore())
            o, os = exec_sequential(prog, PacketContext(bytes(range(64))),
                                    MapStore())
            assert res.result.action == o.action

    def test_speculative_load_not_hoisted(self):
        # the load in block "risky" is guarded; hoisting it above the branch
        # could trap, so it must stay put (candidate is DominatedSucc only)
        src = """
          r2 = *(u32 *)(r1 + 0)
          r3 = *(u32 *)(r1 + 4)
          r4 = r2
          r4 += 200
          if r4 > r3 goto out
          r5 = *(u64 *)(r2 + 150)
          r0 = 2
          exit
        out:
          r0 = 1
          exit
        """
        prog, cfg, schedules, moved = self._pipeline(src)
        risky = cfg.block_of(5)
        assert not any(frm == risky and prog[idx].kind is Kind.LOAD
                       for idx, frm, _to in moved)
        vliw, _ = compile_program(prog, passes={"boundary_checks": False})
        res, _ = exec_vliw(vliw, PacketContext(b"\x00" * 64), MapStore())
        o, _ = exec_sequential(prog, PacketContext(b"\x00" * 64), MapStore())
        assert not res.result.trapped and not o.trapped
        assert res.result.action == o.action == 1

    def test_parallel_branch_pull(self):
        # a switch-style chain of single-branch blocks; the dependent alu op
        # keeps the r3 producer out of the back-to-back window so the
        # branches can gather in one row
        src = """
          r2 = *(u32 *)(r1 + 0)
          r3 = *(u8 *)(r2 + 0)
          r7 = r3 + 5
          if r3 == 1 goto a1
          if r3 == 2 goto a2
          if r3 == 3 goto a3
          r0 = 0
          exit
        a1:
          r0 = 1
          exit
        a2:
          r0 = 2
          exit
        a3:
          r0 = 3
          exit
        """
        prog = parse_asm(src)
        vliw, rep = compile_program(prog)
        assert rep.pulled_branches >= 2
        multi = [row for row in vliw.rows
                 if sum(1 for s in row
                        if s is not None and s.instr.kind is Kind.BRANCH) > 1]
        assert multi
        row = multi[0]
        lanes = [l for l, s in enumerate(row)
                 if s is not None and s.instr.kind is Kind.BRANCH]
        idxs = [row[l].src_index for l in lanes]
        assert idxs == sorted(idxs)
        assert hazard_check(vliw) == []
        for first_byte in (0, 1, 2, 3, 9):
            pkt = bytes([first_byte]) + bytes(63)
            r, _ = exec_vliw(vliw, PacketContext(pkt), MapStore())
            o, _ = exec_sequential(prog, PacketContext(pkt), MapStore())
            assert (r.result.action, r.result.code) == (o.action, o.code)


class TestMicroOptimality:
    def test_greedy_within_one_of_optimum_sample(self, rng):
        """Random 6-node dependence graphs: list scheduling lands within
        one row of the exhaustive optimum (the full sweep runs in the
        acceptance suite)."""
        from xvliw.isa import Instruction
        from xvliw.analysis import DataDependenceGraph
        from xvliw.analysis import BasicBlock
        for trial in range(150):
            n = rng.randint(2, 6)
            edges = {}
            for i in range(n):
                for j in range(i + 1, n):
                    if rng.random() < 0.35:
                        edges[(i, j)] = frozenset({"RAW"})
            rows = _schedule_synthetic(n, edges)
            best = brute_force_min_rows(n, edges, 4)
            assert rows <= best + 1, (trial, n, sorted(edges))


def _schedule_synthetic(n, edges):
    """Schedule an abstract dependence graph through the real scheduler by
    wrapping the nodes in placeholder instructions."""
    from xvliw.analysis import BasicBlock, DataDependenceGraph
    from xvliw.isa import Instruction
    instrs = [Instruction(Kind.ALU_BINARY, op="add", width=64, dst=1, imm=i)
              for i in range(n)]

    class FakeProgram:
        def __getitem__(self, i):
            return instrs[i]

        def __len__(self):
            return n

    block = BasicBlock(0, 0, n - 1, (), ())
    ddg = DataDependenceGraph(0, list(range(n)), dict(edges))
    bs = list_schedule(block, ddg, LaneConstraints(lanes=4), FakeProgram())
    return len(bs.rows)
