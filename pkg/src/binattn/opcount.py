"""Operation tallies shared by the analytic formula and the instrumented kernel."""

from __future__ import annotations

from collections import Counter

# Categories summed into the headline flop count. Anything else counted as a
# flop is overhead (quantization preprocessing, output normalization).
HEADLINE_FLOPS = ("score_scale", "bias_add", "rowmax", "exp_shift", "exp", "rowsum", "rescale", "pv_flops")
OVERHEAD_FLOPS = ("qk_quantize", "v_quantize", "p_quantize", "finalize")


class OpCounter(Counter):
    """Named op tallies. ``qk_bops`` and ``pv_int8_ops`` are not flops."""

    def add_block(self, br: int, bv: int, d: int, *, bias: bool, quantize_pv: bool) -> None:
        area = br * bv
        self["qk_bops"] += 2 * area * d
        self["score_scale"] += area
        if bias:
            self["bias_add"] += area
        self["rowmax"] += area
        self["exp_shift"] += area
        self["exp"] += area
        self["rowsum"] += area
        # per row: merge running max, exp(m_old - m_new), l update, O update
        self["rescale"] += br * (5 + 2 * d)
        if quantize_pv:
            self["pv_int8_ops"] += 2 * area * d
            self["p_quantize"] += 2 * area
        else:
            self["pv_flops"] += 2 * area * d

    def add_finalize(self, br: int, d: int, *, quantize_pv: bool) -> None:
        self["finalize"] += br * d * (3 if quantize_pv else 1)

    def add_preprocess(self, n: int, d: int, *, quantize_pv: bool) -> None:
        # Q and K: |x|, running sum, sign test
        self["qk_quantize"] += 2 * 3 * n * d
        if quantize_pv:
            # |v|, running max, divide, round
            self["v_quantize"] += 4 * n * d
