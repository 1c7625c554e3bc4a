"""Reactive traffic-steering xApp used as the comparison arm."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .env import NO_TS, encode_action
from .traffic import TelemetryRecord


@dataclass
class ReactivePolicy:
    """Steer away from a VNF only after it was observed congested.

    The most congested VNF (highest offered load over service rate, lowest id
    on ties) is moved to the least-utilised feasible VNF of the same kind.
    When it has no feasible destination the next congested VNF is tried.
    ``cooldown`` minutes must pass between two steering actions.
    """

    service_rates: np.ndarray
    cooldown: int = 0
    _last_action_minute: int | None = None

    def reset(self) -> None:
        self._last_action_minute = None

    def react(self, records: Sequence[TelemetryRecord], mask: np.ndarray, loads: np.ndarray | None = None) -> int:
        """Action for the minute after ``records`` were observed.

        ``mask`` is the environment's feasibility mask for that minute and
        ``loads`` the offered load per VNF (taken from ``records`` if omitted).
        """
        n = len(self.service_rates)
        if not records:
            return NO_TS
        minute = records[0].minute
        if self.cooldown and self._last_action_minute is not None and minute - self._last_action_minute < self.cooldown:
            return NO_TS
        if loads is None:
            loads = np.zeros(n)
            for r in records:
                loads[r.vnf_id] = r.avg_packets_per_min
        ratio = np.asarray(loads, dtype=float) / self.service_rates
        hot = [r.vnf_id for r in records if r.congested_label]
        # most congested first, lowest id on ties
        hot.sort(key=lambda v: (-ratio[v], v))
        feas = np.asarray(mask[1:], dtype=bool).reshape(n, n)
        for src in hot:
            candidates = np.nonzero(feas[src])[0]
            if candidates.size:
                dst = int(min(candidates, key=lambda d: (ratio[d], d)))
                self._last_action_minute = minute
                return encode_action(src, dst, n)
        return NO_TS
