"""Device-level managing system: the shadow-deployment state machine,
resource monitoring with autonomous abort, and promote/rollback requests.

All influence on the operation plane flows through preparation-window
requests; the manager itself runs as an asynchronous (stage-4) consumer of
cycle metrics. Deployment is autonomous once requested; aborts are autonomous;
promotion and rollback are operator-initiated.
"""

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from cyclab.executor import PrepRejected


class Phase(Enum):
    IDLE = "Idle"
    ALLOCATING = "Allocating"
    CONFIGURING = "Configuring"
    SHADOW = "Shadow"
    SWITCHING = "Switching"
    ACTIVE = "Active"
    ROLLED_BACK = "RolledBack"
    ABORTED = "Aborted"


LEGAL_TRANSITIONS = {
    Phase.IDLE: {Phase.ALLOCATING},
    Phase.ALLOCATING: {Phase.CONFIGURING, Phase.ABORTED},
    Phase.CONFIGURING: {Phase.SHADOW, Phase.ABORTED},
    Phase.SHADOW: {Phase.SWITCHING, Phase.ABORTED},
    Phase.SWITCHING: {Phase.ACTIVE, Phase.ABORTED},
    Phase.ACTIVE: {Phase.ROLLED_BACK},
    Phase.ROLLED_BACK: set(),
    Phase.ABORTED: set(),
}


class IllegalTransition(Exception):
    pass


class RequestRejected(Exception):
    """Management request refused (bad state, unhealthy shadow, expired window)."""


@dataclass
class ResourceBudget:
    max_stage2_us: float = 200.0
    violation_threshold: int = 5
    arena_bytes: int = 1 << 20

    def __post_init__(self):
        if self.violation_threshold < 1:
            raise ValueError("violation threshold must be >= 1")


@dataclass
class AssetAdaptation:
    asset: str
    phase: Phase = Phase.IDLE
    service_b: object = None
    budget: ResourceBudget = None
    history: list = field(default_factory=list)
    switch_cycle: int = None
    rollback_cycle: int = None
    consecutive_violations: int = 0
    violation_cycles: list = field(default_factory=list)
    deployed_at: int = None
    retired: bool = False
    pending_agreement: int = None  # proposed k awaiting commit (2PC)


class AdaptationManager:
    """One managing loop per device; tracks one A/B adaptation per asset.

    The binding argument provides the effectors, each safe to call only from
    inside a preparation window:
      bind_shadow(descriptor)    register B's stage-2 task, gated off
      unbind_shadow(descriptor)  deregister B
      retire_active(descriptor)  deregister old A after the retention window
      arm_switch(directive, target_service, next_cycle)
    """

    def __init__(self, executor, binding, retention_cycles=1000,
                 health_window=1000, overrun_rate_limit=0.01,
                 service_arena_bytes=4096, min_switch_lead=1):
        self.executor = executor
        self.binding = binding
        self.retention_cycles = retention_cycles
        self.health_window = health_window
        self.overrun_rate_limit = overrun_rate_limit
        self.service_arena_bytes = service_arena_bytes
        self.min_switch_lead = min_switch_lead
        self.assets = {}
        self._recent_overruns = deque(maxlen=health_window)
        self._baseline_overrun_rate = 0.0
        self._overruns_seen = 0
        self._cycles_seen = 0

    def state(self, asset):
        return self.assets.setdefault(asset, AssetAdaptation(asset))

    def _transition(self, st, to, cycle, reason):
        if to not in LEGAL_TRANSITIONS[st.phase]:
            raise IllegalTransition(f"{st.phase.value} -> {to.value}")
        st.history.append((cycle, f"{st.phase.value}->{to.value}", reason))
        st.phase = to

    # -- deployment --------------------------------------------------------

    def deploy_shadow(self, descriptor, budget):
        """Stage the Idle->Allocating->Configuring->Shadow sequence, one
        transition per preparation window; operation cycles never stall."""
        st = self.state(descriptor.target_asset)
        if st.phase is not Phase.IDLE:
            raise RequestRejected(
                f"asset {descriptor.target_asset!r} not Idle ({st.phase.value})"
            )
        st.service_b = descriptor
        st.budget = budget

        def step_allocate(executor, cycle):
            if budget.arena_bytes < self.service_arena_bytes:
                self._transition(st, Phase.ALLOCATING, cycle, "deploy requested")
                self._transition(st, Phase.ABORTED, cycle, "AllocFailed")
                raise PrepRejected("AllocFailed: arena limit too small")
            self._transition(st, Phase.ALLOCATING, cycle, "deploy requested")
            executor.submit_prep_request(step_configure, "deploy:configure")

        def step_configure(executor, cycle):
            self.binding.bind_shadow(descriptor)
            self._transition(st, Phase.CONFIGURING, cycle,
                             "arena reserved, wiring subscriptions")
            executor.submit_prep_request(step_shadow, "deploy:shadow")

        def step_shadow(executor, cycle):
            st.deployed_at = cycle
            self._baseline_overrun_rate = (
                self._overruns_seen / self._cycles_seen if self._cycles_seen else 0.0
            )
            self._transition(st, Phase.SHADOW, cycle, "shadow operation started")

        return self.executor.submit_prep_request(step_allocate, "deploy:allocate")

    # -- monitoring (stage-4 task) -----------------------------------------

    def on_cycle(self, metrics):
        self._cycles_seen += 1
        if metrics.overrun:
            self._overruns_seen += 1
        self._recent_overruns.append(1 if metrics.overrun else 0)
        for st in self.assets.values():
            self._monitor_asset(st, metrics)

    def _monitor_asset(self, st, metrics):
        cycle = metrics.cycle
        if st.phase is Phase.SWITCHING and cycle >= st.switch_cycle:
            self._transition(st, Phase.ACTIVE, st.switch_cycle,
                             f"switched at cycle {st.switch_cycle}")
            self.executor.submit_prep_request(
                lambda ex, c: self.binding.promote_shadow(st.service_b),
                "promote:reprioritize",
            )
        if st.phase is Phase.ACTIVE and st.rollback_cycle is not None:
            if cycle >= st.rollback_cycle:
                self._transition(st, Phase.ROLLED_BACK, st.rollback_cycle,
                                 f"rolled back at cycle {st.rollback_cycle}")
                descriptor = st.service_b
                self.executor.submit_prep_request(
                    lambda ex, c: self.binding.unbind_shadow(descriptor),
                    "rollback:terminate-b",
                )
                return
        if st.phase is Phase.ACTIVE and st.rollback_cycle is None:
            retire_at = st.switch_cycle + self.retention_cycles
            if cycle >= retire_at and not st.retired:
                st.retired = True
                self.executor.submit_prep_request(
                    lambda ex, c: self.binding.retire_active(st.service_b),
                    "retention:retire-old-active",
                )
        if st.phase is Phase.ROLLED_BACK:
            return
        if st.phase not in (Phase.SHADOW, Phase.SWITCHING, Phase.ACTIVE):
            return
        if st.service_b is None or st.budget is None:
            return

        # stage-2 time budget, consecutive-violation rule
        b_task = f"svc:{st.service_b.id}"
        duration = metrics.task_ns.get(b_task)
        if duration is not None and st.phase in (Phase.SHADOW, Phase.SWITCHING):
            if duration > st.budget.max_stage2_us * 1000:
                st.consecutive_violations += 1
                st.violation_cycles.append(cycle)
            else:
                st.consecutive_violations = 0
            if st.consecutive_violations >= st.budget.violation_threshold:
                self._abort(st, cycle, "BudgetViolation")
                return

        # overrun-rate rule: only overruns that began after B's deployment
        if st.phase in (Phase.SHADOW, Phase.SWITCHING) and st.deployed_at is not None:
            window = len(self._recent_overruns)
            if window >= 100:
                rate = sum(self._recent_overruns) / window
                if (rate > self.overrun_rate_limit
                        and self._baseline_overrun_rate <= self.overrun_rate_limit):
                    self._abort(st, cycle, f"OverrunRate({rate:.3f})")

    def _abort(self, st, cycle, reason):
        self._transition(st, Phase.ABORTED, cycle, reason)
        descriptor = st.service_b
        self.executor.submit_prep_request(
            lambda ex, c: self.binding.unbind_shadow(descriptor),
            f"abort:{reason}",
        )

    # -- health ------------------------------------------------------------

    def healthy(self, asset):
        st = self.state(asset)
        if st.phase is not Phase.SHADOW:
            return False
        cutoff = self.executor.current_cycle - self.health_window
        return not any(c > cutoff for c in st.violation_cycles)

    # -- operator requests -------------------------------------------------

    def request_promote(self, asset, k):
        st = self.state(asset)
        if st.phase is not Phase.SHADOW:
            raise RequestRejected(f"promote requires Shadow, is {st.phase.value}")
        if not self.healthy(asset):
            raise RequestRejected(
                f"shadow unhealthy: budget violations at cycles "
                f"{st.violation_cycles[-5:]}"
            )
        return self._arm(st, k, "promote")

    def request_rollback(self, asset, m):
        st = self.state(asset)
        if st.phase is not Phase.ACTIVE:
            raise RequestRejected(f"rollback requires Active, is {st.phase.value}")
        if m > st.switch_cycle + self.retention_cycles:
            raise RequestRejected(
                f"retention window expired (switch at {st.switch_cycle}, "
                f"retention {self.retention_cycles})"
            )
        return self._arm(st, m, "rollback")

    def _arm(self, st, k, direction):
        def apply(executor, cycle):
            # `cycle` is the cycle about to start; the minimum arming lead of
            # one cycle means k may be this cycle at the earliest.
            if k < cycle:
                raise PrepRejected(f"switch cycle {k} not in the future")
            self.binding.arm_switch(st.asset, k, direction)
            if direction == "promote":
                st.switch_cycle = k
                self._transition(st, Phase.SWITCHING, cycle, f"armed switch at {k}")
            else:
                st.rollback_cycle = k

        return self.executor.submit_prep_request(apply, f"{direction}@{k}")

    def request_abort(self, asset):
        """Operator-initiated abort of a shadow deployment."""
        st = self.state(asset)
        if st.phase not in (Phase.SHADOW, Phase.SWITCHING):
            raise RequestRejected(
                f"abort requires Shadow/Switching, is {st.phase.value}"
            )
        self._abort(st, self.executor.current_cycle, "OperatorAbort")

    def phase_at(self, asset, cycle):
        """Replay the transition log: adaptation phase as of `cycle`."""
        st = self.state(asset)
        phase = Phase.IDLE
        for c, transition, _ in st.history:
            if c <= cycle:
                phase = Phase(transition.split("->")[1])
        return phase

    # -- two-phase switch agreement ---------------------------------------

    def prepare_promote(self, asset, k):
        """Phase 1: validate and reserve; nothing is armed yet."""
        st = self.state(asset)
        if st.phase is not Phase.SHADOW:
            raise RequestRejected(f"prepare requires Shadow, is {st.phase.value}")
        if not self.healthy(asset):
            raise RequestRejected("shadow unhealthy")
        if k < self.executor.current_cycle + self.min_switch_lead:
            raise RequestRejected(f"switch cycle {k} too close")
        st.pending_agreement = k

    def commit_promote(self, asset, k):
        st = self.state(asset)
        if st.pending_agreement != k:
            raise RequestRejected(f"no prepared agreement for cycle {k}")
        st.pending_agreement = None
        return self.request_promote(asset, k)

    def abort_agreement(self, asset, k):
        st = self.state(asset)
        if st.pending_agreement == k:
            st.pending_agreement = None

    # -- management twin view ---------------------------------------------

    def snapshot(self):
        return {
            "cycle": self.executor.current_cycle,
            "assets": {
                asset: {
                    "state": st.phase.value,
                    "service_b": st.service_b.id if st.service_b else None,
                    "switch_cycle": st.switch_cycle,
                    "rollback_cycle": st.rollback_cycle,
                    "budget": {
                        "max_stage2_us": st.budget.max_stage2_us,
                        "violation_threshold": st.budget.violation_threshold,
                        "arena_bytes": st.budget.arena_bytes,
                    } if st.budget else None,
                    "violations": len(st.violation_cycles),
                }
                for asset, st in self.assets.items()
            },
        }

    def history_records(self):
        out = []
        for st in self.assets.values():
            for cycle, transition, reason in st.history:
                out.append({"asset": st.asset, "cycle": cycle,
                            "transition": transition, "reason": reason})
        out.sort(key=lambda r: r["cycle"])
        return out
