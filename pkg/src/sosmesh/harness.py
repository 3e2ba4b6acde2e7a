"""Experiment harness: scheduled help-request campaigns and their statistics.

An experiment injects help requests from the scenario's source at a fixed
rate for a fixed duration (experiment 1/2/3 = 5/10/20 requests per minute,
12 minutes, so 60/120/240 requests), repeats it over fresh seeds, and
reduces the traces to one record per request:

    request_id, send time, time of the first help offer received back,
    answered flag, hop counts of the winning out/return paths, responder id.

Hop counts are reported as radio transmissions traversed on the mesh
segment, i.e. ttl delta + 1; proxy-link crossings are not hops.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .errors import InvalidTtlPair, ValidationError
from .models import EmergencyKind, EmergencyMessage
from .scenario import ScenarioConfig, build_simulation
from .simnet import TraceEvent

EXPERIMENT_RATES = {1: 5, 2: 10, 3: 20}   # requests per minute
DEFAULT_DURATION_MIN = 12
DEFAULT_REPETITIONS = 5

CSV_HEADER = "request_id,send_ms,first_offer_ms,answered,hops_out,hops_back,responder"

# Trace kinds the harness needs; everything else is skipped to keep long
# campaigns in bounded memory (drop/loss totals live in per-node counters).
_HARNESS_TRACE_KINDS = frozenset({"inject", "deliver"})


def hop_count(initial_ttl: int, received_ttl: int) -> int:
    """TTL consumed in flight. Raises InvalidTtlPair on impossible pairs."""
    if not 0 <= received_ttl <= 127 or not 0 <= initial_ttl <= 127:
        raise InvalidTtlPair(f"ttl values ({initial_ttl}, {received_ttl}) outside 0..127")
    if received_ttl > initial_ttl:
        raise InvalidTtlPair(
            f"received ttl {received_ttl} exceeds initial ttl {initial_ttl}"
        )
    return initial_ttl - received_ttl


def _quantize(value: float) -> float:
    """Round a time to microseconds so CSV round-trips reproduce it exactly."""
    return float(f"{value:.3f}")


@dataclass(frozen=True)
class ExperimentPlan:
    rate_per_min: int
    duration_min: int = DEFAULT_DURATION_MIN
    repetitions: int = DEFAULT_REPETITIONS
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rate_per_min not in EXPERIMENT_RATES.values():
            raise ValueError(
                f"rate {self.rate_per_min}/min is not one of {sorted(EXPERIMENT_RATES.values())}"
            )
        if self.duration_min < 1 or self.repetitions < 1:
            raise ValueError("duration and repetitions must be positive")

    @classmethod
    def for_experiment(cls, number: int, seed: int = 0, repetitions: int = DEFAULT_REPETITIONS) -> "ExperimentPlan":
        if number not in EXPERIMENT_RATES:
            raise ValueError(f"experiment must be 1, 2, or 3, got {number}")
        return cls(rate_per_min=EXPERIMENT_RATES[number], seed=seed, repetitions=repetitions)

    @property
    def requests_per_repetition(self) -> int:
        return self.rate_per_min * self.duration_min

    @property
    def interval_ms(self) -> float:
        return 60000.0 / self.rate_per_min


@dataclass
class MessageRecord:
    request_id: int
    send_ms: float
    first_offer_ms: Optional[float]
    answered: bool
    hops_out: Optional[int]
    hops_back: Optional[int]
    responder: Optional[str]

    @property
    def response_ms(self) -> Optional[float]:
        if not self.answered:
            return None
        return self.first_offer_ms - self.send_ms


@dataclass
class ExperimentResult:
    scenario: str
    plan: ExperimentPlan
    records: List[MessageRecord]
    injected_per_repetition: List[int]
    drop_totals: Dict[str, int] = field(default_factory=dict)

    # ----------------------------------------------------------- aggregates

    @property
    def sent(self) -> int:
        return len(self.records)

    @property
    def answered_count(self) -> int:
        return sum(1 for r in self.records if r.answered)

    @property
    def loss_pct(self) -> float:
        if not self.records:
            return 0.0
        return 100.0 * (self.sent - self.answered_count) / self.sent

    @property
    def response_times(self) -> List[float]:
        return [r.response_ms for r in self.records if r.answered]

    @property
    def hop_samples(self) -> List[int]:
        """Out and return hop counts pooled, one sample per received PDU."""
        samples: List[int] = []
        for r in self.records:
            if r.answered:
                samples.append(r.hops_out)
                samples.append(r.hops_back)
        return samples

    def summary(self) -> Dict[str, float]:
        out: Dict[str, float] = {
            "sent": float(self.sent),
            "answered": float(self.answered_count),
            "loss_pct": self.loss_pct,
        }
        times = self.response_times
        hops = self.hop_samples
        if times:
            out["response_mean_ms"] = statistics.mean(times)
            out["response_stdev_ms"] = statistics.stdev(times) if len(times) > 1 else 0.0
            out["response_median_ms"] = statistics.median(times)
            out["hops_mean"] = statistics.mean(hops)
            out["hops_stdev"] = statistics.stdev(hops) if len(hops) > 1 else 0.0
            out["hops_median"] = statistics.median(hops)
        return out


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

def _scan_repetition(
    trace: List[TraceEvent],
    source_id: str,
    by_unicast: Dict[int, str],
    initial_ttl: int,
    request_base: int,
) -> List[MessageRecord]:
    sends: Dict[int, float] = {}
    # first help offer back at the source, keyed by request id
    offers: Dict[int, TraceEvent] = {}
    # help-request delivery ttl at each responder, keyed by (request, node)
    request_rx: Dict[Tuple[int, str], int] = {}

    for event in trace:
        rid = event.info.get("request_id")
        if rid is None:
            continue
        if event.kind == "inject" and event.node == source_id:
            if event.info.get("message") == "help_request":
                sends[rid] = event.t
        elif event.kind == "deliver":
            message = event.info.get("message")
            if message == "help_offer" and event.node == source_id and rid not in offers:
                offers[rid] = event
            elif message == "help_request" and event.node != source_id:
                request_rx.setdefault((rid, event.node), event.info["ttl"])

    records: List[MessageRecord] = []
    for rid in sorted(sends):
        send_ms = _quantize(sends[rid])
        offer = offers.get(rid)
        if offer is None:
            records.append(
                MessageRecord(rid + request_base, send_ms, None, False, None, None, None)
            )
            continue
        responder = by_unicast[offer.info["src"]]
        hops_back = hop_count(initial_ttl, offer.info["ttl"]) + 1
        out_ttl = request_rx[(rid, responder)]
        hops_out = hop_count(initial_ttl, out_ttl) + 1
        records.append(
            MessageRecord(
                rid + request_base,
                send_ms,
                _quantize(offer.t),
                True,
                hops_out,
                hops_back,
                responder,
            )
        )
    return records


def run_experiment(config: ScenarioConfig, plan: ExperimentPlan) -> ExperimentResult:
    """Run every repetition of one experiment and collect per-request records."""
    all_records: List[MessageRecord] = []
    injected_counts: List[int] = []
    drop_totals: Dict[str, int] = {}
    source = config.source_id

    for rep in range(plan.repetitions):
        sim = build_simulation(config, seed=f"{plan.seed}:{rep}")
        sim.trace_kinds = _HARNESS_TRACE_KINDS
        for k in range(plan.requests_per_repetition):
            message = EmergencyMessage(EmergencyKind.HELP_REQUEST, request_id=k + 1)
            sim.inject_emergency(source, message, at_ms=k * plan.interval_ms)
        trace = sim.run()

        injected = sum(
            1
            for e in trace
            if e.kind == "inject" and e.node == source and e.info.get("message") == "help_request"
        )
        injected_counts.append(injected)
        records = _scan_repetition(
            trace, source, sim.by_unicast, config.initial_ttl, request_base=rep * 1000
        )
        all_records.extend(records)
        for node in sim.nodes.values():
            for reason, count in node.drops.items():
                drop_totals[reason] = drop_totals.get(reason, 0) + count

    return ExperimentResult(
        scenario=config.name,
        plan=plan,
        records=all_records,
        injected_per_repetition=injected_counts,
        drop_totals=drop_totals,
    )


def run_campaign(
    config: ScenarioConfig, seed: int = 0, repetitions: int = DEFAULT_REPETITIONS
) -> Dict[int, ExperimentResult]:
    """All three experiments against one scenario."""
    return {
        number: run_experiment(config, ExperimentPlan.for_experiment(number, seed, repetitions))
        for number in sorted(EXPERIMENT_RATES)
    }


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def emit_csv(result: ExperimentResult, path: "str | Path") -> Path:
    """One row per request, schema pinned by CSV_HEADER."""
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_HEADER.split(","))
        for r in result.records:
            writer.writerow(
                [
                    r.request_id,
                    f"{r.send_ms:.3f}",
                    f"{r.first_offer_ms:.3f}" if r.answered else "",
                    "true" if r.answered else "false",
                    r.hops_out if r.answered else "",
                    r.hops_back if r.answered else "",
                    r.responder if r.answered else "",
                ]
            )
    return path


def read_csv(path: "str | Path") -> List[MessageRecord]:
    """Parse a result file back into records (inverse of emit_csv)."""
    records: List[MessageRecord] = []
    with Path(path).open(newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != CSV_HEADER.split(","):
            raise ValidationError(f"{path}: unexpected CSV header {header}")
        for row in reader:
            answered = row[3] == "true"
            records.append(
                MessageRecord(
                    request_id=int(row[0]),
                    send_ms=float(row[1]),
                    first_offer_ms=float(row[2]) if answered else None,
                    answered=answered,
                    hops_out=int(row[4]) if answered else None,
                    hops_back=int(row[5]) if answered else None,
                    responder=row[6] if answered else None,
                )
            )
    return records


# ---------------------------------------------------------------------------
# Plot
# ---------------------------------------------------------------------------

def emit_plot(
    results: "Dict[Tuple[str, int], List[MessageRecord]]", path: "str | Path"
) -> Path:
    """Response-time boxes and loss bars, one per (scenario, experiment).

    `results` maps (scenario name, experiment number) to that run's records.
    Refuses to plot when there is nothing to show.
    """
    if not results or all(not records for records in results.values()):
        raise ValueError("no experiment records to plot")

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    roman = {1: "I", 2: "II", 3: "III"}
    labels: List[str] = []
    boxes: List[List[float]] = []
    losses: List[float] = []
    for (scenario, number) in sorted(results):
        records = results[(scenario, number)]
        if not records:
            continue
        labels.append(f"{scenario}\n{roman.get(number, number)}")
        boxes.append([r.response_ms for r in records if r.answered])
        unanswered = sum(1 for r in records if not r.answered)
        losses.append(100.0 * unanswered / len(records))

    fig, (ax_rt, ax_loss) = plt.subplots(1, 2, figsize=(11, 4.5))
    ax_rt.boxplot([box or [float("nan")] for box in boxes])
    ax_rt.set_xticks(range(1, len(labels) + 1), labels)
    ax_rt.set_ylabel("response time (ms)")
    ax_rt.set_title("Help-request response time")
    ax_rt.grid(axis="y", alpha=0.3)

    ax_loss.bar(range(len(losses)), losses, color="#b55")
    ax_loss.set_xticks(range(len(labels)), labels)
    ax_loss.set_ylabel("unanswered requests (%)")
    ax_loss.set_title("Request loss")
    ax_loss.grid(axis="y", alpha=0.3)

    fig.tight_layout()
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

@dataclass
class CalibrationReport:
    config: ScenarioConfig
    target_loss_pct: float
    target_hops: float
    measured_loss_pct: float
    measured_hops: float
    probes: int

    def summary(self) -> str:
        return (
            f"calibrated {self.config.name}: base_loss={self.config.base_loss:.4f}"
            f" range={self.config.range_m:.2f} m ->"
            f" loss {self.measured_loss_pct:.2f}% (target {self.target_loss_pct:.2f}%),"
            f" hops {self.measured_hops:.2f} (target {self.target_hops:.2f})"
            f" [{self.probes} probe runs]"
        )


def _probe(config: ScenarioConfig, seed: int, repetitions: int = 2) -> Tuple[float, float]:
    """Measure (loss %, mean hops) with a short experiment-1 campaign."""
    plan = ExperimentPlan(rate_per_min=5, repetitions=repetitions, seed=seed)
    result = run_experiment(config, plan)
    hops = result.hop_samples
    mean_hops = statistics.mean(hops) if hops else float("inf")
    return result.loss_pct, mean_hops


def calibrate(
    config: ScenarioConfig,
    target_loss_pct: float,
    target_hops: float,
    seed: int = 9,
    loss_tolerance: float = 2.0,
    hops_tolerance: float = 1.5,
    max_probes: int = 14,
) -> CalibrationReport:
    """Tune base_loss (and, if needed, radio range) toward the targets.

    Loss responds monotonically to base_loss, so a bisection fits; hop counts
    are a topology property and move only with radio range, which is adjusted
    in coarse steps when the measurement is outside tolerance.
    """
    work = replace(config, nodes=list(config.nodes), responders=list(config.responders))
    probes = 0

    # --- range: coarse adjustment until hop counts land in tolerance -------
    loss_now, hops_now = _probe(work, seed)
    probes += 1
    step = 0
    while abs(hops_now - target_hops) > hops_tolerance and step < 4:
        # hop counts shrink when range grows; 10% moves per step
        factor = 1.1 if hops_now > target_hops else 0.9
        work.range_m *= factor
        loss_now, hops_now = _probe(work, seed + probes)
        probes += 1
        step += 1

    # --- loss: bisection on base_loss, bracketed by the first measurement ---
    if loss_now < target_loss_pct:
        lo, hi = work.base_loss, 0.85
    else:
        lo, hi = 0.0, work.base_loss
    for _ in range(max_probes - probes):
        if abs(loss_now - target_loss_pct) <= loss_tolerance:
            break
        mid = (lo + hi) / 2.0
        work.base_loss = mid
        loss_now, hops_now = _probe(work, seed + probes)
        probes += 1
        if loss_now < target_loss_pct:
            lo = mid
        else:
            hi = mid

    return CalibrationReport(
        config=work,
        target_loss_pct=target_loss_pct,
        target_hops=target_hops,
        measured_loss_pct=loss_now,
        measured_hops=hops_now,
        probes=probes,
    )


def campaign_under_budget(
    config: ScenarioConfig, seed: int = 0, budget_s: float = 300.0
) -> Tuple[Dict[int, ExperimentResult], float]:
    """Run a full campaign and report its wall time against a budget."""
    start = time.perf_counter()
    results = run_campaign(config, seed=seed)
    elapsed = time.perf_counter() - start
    if elapsed > budget_s:
        raise RuntimeError(f"campaign took {elapsed:.1f} s, budget is {budget_s:.0f} s")
    return results, elapsed
