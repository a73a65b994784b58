"""Train feature-flag variants on one corpus and compare their metrics."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

from .config import TrainingConfig
from .corpus import Corpus
from .layers import ConfigurationError
from .metrics import MetricsReport, evaluate
from .trainer import train

FLAG_KEYS = frozenset({"enable_dat", "enable_reg_loss", "share_speaker_projection"})


@dataclass
class AblationReport:
    names: list[str]
    reports: list[MetricsReport]

    ROWS = ("scatter_ratio", "duration_consistency_max_dev", "speaker_probe_accuracy")

    def column(self, name: str) -> MetricsReport:
        return self.reports[self.names.index(name)]

    def to_dict(self) -> dict:
        return {n: r.to_dict() for n, r in zip(self.names, self.reports)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        width = max(12, *(len(n) for n in self.names))
        lines = ["metric".ljust(30) + "".join(n.rjust(width + 2) for n in self.names)]
        for row in self.ROWS:
            vals = (getattr(r, row) for r in self.reports)
            lines.append(row.ljust(30) + "".join(f"{v:.6g}".rjust(width + 2) for v in vals))
        return "\n".join(lines)


def variant_name(flags: Mapping[str, bool]) -> str:
    if not flags:
        return "base"
    return ",".join(f"{k}={'on' if v else 'off'}" for k, v in sorted(flags.items()))


def _run_variant(config: TrainingConfig, corpus: Corpus) -> MetricsReport:
    trainer = train(config, corpus)
    return evaluate(trainer.model, corpus)


def ablation_run(base: TrainingConfig, variants: Sequence[Mapping[str, bool]], corpus: Corpus,
                 workers: int = 1) -> AblationReport:
    """Each variant overrides feature flags only; seed, dims and corpus stay shared."""
    if not variants:
        raise ConfigurationError("ablation needs at least one variant")
    configs = []
    for flags in variants:
        extra = set(flags) - FLAG_KEYS
        if extra:
            raise ConfigurationError(f"variants may only change feature flags, got {sorted(extra)}")
        configs.append(base.with_overrides(**flags))
    names = [variant_name(f) for f in variants]
    if len(set(names)) != len(names):
        raise ConfigurationError("duplicate ablation variants")
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(configs))) as pool:
            reports = list(pool.map(_run_variant, configs, [corpus] * len(configs)))
    else:
        reports = [_run_variant(c, corpus) for c in configs]
    return AblationReport(names, reports)
