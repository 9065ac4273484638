"""End-to-end pipeline configuration and orchestration.

A run is: load index -> pick n_balance -> plan -> execute plan -> merge ->
stats. Every stage leaves an artifact under the output root; none is
silently overwritten (identical re-writes are allowed so interrupted runs
can resume, anything else needs force=True).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

from .blend import BlendWeights
from .dataset import ClassId, DatasetIndex, load_index, write_bytes_atomic
from .generation import (
    DEFAULT_STEPS,
    ExecutionResult,
    HttpBackend,
    MockBackend,
    execute_plan,
)
from .metrics import merge_datasets, stats_report
from .planner import auto_n_balance, make_plan, render_plan
from .priors import CannyParams, HttpDetector, canny_edges, external_prior
from .prompts import HttpCaptionSource, SidecarCaptions
from .voc import voc_schema

log = logging.getLogger(__name__)

ENDPOINT_ENV = "CTRLAUG_ENDPOINT"
PRIOR_KINDS = ("lineart", "hed", "sketch")


class PipelineError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    root: str
    out: str
    split: str = "train"
    schema_file: str | None = None
    w1: float = 0.7
    w2: float = 0.9
    n_balance: int | None = None
    auto_ratio: float | None = None  # defaults to 1.0 when n_balance unset
    prior_source: str = "builtin_canny"  # or one of PRIOR_KINDS (service)
    prior_endpoint: str | None = None
    caption_sources: tuple[str, ...] = ("sidecar", "service")
    caption_dir: str | None = None
    caption_endpoint: str | None = None  # "service" leg is inert without it
    backend: str = "mock"
    endpoint: str | None = None
    parallelism: int = 2
    steps: int = DEFAULT_STEPS
    control_kind: str = "lineart"
    control_polarity: str = "white_on_black"
    dilation_radius: int = 0
    force: bool = False

    def __post_init__(self):
        BlendWeights(self.w1, self.w2)  # validates finiteness/sign
        if self.backend not in ("mock", "http"):
            raise ValueError(f"backend must be mock or http, got {self.backend!r}")
        if self.n_balance is not None and self.auto_ratio is not None:
            raise ValueError("set n_balance or auto_ratio, not both")
        if self.n_balance is not None and self.n_balance < 1:
            raise ValueError("n_balance must be >= 1")
        if self.prior_source != "builtin_canny" and self.prior_source not in PRIOR_KINDS:
            raise ValueError(f"unknown prior source {self.prior_source!r}")

    @classmethod
    def from_file(cls, path: Path | str, **overrides) -> "PipelineConfig":
        """Load a JSON config document; keyword overrides win over fields."""
        fields = json.loads(Path(path).read_text())
        fields.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(fields) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "caption_sources" in fields:
            fields["caption_sources"] = tuple(fields["caption_sources"])
        return cls(**fields)

    def resolved_endpoint(self) -> str | None:
        return self.endpoint or os.environ.get(ENDPOINT_ENV)


def load_schema(path: Path | str | None) -> list[ClassId]:
    if path is None:
        return voc_schema()
    records = json.loads(Path(path).read_text())
    return [ClassId(r["id"], r["name"]) for r in records]


def build_backend(config: PipelineConfig):
    if config.backend == "mock":
        return MockBackend()
    endpoint = config.resolved_endpoint()
    if not endpoint:
        raise ValueError(f"http backend needs --endpoint or ${ENDPOINT_ENV}")
    return HttpBackend(endpoint)


def build_prior_source(config: PipelineConfig):
    if config.prior_source == "builtin_canny":
        return lambda image: canny_edges(image, CannyParams())
    if not config.prior_endpoint:
        raise ValueError(f"prior source {config.prior_source!r} needs prior_endpoint")
    detector = HttpDetector(config.prior_endpoint, kind=config.prior_source)
    return lambda image: external_prior(image, detector)


def build_caption_sources(config: PipelineConfig):
    sources = []
    for name in config.caption_sources:
        if name == "sidecar":
            directory = config.caption_dir or str(Path(config.root) / "captions")
            sources.append(SidecarCaptions(directory))
        elif name == "service":
            if config.caption_endpoint:
                sources.append(HttpCaptionSource(config.caption_endpoint))
            else:
                log.debug("no caption endpoint configured; service source skipped")
        else:
            raise ValueError(f"unknown caption source {name!r}")
    return sources


def write_artifact(path: Path, data: bytes, force: bool) -> None:
    """Refuse to silently replace an artifact with different content."""
    if path.exists():
        if path.read_bytes() == data:
            return
        if not force:
            raise FileExistsError(f"{path} exists with different content; use --force")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_bytes_atomic(path, data)


def merged_split_lines(origin: DatasetIndex, gen: DatasetIndex) -> str:
    ids = [s.sample_id for s in origin.samples] + [s.sample_id for s in gen.samples]
    return "".join(i + "\n" for i in ids)


def run_pipeline(config: PipelineConfig) -> dict:
    """Run every stage and return the report (also written to the out root)."""
    out_root = Path(config.out)
    out_root.mkdir(parents=True, exist_ok=True)
    schema = load_schema(config.schema_file)

    def stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(name, str(exc)) from exc

    origin = stage("index", load_index, config.root, config.split, schema)

    def plan_stage():
        n = config.n_balance
        if n is None:
            n = auto_n_balance(origin, 1.0 if config.auto_ratio is None else config.auto_ratio)
        plan = make_plan(origin, n)
        plan_path = out_root / "plan.jsonl"
        write_artifact(plan_path, render_plan(plan).encode(), config.force)
        return plan

    plan = stage("plan", plan_stage)

    def generate_stage() -> ExecutionResult:
        return execute_plan(
            plan,
            origin,
            build_backend(config),
            BlendWeights(config.w1, config.w2),
            out_root=out_root,
            prompt_sources=build_caption_sources(config),
            split=config.split,
            parallelism=config.parallelism,
            prior_source=build_prior_source(config),
            dilation_radius=config.dilation_radius,
            steps=config.steps,
            control_kind=config.control_kind,
            control_polarity=config.control_polarity,
        )

    execution = stage("generate", generate_stage)
    gen = execution.gen_index

    def merge_stage():
        merged = merge_datasets(origin, gen)
        merged_path = out_root / "ImageSets" / "Segmentation" / f"{config.split}_merged.txt"
        write_artifact(merged_path, merged_split_lines(origin, gen).encode(), config.force)
        return merged, merged_path

    merged, merged_path = stage("merge", merge_stage)

    def stats_stage():
        report = stats_report(origin, gen, merged)
        path = out_root / "stats.json"
        write_artifact(path, (json.dumps(report, indent=2) + "\n").encode(), config.force)
        return report, path

    stats, stats_path = stage("stats", stats_stage)

    report = {
        "config": dataclasses.asdict(config),
        "n_balance": plan.n_balance,
        "sizes": {"origin": len(origin), "gen": len(gen), "final": len(merged)},
        "failures": len(execution.failures),
        "failed_entries": execution.failures,
        "artifacts": {
            "plan": str(out_root / "plan.jsonl"),
            "gen_root": str(out_root),
            "manifest": str(out_root / "manifest.jsonl"),
            "merged_split": str(merged_path),
            "stats": str(stats_path),
        },
        "stats": stats,
    }
    write_artifact(
        out_root / "run_report.json",
        (json.dumps(report, indent=2) + "\n").encode(),
        True,  # report reflects the latest run unconditionally
    )
    return report
