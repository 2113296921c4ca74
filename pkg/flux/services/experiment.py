"""
Experiment orchestration: one run directory per invocation, one method per mode.
"""

import platform
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from ..tensorcore import gradient_errors
from ..utils import derive_seed, get_logger, run_stamp, write_csv, write_json
from ..utils.exceptions import ConfigurationError, NumericalError, ValidationError
from .checkpoint import checkpoint_paths, load_checkpoint
from .evaluation import (
    evaluate,
    model_evaluator,
    token_optimization_sweep,
    write_eval_csv,
    write_sweep_csv,
)
from .flux_train import FT, PT, TrainConfig, ft_sample_loss, train
from .fluxvit import FluxViT, FluxViTConfig, init_params
from .sampling import SamplingGrid
from .tokenopt import exhaustive_search, flops, heuristic_search, pareto, write_plan_csv
from .videogen import GenSpec, VideoSample, export_dataset, gen_dataset, gen_video, load_dataset

logger = get_logger(__name__)

GRAD_CHECK_TOLERANCE = 1e-4
PARETO_FIELDS = ["budget", "F", "R", "gflops", "score"]


def flops_model(d_model: int, depth: int, heads: int, mlp_ratio: float = 4.0, num_classes: int = 400) -> FluxViTConfig:
    """Model shape for cost queries; patch and grid settings keep their defaults."""
    return FluxViTConfig(
        embed_dim=d_model, num_heads=heads, depth=depth, mlp_ratio=mlp_ratio, num_classes=num_classes
    ).validate()


def _resolve_checkpoint(path: str) -> Path:
    """Accept a checkpoint directory or a run directory holding ``checkpoint/``."""
    directory = Path(path)
    if checkpoint_paths(directory)[1].exists():
        return directory
    nested = directory / "checkpoint"
    if checkpoint_paths(nested)[1].exists():
        return nested
    raise ConfigurationError("No checkpoint found", {"path": str(directory)})


def load_model(cfg: FluxViTConfig, path: str) -> FluxViT:
    params, meta = load_checkpoint(_resolve_checkpoint(path))
    expected = {name: tensor.shape for name, tensor in init_params(cfg, 0).items()}
    found = {name: tensor.shape for name, tensor in params.items()}
    if expected != found:
        missing = sorted(set(expected) - set(found))
        mismatched = sorted(k for k in expected if k in found and expected[k] != found[k])
        raise ValidationError(
            "Checkpoint does not match the model config",
            {"missing": missing, "unexpected": sorted(set(found) - set(expected)), "mismatched": mismatched},
        )
    logger.info("Loaded checkpoint", path=path, step=meta.get("step"), mode=meta.get("mode"))
    return FluxViT(cfg, params)


class ExperimentService:
    """Runs one ExperimentConfig mode and writes its artifacts."""

    def __init__(self, cfg, app_cfg, out_dir: Optional[Path] = None):
        self.cfg = cfg
        self.app_cfg = app_cfg
        self.workers = app_cfg.num_threads
        self.run_dir = Path(out_dir or cfg.out_dir or Path(app_cfg.runs_dir) / f"{run_stamp()}-{cfg.hash[:8]}")
        self.manifest: Dict[str, Any] = {}

    # -- run directory -----------------------------------------------------------------

    def prepare(self) -> Path:
        from .. import __version__

        self.run_dir.mkdir(parents=True, exist_ok=True)
        write_json(self.run_dir / "config.resolved.json", self.cfg.to_dict())
        self.manifest = {
            "mode": self.cfg.mode,
            "seed": self.cfg.seed,
            "config_hash": self.cfg.hash,
            "versions": {
                "flux": __version__,
                "numpy": np.__version__,
                "python": platform.python_version(),
            },
        }
        self._write_manifest()
        logger.info("Run directory ready", run_dir=str(self.run_dir), mode=self.cfg.mode, hash=self.cfg.hash[:8])
        return self.run_dir

    def _write_manifest(self, **extra) -> None:
        self.manifest.update(extra)
        write_json(self.run_dir / "manifest.json", self.manifest)

    def run(self) -> Dict[str, Any]:
        handlers = {
            "gen-data": self.gen_data,
            "pretrain": self.pretrain,
            "finetune": self.finetune,
            "eval": self.evaluate,
            "tokenopt": self.tokenopt,
            "grad-check": self.grad_check,
        }
        if self.cfg.mode not in handlers:
            raise ValidationError(f"Mode '{self.cfg.mode}' does not produce a run", {"mode": self.cfg.mode})
        self.prepare()
        summary = handlers[self.cfg.mode]()
        self._write_manifest(summary=summary)
        return summary

    def flops_report(self, tokens) -> List[Dict[str, Any]]:
        """Cost model of ``cfg.model`` at each token count, written as flops.json."""
        self.prepare()
        reports = [flops(self.cfg.model, n).to_dict() for n in tokens]
        write_json(self.run_dir / "flops.json", reports)
        self._write_manifest(summary={"tokens": list(tokens), "gflops": [r["gflops"] for r in reports]})
        return reports

    # -- data and models ----------------------------------------------------------------

    def train_data(self) -> List[VideoSample]:
        if self.cfg.data_dir:
            return load_dataset(Path(self.cfg.data_dir))
        return gen_dataset(self.cfg.seed, self.cfg.gen, self.cfg.train_samples, self.workers)

    def eval_data(self, count: Optional[int] = None) -> List[VideoSample]:
        base = self.cfg.seed + self.cfg.eval.seed_offset
        return gen_dataset(base, self.cfg.gen, count or self.cfg.eval.samples, self.workers)

    def student(self) -> FluxViT:
        if self.cfg.checkpoint:
            return load_model(self.cfg.model, self.cfg.checkpoint)
        return FluxViT(self.cfg.model, seed=derive_seed(self.cfg.seed, "student"))

    def teacher(self, data: List[VideoSample]) -> FluxViT:
        tcfg, train_cfg = self.cfg.teacher, self.cfg.train
        if tcfg is None:
            raise ValidationError("Pre-training needs a teacher config")
        if train_cfg.teacher_mode == "checkpoint":
            return load_model(tcfg, train_cfg.teacher_checkpoint)
        teacher = FluxViT(tcfg, seed=derive_seed(self.cfg.seed, "teacher"))
        if train_cfg.teacher_mode == "pretrained":
            # single-count supervised run at the teacher's own token count
            warm = replace(
                train_cfg,
                steps=train_cfg.teacher_pretrain_steps,
                counts=(train_cfg.teacher_count,),
                distill_weight=0.0,
                seed=derive_seed(self.cfg.seed, "teacher.pretrain"),
                teacher_mode="random",
                teacher_checkpoint=None,
            )
            logger.info("Pre-training teacher", steps=warm.steps, count=train_cfg.teacher_count)
            train(FT, teacher, data, self.cfg.sampler, warm, out_dir=self.run_dir / "teacher", workers=self.workers)
        return teacher

    # -- modes --------------------------------------------------------------------------

    def gen_data(self) -> Dict[str, Any]:
        samples = gen_dataset(self.cfg.seed, self.cfg.gen, self.cfg.train_samples, self.workers)
        digest = export_dataset(samples, self.run_dir / "data", self.cfg.gen)
        self._write_manifest(dataset_hash=digest)
        labels = np.bincount([s.label for s in samples], minlength=self.cfg.gen.num_classes)
        return {"samples": len(samples), "dataset_hash": digest, "labels": labels.tolist()}

    def _env(self) -> Dict[str, Any]:
        return {"config_hash": self.cfg.hash}

    def pretrain(self) -> Dict[str, Any]:
        data = self.train_data()
        teacher = self.teacher(data)
        result = train(
            PT,
            self.student(),
            data,
            self.cfg.sampler,
            self.cfg.train,
            teacher=teacher,
            out_dir=self.run_dir,
            env=self._env(),
            workers=self.workers,
        )
        return {"steps": len(result.log), "loss": result.log.last("total_loss"), "checkpoint": str(result.checkpoint)}

    def finetune(self) -> Dict[str, Any]:
        eval_grid = self.cfg.eval_grid()
        result = train(
            FT,
            self.student(),
            self.train_data(),
            self.cfg.sampler,
            self.cfg.train,
            eval_data=self.eval_data(),
            eval_grid=eval_grid,
            out_dir=self.run_dir,
            env=self._env(),
            workers=self.workers,
        )
        summary = {"steps": len(result.log), "loss": result.log.last("total_loss"), "checkpoint": str(result.checkpoint)}
        for j, _ in enumerate(self.cfg.train.counts, start=1):
            summary[f"acc_k{j}"] = result.log.last(f"acc_k{j}")
        return summary

    def _groups(self, grid: SamplingGrid) -> int:
        return min(self.cfg.train.groups, grid.t)

    def evaluate(self) -> Dict[str, Any]:
        model = self.student()
        data = self.eval_data()
        grid = self.cfg.eval_grid()
        train_cfg = self.cfg.train
        results = evaluate(
            model, data, self.cfg.eval.counts, grid, self._groups(grid), train_cfg.norm_p, train_cfg.score_on, self.workers
        )
        write_eval_csv(self.run_dir / "eval.csv", results, model)
        summary: Dict[str, Any] = {"grid": [grid.F, grid.R], "accuracy": {str(k): v["accuracy"] for k, v in sorted(results.items())}}
        if self.cfg.eval.token_opt:
            rows = token_optimization_sweep(
                model,
                data,
                self.cfg.eval.budgets,
                self.cfg.sampler,
                train_cfg.groups,
                train_cfg.norm_p,
                train_cfg.score_on,
                self.workers,
            )
            write_sweep_csv(self.run_dir / "tokenopt_sweep.csv", rows)
            summary["token_opt"] = {str(r.budget): [r.F, r.R, r.accuracy] for r in rows if r.best}
        return summary

    def tokenopt(self) -> Dict[str, Any]:
        model = self.student()
        topt, train_cfg = self.cfg.tokenopt, self.cfg.train
        data = self.eval_data(topt.samples)
        evaluator = model_evaluator(
            model, data, train_cfg.groups, train_cfg.norm_p, train_cfg.score_on, self.workers, self.cfg.sampler.patch
        )
        points, rows, plans = [], [], {}
        for budget in topt.budgets:
            if topt.exhaustive:
                plan = exhaustive_search(
                    evaluator, budget, self.cfg.sampler, topt.frames, topt.resolutions, model_cfg=model.cfg
                )
            else:
                plan = heuristic_search(
                    evaluator, budget, self.cfg.sampler, topt.plateau_eps, topt.frames, topt.resolutions, model_cfg=model.cfg
                )
            write_plan_csv(self.run_dir / f"search_{budget}.csv", plan)
            plans[str(budget)] = plan.to_json()
            if plan.chosen is None:
                logger.warning("No lattice grid holds the budget", budget=budget)
                continue
            gflops = flops(model.cfg, budget).gflops
            points.append((gflops, plan.chosen_score))
            rows.append({"budget": budget, "F": plan.chosen[0], "R": plan.chosen[1], "gflops": gflops, "score": plan.chosen_score})
        write_json(self.run_dir / "plans.json", plans)
        frontier = set(pareto(points))
        write_csv(
            self.run_dir / "pareto.csv",
            PARETO_FIELDS,
            [row for row in rows if (float(row["gflops"]), float(row["score"])) in frontier],
        )
        return {"budgets": list(topt.budgets), "chosen": {k: v["chosen"] for k, v in plans.items()}, "pareto": len(frontier)}

    def grad_check(self, eps: float = 1e-5, max_entries: Optional[int] = 16) -> Dict[str, Any]:
        """Finite-difference check of the full multi-count loss on a tiny model over 40 tokens."""
        errors = tiny_gradient_errors(self.cfg.seed, eps=eps, max_entries=max_entries)
        worst = max(errors.values())
        write_json(self.run_dir / "grad_check.json", {"eps": eps, "max_relative_error": worst, "errors": errors})
        if worst >= GRAD_CHECK_TOLERANCE:
            raise NumericalError(
                "Analytic gradients disagree with finite differences",
                {"max_relative_error": worst, "worst": max(errors, key=errors.get)},
            )
        return {"max_relative_error": worst, "tensors": len(errors)}


def tiny_gradient_errors(seed: int = 0, eps: float = 1e-5, max_entries: Optional[int] = 16) -> Dict[str, float]:
    """Per-tensor gradient errors of a dim-32, depth-2 model on a 10x2x2 token grid."""
    cfg = FluxViTConfig(embed_dim=32, num_heads=2, depth=2, max_grid=(10, 2, 2))
    model = FluxViT(cfg, seed=derive_seed(seed, "gradcheck.init"))
    # zero-initialized head and LPE would hide their gradient paths
    rng = np.random.default_rng(derive_seed(seed, "gradcheck.jitter"))
    for tensor in model.params.values():
        tensor.data += 0.05 * rng.standard_normal(tensor.shape)

    spec = GenSpec(frames=10, height=28, width=28, sprite_size=(4, 8), speed=(1.0, 2.0))
    video = gen_video(seed, spec)
    grid = SamplingGrid(10, 28, (1, 14, 14))
    # raw-pixel scores keep the masks fixed while parameters are perturbed
    # the largest count keeps the whole 40-token pool
    train_cfg = TrainConfig(counts=(40, 20), teacher_count=40, groups=2, score_on="raw")

    def loss_fn():
        loss, _ = ft_sample_loss(video, model, grid, train_cfg)
        return loss

    return gradient_errors(loss_fn, model.params, eps=eps, max_entries=max_entries, seed=seed)
