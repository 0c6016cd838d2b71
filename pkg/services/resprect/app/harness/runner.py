"""
Experiment runner - executes one configured run into a self-describing
run directory.

Run directory layout:
    config.txt                  effective config (loadable with --config)
    episodes.csv / updates.csv  training curves
    eval.csv                    periodic or final evaluation episodes
    demonstrations.csv          demo-collect episodes
    summary.json                headline numbers of demo / eval runs
    checkpoints/step_*.ckpt     periodic checkpoints (every checkpoint_fraction)
    final.ckpt                  final checkpoint
    FAILED                      error record, only when the run aborted
"""

import math
from pathlib import Path
from typing import Callable, Dict, Optional

import structlog

from services.resprect.app.core.config import RunConfig, Settings, settings as default_settings
from services.resprect.app.core.seeding import SeedStreams, stream_rng
from services.resprect.app.engines.replay_buffer import ReplayBuffer
from services.resprect.app.engines.residual import ResidualAgent
from services.resprect.app.engines.sac import AgentBundle, SACAgent
from services.resprect.app.engines.tensor_nn import ParamSet
from services.resprect.app.engines.trainer import OffPolicyTrainer, TaskProvider
from services.resprect.app.envs.grasp_env import GraspEnv
from services.resprect.app.envs.objects import PRETRAIN_FAMILY, object_sampler
from services.resprect.app.exceptions import IncompatibleCheckpointError
from services.resprect.app.harness.checkpoint import (
    CheckpointMetadata,
    load_checkpoint,
    load_pretrained_policy,
    save_checkpoint,
)
from services.resprect.app.harness.run_log import RunLog
from services.resprect.app.schemas.task import TaskSpec
from services.resprect.app.services.evaluation import evaluate, policy_from_networks
from services.resprect.app.services.finetune import finetune_init
from services.resprect.app.services.pretraining import collect_demonstrations, gpayn_pretrain
from services.resprect.app.services.reptile import InnerLoopResult, reptile_pretrain
from shared.utils.exceptions import ResprectException
from shared.utils.helpers import serialize_json

logger = structlog.get_logger()

CONFIG_ECHO = "config.txt"
FINAL_CHECKPOINT = "final.ckpt"
FAILED_MARKER = "FAILED"
SUMMARY = "summary.json"


def default_run_dir(config: RunConfig, app_settings: Settings) -> Path:
    return Path(app_settings.RUNS_DIR) / f"{config.mode}-{config.task_family}-seed{config.seed}"


def task_provider_for(config: RunConfig, streams: SeedStreams) -> TaskProvider:
    """Held-out families give one fixed task; the pretrain family draws one per episode."""
    if config.task_family == PRETRAIN_FAMILY:
        return lambda _episode: object_sampler(PRETRAIN_FAMILY, streams.task)
    task = object_sampler(config.task_family, streams.task)
    return lambda _episode: task


def evaluation_task(config: RunConfig) -> TaskSpec:
    """Fixed task used for evaluation rollouts of this run."""
    return object_sampler(config.task_family, stream_rng(config.seed, "eval-task"))


class Run:
    """State shared by the mode handlers of one run."""

    def __init__(self, config: RunConfig, run_dir: Path):
        self.config = config.effective()
        self.run_dir = run_dir
        self.streams = SeedStreams(config.seed)
        self.env_config = self.config.env_config()
        self.env = GraspEnv(self.env_config)
        self.log = RunLog(run_dir)
        self.hp = self.config.sac_hyperparams()
        self._next_checkpoint = self._checkpoint_interval()
        self._next_eval = self.config.eval_interval

    # --- checkpoints ---
    def _checkpoint_interval(self) -> int:
        return max(1, math.ceil(self.config.checkpoint_fraction * self.config.total_timesteps))

    def metadata(self, step: int, **extra) -> CheckpointMetadata:
        return CheckpointMetadata(
            mode=self.config.mode,
            config_hash=self.config.config_hash(),
            obs_dim=self.env_config.obs_dim,
            action_dim=self.env_config.action_dim,
            step=step,
            extra={"task_family": self.config.task_family, "seed": self.config.seed, **extra},
        )

    def save(self, networks: Dict[str, ParamSet], step: int, final: bool = False, **extra) -> Path:
        if final:
            path = self.run_dir / FINAL_CHECKPOINT
        else:
            path = self.run_dir / "checkpoints" / f"step_{step:09d}.ckpt"
        return save_checkpoint(path, networks, self.metadata(step, **extra))

    def due_checkpoint(self, timestep: int) -> bool:
        """True once per crossed cadence mark; the final step is left to the final checkpoint."""
        if timestep < self._next_checkpoint or timestep >= self.config.total_timesteps:
            return False
        while self._next_checkpoint <= timestep:
            self._next_checkpoint += self._checkpoint_interval()
        return True

    def periodic(self, agent: SACAgent, **extra) -> Callable[[OffPolicyTrainer], None]:
        """on_iteration hook: periodic checkpoints, periodic evals, log flushes."""
        eval_env = GraspEnv(self.env_config)
        task = evaluation_task(self.config)

        def hook(trainer: OffPolicyTrainer) -> None:
            t = trainer.timestep
            if self.due_checkpoint(t):
                self.save(agent.networks(), t, **extra)
                self.log.flush()
            if self.config.eval_interval and t >= self._next_eval:
                policy = policy_from_networks(agent.networks(), self.config.residual_scale)
                result = evaluate(policy, eval_env, task, self.config.eval_episodes, self.config.seed, t)
                for row in result.rows:
                    self.log.log_eval(row)
                while self._next_eval <= t:
                    self._next_eval += self.config.eval_interval

        return hook

    def write_summary(self, **values) -> None:
        (self.run_dir / SUMMARY).write_text(serialize_json(values) + "\n", encoding="utf-8")


# ============================================
# Mode handlers
# ============================================

def _new_buffer(run: Run) -> ReplayBuffer:
    """Capacity never exceeds what the run can push (training steps plus demonstrations)."""
    cfg = run.config
    reachable = max(1, cfg.total_timesteps + cfg.demo_episodes * cfg.max_steps)
    return ReplayBuffer(min(cfg.buffer_size, reachable), run.env.obs_dim, run.env.action_dim)


def _train(run: Run, agent: SACAgent, **extra) -> None:
    trainer = OffPolicyTrainer(
        agent, run.env, _new_buffer(run), run.streams,
        task_provider_for(run.config, run.streams), run.log.log_episode, run.log.log_update,
    )
    trainer.run(run.config.total_timesteps, run.periodic(agent, **extra))
    run.save(agent.networks(), trainer.timestep, final=True, **extra)


def run_scratch(run: Run) -> None:
    cfg = run.config
    agent = SACAgent.create(
        run.env.obs_dim, run.env.action_dim, cfg.hidden_units, run.streams.init,
        run.hp, cfg.ent_coef_init, cfg.target_entropy,
    )
    buffer = _new_buffer(run)
    provider = task_provider_for(cfg, run.streams)
    hook = run.periodic(agent)
    gpayn_pretrain(
        agent, run.env, buffer, run.streams, provider, cfg.total_timesteps,
        cfg.demo_episodes, run.log.log_episode, run.log.log_update, hook,
    )
    run.save(agent.networks(), cfg.total_timesteps, final=True)


def run_residual(run: Run) -> None:
    cfg = run.config
    base = load_pretrained_policy(cfg.base_checkpoint, run.env.obs_dim, run.env.action_dim)
    agent = ResidualAgent.create(
        base, cfg.hidden_units, run.streams.init, run.hp, cfg.ent_coef_init,
        cfg.target_entropy, cfg.residual_scale, warm_start=cfg.mode == "resprect",
    )
    _train(run, agent, residual_scale=cfg.residual_scale)


def run_finetune(run: Run) -> None:
    cfg = run.config
    checkpoint = load_checkpoint(cfg.base_checkpoint)
    if checkpoint.is_residual:
        raise IncompatibleCheckpointError("Fine-tuning needs a plain SAC checkpoint", network="base/actor")
    agent = finetune_init(
        checkpoint.top_level(), run.env.obs_dim, run.env.action_dim,
        cfg.sac_hyperparams(cfg.baseline_gradient_steps), cfg.ent_coef_init, cfg.target_entropy,
    )
    _train(run, agent)


def run_reptile(run: Run) -> None:
    cfg = run.config
    init = AgentBundle.initialize(
        run.env.obs_dim, run.env.obs_dim + run.env.action_dim, run.env.action_dim,
        cfg.hidden_units, run.streams.init, cfg.learning_rate, cfg.ent_coef_init, cfg.target_entropy,
    )
    elapsed = 0

    def after_inner(result: InnerLoopResult) -> None:
        nonlocal elapsed
        elapsed += result.timesteps
        run.log.flush()
        if run.due_checkpoint(elapsed):
            run.save(_meta_networks(result.theta_meta), elapsed)

    meta = reptile_pretrain(
        init.networks(),
        run.env,
        run.streams,
        lambda rng: object_sampler(cfg.task_family, rng),
        cfg.sac_hyperparams(cfg.baseline_gradient_steps),
        cfg.total_timesteps,
        cfg.reptile_inner_steps,
        cfg.reptile_eps,
        cfg.demo_episodes,
        cfg.buffer_size,
        cfg.ent_coef_init,
        cfg.target_entropy,
        run.log.log_episode,
        run.log.log_update,
        after_inner,
    )
    run.save(_meta_networks(meta), cfg.total_timesteps, final=True)


def _meta_networks(meta: Dict[str, ParamSet]) -> Dict[str, ParamSet]:
    networks = dict(meta)
    networks["target1"] = meta["critic1"].copy()
    networks["target2"] = meta["critic2"].copy()
    return networks


def run_demo(run: Run) -> None:
    cfg = run.config
    report = collect_demonstrations(
        run.env, task_provider_for(cfg, run.streams), cfg.eval_episodes, run.streams.demo
    )
    report.frame().to_csv(
        run.run_dir / "demonstrations.csv", index=False, float_format="%.9g", lineterminator="\n"
    )
    run.write_summary(
        mode=cfg.mode, task_family=cfg.task_family,
        episodes=len(report.episodes), success_rate=report.success_rate,
    )


def run_eval(run: Run) -> None:
    cfg = run.config
    checkpoint = load_checkpoint(cfg.eval_checkpoint)
    meta = checkpoint.metadata
    if (meta.obs_dim, meta.action_dim) != (run.env.obs_dim, run.env.action_dim):
        raise IncompatibleCheckpointError(
            "Checkpoint was trained for different environment dimensions",
            expected_arch=f"obs={run.env.obs_dim} action={run.env.action_dim}",
            found_arch=f"obs={meta.obs_dim} action={meta.action_dim}",
        )
    scale = float(meta.extra.get("residual_scale", cfg.residual_scale))
    task = evaluation_task(cfg)
    result = evaluate(policy_from_networks(checkpoint.networks, scale), run.env, task, cfg.eval_episodes, cfg.seed)
    for row in result.rows:
        run.log.log_eval(row)
    run.write_summary(
        mode=cfg.mode, task=task.name, checkpoint=str(cfg.eval_checkpoint),
        episodes=len(result.rows), success_rate=result.success_rate,
    )


MODE_HANDLERS: Dict[str, Callable[[Run], None]] = {
    "scratch": run_scratch,
    "resprect": run_residual,
    "residual_plain": run_residual,
    "finetune": run_finetune,
    "reptile": run_reptile,
    "demo": run_demo,
    "eval": run_eval,
}


def run_training(config: RunConfig, app_settings: Optional[Settings] = None) -> Path:
    """
    Execute config.mode into its run directory and return the directory.

    On failure a FAILED marker holding the error record is written before the
    error propagates.
    """
    app_settings = app_settings or default_settings
    run_dir = Path(config.output_dir) if config.output_dir else default_run_dir(config, app_settings)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / FAILED_MARKER).unlink(missing_ok=True)

    effective = config.effective()
    (run_dir / CONFIG_ECHO).write_text(effective.to_config_text(), encoding="utf-8")
    log = logger.bind(mode=config.mode, seed=config.seed, run_dir=str(run_dir))
    log.info("run_started", task_family=config.task_family, total_timesteps=config.total_timesteps)

    run = None
    try:
        run = Run(config, run_dir)
        MODE_HANDLERS[config.mode](run)
    except Exception as e:
        record = e.to_dict() if isinstance(e, ResprectException) else {
            "error_code": "UNEXPECTED_ERROR", "message": str(e), "details": {"type": type(e).__name__},
        }
        (run_dir / FAILED_MARKER).write_text(serialize_json(record) + "\n", encoding="utf-8")
        log.error("run_failed", **record)
        raise
    finally:
        if run is not None:
            run.log.close()

    log.info("run_finished")
    return run_dir


def seed_batch(config: RunConfig, seeds, app_settings: Optional[Settings] = None) -> Dict[int, Path]:
    """Independent runs for several seeds, each in its own directory."""
    parent = Path(config.output_dir) if config.output_dir else Path((app_settings or default_settings).RUNS_DIR)
    results: Dict[int, Path] = {}
    for seed in seeds:
        child = config.model_copy(update={"seed": int(seed), "output_dir": parent / f"{config.mode}-seed{seed}"})
        results[int(seed)] = run_training(child, app_settings)
    return results
