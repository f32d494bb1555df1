"""Campaign orchestrator - runs the attack grid and evaluates every attack on the target."""
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple
import numpy as np
from tqdm.auto import tqdm
from app.config import settings
from app.errors import CapabilityError, SigAdvError
from app.models import AttackMethod, CampaignConfig, GoalKind, OutcomeRecord, ReportRow, Scenario
from app.storage import OutcomeLog
from app.utils.logger import get_logger, progress_enabled
from app.utils.timer import CampaignTimer
from attacks.anneal import DECILES
from attacks.base import AttackGoal
from attacks.runner import run_attack
from harness.reports import aggregate_rows, seed_mean_rows
from harness.systems import AttackerSystem, AttackSamples, FeatureStore, SystemKey, TargetSystem, \
    build_attacker_system, select_attack_samples
from processors.image_processor import ImageProcessor

logger = get_logger(__name__)


@dataclass(frozen=True)
class AttackTask:
    index: int
    campaign_seed: int
    seed: int
    target_key: SystemKey
    scenario: Scenario
    method: AttackMethod
    goal: GoalKind
    user: int


def task_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def start_for(samples: AttackSamples, goal: GoalKind) -> Tuple[np.ndarray, str]:
    if goal is GoalKind.TYPE1:
        return samples.genuine, samples.genuine_key
    if goal is GoalKind.TYPE2_RANDOM:
        return samples.random_forgery, samples.random_key
    return samples.skilled_forgery, samples.skilled_key


def eval_noise_removal(records: Sequence[OutcomeRecord], targets: Mapping[SystemKey, TargetSystem],
                       images: Optional[Mapping[int, np.ndarray]] = None) -> List[OutcomeRecord]:
    """
    Re-score OTSU-cleaned adversarial images on the target.

    Only successful attacks are re-evaluated; failures keep success_after_removal
    False. Images come from `images` (by record position) or from the dumped PGM.
    """
    images = images or {}
    updated = []
    for i, record in enumerate(records):
        if record.error is not None:
            updated.append(record)
            continue
        after = False
        if record.success:
            adversarial = images.get(i)
            if adversarial is None and record.image_path:
                adversarial = ImageProcessor.load_pgm(record.image_path)
            if adversarial is None:
                updated.append(record)
                continue
            oracle = targets[(record.feature, record.defense, record.classifier)].oracle(record.user)
            cleaned = ImageProcessor.remove_noise(adversarial)
            after = AttackGoal.for_goal_kind(record.goal).is_adversarial(oracle.score(cleaned))
        updated.append(record.model_copy(update={"success_after_removal": after}))
    return updated


class CampaignOrchestrator:
    """Generates attacks on the attacker-side system and measures success on the target."""

    def __init__(self, config: CampaignConfig, targets: Dict[SystemKey, TargetSystem], store: FeatureStore,
                 lk2_extractor=None, output_dir: Optional[str] = None, workers: Optional[int] = None,
                 timer: Optional[CampaignTimer] = None):
        self.config = config
        self.targets = targets
        self.store = store
        self.lk2_extractor = lk2_extractor
        self.output_dir = output_dir or settings.work_dir
        self.workers = workers or settings.workers
        self.timer = timer or CampaignTimer()
        self.log = OutcomeLog()
        self.attackers: Dict[Tuple[SystemKey, Scenario], AttackerSystem] = {}
        self.samples: Dict[int, AttackSamples] = {}
        self.excluded: List[int] = []
        self.skipped_cells: List[str] = []
        self.uphill_proposed = np.zeros(DECILES, dtype=np.int64)
        self.uphill_accepted = np.zeros(DECILES, dtype=np.int64)
        self._adversarial: Dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    # SETUP

    def prepare(self):
        """Select the attack samples and build every attacker-side system of the grid."""
        self.samples, self.excluded = select_attack_samples(list(self.targets.values()), self.store)
        if self.config.max_users is not None:
            kept = sorted(self.samples)[:self.config.max_users]
            self.samples = {u: self.samples[u] for u in kept}

        for key, target in self.targets.items():
            for scenario in self.config.scenarios:
                try:
                    self.attackers[(key, scenario)] = build_attacker_system(scenario, target, self.store,
                                                                            self.lk2_extractor)
                except CapabilityError as e:
                    self.skipped_cells.append(f"{target.name}/{scenario.value}")
                    logger.info(f"Skipping {target.name}/{scenario.value}: {e}")
        self.timer.mark("prepare")

    def build_tasks(self) -> List[AttackTask]:
        tasks = []
        for seed in self.config.seeds:
            for (key, scenario), attacker in sorted(self.attackers.items(), key=lambda kv: str(kv[0])):
                for method in self.config.methods:
                    if method.needs_gradient and not attacker.differentiable:
                        cell = f"{key[0].value}/{method.value}/{scenario.value}"
                        if cell not in self.skipped_cells:
                            self.skipped_cells.append(cell)
                        continue
                    for goal in self.config.goals:
                        for user in sorted(self.samples):
                            index = len(tasks)
                            tasks.append(AttackTask(index, seed, task_seed(seed, index), key, scenario, method,
                                                    goal, user))
        return tasks

    # EXECUTION

    def _dump_path(self, task: AttackTask) -> str:
        feature, defense, classifier = task.target_key
        cell = f"{feature.value}_{defense.value}_{classifier.value}_{task.method.value}_{task.goal.value}_{task.scenario.value}"
        return os.path.join(self.output_dir, "adversarial", cell, f"user_{task.user:03d}_seed_{task.seed}.pgm")

    def execute(self, task: AttackTask) -> OutcomeRecord:
        """One attack; every failure becomes a record instead of an exception."""
        feature, defense, classifier = task.target_key
        base = dict(feature=feature, defense=defense, classifier=classifier, method=task.method,
                    goal=task.goal, scenario=task.scenario, seed=task.campaign_seed, user=task.user)
        samples = self.samples[task.user]
        start, start_key = start_for(samples, task.goal)
        goal = AttackGoal.for_goal_kind(task.goal)
        target_oracle = self.targets[task.target_key].oracle(task.user)
        attacker_oracle = self.attackers[(task.target_key, task.scenario)].oracle(task.user)

        try:
            outcome = run_attack(task.method, attacker_oracle, start, goal, self.config.attacks, seed=task.seed)
            target_score = target_oracle.score(outcome.adversarial)
            success = goal.is_adversarial(target_score)

            discretized = None
            if self.config.discretization:
                rounded = ImageProcessor.discretize(outcome.adversarial)
                discretized = success and goal.is_adversarial(target_oracle.score(rounded))

            image_path = None
            if self.config.dump_images:
                image_path = self._dump_path(task)
                ImageProcessor.save_pgm(outcome.adversarial, image_path)

            if self.config.noise_removal and success:
                with self._lock:
                    self._adversarial[task.index] = outcome.adversarial
            if task.method is AttackMethod.ANNEAL:
                with self._lock:
                    self.uphill_proposed += np.asarray(outcome.diagnostics["uphill_proposed"])
                    self.uphill_accepted += np.asarray(outcome.diagnostics["uphill_accepted"])

            return OutcomeRecord(
                **base, start_key=start_key, success=success, attacker_success=outcome.success,
                rmse=outcome.noise_rmse, iterations=outcome.iterations, start_score=outcome.start_score,
                attacker_score=outcome.final_score, target_score=target_score,
                success_discretized=discretized, image_path=image_path,
            )
        except Exception as e:
            level = "attack error" if isinstance(e, SigAdvError) else "unexpected error"
            logger.warning(f"{level} in task {task.index} ({task.method.value}, user {task.user}): {e}")
            return OutcomeRecord(**base, start_key=start_key, success=False, attacker_success=False,
                                 rmse=0.0, error=f"{type(e).__name__}: {e}")

    def run_campaign(self) -> List[ReportRow]:
        """
        Run the whole grid.

        Returns:
            Aggregated report rows (pooled over seeds)
        """
        logger.info("=== Starting campaign ===")
        if not self.attackers:
            self.prepare()
        tasks = self.build_tasks()
        logger.info(f"{len(tasks)} attacks on {len(self.samples)} users "
                    f"({len(self.excluded)} excluded, {len(self.skipped_cells)} cells skipped)")
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            results = list(tqdm(executor.map(self.execute, tasks), total=len(tasks),
                                desc="campaign", disable=not progress_enabled(logger)))
        if self.config.noise_removal:
            results = eval_noise_removal(results, self.targets, self._adversarial)
            self._adversarial.clear()
        self.log.extend(results)

        counts = self.log.counts()
        logger.info(f"Campaign done: {counts['success']}/{counts['total']} successful on target, "
                    f"{counts['errors']} errors")
        self.timer.mark("campaign")
        return aggregate_rows(self.log.to_frame())

    def seed_mean(self) -> List[ReportRow]:
        return seed_mean_rows(self.log.to_frame())
