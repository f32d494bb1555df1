"""Command-line entry point: synth, train, attack, campaign and report."""
import argparse
import json
import os
import sys
from typing import Dict, List, Optional, Sequence
from pydantic import ValidationError
from app.config import settings
from app.errors import CapabilityError, ConfigError, InsufficientData, SigAdvError
from app.models import (
    AttackConfig,
    AttackMethod,
    CampaignConfig,
    ClassifierKind,
    CliConfig,
    DefenseKind,
    FeatureKind,
    GoalKind,
    Scenario,
    SplitConfig,
    SynthConfig,
    TrainConfig,
)
from app.storage import OutcomeLog
from app.utils.logger import get_logger, set_level
from app.utils.timer import CampaignTimer

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_CAPABILITY = 3

CNN_CHOICES = {"baseline": DefenseKind.NONE, "ens_adv": DefenseKind.ENS_ADV, "madry": DefenseKind.MADRY}


def _csv_list(value: str) -> List[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sigadv", description="Adversarial attacks on signature verification")
    parser.add_argument("--output-dir", default=None, help="workspace directory (default: SIGADV_WORK_DIR)")
    parser.add_argument("--config", default=None, help="JSON config file for the subcommand")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate the synthetic dataset")
    synth.add_argument("--users", type=int, default=None)
    synth.add_argument("--genuine", type=int, default=None, help="genuine signatures per user")
    synth.add_argument("--skilled", type=int, default=None, help="skilled forgeries per user")

    train = sub.add_parser("train", help="train CNNs and/or writer-dependent SVMs")
    train.add_argument("--cnn", action="append", choices=list(CNN_CHOICES) + ["lk2"], default=[])
    train.add_argument("--epsilon", type=float, default=None, help="defense epsilon (ens_adv or madry)")
    train.add_argument("--epochs", type=int, default=None)
    train.add_argument("--wd", action="store_true", help="train WD SVMs for every attacked user")
    train.add_argument("--features", type=_csv_list, default=["clbp", "cnn"])
    train.add_argument("--defenses", type=_csv_list, default=["none"])
    train.add_argument("--classifiers", type=_csv_list, default=["linear", "rbf"])

    attack = sub.add_parser("attack", help="run a single attack")
    attack.add_argument("--method", required=True, choices=[m.value for m in AttackMethod])
    attack.add_argument("--feature", default="cnn", choices=[f.value for f in FeatureKind])
    attack.add_argument("--defense", default="none", choices=[d.value for d in DefenseKind])
    attack.add_argument("--classifier", default="linear", choices=[c.value for c in ClassifierKind])
    attack.add_argument("--goal", default="type1", choices=[g.value for g in GoalKind])
    attack.add_argument("--scenario", default="pk", choices=[s.value for s in Scenario])
    attack.add_argument("--user", type=int, default=None)
    attack.add_argument("--dump", default=None, help="write the adversarial image as PGM")
    attack.add_argument("--figure", default=None, help="write a PNG of X, delta and X + delta")

    campaign = sub.add_parser("campaign", help="run the attack grid")
    campaign.add_argument("--scenarios", type=_csv_list, default=None)
    campaign.add_argument("--methods", type=_csv_list, default=None)
    campaign.add_argument("--features", type=_csv_list, default=None)
    campaign.add_argument("--defenses", type=_csv_list, default=None)
    campaign.add_argument("--classifiers", type=_csv_list, default=None)
    campaign.add_argument("--goals", type=_csv_list, default=None)
    campaign.add_argument("--seeds", type=lambda v: [int(s) for s in _csv_list(v)], default=None)
    campaign.add_argument("--max-users", type=int, default=None)
    campaign.add_argument("--noise-removal", action="store_true")
    campaign.add_argument("--discretization", action="store_true")
    campaign.add_argument("--dump-images", action="store_true")
    campaign.add_argument("--auto", action="store_true", help="build missing dataset and models")

    report = sub.add_parser("report", help="rebuild report tables from outcomes.csv")
    report.add_argument("--outcomes", default=None)
    report.add_argument("--figures", action="store_true")
    return parser


def _read_config_file(path: Optional[str]) -> Dict:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return data


def _validated(model, data: Dict):
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def _enum_list(kind, values: Sequence[str]) -> List:
    try:
        return [kind(v) for v in values]
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _overrides(args: argparse.Namespace, names: Sequence[str]) -> Dict:
    return {n: getattr(args, n) for n in names if getattr(args, n, None) not in (None, False)}


class Cli:
    """Runs one subcommand against a workspace."""

    def __init__(self, cli: CliConfig, args: argparse.Namespace):
        self.cli = cli
        self.args = args
        # heavy imports stay out of argument parsing
        from harness.artifacts import Workspace
        self.workspace = Workspace(cli.output_dir)

    # shared setup

    def _split_and_store(self, dataset, split_config: Optional[SplitConfig] = None):
        from harness.splits import make_split
        from harness.systems import FeatureStore
        if split_config is None:
            data = _read_config_file(self.cli.config)
            if "split" in data:
                split_config = _validated(SplitConfig, data["split"])
        split = make_split(dataset, split_config, seed=self.cli.seed)
        return split, FeatureStore(dataset, split)

    def _train_config(self, defense: DefenseKind) -> TrainConfig:
        data: Dict = {"defense": defense.value, "seed": self.cli.seed}
        if self.args.epochs is not None:
            data["epochs"] = self.args.epochs
        if self.args.epsilon is not None and defense is DefenseKind.MADRY:
            data["madry"] = {"epsilon": self.args.epsilon}
        if self.args.epsilon is not None and defense is DefenseKind.ENS_ADV:
            data["ens_adv"] = {"epsilon": self.args.epsilon}
        return _validated(TrainConfig, data)

    # subcommands

    def cmd_synth(self) -> int:
        from synth.generator import build_dataset, write_dataset
        data = _read_config_file(self.cli.config)
        if "synth" in data:
            data = dict(data["synth"])
        data.setdefault("master_seed", self.cli.seed)
        names = {"users": "users", "genuine": "genuine_per_user", "skilled": "skilled_per_user"}
        data.update({field: getattr(self.args, arg) for arg, field in names.items()
                     if getattr(self.args, arg) is not None})
        config = _validated(SynthConfig, data)
        dataset = build_dataset(config)
        write_dataset(dataset, self.workspace.dataset_dir)
        print(f"dataset: {len(dataset)} images of {config.users} users -> {self.workspace.dataset_dir}")
        return EXIT_OK

    def cmd_train(self) -> int:
        from harness.artifacts import LK2_NAME, build_extractors, ensure_dataset, save_target_system, train_cnn
        from harness.reports import emit_verification_report, verification_rows
        from harness.systems import build_target_systems
        from nets.checkpoint import save_checkpoint

        if not self.args.cnn and not self.args.wd:
            raise ConfigError("nothing to train: pass --cnn and/or --wd")
        features = _enum_list(FeatureKind, self.args.features)
        defenses = _enum_list(DefenseKind, self.args.defenses)
        classifiers = _enum_list(ClassifierKind, self.args.classifiers)
        dataset = ensure_dataset(self.workspace)
        split, store = self._split_and_store(dataset)

        for name in self.args.cnn:
            if name == "lk2":
                net = train_cnn(dataset, split.lk2_users, DefenseKind.NONE, self._train_config(DefenseKind.NONE))
                save_checkpoint(net, self.workspace.checkpoint_path(LK2_NAME))
                continue
            defense = CNN_CHOICES[name]
            net = train_cnn(dataset, split.background_users, defense, self._train_config(defense))
            save_checkpoint(net, self.workspace.cnn_path(defense))

        if self.args.wd:
            extractors = build_extractors(self.workspace, dataset, split, features, defenses)
            systems = build_target_systems(extractors, classifiers, store)
            for system in systems.values():
                save_target_system(system, self.workspace)
            emit_verification_report(verification_rows(systems.values()), self.cli.output_dir)
            print(f"trained {len(systems)} WD systems x {len(split.attacked_users)} users")
        return EXIT_OK

    def cmd_attack(self) -> int:
        from attacks.base import AttackGoal
        from attacks.runner import run_attack
        from harness.artifacts import build_extractors, ensure_dataset, ensure_lk2_cnn, ensure_target_systems
        from harness.orchestrator import start_for
        from harness.systems import build_attacker_system, select_attack_samples
        from processors.image_processor import ImageProcessor
        from processors.viz_processor import VizProcessor
        from verification.features import CnnFeatures

        method = AttackMethod(self.args.method)
        feature = FeatureKind(self.args.feature)
        scenario = Scenario(self.args.scenario)
        if method.needs_gradient and not feature.differentiable:
            raise CapabilityError(f"{method.value} needs gradients; {feature.value} features are not differentiable")
        if scenario is Scenario.LK2 and feature is not FeatureKind.CNN:
            raise CapabilityError("LK2 substitutes the CNN; not applicable to CLBP features")

        dataset = ensure_dataset(self.workspace)
        split, store = self._split_and_store(dataset)
        defense = DefenseKind(self.args.defense) if feature is FeatureKind.CNN else DefenseKind.NONE
        extractors = build_extractors(self.workspace, dataset, split, [feature], [defense])
        targets = ensure_target_systems(self.workspace, extractors, [ClassifierKind(self.args.classifier)], store)
        target = next(iter(targets.values()))
        lk2 = CnnFeatures(ensure_lk2_cnn(self.workspace, dataset, split)) if scenario is Scenario.LK2 else None
        attacker = build_attacker_system(scenario, target, store, lk2)

        samples, _ = select_attack_samples([target], store)
        if not samples:
            raise InsufficientData("no user has correctly classified attack samples")
        user = self.args.user if self.args.user is not None else sorted(samples)[0]
        if user not in samples:
            raise InsufficientData(f"user {user} has no selectable attack samples")

        goal_kind = GoalKind(self.args.goal)
        start, start_key = start_for(samples[user], goal_kind)
        goal = AttackGoal.for_goal_kind(goal_kind)
        outcome = run_attack(method, attacker.oracle(user), start, goal, AttackConfig(), seed=self.cli.seed)
        target_oracle = target.oracle(user)
        before, after = target_oracle.score(start), target_oracle.score(outcome.adversarial)
        success = goal.is_adversarial(after)

        print(f"{method.value} {goal_kind.value} {scenario.value} on {target.name}, user {user} ({start_key})")
        print(f"s_tilde before {before:.4f} after {after:.4f}")
        print(f"success {success} rmse {outcome.noise_rmse:.4f} iterations {outcome.iterations}")
        if self.args.dump:
            ImageProcessor.save_pgm(outcome.adversarial, self.args.dump)
        if self.args.figure:
            VizProcessor(os.path.dirname(os.path.abspath(self.args.figure))).adversarial_figure(
                start, outcome.adversarial, title=f"{method.value} on {target.name}",
                scores=(before, after), output_path=self.args.figure)
        return EXIT_OK

    def _campaign_config(self) -> CampaignConfig:
        data = _read_config_file(self.cli.config)
        data.pop("synth", None)
        data.update(_overrides(self.args, ["scenarios", "methods", "features", "defenses", "classifiers",
                                           "goals", "seeds", "max_users"]))
        for flag in ("noise_removal", "discretization", "dump_images"):
            if getattr(self.args, flag):
                data[flag] = True
        data.setdefault("seeds", [self.cli.seed])
        return _validated(CampaignConfig, data)

    def cmd_campaign(self) -> int:
        from harness.artifacts import Workspace, build_extractors, ensure_dataset, ensure_lk2_cnn, \
            ensure_target_systems
        from harness.orchestrator import CampaignOrchestrator
        from harness.reports import anneal_calibration_frame, emit_report, emit_verification_report, \
            verification_rows
        from processors.data_processor import DataProcessor
        from verification.features import CnnFeatures

        config = self._campaign_config()
        timer = CampaignTimer()
        auto = self.args.auto
        self.workspace = Workspace(self.cli.output_dir, config.dataset_dir, config.models_dir)
        dataset = ensure_dataset(self.workspace, auto=auto)
        split, store = self._split_and_store(dataset, config.split)
        extractors = build_extractors(self.workspace, dataset, split, config.features, config.defenses, auto)
        targets = ensure_target_systems(self.workspace, extractors, config.classifiers, store, auto)
        lk2 = None
        if Scenario.LK2 in config.scenarios and FeatureKind.CNN in config.features:
            lk2 = CnnFeatures(ensure_lk2_cnn(self.workspace, dataset, split, auto))
        timer.mark("artifacts")

        orchestrator = CampaignOrchestrator(config, targets, store, lk2, self.cli.output_dir,
                                            self.cli.workers, timer)
        rows = orchestrator.run_campaign()
        orchestrator.log.save(os.path.join(self.cli.output_dir, "outcomes.csv"))
        emit_verification_report(verification_rows(targets.values()), self.cli.output_dir)
        if AttackMethod.ANNEAL in config.methods:
            DataProcessor().save_csv(anneal_calibration_frame(orchestrator.uphill_proposed,
                                                              orchestrator.uphill_accepted),
                                     os.path.join(self.cli.output_dir, "anneal_calibration.csv"))

        completed = [r for r in orchestrator.log.records if not r.error]
        if not rows or not completed:
            logger.error("No attack completed")
            return EXIT_RUNTIME
        emit_report(rows, self.cli.output_dir)
        if len(config.seeds) > 1:
            emit_report(orchestrator.seed_mean(), self.cli.output_dir, stem="report_seed_mean")
        print(f"campaign: {len(completed)}/{len(orchestrator.log)} attacks completed, {len(rows)} report rows")
        return EXIT_OK

    def cmd_report(self) -> int:
        from harness.reports import aggregate_rows, emit_report, rows_to_frame
        from processors.viz_processor import VizProcessor

        path = self.args.outcomes or os.path.join(self.cli.output_dir, "outcomes.csv")
        log = OutcomeLog.load(path)
        rows = aggregate_rows(log.to_frame())
        emit_report(rows, self.cli.output_dir)
        if self.args.figures:
            viz = VizProcessor(os.path.join(self.cli.output_dir, "figures"))
            frame = rows_to_frame(rows)
            for (goal, scenario), cell in frame.groupby(["goal", "scenario"], sort=True):
                viz.success_bar_chart(cell, title=f"{goal} / {scenario}",
                                      output_path=os.path.join(viz.output_dir, f"success_{goal}_{scenario}.png"))
        print(f"report: {len(rows)} rows from {len(log)} outcomes")
        return EXIT_OK

    def run(self) -> int:
        handler = getattr(self, f"cmd_{self.cli.command}")
        return handler()


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run the subcommand and map errors to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG

    if args.verbose:
        set_level("DEBUG")
    try:
        cli = _validated(CliConfig, {
            "command": args.command,
            "config": args.config,
            "output_dir": args.output_dir or settings.work_dir,
            "seed": args.seed if args.seed is not None else settings.seed,
            "verbosity": args.verbose,
            "workers": args.workers or settings.workers,
        })
        os.makedirs(cli.output_dir, exist_ok=True)
        return Cli(cli, args).run()
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except CapabilityError as e:
        logger.error(f"Capability error: {e}")
        return EXIT_CAPABILITY
    except SigAdvError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
