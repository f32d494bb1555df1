from concurrent.futures import ThreadPoolExecutor
import numpy as np
import pytest
from app.errors import CapabilityError, InsufficientData, MissingArtifact
from app.models import AnnealConfig, AttackConfig, AttackMethod, BoundaryConfig, CampaignConfig, ClassifierKind, \
    DefenseKind, FeatureKind, GoalKind, OutcomeRecord, SplitConfig, Scenario
from harness.artifacts import Workspace, load_target_system, save_target_system
from harness.orchestrator import CampaignOrchestrator, eval_noise_removal, start_for, task_seed
from harness.splits import SplitSpec, make_split
from harness.systems import FeatureStore, build_attacker_system, build_target_system, select_attack_samples
from verification.features import ClbpFeatures


@pytest.fixture(scope="module")
def split(tiny_dataset, tiny_split_config):
    return make_split(tiny_dataset, tiny_split_config, seed=5)


@pytest.fixture(scope="module")
def store(tiny_dataset, split):
    return FeatureStore(tiny_dataset, split)


@pytest.fixture(scope="module")
def clbp_target(store):
    return build_target_system(FeatureKind.CLBP, DefenseKind.NONE, ClassifierKind.LINEAR, ClbpFeatures(), store)


# splits

def test_split_roles_are_disjoint(split, tiny_dataset):
    users = set(split.attacked_users) | set(split.background_users) | set(split.lk2_users)
    assert len(users) == 8 == len(tiny_dataset.users)
    assert split.wd_indices == (0, 1)
    assert split.surrogate_indices == (2, 3)
    assert split.test_indices == (4, 5)


def test_split_is_seeded(tiny_dataset, tiny_split_config, split):
    assert make_split(tiny_dataset, tiny_split_config, seed=5) == split


def test_split_needs_enough_users(tiny_dataset):
    with pytest.raises(InsufficientData):
        make_split(tiny_dataset, SplitConfig(attacked_users=6, background_users=3, lk2_users=2,
                                             wd_samples=2, surrogate_samples=2))


def test_split_check_detects_overlap():
    bad = SplitSpec(attacked_users=(0, 1), background_users=(1, 2), lk2_users=(3, 4),
                    wd_indices=(0,), surrogate_indices=(1,), test_indices=(2,))
    with pytest.raises(ValueError):
        bad.check()
    leaky = SplitSpec(attacked_users=(0, 1), background_users=(2,), lk2_users=(3, 4),
                      wd_indices=(0, 1), surrogate_indices=(2,), test_indices=(1, 3))
    with pytest.raises(ValueError):
        leaky.check()


def test_split_images(split, tiny_dataset):
    user = split.attacked_users[0]
    np.testing.assert_array_equal(split.wd_images(tiny_dataset, user), tiny_dataset.genuine(user)[:2])
    assert split.test_skilled(tiny_dataset, user).shape == (2, 150, 220)


# systems

def test_feature_store_caches(store):
    extractor = ClbpFeatures()
    user = store.split.attacked_users[0]
    assert store.get(extractor, "wd_images", user) is store.get(extractor, "wd_images", user)
    assert store.get(extractor, "wd_images", user).shape == (2, 200)


class CountingExtractor:
    def __init__(self):
        self.calls = 0

    def extract_batch(self, images):
        self.calls += 1
        return np.ones((len(images), 3))


def test_feature_store_extracts_once_under_concurrent_reads(tiny_dataset, split):
    store = FeatureStore(tiny_dataset, split)
    extractor = CountingExtractor()
    user = split.attacked_users[0]
    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(lambda _: store.get(extractor, "wd_images", user), range(64)))
    assert extractor.calls == 1
    assert all(r is results[0] for r in results)


def test_target_system_has_a_model_per_attacked_user(clbp_target, store):
    assert set(clbp_target.models) == set(store.split.attacked_users)
    assert set(clbp_target.thresholds.per_user_tau) == set(store.split.attacked_users)
    oracle = clbp_target.oracle(store.split.attacked_users[0])
    assert oracle.provenance == "target"
    assert not oracle.has_gradient


def test_target_system_files(tmp_path, clbp_target, store):
    workspace = Workspace(str(tmp_path))
    save_target_system(clbp_target, workspace)
    loaded = load_target_system(workspace, FeatureKind.CLBP, DefenseKind.NONE, ClassifierKind.LINEAR,
                                clbp_target.extractor, store.split.attacked_users)
    assert loaded.thresholds.global_tau == pytest.approx(clbp_target.thresholds.global_tau)
    with pytest.raises(MissingArtifact):
        load_target_system(workspace, FeatureKind.CLBP, DefenseKind.NONE, ClassifierKind.RBF,
                           clbp_target.extractor, store.split.attacked_users)


def test_attacker_systems(clbp_target, store):
    pk = build_attacker_system(Scenario.PK, clbp_target, store)
    user = store.split.attacked_users[1]
    assert pk.oracle(user) is not None and pk.oracle(user).provenance == "target"

    lk1 = build_attacker_system(Scenario.LK1, clbp_target, store)
    assert lk1.oracle(user).provenance == "attacker-lk1"
    assert lk1.oracle(user).model is not clbp_target.models[user]
    assert not lk1.differentiable

    with pytest.raises(CapabilityError):
        build_attacker_system(Scenario.LK2, clbp_target, store)


def test_attack_samples_are_classified_correctly(clbp_target, store):
    selected, excluded = select_attack_samples([clbp_target], store)
    assert sorted(list(selected) + excluded) == sorted(store.split.attacked_users)
    for user, samples in selected.items():
        oracle = clbp_target.oracle(user)
        assert oracle.score(samples.genuine) >= 0
        assert oracle.score(samples.skilled_forgery) < 0
        assert oracle.score(samples.random_forgery) < 0
        assert samples.genuine_key.startswith(f"genuine:{user}:")
        assert not samples.random_key.startswith(f"genuine:{user}:")
        assert start_for(samples, GoalKind.TYPE2_SKILLED)[1] == samples.skilled_key


# orchestrator

def test_task_seeds_are_stable():
    assert task_seed(7, 3) == task_seed(7, 3)
    assert task_seed(7, 3) != task_seed(7, 4)


def test_campaign_on_clbp_runs_score_and_decision_attacks(tmp_path, clbp_target, store):
    attacks = AttackConfig(boundary=BoundaryConfig(max_iter=10, init_draws=10),
                           anneal=AnnealConfig(steps=20, sigma=5.0))
    config = CampaignConfig(features=[FeatureKind.CLBP], classifiers=[ClassifierKind.LINEAR],
                            methods=[AttackMethod.FGM, AttackMethod.BOUNDARY, AttackMethod.ANNEAL],
                            goals=[GoalKind.TYPE1], scenarios=[Scenario.PK, Scenario.LK2], seeds=[1],
                            noise_removal=True, attacks=attacks)
    orchestrator = CampaignOrchestrator(config, {clbp_target.key: clbp_target}, store,
                                        output_dir=str(tmp_path), workers=2)
    rows = orchestrator.run_campaign()

    records = orchestrator.log.records
    assert len(records) == 2 * len(orchestrator.samples)
    assert {r.method for r in records} <= {AttackMethod.BOUNDARY, AttackMethod.ANNEAL}
    assert any("fgm" in cell for cell in orchestrator.skipped_cells)
    assert any("lk2" in cell for cell in orchestrator.skipped_cells)
    for record in records:
        assert record.scenario is Scenario.PK
        if record.error is None:
            assert record.rmse >= 0.0
            assert record.success == (record.target_score < 0)
            if not record.success:
                assert record.success_after_removal is False
    assert sum(row.n_attacks for row in rows) == len(records)
    assert orchestrator.uphill_proposed.shape == (10,)


def test_noise_removal_only_rescores_successful_attacks(clbp_target, store):
    user = store.split.attacked_users[0]
    base = dict(feature="clbp", defense="none", classifier="linear", method="anneal", goal="type1", scenario="pk",
                seed=1, user=user, start_key=f"genuine:{user}:4", attacker_success=True, rmse=1.0)
    records = [
        OutcomeRecord(**base, success=False),
        OutcomeRecord(**base, success=True),
        OutcomeRecord(**base, success=True),
        OutcomeRecord(**base, success=False, error="InitFailure: none"),
    ]
    image = store.split.test_skilled(store.dataset, user)[0]
    updated = eval_noise_removal(records, {clbp_target.key: clbp_target}, images={2: image})
    assert updated[0].success_after_removal is False
    assert updated[1].success_after_removal is None
    assert isinstance(updated[2].success_after_removal, bool)
    assert updated[3] == records[3]
