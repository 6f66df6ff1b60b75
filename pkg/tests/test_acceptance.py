"""Acceptance gate: one test per criterion, each printing a PASS line.

Criteria 6-8 share one desk-scale synthetic experiment (two trainings),
provided by session fixtures. The optional KITTI reproduction (criterion 9)
runs only when SCTRACK_KITTI_ROOT is set.
"""
import math
import os
import time

import numpy as np
import pytest

from sctrack import autodiff as ad
from sctrack import cli, kernels
from sctrack.evaluation import evaluate_run, precision_auc, success_auc
from sctrack.fusion import FusionConfig
from sctrack.geometry import Box3D, box_to_world, iou_3d, points_in_box, resample
from sctrack.network import Decoder, Encoder, chamfer
from sctrack.sampling import GridSpec, KalmanSampler, exhaustive_grid
from sctrack.synthetic import (
    SyntheticConfig,
    SyntheticDatasetConfig,
    generate_synthetic_dataset,
    generate_synthetic_tracklet,
)
from sctrack.tracker import GridSamplerFactory, track_tracklet
from sctrack.tracklets import build_model_shape
from sctrack.training import TrainConfig, fit


def report(criterion, detail):
    print(f"\nACCEPTANCE {criterion}: PASS  ({detail})")


# ---------------------------------------------------------------------------
# criterion 1: gradient correctness on toy sizes, 20 seeds, < 1 min
# ---------------------------------------------------------------------------

TOY_K = 8
TOY_POINTS = 8
TOY_CHANNELS = (6, 10)
TOY_M = 6
TOY_HIDDEN = 12
SMOOTH_MARGIN = 1e-4  # distance from ReLU/max-pool/NN-tie non-smooth sets
FD_STEP = 1e-5
GRAD_TOL = 1e-4


def _margins_ok(capture):
    for kind, values in capture:
        if kind == "preact":
            if np.abs(values).min() < SMOOTH_MARGIN:
                return False
        else:  # pooled_input: top-two gap along the point axis
            top2 = np.sort(values, axis=2)[:, :, -2:]
            if (top2[:, :, 1] - top2[:, :, 0]).min() < SMOOTH_MARGIN:
                return False
    return True


def _nn_margins_ok(a, b):
    """Nearest-vs-second-nearest gap, both directions, above the margin."""
    for src, dst in ((a, b), (b, a)):
        if dst.shape[0] < 2:
            continue
        d2 = ((src[:, None, :] - dst[None, :, :]) ** 2).sum(axis=2)
        part = np.sort(d2, axis=1)[:, :2]
        if np.sqrt(part[:, 1]).min() - np.sqrt(part[:, 0]).min() < 0:  # defensive
            return False
        if (np.sqrt(part[:, 1]) - np.sqrt(part[:, 0])).min() < SMOOTH_MARGIN:
            return False
    return True


def _toy_case(seed):
    """Networks + data for one seed, re-drawn until away from kinks/ties."""
    for attempt in range(20):
        rng = np.random.default_rng((seed, attempt))
        enc = Encoder(TOY_K, TOY_POINTS, TOY_CHANNELS, rng=rng.integers(2**31))
        dec = Decoder(TOY_K, TOY_M, TOY_HIDDEN, rng=rng.integers(2**31))
        clouds = rng.normal(size=(3, TOY_POINTS, 3))
        targets = rng.uniform(0.1, 1.0, size=2)
        x = ad.Tensor(clouds.transpose(0, 2, 1))

        capture = []
        z = enc.forward(x, train=True, capture=capture)
        decoded = dec.forward(ad.take_rows(z, 2, 3), capture=capture)
        if not _margins_ok(capture):
            continue
        if not _nn_margins_ok(decoded.values[0], clouds[2]):
            continue
        return enc, dec, x, clouds, targets
    raise AssertionError(f"no smooth draw found for seed {seed}")


def _losses(enc, dec, x, clouds, targets, which):
    z = enc.forward(x, train=True)
    if which == "tracking":
        sims = ad.cosine_rows(ad.take_rows(z, 0, 2), ad.take_row(z, 2))
        return ad.mse(sims, targets)
    decoded = ad.reshape(dec.forward(ad.take_rows(z, 2, 3)), (TOY_M, 3))
    comp = ad.chamfer_loss(decoded, clouds[2])
    if which == "completion":
        return comp
    sims = ad.cosine_rows(ad.take_rows(z, 0, 2), ad.take_row(z, 2))
    return ad.mse(sims, targets) + comp * 1e-3


class TestCriterion1Gradients:
    def test_all_losses_match_finite_differences(self):
        start = time.time()
        worst = {"tracking": 0.0, "completion": 0.0, "joint": 0.0}
        for seed in range(20):
            enc, dec, x, clouds, targets = _toy_case(seed)
            enc_params = [t for _, t in enc.parameters()]
            dec_params = [t for _, t in dec.parameters()]
            for which, params in (
                ("tracking", enc_params),
                ("completion", enc_params + dec_params),
                ("joint", enc_params + dec_params),
            ):
                err = ad.grad_check(
                    lambda: _losses(enc, dec, x, clouds, targets, which),
                    params,
                    step=FD_STEP,
                )
                worst[which] = max(worst[which], err)
                assert err <= GRAD_TOL, f"seed {seed} {which}: rel err {err:.2e}"
        elapsed = time.time() - start
        assert elapsed < 60.0, f"gradient sweep took {elapsed:.1f}s"
        report(
            1,
            "20 seeds; max rel err "
            + ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
            + f"; {elapsed:.1f}s",
        )


# ---------------------------------------------------------------------------
# criterion 2: exact parameter counts
# ---------------------------------------------------------------------------


class TestCriterion2Architecture:
    def test_parameter_counts(self):
        enc = Encoder(latent_size=128, n_points=2048)
        dec = Decoder(latent_size=128, m_points=2048, hidden_size=1024)
        assert enc.num_parameters() == 25_728
        assert dec.num_parameters() == 6_429_696
        report(2, "encoder 25,728 params; decoder 6,429,696 params")


# ---------------------------------------------------------------------------
# criterion 3: oriented IoU vs Monte-Carlo volume oracle
# ---------------------------------------------------------------------------


class TestCriterion3GeometryOracle:
    def test_axis_aligned_exact(self):
        a = Box3D((0, 0, 0), (1, 1, 1), 0.0)
        cases = [
            (Box3D((0.5, 0, 0), (1, 1, 1), 0.0), 1.0 / 3.0),
            (Box3D((0, 0, 0), (1, 1, 1), 0.0), 1.0),
            (Box3D((0, 0, 0.5), (1, 1, 1), 0.0), 1.0 / 3.0),
            (Box3D((2, 0, 0), (1, 1, 1), 0.0), 0.0),
        ]
        for b, expected in cases:
            assert abs(iou_3d(a, b) - expected) <= 1e-12

    def test_monte_carlo_oracle_100_pairs(self):
        start = time.time()
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(100):
            a = Box3D(
                rng.uniform(-2, 2, 3), rng.uniform(0.5, 3.0, 3), rng.uniform(-np.pi, np.pi)
            )
            b = Box3D(
                a.center + rng.uniform(-1.5, 1.5, 3) * [1, 1, 0.5],
                rng.uniform(0.5, 3.0, 3),
                rng.uniform(-np.pi, np.pi),
            )
            # sample uniformly inside a, count hits inside b
            local = rng.uniform(-0.5, 0.5, size=(1_000_000, 3)) * a.size[[2, 0, 1]]
            world = box_to_world(local, a)
            inter = points_in_box(world, b).shape[0] / 1_000_000 * a.volume
            estimate = inter / (a.volume + b.volume - inter)
            worst = max(worst, abs(iou_3d(a, b) - estimate))
            assert worst <= 1e-2
        elapsed = time.time() - start
        assert elapsed < 120.0
        report(3, f"100 pairs, 1e6 samples each; max |ious - mc| = {worst:.2e}; {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# criterion 4: metric fixtures
# ---------------------------------------------------------------------------


class TestCriterion4MetricFixtures:
    def test_fixtures(self):
        assert success_auc([1.0] * 40) == pytest.approx(100.0, abs=0.5)
        assert precision_auc([0.0] * 40) == pytest.approx(100.0, abs=0.5)
        assert success_auc([0.5] * 40) == pytest.approx(50.0, abs=0.5)
        assert precision_auc([1.0] * 40) == pytest.approx(50.0, abs=0.5)
        report(4, "perfect=100, IoU 0.5 -> 50, error 1 m -> 50, all +/- 0.5")


# ---------------------------------------------------------------------------
# shared desk-scale experiment for criteria 5-8
# ---------------------------------------------------------------------------

DESK_TRACKLET = SyntheticConfig(
    n_frames=20,
    points_per_shape=1600,
    noise_sigma=0.02,
    dropout=0.25,
    ground_points=600,
    ground_radius=6.0,
    n_distractors=2,
    start_distance=16.0,
    approach=True,
    density_ref_distance=5.0,
    occlusion_prob=0.2,
    occlusion_fraction=0.5,
    speed=0.8,
)
DESK_DATASET = SyntheticDatasetConfig(n_train=10, n_val=3, n_test=5, seed=1, tracklet=DESK_TRACKLET)
DESK_TRAIN = dict(
    latent_size=32,
    n_points=256,
    m_points=256,
    hidden_size=128,
    channels=(32, 64),
    candidates=48,
    learning_rate=1e-3,
    epochs=25,
    seed=0,
)
EVAL_SEED = 0


@pytest.fixture(scope="session")
def desk_dataset():
    return generate_synthetic_dataset(DESK_DATASET)


@pytest.fixture(scope="session")
def trained_joint(desk_dataset):
    """The lambda = 1e-6 run (also serves criteria 7 and 8)."""
    config = TrainConfig(lambda_comp=1e-6, **DESK_TRAIN)
    start = time.time()
    result = fit(desk_dataset["train"], desk_dataset["val"], config)
    result.train_minutes = (time.time() - start) / 60.0
    return result


@pytest.fixture(scope="session")
def trained_tracking_only(desk_dataset):
    """The lambda = 0 comparison run."""
    config = TrainConfig(lambda_comp=0.0, **DESK_TRAIN)
    return fit(desk_dataset["train"], desk_dataset["val"], config)


def grid_ope(encoder, tracklets, scheme="all_previous", scorer="model", seed=EVAL_SEED):
    results = [
        track_tracklet(
            t,
            GridSamplerFactory(GridSpec()),
            FusionConfig("early", scheme),
            encoder,
            scorer=scorer,
            seed=seed,
        )
        for t in tracklets
    ]
    return evaluate_run(results, tracklets)


def decoded_model_chamfer(encoder, decoder, tracklets):
    values = []
    for t in tracklets:
        model = resample(
            build_model_shape(t), encoder.n_points, np.random.default_rng(EVAL_SEED)
        )
        values.append(chamfer(decoder.decode(encoder.embed_one(model)), model))
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# criterion 5: grid protocol
# ---------------------------------------------------------------------------


class TestCriterion5GridProtocol:
    def test_default_grid_147(self):
        grid = exhaustive_grid(GridSpec(), Box3D((0, 0, 0), (1.8, 1.5, 4.2), 0.3))
        assert len(grid) == 147

    def test_closest_oracle_returns_ground_truth(self, desk_dataset):
        encoder = Encoder(**{k: DESK_TRAIN[k] for k in ("latent_size", "n_points", "channels")})
        report_obj = grid_ope(encoder, desk_dataset["test"], scorer="closest")
        assert report_obj.success == pytest.approx(100.0, abs=0.5)
        report(5, f"147 candidates; oracle Success {report_obj.success:.2f}")


# ---------------------------------------------------------------------------
# criterion 6: desk-scale end-to-end training effect
# ---------------------------------------------------------------------------


class TestCriterion6EndToEnd:
    def test_training_beats_random_and_lambda_comparison(
        self, desk_dataset, trained_joint, trained_tracking_only
    ):
        assert trained_joint.train_minutes <= 30.0, (
            f"training took {trained_joint.train_minutes:.1f} CPU-minutes"
        )
        random_encoder = Encoder(
            DESK_TRAIN["latent_size"],
            DESK_TRAIN["n_points"],
            DESK_TRAIN["channels"],
            rng=DESK_TRAIN["seed"],
        )
        test = desk_dataset["test"]
        rand = grid_ope(random_encoder, test)
        joint = grid_ope(trained_joint.encoder, test)
        assert joint.success >= rand.success + 15.0, (
            f"Success {joint.success:.1f} vs random {rand.success:.1f}"
        )
        assert joint.precision >= rand.precision + 15.0, (
            f"Precision {joint.precision:.1f} vs random {rand.precision:.1f}"
        )

        tronly = grid_ope(trained_tracking_only.encoder, test)
        chamfer_joint = decoded_model_chamfer(
            trained_joint.encoder, trained_joint.decoder, test
        )
        chamfer_tronly = decoded_model_chamfer(
            trained_tracking_only.encoder, trained_tracking_only.decoder, test
        )
        assert chamfer_tronly >= 10.0 * chamfer_joint, (
            f"chamfer ratio {chamfer_tronly / chamfer_joint:.1f}x"
        )
        assert joint.success >= tronly.success - 5.0, (
            f"joint {joint.success:.1f} vs tracking-only {tronly.success:.1f}"
        )
        report(
            6,
            f"random {rand.success:.1f}/{rand.precision:.1f} -> joint "
            f"{joint.success:.1f}/{joint.precision:.1f}; tracking-only "
            f"{tronly.success:.1f}; chamfer {chamfer_tronly:.1f} vs "
            f"{chamfer_joint:.1f} ({chamfer_tronly / chamfer_joint:.1f}x); "
            f"{trained_joint.train_minutes:.1f} min",
        )


# ---------------------------------------------------------------------------
# criterion 7: fusion ablation ordering
# ---------------------------------------------------------------------------


class TestCriterion7FusionOrdering:
    def test_scheme_ordering(self, desk_dataset, trained_joint):
        test = desk_dataset["test"]
        success = {
            scheme: grid_ope(trained_joint.encoder, test, scheme=scheme).success
            for scheme in ("all_previous", "previous_only", "first_only")
        }
        assert success["all_previous"] >= success["previous_only"] >= success["first_only"], (
            f"ordering violated: {success}"
        )
        report(
            7,
            "Success all_previous {all_previous:.1f} >= previous_only "
            "{previous_only:.1f} >= first_only {first_only:.1f}".format(**success),
        )


# ---------------------------------------------------------------------------
# criterion 8: sampler sanity
# ---------------------------------------------------------------------------


class TestCriterion8Samplers:
    def test_kalman_on_constant_velocity_track(self, trained_joint):
        config = SyntheticConfig(
            n_frames=15,
            points_per_shape=1600,
            noise_sigma=0.0,
            dropout=0.0,
            speed=0.6,
            turn_rate=0.0,
            start_distance=8.0,
            ground_points=300,
            ground_radius=6.0,
        )
        tracklet = generate_synthetic_tracklet(
            config, np.random.default_rng(123), scene_id=900, track_id=0
        )
        result = track_tracklet(
            tracklet,
            lambda box: KalmanSampler(box, n_candidates=147),
            FusionConfig("early", "all_previous"),
            trained_joint.encoder,
            seed=EVAL_SEED,
        )
        assert not result.failed, result.failure_message
        errors = [
            float(np.linalg.norm(r.box.center - f.box.center))
            for r, f in zip(result.records, tracklet.frames)
        ]
        assert max(errors) <= 0.5, f"max center error {max(errors):.3f} m"
        report(8, f"Kalman max center error {max(errors):.3f} m over {len(errors)} frames")

    def test_closest_oracle_upper_bounds_model(self, desk_dataset, trained_joint):
        test = desk_dataset["test"]

        def samplers():
            yield "grid", GridSamplerFactory(GridSpec())
            yield "kalman", lambda box: KalmanSampler(box, n_candidates=147)

        for name, factory in samplers():
            scores = {}
            for scorer in ("model", "closest"):
                results = [
                    track_tracklet(
                        t, factory, FusionConfig("early", "all_previous"),
                        trained_joint.encoder, scorer=scorer, seed=EVAL_SEED,
                    )
                    for t in test
                ]
                scores[scorer] = evaluate_run(results, test).success
            assert scores["closest"] >= scores["model"], (
                f"{name}: oracle {scores['closest']:.1f} < model {scores['model']:.1f}"
            )


# ---------------------------------------------------------------------------
# criterion 9: optional KITTI reproduction
# ---------------------------------------------------------------------------


class TestCriterion9Kitti:
    @pytest.mark.skipif(
        "SCTRACK_KITTI_ROOT" not in os.environ,
        reason="KITTI dataset not provided (set SCTRACK_KITTI_ROOT)",
    )
    def test_kitti_reproduction(self):
        from sctrack.kitti import extract_tracklets
        from sctrack.checkpoint import load_checkpoint

        root = os.environ["SCTRACK_KITTI_ROOT"]
        tracklets = extract_tracklets(root, "train", region_radius=None)
        moves = [m for t in tracklets for m in t.displacements()]
        mean_move = float(np.mean(moves))
        assert mean_move == pytest.approx(0.742, abs=0.02)

        checkpoint = os.environ.get("SCTRACK_KITTI_CHECKPOINT")
        if not checkpoint:
            pytest.skip("mean displacement verified; set SCTRACK_KITTI_CHECKPOINT "
                        "for the full 5-seed tracking reproduction")
        encoder, _, _ = load_checkpoint(checkpoint)
        test = extract_tracklets(root, "test")
        runs = []
        for seed in range(5):
            runs.append([
                track_tracklet(
                    t, GridSamplerFactory(GridSpec()),
                    FusionConfig("early", "all_previous"), encoder, seed=seed,
                )
                for t in test
            ])
        merged = evaluate_run(runs, test)
        assert merged.success == pytest.approx(76.94, abs=3.0)
        assert merged.precision == pytest.approx(81.38, abs=3.0)
        report(9, f"KITTI Success {merged.success:.2f} / Precision {merged.precision:.2f}")


# ---------------------------------------------------------------------------
# criterion 10: determinism of cmd_track
# ---------------------------------------------------------------------------


class TestCriterion10Determinism:
    def test_byte_identical_tracking(self, tmp_path):
        config = tmp_path / "config.yaml"
        config.write_text(
            """
training: {latent_size: 8, n_points: 32, m_points: 32, hidden_size: 16,
           channels: [6, 10], candidates: 4, epochs: 0, seed: 0}
data:
  kind: synthetic
  synthetic:
    n_train: 1
    n_val: 1
    n_test: 2
    seed: 11
    tracklet: {n_frames: 5, points_per_shape: 256}
"""
        )
        out_dir = tmp_path / "run"
        assert cli.main(["train", "--config", str(config), "--out-dir", str(out_dir)]) == 0
        payloads = []
        for name in ("first.jsonl", "second.jsonl"):
            out = tmp_path / name
            code = cli.main(
                ["track", "--checkpoint", str(out_dir / "checkpoint.npz"),
                 "--config", str(config), "--split", "test", "--seed", "21",
                 "--out", str(out)]
            )
            assert code == 0
            payloads.append(out.read_bytes())
        assert payloads[0] == payloads[1]
        report(10, f"two runs, {len(payloads[0])} bytes, byte-identical")
