"""
SCAFusion Desk-Scale Detector - Demo

This demo walks through the main pieces of the system on a tiny configuration:
1. Procedural lunar scenes rendered into LiDAR and camera data
2. Model assembly and parameter accounting for the module toggles
3. A short training run followed by evaluation
4. The finite-difference gradient suite
"""

from scafusion.config import (
    AblationConfig,
    DatasetConfig,
    GridConfig,
    ModelConfig,
    OptimizerConfig,
    RunConfig,
    SceneConfig,
)
from scafusion.entities.scafusion_model import build_model
from scafusion.services.evaluation_service import EvaluationService
from scafusion.services.gradcheck_suite import run_suite
from scafusion.services.scene_generator import generate_samples
from scafusion.services.trainer import TrainerService

DEMO_CONFIG = RunConfig(
    out="runs/demo",
    dataset=DatasetConfig(num_samples=4),
    scene=SceneConfig(seed=3, lidar_rings=16, lidar_azimuth_steps=360, max_range=24.0),
    grid=GridConfig(cell_size=1.0),
    model=ModelConfig(
        widths=(8, 16, 32),
        heads=(1, 2, 2),
        neck_channels=16,
        depth_bins=8,
        context_channels=8,
        lidar_channels=16,
        max_points=16,
        fused_channels=16,
        aux_channels=8,
        ctr_channels=8,
        input_downsample=2,
    ),
    optimizer=OptimizerConfig(steps=10, batch_size=2, log_every=5),
    ablation=AblationConfig(seeds=(0,), num_samples=4),
)


def print_separator():
    print("\n" + "=" * 70 + "\n")


def demo_scenes(samples):
    """Demo 1: Generated scenes and their sensor data"""
    print("DEMO 1: Procedural Scenes")
    print("-" * 70)

    for sample in samples:
        counts = {}
        for box in sample.boxes:
            counts[box.class_name] = counts.get(box.class_name, 0) + 1
        print(f"\n  {sample.token}:")
        print(f"    LiDAR points: {len(sample.point_cloud)}")
        height, width = sample.image.shape[:2]
        hits = (sample.depth > 0).mean()
        print(f"    Image: {width}x{height}, depth hits: {hits:.0%}")
        print(f"    Objects: {counts}")
        print(f"    Sun elevation: {sample.light_elevation:.1f} deg")


def demo_parameters():
    """Demo 2: Parameter accounting per module toggle"""
    print("DEMO 2: Parameter Accounting")
    print("-" * 70)

    rows = {
        "baseline": DEMO_CONFIG.with_toggles(
            cam_align=False, aux_branch=False, sca=False, mona=False
        ),
        "+SCA": DEMO_CONFIG.with_toggles(cam_align=False, aux_branch=False, mona=False),
        "full": DEMO_CONFIG,
        "lidar only": DEMO_CONFIG.with_toggles(camera_branch=False),
    }
    print(f"\n  {'config':<12}{'inference':>12}{'total':>10}{'trainable':>12}")
    for name, config in rows.items():
        model = build_model(config)
        report = model.param_store().report()
        inference = model.inference_parameter_count()
        print(
            f"  {name:<12}{inference:>12}"
            f"{report['total']:>10}{report['trainable']:>12}"
        )

    model = build_model(DEMO_CONFIG)
    partition = model.configure_trainable(freeze_base=True)
    fraction = partition.tunable_fraction
    print(f"\n  Camera backbone tunable fraction with Mona adapters: {fraction:.2%}")


def demo_training(samples):
    """Demo 3: Short training run and evaluation"""
    print("DEMO 3: Training and Evaluation")
    print("-" * 70)

    result = TrainerService(DEMO_CONFIG).train(samples)
    first, last = result.history[0], result.history[-1]
    print(f"\n  Steps: {len(result.history)}")
    print(f"  Loss: {first['total']:.4f} -> {last['total']:.4f}")

    report = EvaluationService(DEMO_CONFIG).evaluate(result.model, samples)
    print(f"\n  mAP: {report.mean_ap:.4f}")
    print(f"  NDS: {report.nds:.4f}")
    for class_name in report.ap:
        class_ap = report.class_ap(class_name)
        print(f"  AP {class_name}: {'n/a' if class_ap is None else f'{class_ap:.4f}'}")


def demo_gradients():
    """Demo 4: Gradient checks against central differences"""
    print("DEMO 4: Gradient Suite")
    print("-" * 70)

    results = run_suite(instances=1)
    failed = [r.name for r in results if not r.passed]
    worst = max(results, key=lambda r: r.max_error)
    print(f"\n  Checks: {len(results)}, failed: {len(failed)}")
    print(f"  Largest relative error: {worst.max_error:.2e} ({worst.name})")


def main():
    print("\n" + "=" * 70)
    print("SCAFUSION DESK-SCALE DETECTOR - DEMO")
    print("=" * 70 + "\n")

    samples = generate_samples(DEMO_CONFIG.scene, DEMO_CONFIG.dataset.num_samples)
    demo_scenes(samples)
    print_separator()
    demo_parameters()
    print_separator()
    demo_training(samples)
    print_separator()
    demo_gradients()
    print_separator()

    print("Demo completed successfully!")
    print("\nFor the full workflow see the command line: python3 -m scafusion --help")
    print("=" * 70 + "\n")


if __name__ == "__main__":
    main()
