"""Run every CLI command on a tiny configuration."""

import json

from wearmocap.cli import main

TINY = {
    "data": {"n_sequences": 2, "duration": 9.0, "window": 10, "feature_dim": 16},
    "train": {"window": 10, "epochs": 1, "batch_size": 16, "rnn_hidden": 8, "adapter_dim": 4},
    "capture": {"num_cycles": 30},
}


def write_config(path, cfg=TINY):
    path.write_text(json.dumps(cfg))
    return str(path)


def run_chain(root, cfg=TINY, seed=5):
    """Run synth -> align -> train-teacher -> distill -> eval -> sync-sim -> report under ``root``.

    Returns {command: exit code}.
    """
    root.mkdir(parents=True, exist_ok=True)
    c = write_config(root / "cfg.json", cfg)
    d = lambda name: str(root / name)
    common = ["--config", c, "--seed", str(seed)]
    steps = {
        "synth": ["synth", *common, "--out", d("raw")],
        "align": ["align", *common, "--data", d("raw"), "--out", d("aligned")],
        "train-teacher": ["train-teacher", *common, "--data", d("aligned"), "--out", d("teacher")],
        "distill": ["distill", *common, "--data", d("aligned"), "--teacher", d("teacher/teacher.json"),
                    "--out", d("student")],
        "eval": ["eval", *common, "--data", d("aligned"), "--model", d("student/student.json"),
                 "--mode", "imu_only", "--out", d("eval")],
        "sync-sim": ["sync-sim", *common, "--out", d("sync")],
        "report": ["report", *common, "--out", d("report"), "student=" + d("eval")],
    }
    return {name: main(argv) for name, argv in steps.items()}


def tree_bytes(root):
    """{relative path: bytes} of every file under ``root``."""
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
