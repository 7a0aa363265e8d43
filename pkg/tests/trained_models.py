"""Trains the policies used by the acceptance suite, memoised on disk.

A cached checkpoint is reused only if both the resolved training config and
the source of every module that influences training are byte-identical, so
the cache never changes a result, only how long it takes to get it.
Set ``DEEPHEDGE_TEST_CACHE`` to relocate the cache.
"""

import hashlib
import os
import pathlib
import shutil

from deephedge import experiments
from deephedge.config import load_config

ROOT = pathlib.Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
SOURCES = ("market.py", "account.py", "autodiff.py", "network.py", "trainer.py", "baselines.py", "config.py")
CACHE = pathlib.Path(os.environ.get("DEEPHEDGE_TEST_CACHE", pathlib.Path.home() / ".cache" / "deephedge-tests"))


def _key(cfg):
    import deephedge

    h = hashlib.sha256(cfg.to_ini().encode())
    src = pathlib.Path(deephedge.__file__).parent
    for name in SOURCES:
        h.update((src / name).read_bytes())
    return h.hexdigest()[:20]


def trained(name, overrides=()):
    """Checkpoint path for ``configs/train_<name>.ini``, training it if needed."""
    cfg = load_config(str(CONFIGS / f"train_{name}.ini"), list(overrides))
    out = CACHE / f"{name}-{_key(cfg)}"
    ckpt = out / "policy.ckpt"
    if not ckpt.exists():
        tmp = out.with_name(f"{out.name}.partial-{os.getpid()}")  # private to this process
        experiments.run_train(cfg, str(tmp))
        try:
            tmp.rename(out)
        except OSError:
            if not ckpt.exists():  # another process finished first otherwise
                raise
            shutil.rmtree(tmp)
    return str(ckpt)


T12_RUNS = ("frictionless", "mid", "low", "frictionless_mu0", "mid_mu0", "low_mu0")
PIN_RUNS = ("pin_transient", "pin_halving", "pin_permanent")

if __name__ == "__main__":
    import time

    for run in T12_RUNS + PIN_RUNS:
        t = time.time()
        print(run, trained(run), f"{time.time() - t:.0f}s", flush=True)
