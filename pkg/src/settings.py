import logging
import os
from typing import Any, Dict

from dotenv import load_dotenv


load_dotenv()


# Defaults are plain dictionaries so the CLI, the app and the tests share one source.
# Every entry can be overridden from the environment (or a .env file).

PGD_DEFAULTS: Dict[str, Any] = {
    "iters": 200,
    "step": 0.1,
    "decay": 0.98,
    "optimize_alpha": True,
    "optimizer": "adam",
}

PMNR_DEFAULTS: Dict[str, Any] = {
    "variant": "pmnr",
    "group_size": 2,
    "iterations": 5,
    "scorer": "nsse",
    "seed": 0,
    "stop_on_no_revision": True,
    "use_output_constraint": True,
    "refine_with_intervals": True,
    "alpha_final_steps": 20,
}

LP_DEFAULTS: Dict[str, Any] = {
    "backend": "simplex",
    "command": "",
    "max_iterations": 5000,
    "pivot_tol": 1e-9,
}

BAB_DEFAULTS: Dict[str, Any] = {
    "tighten_method": "pmnr",
    "split_heuristic": "nsse",
    "max_depth": 40,
    "timeout": 60.0,
    "threads": 1,
    "random_samples": 64,
}

# Tolerances shared across modules.
REVISION_TOL = 1e-7
SOUNDNESS_TOL = 1e-7


_ENV_OVERRIDES = {
    "PMNR_PGD_ITERS": (PGD_DEFAULTS, "iters", int),
    "PMNR_PGD_STEP": (PGD_DEFAULTS, "step", float),
    "PMNR_PGD_DECAY": (PGD_DEFAULTS, "decay", float),
    "PMNR_GROUP_SIZE": (PMNR_DEFAULTS, "group_size", int),
    "PMNR_ITERATIONS": (PMNR_DEFAULTS, "iterations", int),
    "PMNR_LP_BACKEND": (LP_DEFAULTS, "backend", str),
    "PMNR_LP_COMMAND": (LP_DEFAULTS, "command", str),
}


def _apply_env_overrides() -> None:
    for name, (table, key, cast) in _ENV_OVERRIDES.items():
        raw = os.getenv(name)
        if raw is None or raw.strip() == "":
            continue
        try:
            table[key] = cast(raw.strip())
        except ValueError:
            logging.getLogger(__name__).warning("ignoring %s=%r (expected %s)", name, raw, cast.__name__)


_apply_env_overrides()


def configure_logging(level: str = "") -> None:
    level = (level or os.getenv("PMNR_LOG_LEVEL", "WARNING")).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
