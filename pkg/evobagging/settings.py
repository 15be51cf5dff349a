import logging
import os

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_DIR = "results"


# -------------------------------
# 🌍 Umgebung laden
# -------------------------------
def load_environment() -> str:
    """Loads `.env` and then `.env.<APP_ENV>` if present. Returns the active mode."""
    load_dotenv()  # Lädt .env standardmäßig
    mode = os.getenv("APP_ENV", "dev")  # default: dev

    dotenv_file = f".env.{mode}"
    if os.path.exists(dotenv_file):
        load_dotenv(dotenv_file)
        logger.info(f"✅ Environment configuration loaded from {dotenv_file}")
    else:
        logger.debug(f"⚠️ {dotenv_file} not found. Falling back to default variables.")
    return mode


def default_output_dir() -> str:
    return os.getenv("EVOBAG_OUTPUT_DIR") or DEFAULT_OUTPUT_DIR


def default_n_jobs() -> int:
    raw = os.getenv("EVOBAG_N_JOBS")
    if not raw:
        return 1
    try:
        return int(raw)
    except ValueError:
        logger.warning(f"⚠️ EVOBAG_N_JOBS={raw!r} is not an integer, using 1 worker.")
        return 1
