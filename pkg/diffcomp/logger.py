import logging

from .config import LOG_FILE

logging.basicConfig(
    filename=LOG_FILE,
    level=logging.INFO,
    format="%(asctime)s - %(levelname)s - %(message)s"
)

logger = logging.getLogger("diffcomp")


def log_event(message: str):
    logger.info(message)


def log_warning(message: str):
    logger.warning(message)
