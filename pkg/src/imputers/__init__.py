import importlib
import logging
import pkgutil
from pathlib import Path

logger = logging.getLogger(__name__)


def load_imputers():
    """Dynamically discover and load all modules in the imputers directory."""
    pkg_dir = str(Path(__file__).parent)
    for _, module_name, _ in pkgutil.iter_modules([pkg_dir]):
        full_module_name = f"{__name__}.{module_name}"
        try:
            importlib.import_module(full_module_name)
            logger.info(f"Loaded imputer module: {module_name}")
        except Exception as e:
            logger.error(f"Failed to load imputer module {module_name}: {e}")
