import logging
from datetime import datetime
from pathlib import Path
from typing import Optional

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


def setup_logging(output_dir: Optional[str] = None, verbose: bool = False) -> logging.Logger:
    """
    Setup logging per le esecuzioni da riga di comando

    Args:
        output_dir: directory in cui scrivere il file di log (nessun file se None)
        verbose: livello DEBUG anche su console

    Returns:
        logger del pacchetto
    """
    logger = logging.getLogger("polyscale")
    logger.setLevel(logging.DEBUG)

    # Rimuovi handler esistenti per evitare duplicati
    for handler in logger.handlers[:]:
        logger.removeHandler(handler)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.DEBUG if verbose else logging.INFO)
    console_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(console_handler)

    if output_dir:
        log_dir = Path(output_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        log_filename = log_dir / f"polyscale_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
        file_handler = logging.FileHandler(log_filename, encoding='utf-8')
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(file_handler)
        logger.info(f"File di log: {log_filename}")

    logger.propagate = False
    return logger
