from flask import Flask

from .config import AppConfig
from .utils import get_logger, setup_logging

__version__ = "0.3.0"

logger = get_logger(__name__)


def _register_blueprints(app: Flask):
    """Register Flask blueprints."""
    from .api import api_bp

    app.register_blueprint(api_bp)
    logger.info("Registered API blueprint")


def create_app(app_cfg: AppConfig = None):
    app = Flask(__name__)
    app.cfg = app_cfg or AppConfig()

    setup_logging(app.cfg.log_level)
    logger.info("Creating Flask application", version=__version__)

    _register_blueprints(app)
    return app
