from flask import Blueprint, request

from ..services.experiment import flops_model
from ..services.sampling import SamplerConfig, SamplingGrid, candidates, patchify, token_motion
from ..services.selector import STRATEGIES, recall, select
from ..services.tokenopt import flops
from ..services.videogen import GenSpec, gen_video
from ..utils import ApiResponse, FluxError, get_logger

logger = get_logger(__name__)

# API blueprint
api_bp = Blueprint("api", __name__, url_prefix="/api")


@api_bp.errorhandler(FluxError)
def handle_flux_error(error: FluxError):
    logger.warning("Request rejected", error=error.message, path=request.path)
    return ApiResponse.error(error.message, error.details, 400)


def _int_arg(name: str, default: int) -> int:
    raw = request.args.get(name)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise FluxError(f"Query parameter '{name}' must be an integer", {name: raw})


@api_bp.route("/flops")
def flops_report():
    """Cost model for one transformer shape and token count."""
    cfg = flops_model(
        _int_arg("d_model", 384),
        _int_arg("depth", 12),
        _int_arg("heads", 6),
        num_classes=_int_arg("num_classes", 400),
    )
    report = flops(cfg, _int_arg("tokens", 2048))
    return ApiResponse.success(report.to_dict())


@api_bp.route("/candidates", methods=["POST"])
def sampling_candidates():
    """Grids admitted by a sampler config (desk defaults for omitted keys)."""
    cfg = SamplerConfig.from_dict(request.get_json(silent=True) or {}, prefix="sampler.")
    grids = candidates(cfg)
    return ApiResponse.success({"count": len(grids), "grids": [g.to_dict() for g in grids]})


@api_bp.route("/mask", methods=["POST"])
def selection_mask():
    """Select tokens from one synthetic video and report moving-token recall."""
    data = request.get_json(silent=True)
    if not data:
        return ApiResponse.error("No request body provided")

    missing = [key for key in ("F", "R", "K") if key not in data]
    if missing:
        return ApiResponse.error("Missing required fields", {"missing": missing})

    strategy = data.get("strategy", "group_dynamic")
    if strategy not in STRATEGIES:
        return ApiResponse.error(f"Unknown strategy '{strategy}'", {"strategies": list(STRATEGIES)})

    spec = GenSpec.from_dict(data.get("gen", {}), prefix="gen.")
    seed = int(data.get("seed", 0))
    video = gen_video(seed, spec)
    grid = SamplingGrid(int(data["F"]), int(data["R"]), tuple(data.get("patch", (1, 14, 14))))
    pool = patchify(video, grid)
    mask = select(strategy, pool, int(data["K"]), seed, int(data.get("groups", 1)), int(data.get("p", 2)))
    return ApiResponse.success(
        {
            "strategy": strategy,
            "grid": grid.to_dict(),
            "label": video.label,
            "mask": mask.to_json(),
            "recall": recall(mask, token_motion(video, grid)),
        }
    )
