import logging
from dataclasses import asdict
from datetime import datetime
from typing import Any, Dict, Optional

from fastapi import APIRouter, Body, Depends, HTTPException, Query, status
from pydantic import ValidationError

from darksqueeze.core.params import ModelError, PhysicalParams, Schedule, TruncationError, derive_couplings
from darksqueeze.core.run_config import ConfigError, build_run_config, describe_error, execute_run
from darksqueeze.services.dynamics import DynamicsError, ProtocolError
from darksqueeze.utils.analysis import AnalysisError, cooperativity, error_budget
from darksqueeze.utils.output import to_plain

# Set up logging
logger = logging.getLogger(__name__)

router = APIRouter()


def physical_params(
    g1: float = Query(..., description="Cavity coupling of the first Raman leg (2π·kHz)"),
    g2: float = Query(..., description="Cavity coupling of the second Raman leg (2π·kHz)"),
    omega1: float = Query(..., description="Rabi frequency Ω₁ (2π·kHz)"),
    omega2_max: float = Query(..., description="Ramp maximum of Ω₂ (2π·kHz)"),
    delta1: float = Query(..., description="Single-photon detuning Δ₁ (2π·kHz)"),
    delta2: float = Query(..., description="Single-photon detuning Δ₂ (2π·kHz)"),
    n_atoms: float = Query(..., description="Number of atoms N"),
    delta_a: Optional[float] = Query(None, description="Effective cavity detuning δ_a (2π·kHz)"),
    delta_b: float = Query(0.0, description="Two-photon offset δ_b (2π·kHz)"),
    phi1: float = 0.0,
    phi2: float = 0.0,
    kappa: float = 0.0,
    gamma: float = 0.0,
) -> Dict[str, Any]:
    data = {
        "g1": g1, "g2": g2, "omega1": omega1, "omega2_max": omega2_max,
        "delta1": delta1, "delta2": delta2, "n_atoms": n_atoms, "delta_b": delta_b,
        "phi1": phi1, "phi2": phi2, "kappa": kappa, "gamma": gamma,
    }
    if delta_a is not None:
        data["delta_a"] = delta_a
    return data


def _build_params(data: Dict[str, Any]) -> PhysicalParams:
    try:
        return PhysicalParams(**data)
    except ValidationError as e:
        raise ConfigError(describe_error(e))


def _request_id() -> str:
    return datetime.now().strftime("%Y%m%d%H%M%S%f")


@router.get("/derive",
    response_model=Dict[str, Any],
    responses={
        200: {"description": "Derived couplings at both ends of the ramp"},
        400: {"description": "Invalid parameters"},
        500: {"description": "Internal server error"}
    })
def derive(data: Dict[str, Any] = Depends(physical_params)):
    """
    Stark shifts, Raman couplings and squeezing parameters.

    Returns:
        Dict: couplings at Ω₂ = Ω₂max plus ``mu_max`` at Ω₂ = 0
    """
    request_id = _request_id()
    logger.info(f"Request {request_id} - Deriving couplings")
    try:
        params = _build_params(data)
        couplings = derive_couplings(params)
        result = asdict(couplings)
        result["mu_max"] = derive_couplings(params, 0.0).mu
        result["large_detuning_margin"] = params.large_detuning_margin()
        result["cooperativity"] = cooperativity(params)
        return to_plain(result)

    except (ConfigError, ModelError) as e:
        logger.error(f"Request {request_id} - Invalid parameters: {str(e)}")
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))

    except Exception as e:
        logger.error(f"Request {request_id} - Unexpected error: {str(e)}", exc_info=True)
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail="An unexpected error occurred while deriving couplings"
        )


@router.get("/budget",
    response_model=Dict[str, Any],
    responses={
        200: {"description": "Leakage and decoherence budget"},
        400: {"description": "Invalid parameters"},
        500: {"description": "Internal server error"}
    })
def budget(
    data: Dict[str, Any] = Depends(physical_params),
    t_total: float = Query(..., description="Ramp duration (μs)"),
):
    request_id = _request_id()
    logger.info(f"Request {request_id} - Computing error budget for T={t_total} μs")
    try:
        params = _build_params(data)
        try:
            schedule = Schedule(t_total=t_total, omega2_max=params.omega2_max)
        except ValidationError as e:
            raise ConfigError(describe_error(e))
        return error_budget(params, schedule).to_dict()

    except (ConfigError, ModelError, AnalysisError) as e:
        logger.error(f"Request {request_id} - Invalid parameters: {str(e)}")
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))

    except Exception as e:
        logger.error(f"Request {request_id} - Unexpected error: {str(e)}", exc_info=True)
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail="An unexpected error occurred while computing the budget"
        )


@router.post("/evolve",
    response_model=Dict[str, Any],
    responses={
        200: {"description": "Protocol summary"},
        400: {"description": "Invalid run configuration"},
        422: {"description": "Run finished outside its numerical validity"},
        500: {"description": "Internal server error"}
    })
def evolve(config: Dict[str, Any] = Body(..., description="Run configuration, same keys as the config file")):
    """
    Run one protocol and return its summary.

    The body takes the keys of a run config file; ``output`` is ignored.
    """
    request_id = _request_id()
    logger.info(f"Request {request_id} - Running protocol")
    try:
        run = build_run_config({k: v for k, v in config.items() if k != "output"})
        result = execute_run(run)
        summary = to_plain(result.summary())
        if result.error_budget is not None:
            summary["error_budget"] = result.error_budget.to_dict()
        if not result.valid:
            raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=summary)
        logger.info(f"Request {request_id} - Protocol finished with fidelity {result.fidelity_to_target:.6f}")
        return summary

    except HTTPException:
        raise

    except (ConfigError, ProtocolError) as e:
        logger.error(f"Request {request_id} - Invalid configuration: {str(e)}")
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))

    except (TruncationError, DynamicsError) as e:
        logger.error(f"Request {request_id} - Numerical validity failure: {str(e)}")
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(e))

    except ModelError as e:
        logger.error(f"Request {request_id} - Invalid configuration: {str(e)}")
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))

    except Exception as e:
        logger.error(f"Request {request_id} - Unexpected error: {str(e)}", exc_info=True)
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail="An unexpected error occurred while running the protocol"
        )
