import logging

from dotenv import load_dotenv
from fastapi import FastAPI

from darksqueeze.core.config import settings
from darksqueeze.routers import protocol

load_dotenv()
logging.basicConfig(level=getattr(logging, str(settings.log_level).upper(), logging.INFO))

app = FastAPI(
    title="Dark-State Squeezing API",
    version="1.0.0",
    description="Derived couplings, error budgets and protocol runs for dark-state squeezing."
)

app.include_router(protocol.router, prefix="/api/v1")

if __name__ == "__main__":
    import uvicorn
    uvicorn.run("darksqueeze.main:app", host=settings.api_host, port=settings.api_port, reload=True)
