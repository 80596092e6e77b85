from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from mvjump.model import Curve, JumpMark, MarketModel, load_model, validate_model

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def fixture_a(grid_n: int = 2000) -> MarketModel:
    """Constant coefficients with one jump mark (eta=0.1, intensity 1)."""
    return MarketModel(
        T=1.0,
        x0=1.0,
        rho=Curve.constant(0.05),
        mu=Curve.constant(0.15),
        sigma=Curve.constant(0.2),
        marks=(JumpMark(Curve.constant(0.1), 1.0),),
        grid_n=grid_n,
    )


def fixture_b() -> MarketModel:
    """Fixture A without jumps."""
    return MarketModel(
        T=1.0, x0=1.0, rho=Curve.constant(0.05), mu=Curve.constant(0.15), sigma=Curve.constant(0.2)
    )


# sample counts whose interval count divides the 2000-cell grid
SAMPLE_COUNTS = (3, 5, 6, 9, 11, 17, 21)


def random_model(seed: int) -> MarketModel:
    """Sampled curves in [0.01, 0.3] with mu > rho at every knot."""
    rng = np.random.default_rng(seed)
    T = float(rng.uniform(0.5, 2.0))

    def counts():
        return int(rng.choice(SAMPLE_COUNTS))

    n = counts()
    rho = rng.uniform(0.01, 0.1, n)
    mu = rho + rng.uniform(0.01, 0.2, n)
    sigma = rng.uniform(0.01, 0.3, counts())
    marks = tuple(
        JumpMark(Curve.sampled(rng.uniform(0.01, 0.3, counts()), T), float(rng.uniform(0.2, 3.0)))
        for _ in range(int(rng.integers(0, 3)))
    )
    return validate_model(
        MarketModel(
            T=T,
            x0=float(rng.uniform(0.5, 2.0)),
            rho=Curve.sampled(rho, T),
            mu=Curve.sampled(mu, T),
            sigma=Curve.sampled(sigma, T),
            marks=marks,
        )
    )


@pytest.fixture
def model_a() -> MarketModel:
    return fixture_a()


@pytest.fixture
def model_b() -> MarketModel:
    return fixture_b()


@pytest.fixture
def model_sampled() -> MarketModel:
    return validate_model(load_model(CONFIGS / "sampled.json"))
