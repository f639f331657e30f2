#!/usr/bin/env python3
"""
Tests for the HTTP analysis service.
"""

import io
import math

import numpy as np
import pytest
from fastapi.testclient import TestClient

from app import app

client = TestClient(app)

SMALL_DOMAIN = {"x_min": -5.0, "x_max": 10.0, "y_half": 5.0}


def trace_csv(drag, lift, t, columns=("t", "drag_b", "lift_b")):
    buf = io.StringIO()
    data = np.column_stack([t, drag, lift])
    np.savetxt(buf, data, delimiter=",", header=",".join(columns), comments="", fmt="%.17g")
    return buf.getvalue()


def shedding_csv(period=11.34, dt=0.02, t_end=480.0):
    t = np.arange(0.0, t_end + 1e-9, dt)
    phase = 2.0 * math.pi * t / period
    return trace_csv(3.2 + 0.05 * np.sin(2.0 * phase) + 0.01 * np.cos(phase), np.sin(phase + 0.3), t)


def upload(text, **form):
    return client.post("/analyze", files={"file": ("trace.csv", text, "text/csv")}, data=form)


def test_health():
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "healthy"


@pytest.mark.parametrize(
    "std, expected",
    [(0.001, "periodic"), (0.1, "transitional"), (1.0, "chaotic")],
)
def test_classify(std, expected):
    response = client.post("/classify", json={"mean_period": 10.0, "std_period": std})
    assert response.status_code == 200
    body = response.json()
    assert body["classification"] == expected
    assert body["relative_spread"] == pytest.approx(std / 10.0)


def test_classify_rejects_non_positive_mean():
    assert client.post("/classify", json={"mean_period": 0.0, "std_period": 0.1}).status_code == 422
    assert client.post("/classify", json={"mean_period": 1.0, "std_period": -0.1}).status_code == 422


def test_analyze_periodic_trace():
    response = upload(shedding_csv(), t_start="280", t_end="480", initial_guess="11.3")
    assert response.status_code == 200
    body = response.json()
    assert body["mean_period"] == pytest.approx(11.34, abs=1e-3)
    assert body["strouhal"] == pytest.approx(2.0 / 11.34, rel=1e-4)
    assert body["classification"] == "periodic"
    assert sum(body["histogram"]["counts"]) == body["n_samples"]
    assert body["window"] == [280.0, 480.0]


def test_analyze_rejects_bad_uploads():
    assert upload("").status_code == 400
    t = np.arange(0.0, 10.0, 0.1)
    missing = trace_csv(t, t, t, columns=("t", "drag", "lift_b"))
    response = upload(missing)
    assert response.status_code == 400
    assert "missing columns" in response.json()["detail"]
    assert upload("t,drag_b,lift_b\n0,1,abc\n").status_code == 400
    assert upload(shedding_csv(t_end=300.0)).status_code == 400


def test_analyze_noise_has_no_period():
    rng = np.random.default_rng(11)
    t = np.arange(0.0, 480.0 + 1e-9, 0.02)
    response = upload(trace_csv(rng.normal(size=len(t)), rng.normal(size=len(t)), t))
    assert response.status_code == 422
    assert "No period" in response.json()["detail"]


def test_mesh_statistics():
    request = {"h_max": 1.0, "grading_ratio": 4.0, "grading_distance": 5.0, "domain": SMALL_DOMAIN}
    response = client.post("/mesh", json=request)
    assert response.status_code == 200
    stats = response.json()["statistics"]
    assert stats["n_cells"] > 0
    assert stats["geometry_order"] == 4
    assert stats["n_curved_edges"] > 0
    assert stats["h_cylinder"] < stats["h_max"]


def test_mesh_rejects_bad_requests():
    bad_domain = {**SMALL_DOMAIN, "x_min": -0.5}
    assert client.post("/mesh", json={"h_max": 1.0, "domain": bad_domain}).status_code == 400
    assert client.post("/mesh", json={"h_max": -1.0, "domain": SMALL_DOMAIN}).status_code == 422
    assert client.post("/mesh", json={"h_max": 1.0, "resolution": 3}).status_code == 422


if __name__ == "__main__":
    pytest.main([__file__])
