import hashlib
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from approxcal.datagen import (
    CalibrationProblem, apply_gains, load_problem, load_problem_csv, problem_from_bytes,
    problem_to_bytes, save_problem, save_problem_csv, synthesize,
)
from approxcal.errors import DimensionMismatchError, HeaderError, TruncatedPayloadError, ValidationError
from approxcal.stefcal import StefcalConfig, reference_phase, run


def hermitian_defect(A):
    return np.linalg.norm(A - A.conj().T) / np.linalg.norm(A)


def test_unit_gains_leave_model_unchanged():
    pr = synthesize(P=2, gain_spread=0.0, noise_sigma=0.0, rank=1, seed=7)
    np.testing.assert_allclose(np.abs(pr.g_true), 1.0, rtol=0, atol=1e-15)
    # only the relative phases of the gains survive in V
    np.testing.assert_allclose(np.abs(pr.V), np.abs(pr.M), rtol=1e-15)
    flat = synthesize(P=2, gain_spread=0.0, rank=1, seed=7, phase_spread=0.0)
    np.testing.assert_array_equal(flat.V, flat.M)


def test_zero_noise_structure_oracle():
    pr = synthesize(124, seed=3)
    G = np.diag(pr.g_true)
    direct = G @ pr.M @ G.conj().T
    assert np.linalg.norm(pr.V - direct) / np.linalg.norm(pr.V) < 1e-12
    np.testing.assert_allclose(apply_gains(pr.g_true, pr.M), direct, rtol=0, atol=1e-14)


@given(P=st.integers(1, 40), rank=st.integers(1, 5), seed=st.integers(0, 2**32 - 1),
       spread=st.floats(0, 0.9))
@settings(max_examples=40, deadline=None)
def test_generated_matrices_are_hermitian_and_bounded(P, rank, seed, spread):
    pr = synthesize(P, gain_spread=spread, rank=rank, seed=seed)
    assert hermitian_defect(pr.M) < 1e-12
    assert hermitian_defect(pr.V) < 1e-12
    assert np.abs(pr.M).max() <= 0.99 + 1e-15
    amp = np.abs(pr.g_true)
    assert np.all((amp >= 1 - spread - 1e-12) & (amp <= 1 + spread + 1e-12))
    # PSD plus loading: smallest eigenvalue strictly positive
    assert np.linalg.eigvalsh(pr.M).min() > 0


def test_noise_is_hermitian_with_requested_scale():
    pr = synthesize(124, noise_sigma=1e-3, seed=5)
    assert hermitian_defect(pr.V) < 1e-12
    N = pr.V - apply_gains(pr.g_true, pr.M)
    off = N[~np.eye(124, dtype=bool)]
    assert np.std(off.real) == pytest.approx(1e-3 / np.sqrt(2), rel=0.05)


def test_same_seed_is_bit_identical():
    a, b = synthesize(32, noise_sigma=0.01, seed=11), synthesize(32, noise_sigma=0.01, seed=11)
    assert a.equals(b)
    assert not a.equals(synthesize(32, noise_sigma=0.01, seed=12))


@pytest.mark.parametrize("kwargs", [dict(P=0), dict(P=2.5), dict(rank=0), dict(noise_sigma=-1),
                                    dict(gain_spread=1.0), dict(phase_spread=4.0)])
def test_synthesize_rejects_invalid(kwargs):
    with pytest.raises(ValidationError):
        synthesize(**{"P": 4, **kwargs})


def test_problem_is_immutable_and_validated():
    pr = synthesize(4, seed=0)
    with pytest.raises(ValueError):
        pr.M[0, 0] = 1
    with pytest.raises(ValidationError):
        CalibrationProblem(M=np.eye(3), V=np.eye(2))
    with pytest.raises(ValidationError):
        CalibrationProblem(M=np.eye(2), V=np.full((2, 2), np.nan))


def test_zero_noise_run_recovers_truth_up_to_phase():
    pr = synthesize(8, seed=0)
    trace = run(pr, StefcalConfig(tol=1e-8))
    assert trace.converged
    est, truth = reference_phase(trace.final_gains), reference_phase(pr.g_true)
    assert np.linalg.norm(est - truth) / np.linalg.norm(truth) < 1e-6


# ---------------------------------------------------------------- files


def test_binary_round_trip(tmp_path):
    pr = synthesize(124, noise_sigma=1e-3, seed=1)
    path = save_problem(pr, tmp_path / "p.bin")
    assert load_problem(path).equals(pr)
    h1 = hashlib.sha256(path.read_bytes()).hexdigest()
    save_problem(synthesize(124, noise_sigma=1e-3, seed=1), tmp_path / "q.bin")
    assert hashlib.sha256((tmp_path / "q.bin").read_bytes()).hexdigest() == h1


def test_binary_round_trip_without_truth():
    pr = CalibrationProblem(M=np.eye(3) * (1 + 2j), V=np.ones((3, 3)))
    assert problem_from_bytes(problem_to_bytes(pr)).equals(pr)


def test_empty_file_is_header_error():
    with pytest.raises(HeaderError) as e:
        problem_from_bytes(b"")
    assert e.value.offset == 0


def test_dimension_mismatch():
    data = bytearray(problem_to_bytes(synthesize(2, seed=0)))
    struct.pack_into("<I", data, 12, 3)
    with pytest.raises(DimensionMismatchError) as e:
        problem_from_bytes(bytes(data))
    assert e.value.offset == 12


def test_truncated_payload():
    data = problem_to_bytes(synthesize(3, seed=0))
    with pytest.raises(TruncatedPayloadError) as e:
        problem_from_bytes(data[:-5])
    assert e.value.offset == len(data) - 5


@pytest.mark.parametrize("offset,value", [(0, b"X"), (8, b"\x09"), (10, b"\x04")])
def test_corrupt_header_names_offset(offset, value):
    data = bytearray(problem_to_bytes(synthesize(2, seed=0)))
    data[offset:offset + 1] = value
    with pytest.raises(HeaderError) as e:
        problem_from_bytes(bytes(data))
    assert e.value.offset == offset


def test_trailing_bytes_rejected():
    data = problem_to_bytes(synthesize(2, seed=0)) + b"\0" * 3
    with pytest.raises(DimensionMismatchError):
        problem_from_bytes(data)


def test_csv_round_trip(tmp_path):
    pr = synthesize(6, noise_sigma=0.01, seed=2)
    save_problem_csv(pr, tmp_path / "p.csv")
    assert load_problem_csv(tmp_path / "p.csv").equals(pr)
