"""Tests for out-of-sample coding and residual-based assignment."""
import numpy as np
import pytest

from subspaceops.dataio import synth_subspaces
from subspaceops.errors import DataError, UnassignableError
from subspaceops.metrics import accuracy
from subspaceops.oos import (
    assign,
    assign_batch,
    build_dictionary,
    class_residuals,
    classify_codes,
    code_batch,
    ridge_code,
    sparse_code_oos,
)
from subspaceops.sparse_coding import SparseSelfRepConfig
from subspaceops.types import ClusterAssignment, DataMatrix


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(31)


@pytest.fixture
def two_subspaces():
    """Noise-free pair of 3-dimensional subspaces in 20 dimensions."""
    return synth_subspaces(2, 20, [3, 3], [30, 30], seed=12)


@pytest.fixture
def in_sample_dictionary(two_subspaces):
    """Dictionary of every other sample, labelled with the truth."""
    chosen = np.arange(0, 60, 2)
    dictionary = build_dictionary(
        two_subspaces.data.columns(chosen), two_subspaces.truth.subset(chosen)
    )
    return dictionary, np.arange(1, 60, 2)


def unit_dictionary(k=2):
    """X = [e1 | e2] labelled 0 and 1 with k classes."""
    return build_dictionary(DataMatrix(np.eye(2)), ClusterAssignment(np.array([0, 1]), k))


class TestBuildDictionary:
    """Tests for build_dictionary."""

    def test_identity_projector(self):
        """For X = I the projector is I / (1 + gamma)."""
        dictionary = build_dictionary(
            DataMatrix(np.eye(3)), ClusterAssignment(np.arange(3), 3), gamma=0.5
        )
        np.testing.assert_allclose(dictionary.projector, np.eye(3) / 1.5)

    def test_normal_equations(self, rng):
        """(X^T X + gamma I) P = X^T."""
        X = rng.standard_normal((6, 9))
        gamma = 1e-3
        dictionary = build_dictionary(DataMatrix(X), ClusterAssignment(np.zeros(9, int), 1),
                                      gamma=gamma)
        np.testing.assert_allclose(
            (X.T @ X + gamma * np.eye(9)) @ dictionary.projector, X.T, atol=1e-8
        )

    def test_orthonormal_projector_tends_to_transpose(self, rng):
        """With orthonormal columns and tiny gamma the projector is X^T."""
        X, _ = np.linalg.qr(rng.standard_normal((8, 3)))
        dictionary = build_dictionary(
            DataMatrix(X), ClusterAssignment(np.arange(3), 3), gamma=1e-10
        )
        error = np.linalg.norm(dictionary.projector - X.T) / np.linalg.norm(X.T)
        assert error <= 1e-6

    def test_single_column(self, rng):
        """For p = 1 the projector is x^T / (||x||^2 + gamma)."""
        x = rng.standard_normal(5)
        gamma = 0.5
        dictionary = build_dictionary(
            DataMatrix(x[:, None]), ClusterAssignment(np.array([0]), 1), gamma=gamma
        )
        assert dictionary.projector.shape == (1, 5)
        np.testing.assert_allclose(dictionary.projector[0], x / (x @ x + gamma))

    @pytest.mark.parametrize("gamma", [0.0, -1e-6])
    def test_gamma_must_be_positive(self, gamma):
        """gamma <= 0 is rejected."""
        with pytest.raises(DataError):
            build_dictionary(DataMatrix(np.eye(2)), ClusterAssignment(np.array([0, 1]), 2),
                             gamma=gamma)

    def test_label_count(self):
        """One label per dictionary column."""
        with pytest.raises(DataError):
            build_dictionary(DataMatrix(np.eye(2)), ClusterAssignment(np.array([0]), 2))

    def test_exclude(self, rng):
        """Excluded columns leave the dictionary with their labels."""
        X = DataMatrix(rng.standard_normal((4, 5)))
        labels = ClusterAssignment(np.array([0, 0, 1, 1, 1]), 2)
        dictionary = build_dictionary(X, labels, exclude=[1, 4])
        assert dictionary.X.n == 3
        np.testing.assert_array_equal(dictionary.labels.labels, [0, 1, 1])
        np.testing.assert_array_equal(dictionary.X.values, X.values[:, [0, 2, 3]])

    def test_masks_partition(self, rng):
        """Every column belongs to exactly one class mask."""
        labels = ClusterAssignment(rng.integers(0, 4, 12), 4)
        dictionary = build_dictionary(DataMatrix(rng.standard_normal((5, 12))), labels)
        masks = dictionary.masks()
        assert masks.shape == (4, 12)
        np.testing.assert_array_equal(masks.sum(axis=0), 1)


class TestRidgeCode:
    """Tests for ridge_code."""

    def test_zero_point(self, rng):
        """x = 0 codes to zero."""
        dictionary = build_dictionary(DataMatrix(rng.standard_normal((5, 4))),
                                      ClusterAssignment(np.zeros(4, int), 1))
        assert not np.any(ridge_code(dictionary, np.zeros(5)))

    def test_dictionary_column(self, rng):
        """A dictionary column is coded by its own indicator."""
        X = rng.standard_normal((10, 5))
        dictionary = build_dictionary(DataMatrix(X), ClusterAssignment(np.zeros(5, int), 1))
        for j in range(5):
            expected = np.zeros(5)
            expected[j] = 1.0
            np.testing.assert_allclose(ridge_code(dictionary, X[:, j]), expected, atol=1e-4)

    def test_minimises_ridge_objective(self, rng):
        """No perturbation of the code lowers ||x - Xc||^2 + gamma ||c||^2."""
        X = rng.standard_normal((6, 8))
        gamma = 1e-2
        dictionary = build_dictionary(DataMatrix(X), ClusterAssignment(np.zeros(8, int), 1),
                                      gamma=gamma)
        x = rng.standard_normal(6)
        c = ridge_code(dictionary, x)

        def objective(code):
            return np.sum((x - X @ code) ** 2) + gamma * np.sum(code ** 2)

        for _ in range(50):
            assert objective(c) <= objective(c + 1e-3 * rng.standard_normal(8)) + 1e-12

    def test_scale_equivariant(self, rng):
        """Scaling the point scales the code."""
        dictionary = build_dictionary(DataMatrix(rng.standard_normal((5, 7))),
                                      ClusterAssignment(np.zeros(7, int), 1))
        x = rng.standard_normal(5)
        np.testing.assert_allclose(ridge_code(dictionary, 3.0 * x),
                                   3.0 * ridge_code(dictionary, x), atol=1e-10)

    def test_dimension_mismatch(self):
        """The point must live in the dictionary's ambient space."""
        with pytest.raises(DataError):
            ridge_code(unit_dictionary(), np.ones(3))

    def test_off_subspace_mass_vanishes_as_gamma_shrinks(self, rng):
        """On independent, non-orthogonal subspaces the other class's share goes to 0.

        gamma > 0 leaves some weight on the other subspace; it shrinks with gamma
        and the point is still assigned to its own subspace.
        """
        eye = np.eye(6)
        own = eye[:, [0, 1]]
        other = np.column_stack([eye[:, 0] + eye[:, 2], eye[:, 1] + eye[:, 3]]) / np.sqrt(2)
        X = np.hstack([own @ rng.standard_normal((2, 5)), other @ rng.standard_normal((2, 5))])
        labels = ClusterAssignment(np.repeat([0, 1], 5), 2)
        x = own @ rng.standard_normal(2)

        shares = []
        for gamma in [1e-3, 1e-5, 1e-7]:
            dictionary = build_dictionary(DataMatrix(X), labels, gamma=gamma)
            c = ridge_code(dictionary, x)
            shares.append(np.linalg.norm(c[5:]) / np.linalg.norm(c))
        assert shares[0] > 1e-8
        assert shares[0] > shares[1] > shares[2]
        assert shares[2] <= 1e-4

        dictionary = build_dictionary(DataMatrix(X), labels, gamma=1e-6)
        assert assign(dictionary, x).label == 0


class TestSparseCode:
    """Tests for sparse_code_oos."""

    def test_small_point_codes_to_zero(self):
        """A point with norm below delta is not coded."""
        code = sparse_code_oos(unit_dictionary(), np.array([1e-4, 0.0]), delta=1e-3)
        assert not np.any(code)

    def test_delta_equal_to_norm_codes_to_zero(self):
        """delta = ||x|| makes the zero code feasible, so it is returned."""
        x = np.array([0.5, 0.5])
        code = sparse_code_oos(unit_dictionary(), x, delta=float(np.sqrt(x @ x)))
        np.testing.assert_array_equal(code, [0.0, 0.0])

    def test_no_mass_off_subspace(self, two_subspaces, in_sample_dictionary):
        """Coefficients on the other subspace's columns are zero."""
        dictionary, outside = in_sample_dictionary
        x = two_subspaces.data.values[:, outside[0]]
        own = two_subspaces.truth.labels[outside[0]]
        code = sparse_code_oos(dictionary, x, delta=1e-6)
        other = dictionary.labels.labels != own
        assert np.abs(code[other]).max() <= 1e-8
        assert np.abs(code).sum() > 0


class TestClassResiduals:
    """Tests for class_residuals."""

    def test_hand_instance(self):
        """X = [e1 | e2], x = e1, c = (1, 0.5)."""
        dictionary = unit_dictionary(k=3)
        x = np.array([1.0, 0.0])
        c = np.array([1.0, 0.5])
        plain = class_residuals(dictionary, x, c, regularized=False)
        scaled = class_residuals(dictionary, x, c, regularized=True)
        np.testing.assert_allclose(plain[:2], [0.0, np.sqrt(1.25)])
        np.testing.assert_allclose(scaled[:2], [0.0, np.sqrt(1.25) / 0.5])
        assert np.isinf(plain[2])
        assert np.isinf(scaled[2])

    def test_zero_class_coefficients(self):
        """A class with only zero coefficients has infinite residual."""
        residuals = class_residuals(unit_dictionary(), np.array([1.0, 0.0]),
                                    np.array([1.0, 0.0]))
        assert residuals[0] == 0.0
        assert np.isinf(residuals[1])

    @pytest.mark.parametrize("regularized", [False, True])
    def test_margin_on_orthogonal_subspaces(self, two_subspaces, rng, regularized):
        """A class-1 point beats class 0 by at least its distance from subspace 0."""
        dictionary = build_dictionary(two_subspaces.data, two_subspaces.truth)
        basis_0, basis_1 = two_subspaces.bases
        x = basis_1 @ rng.standard_normal(3)
        x /= np.linalg.norm(x)
        distance_0 = np.linalg.norm(x - basis_0 @ (basis_0.T @ x))

        residuals = class_residuals(
            dictionary, x, ridge_code(dictionary, x), regularized=regularized
        )
        assert residuals[1] <= 1e-4
        assert residuals[0] >= distance_0 - 1e-12
        assert residuals[0] - residuals[1] >= distance_0 - 1e-4

    def test_code_length(self):
        """The code length must equal the dictionary size."""
        with pytest.raises(DataError):
            class_residuals(unit_dictionary(), np.ones(2), np.ones(3))


class TestAssign:
    """Tests for assign and assign_batch."""

    def test_dictionary_column_gets_its_label(self, two_subspaces, in_sample_dictionary):
        """An in-sample point is assigned its own class."""
        dictionary, _ = in_sample_dictionary
        for j in range(0, dictionary.X.n, 5):
            result = assign(dictionary, dictionary.X.values[:, j])
            assert result.label == dictionary.labels.labels[j]

    def test_zero_point(self, in_sample_dictionary):
        """x = 0 has no finite residual."""
        dictionary, _ = in_sample_dictionary
        with pytest.raises(UnassignableError):
            assign(dictionary, np.zeros(dictionary.X.m))

    def test_tie_goes_to_lowest_index(self):
        """Equal residuals pick the smaller class id."""
        dictionary = build_dictionary(
            DataMatrix(np.array([[1.0, 1.0], [0.0, 0.0]])),
            ClusterAssignment(np.array([0, 1]), 2),
        )
        labels = classify_codes(dictionary, DataMatrix(np.array([[1.0], [0.0]])),
                                np.array([[0.5], [0.5]]))
        assert labels.labels[0] == 0

    def test_empty_batch(self):
        """None is an empty batch."""
        labels = assign_batch(unit_dictionary(), None)
        assert labels.n == 0
        assert labels.k == 2

    def test_self_classification(self, in_sample_dictionary):
        """Classifying the dictionary reproduces its labels."""
        dictionary, _ = in_sample_dictionary
        labels = assign_batch(dictionary, dictionary.X)
        assert accuracy(labels, dictionary.labels) >= 0.99

    @pytest.mark.parametrize("mode", ["ridge", "sparse"])
    @pytest.mark.parametrize("regularized", [True, False])
    def test_out_of_sample_points(self, two_subspaces, in_sample_dictionary, mode,
                                  regularized):
        """Noise-free points outside the dictionary are all labelled correctly."""
        dictionary, outside = in_sample_dictionary
        labels = assign_batch(dictionary, two_subspaces.data.columns(outside), mode=mode,
                              regularized=regularized, delta=1e-6)
        np.testing.assert_array_equal(labels.labels, two_subspaces.truth.labels[outside])

    def test_unknown_mode(self):
        """Only ridge and sparse coding exist."""
        with pytest.raises(DataError):
            assign(unit_dictionary(), np.ones(2), mode="omp")


class TestBatches:
    """Tests for code_batch and classify_codes."""

    def test_sparse_batch_matches_single_points(self, two_subspaces, in_sample_dictionary):
        """Batch sparse codes equal per-point codes, serial or parallel."""
        dictionary, outside = in_sample_dictionary
        points = two_subspaces.data.columns(outside[:6])
        cfg = SparseSelfRepConfig()
        for n_jobs in (1, 2):
            codes = code_batch(dictionary, points, mode="sparse", delta=1e-3, cfg=cfg,
                               n_jobs=n_jobs)
            for i in range(points.n):
                single = sparse_code_oos(dictionary, points.values[:, i], 1e-3, cfg)
                np.testing.assert_array_equal(codes[:, i], single)

    def test_ridge_batch_matches_single_points(self, two_subspaces, in_sample_dictionary):
        """Batch ridge codes equal per-point codes."""
        dictionary, outside = in_sample_dictionary
        points = two_subspaces.data.columns(outside[:6])
        codes = code_batch(dictionary, points)
        for i in range(points.n):
            np.testing.assert_allclose(codes[:, i], ridge_code(dictionary, points.values[:, i]),
                                       atol=1e-12)

    def test_unassignable_columns_listed(self):
        """Every column without a finite residual is reported."""
        dictionary = unit_dictionary()
        points = DataMatrix(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
        codes = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        with pytest.raises(UnassignableError) as excinfo:
            classify_codes(dictionary, points, codes)
        assert excinfo.value.columns == [2]

    def test_point_dimension(self):
        """Batch points must match the dictionary dimension."""
        with pytest.raises(DataError):
            code_batch(unit_dictionary(), DataMatrix(np.ones((3, 2))))
