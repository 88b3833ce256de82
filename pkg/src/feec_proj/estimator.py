"""scikit-learn style wrapper: fit builds pi^k on a mesh, transform applies it to coefficient rows."""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .cochain_projection import CochainProjection, apply_pi
from .fe_space import DiscreteComplex, parse_sequence
from .mesh import mesh_from_name
from .validation import check_family, check_form_degree, check_mesh_name, check_positive_int


class CochainProjector(TransformerMixin, BaseEstimator):
    """Projection pi^k onto V^k for one mesh and one exact sequence of spaces.

    fit ignores its data apart from a width check: the operator depends only on
    the mesh and the spaces.  transform maps rows of V^k coefficients (or, with
    transform_moments, rows of moment vectors) to V^k coefficients.
    """

    def __init__(self, mesh="unit-square-crisscross", n=2, family="minus", degree=1, k=0):
        self.mesh = mesh
        self.n = n
        self.family = family
        self.degree = degree
        self.k = k

    def fit(self, X=None, y=None):
        check_mesh_name(self.mesh)
        check_family(self.family)
        n = check_positive_int(self.n, "n")
        r = None if self.family.startswith("mixed:") else check_positive_int(self.degree, "degree")
        complex_ = mesh_from_name(self.mesh, n)
        k = check_form_degree(self.k, complex_.n)
        self.complex_ = complex_
        self.dc_ = DiscreteComplex(complex_, parse_sequence(self.family, r, complex_.n))
        self.projection_ = CochainProjection(self.dc_)
        self.matrix_ = self.projection_.fe_matrix(k)
        self.n_features_in_ = self.matrix_.shape[1]
        if X is not None:
            check_array(X, ensure_min_samples=1)
            if np.shape(X)[1] != self.n_features_in_:
                raise ValueError(f"X has {np.shape(X)[1]} columns, V^{k} has dimension {self.n_features_in_}")
        return self

    def transform(self, X):
        check_is_fitted(self, "matrix_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        return X @ self.matrix_.T

    def transform_moments(self, M):
        """Rows of moment vectors of (u, du) to V^k coefficients."""
        check_is_fitted(self, "projection_")
        M = check_array(M)
        return M @ self.projection_.Pi[self.k].T

    def project(self, u):
        """pi^k of an FEForm or SampledForm."""
        check_is_fitted(self, "projection_")
        return apply_pi(self.projection_, u, self.k)
