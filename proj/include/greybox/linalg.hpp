#pragma once

#include <Eigen/Dense>

#include "greybox/error.hpp"

namespace greybox::linalg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Matrix exponential by scaling and squaring with a diagonal Padé
/// approximant of degree 3..13 chosen from the 1-norm. Throws
/// NumericalError if the input is non-finite or a squaring stage overflows.
Matrix expm(const Matrix& a);

/// Exact discretization of dx = (Ax + Bu) dt + sigma dw over one interval.
struct Discretization {
  Matrix transition;    // e^{A dt}
  Matrix input_gain;    // int_0^dt e^{As} ds
  Matrix ramp_gain;     // int_0^dt e^{A(dt-s)} s/dt ds, only with linear hold
  Matrix process_cov;   // int_0^dt e^{As} Q e^{A's} ds
};

/// One augmented-matrix exponential yields all blocks. `q` is sigma*sigma'.
Discretization discretize(const Matrix& a, const Matrix& q, double dt, bool linear_hold);

/// int_0^dt e^{As} Q e^{A's} ds alone.
Matrix integrated_covariance(const Matrix& a, const Matrix& q, double dt);

inline void symmetrize(Matrix& m) { m = 0.5 * (m + m.transpose()).eval(); }

/// Smallest LDLT pivot of a symmetric matrix, relative to max(1, max|diag|).
double min_relative_pivot(const Matrix& m);

/// Largest |m_ij - m_ji|.
double asymmetry(const Matrix& m);

}  // namespace greybox::linalg
