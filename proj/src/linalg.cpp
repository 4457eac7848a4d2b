#include "greybox/linalg.hpp"

#include <array>
#include <cmath>
#include <string>

namespace greybox::linalg {

namespace {

constexpr std::array<double, 5> kTheta{1.495585217958292e-2, 2.539398330063230e-1,
                                       9.504178996162932e-1, 2.097847961257068e0,
                                       5.371920351148152e0};

double one_norm(const Matrix& a) {
  return a.cwiseAbs().colwise().sum().maxCoeff();
}

// Returns (U, V) with r(A) = (V - U)^{-1} (V + U).
void pade(const Matrix& a, int degree, Matrix& u, Matrix& v) {
  const auto n = a.rows();
  const Matrix id = Matrix::Identity(n, n);
  const Matrix a2 = a * a;
  switch (degree) {
    case 3: {
      constexpr double b[] = {120., 60., 12., 1.};
      u = a * (b[3] * a2 + b[1] * id);
      v = b[2] * a2 + b[0] * id;
      return;
    }
    case 5: {
      constexpr double b[] = {30240., 15120., 3360., 420., 30., 1.};
      const Matrix a4 = a2 * a2;
      u = a * (b[5] * a4 + b[3] * a2 + b[1] * id);
      v = b[4] * a4 + b[2] * a2 + b[0] * id;
      return;
    }
    case 7: {
      constexpr double b[] = {17297280., 8648640., 1995840., 277200., 25200., 1512., 56., 1.};
      const Matrix a4 = a2 * a2;
      const Matrix a6 = a4 * a2;
      u = a * (b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id);
      v = b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
      return;
    }
    case 9: {
      constexpr double b[] = {17643225600., 8821612800., 2075673600., 302702400., 30270240.,
                              2162160.,     110880.,     3960.,       90.,        1.};
      const Matrix a4 = a2 * a2;
      const Matrix a6 = a4 * a2;
      const Matrix a8 = a6 * a2;
      u = a * (b[9] * a8 + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id);
      v = b[8] * a8 + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
      return;
    }
    default: {
      constexpr double b[] = {64764752532480000., 32382376266240000., 7771770303897600.,
                              1187353796428800.,  129060195264000.,   10559470521600.,
                              670442572800.,      33522128640.,       1323241920.,
                              40840800.,          960960.,            16380.,
                              182.,               1.};
      const Matrix a4 = a2 * a2;
      const Matrix a6 = a4 * a2;
      u = a * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 +
               b[1] * id);
      v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 +
          b[0] * id;
      return;
    }
  }
}

}  // namespace

Matrix expm(const Matrix& a) {
  if (!a.allFinite()) throw NumericalError("matrix exponential: input has non-finite entries");
  const auto n = a.rows();
  if (n == 0) return Matrix(0, 0);
  const double norm = one_norm(a);
  Matrix u, v;
  int squarings = 0;
  constexpr std::array<int, 4> kDegrees{3, 5, 7, 9};
  int degree = 13;
  for (std::size_t i = 0; i < kDegrees.size(); ++i) {
    if (norm <= kTheta[i]) {
      degree = kDegrees[i];
      break;
    }
  }
  Matrix scaled = a;
  if (degree == 13 && norm > kTheta[4]) {
    squarings = static_cast<int>(std::ceil(std::log2(norm / kTheta[4])));
    scaled = a * std::ldexp(1.0, -squarings);
  }
  pade(scaled, degree, u, v);
  Matrix r = (v - u).partialPivLu().solve(v + u);
  if (!r.allFinite())
    throw NumericalError("matrix exponential: Padé solve produced non-finite values (0 of " +
                         std::to_string(squarings) + " squarings done)");
  for (int k = 0; k < squarings; ++k) {
    r = (r * r).eval();
    if (!r.allFinite())
      throw NumericalError("matrix exponential: overflow at squaring stage " + std::to_string(k + 1) +
                           " of " + std::to_string(squarings));
  }
  return r;
}

namespace {

Discretization van_loan(const Matrix& a, const Matrix& q, double dt, bool linear_hold) {
  const auto n = a.rows();
  const Eigen::Index blocks = linear_hold ? 4 : 3;
  Matrix g = Matrix::Zero(blocks * n, blocks * n);
  g.block(0, 0, n, n) = -a;
  g.block(0, n, n, n) = q;
  g.block(n, n, n, n) = a.transpose();
  g.block(n, 2 * n, n, n) = Matrix::Identity(n, n);
  if (linear_hold) g.block(2 * n, 3 * n, n, n) = Matrix::Identity(n, n) / dt;
  const Matrix e = expm(g * dt);

  Discretization d;
  d.transition = e.block(n, n, n, n).transpose();
  d.process_cov = d.transition * e.block(0, n, n, n);
  symmetrize(d.process_cov);
  d.input_gain = e.block(n, 2 * n, n, n).transpose();
  if (linear_hold) d.ramp_gain = e.block(n, 3 * n, n, n).transpose();
  return d;
}

// The -A block grows like e^{|A| dt}; past this the blocks are built on a
// short interval and doubled up instead.
constexpr double kDirectNorm = 2.0;

int halvings(const Matrix& a, double dt) {
  const double norm = one_norm(a) * dt;
  if (!(norm > kDirectNorm)) return 0;
  return static_cast<int>(std::ceil(std::log2(norm / kDirectNorm)));
}

}  // namespace

Discretization discretize(const Matrix& a, const Matrix& q, double dt, bool linear_hold) {
  const int k = halvings(a, dt);
  if (k == 0) return van_loan(a, q, dt, linear_hold);
  double h = std::ldexp(dt, -k);
  Discretization d = van_loan(a, q, h, linear_hold);
  // ramp_gain is carried unnormalized: int_0^h e^{A(h-s)} s ds
  if (linear_hold) d.ramp_gain *= h;
  for (int i = 0; i < k; ++i) {
    const Matrix& phi = d.transition;
    if (linear_hold) d.ramp_gain = (phi * d.ramp_gain + d.ramp_gain + h * d.input_gain).eval();
    d.process_cov = (d.process_cov + phi * d.process_cov * phi.transpose()).eval();
    symmetrize(d.process_cov);
    d.input_gain = (d.input_gain + phi * d.input_gain).eval();
    d.transition = (phi * phi).eval();
    h *= 2.0;
    if (!d.transition.allFinite() || !d.process_cov.allFinite())
      throw NumericalError("discretization: overflow while doubling to dt = " + std::to_string(dt));
  }
  if (linear_hold) d.ramp_gain /= dt;
  return d;
}

Matrix integrated_covariance(const Matrix& a, const Matrix& q, double dt) {
  return discretize(a, q, dt, false).process_cov;
}

double min_relative_pivot(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  const double scale = std::max(1.0, m.diagonal().cwiseAbs().maxCoeff());
  Eigen::LDLT<Matrix> ldlt(m);
  return ldlt.vectorD().minCoeff() / scale;
}

double asymmetry(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

}  // namespace greybox::linalg
