#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "greybox/estimate.hpp"
#include "support.hpp"

using namespace greybox;
using namespace gbtest;
using optim::Bound;

namespace {

const FitResult& nile_fit() {
  static const auto m = model_from("nile.mod");
  static const FitResult f = fit(m, dataset_from(m, "nile.csv"));
  return f;
}

}  // namespace

TEST_CASE("BFGS on smooth problems") {
  SUBCASE("convex quadratic") {
    Matrix q(3, 3);
    q << 4, 1, 0, 1, 3, -0.5, 0, -0.5, 2;
    Vector c(3);
    c << 1, -2, 0.5;
    const auto f = [&](const Vector& x) { return 0.5 * (x - c).dot(q * (x - c)); };
    const auto r = optim::minimize(f, Vector::Zero(3), std::vector<Bound>(3));
    CHECK(r.status == optim::Status::Converged);
    CHECK((r.x - c).lpNorm<Eigen::Infinity>() < 1e-5);
  }
  SUBCASE("bounded Rosenbrock") {
    std::vector<Bound> box(2, Bound{-2.0, 2.0});
    bool stayed_inside = true;
    const auto f = [&](const Vector& x) {
      for (int i = 0; i < 2; ++i) stayed_inside = stayed_inside && box[static_cast<std::size_t>(i)].inside(x[i]);
      return 100 * std::pow(x[1] - x[0] * x[0], 2) + std::pow(1 - x[0], 2);
    };
    Vector x0(2);
    x0 << -1.2, 1.0;
    optim::Options o;
    o.max_iterations = 2000;
    const auto r = optim::minimize(f, x0, box, o);
    CHECK(r.status == optim::Status::Converged);
    CHECK(std::abs(r.x[0] - 1) < 1e-4);
    CHECK(std::abs(r.x[1] - 1) < 1e-4);
    CHECK(stayed_inside);
    REQUIRE(r.history.size() >= 2);
    CHECK(r.history.front() == doctest::Approx(24.2));
    for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i] <= r.history[i - 1]);
  }
  SUBCASE("minimum outside the box") {
    std::vector<Bound> box{Bound{0.0, 2.0}};
    const auto f = [](const Vector& x) { return (x[0] - 3) * (x[0] - 3); };
    const auto r = optim::minimize(f, Vector::Constant(1, 1.0), box);
    CHECK(r.x[0] < 2.0);
    CHECK(r.x[0] > 1.99);
  }
  SUBCASE("rejected regions and bad starts") {
    const auto f = [](const Vector& x) {
      return x[0] < 0.5 ? std::numeric_limits<double>::infinity() : (x[0] - 1) * (x[0] - 1);
    };
    const auto r = optim::minimize(f, Vector::Constant(1, 4.0), std::vector<Bound>(1));
    CHECK(std::abs(r.x[0] - 1) < 1e-5);
    CHECK_THROWS_AS(optim::minimize(f, Vector::Constant(1, 0.0), std::vector<Bound>(1)), NumericalError);
  }
  SUBCASE("iteration limit") {
    optim::Options o;
    o.max_iterations = 2;
    const auto f = [](const Vector& x) { return 100 * std::pow(x[1] - x[0] * x[0], 2) + std::pow(1 - x[0], 2); };
    const auto r = optim::minimize(f, Vector::Constant(2, -1.0), std::vector<Bound>(2), o);
    CHECK(r.status == optim::Status::IterationLimit);
    CHECK(r.iterations == 2);
  }
}

TEST_CASE("barrier penalty") {
  std::vector<Bound> b{Bound{0.0, 10.0}, Bound{-1.0, std::nullopt}, Bound{}};
  Vector x(3);
  x << 2.0, 3.0, 100.0;
  const double lambda = 1e-3;
  CHECK(optim::barrier(x, b, lambda) == doctest::Approx(lambda * (10.0 / 2.0 + 10.0 / 8.0 + 1.0 / 4.0)));
  const Vector g = optim::barrier_gradient(x, b, lambda);
  for (int i = 0; i < 3; ++i) {
    Vector lo = x, hi = x;
    lo[i] -= 1e-6;
    hi[i] += 1e-6;
    const double fd = (optim::barrier(hi, b, lambda) - optim::barrier(lo, b, lambda)) / 2e-6;
    CHECK(g[i] == doctest::Approx(fd).epsilon(1e-6));
  }
  CHECK(g[2] == 0.0);
}

TEST_CASE("difference derivatives") {
  Matrix q(2, 2);
  q << 3, -1, -1, 2;
  const auto f = [&](const Vector& x) { return 0.5 * x.dot(q * x) + x[0]; };
  Vector x(2);
  x << 0.3, -1.1;
  const Matrix h = optim::fd_hessian(f, x);
  CHECK((h - q).lpNorm<Eigen::Infinity>() < 1e-6);
  CHECK(h == h.transpose());
  const Vector g = optim::fd_gradient(f, x, f(x), std::vector<Bound>(2));
  CHECK((g - (q * x + Vector::Unit(2, 0))).lpNorm<Eigen::Infinity>() < 1e-7);

  // one-sided next to a bound
  const auto sq = [](const Vector& v) { return v[0] * v[0]; };
  const Vector near = Vector::Constant(1, 1e-9);
  const Vector gb = optim::fd_gradient(sq, near, sq(near), {Bound{0.0, 1.0}});
  CHECK(std::abs(gb[0]) < 1e-5);
}

TEST_CASE("two-sided p values") {
  CHECK(two_sided_p(0.0, 50) == doctest::Approx(1.0));
  CHECK(two_sided_p(1.959963984540054, 0) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(two_sided_p(2.228138851986274, 10) == doctest::Approx(0.05).epsilon(1e-10));
  CHECK(two_sided_p(-2.228138851986274, 10) == doctest::Approx(0.05).epsilon(1e-10));
  CHECK(two_sided_p(12.7062047361747, 1) == doctest::Approx(0.05).epsilon(1e-10));
  CHECK(std::isnan(two_sided_p(std::nan(""), 5)));
}

TEST_CASE("profile grids") {
  const auto g = parse_grid("0.2:1.4:13");
  REQUIRE(g.size() == 13);
  CHECK(g.front() == 0.2);
  CHECK(g.back() == 1.4);
  CHECK(g[5] == doctest::Approx(0.7));
  CHECK(parse_grid("3:1:3") == std::vector<double>{3, 2, 1});
  for (const char* bad : {"1:2", "1:2:1", "1:1:5", "a:2:3", "1:2:2.5", "1:2:3:4"})
    CHECK_THROWS_AS(parse_grid(bad), Error);
}

TEST_CASE("Gaussian mean has information n over variance") {
  const auto m = compile(parse_model(kQuadraticModel, "quadratic"));
  const auto qp = quadratic_problem(150, 11);
  const auto f = fit(m, qp.data);
  REQUIRE(f.converged);
  const auto* e = f.find("m");
  REQUIRE(e);
  CHECK(std::abs(e->estimate - qp.m_hat) < 1e-8);
  CHECK(std::abs(e->std_error / qp.se - 1) < 1e-6);
  const auto it = std::find(f.information_parameters.begin(), f.information_parameters.end(), "m");
  REQUIRE(it != f.information_parameters.end());
  const auto k = static_cast<Eigen::Index>(it - f.information_parameters.begin());
  CHECK(f.information(k, k) == doctest::Approx(1.0 / (qp.se * qp.se)).epsilon(1e-6));
}

TEST_CASE("Nile fit bookkeeping") {
  const auto& f = nile_fit();
  REQUIRE(f.converged);
  CHECK(f.model_header == "Linear state space model with 1 state, 1 output and 1 input");
  CHECK(f.num_observations == 100);
  CHECK(f.degrees_of_freedom == 96);
  CHECK(f.free_names() == std::vector<std::string>{"x10", "b", "sigma", "theta"});
  CHECK(f.loglik == -f.nll);

  const auto* s = f.find("S");
  REQUIRE(s);
  CHECK(s->fixed);
  CHECK(s->estimate == -30.0);
  CHECK(std::isnan(s->std_error));

  for (const auto& p : f.parameters) {
    if (p.fixed) continue;
    CHECK(p.t_value == doctest::Approx(p.estimate / p.std_error));
    CHECK(p.p_value == doctest::Approx(two_sided_p(p.t_value, 96)));
    CHECK(std::abs(p.d_objective) < 1e-3);
    CHECK_FALSE(p.at_bound);
  }
  const auto* th = f.find("theta");
  CHECK(th->t_value == doctest::Approx(4.006).epsilon(1e-3));

  // covariance inverts the information and the correlation has a unit diagonal
  const Eigen::Index n = f.information.rows();
  CHECK((f.information * f.covariance - Matrix::Identity(n, n)).lpNorm<Eigen::Infinity>() < 1e-8);
  for (Eigen::Index i = 0; i < n; ++i) CHECK(f.correlation(i, i) == doctest::Approx(1.0));
}

TEST_CASE("Nile likelihood is a coordinatewise local minimum at the estimate") {
  const auto m = model_from("nile.mod");
  const auto d = dataset_from(m, "nile.csv");
  const auto v = nile_fit().values();
  const double at = negative_log_likelihood(m, v, d);
  for (const char* name : {"x10", "b", "sigma", "theta"}) {
    for (double step : {-1e-3, 1e-3}) {
      auto w = v;
      w[*m.parameter_index(name)] += step;
      CHECK_MESSAGE(negative_log_likelihood(m, w, d) > at, name, " ", step);
    }
  }
}

TEST_CASE("fit keeps masked parameters at their start") {
  const auto m = model_from("nile.mod");
  const auto d = dataset_from(m, "nile.csv");
  auto start = m.initial_values();
  start[*m.parameter_index("theta")] = 0.5;
  std::vector<bool> mask(m.num_parameters(), false);
  for (const char* name : {"x10", "b", "sigma"}) mask[*m.parameter_index(name)] = true;
  const auto f = fit_from(m, d, start, mask);
  CHECK(f.find("theta")->estimate == 0.5);
  CHECK(f.find("theta")->fixed);
  CHECK(f.nll >= nile_fit().nll);
}

TEST_CASE("summary text") {
  const auto& f = nile_fit();
  const auto a = summarize(f), b = summarize(f);
  CHECK(a == b);
  CHECK(a.rfind("Coefficients:", 0) == 0);
  CHECK(a.find("S      -30.000000         NA      NA        NA") != std::string::npos);
  CHECK(a.find("Pr(>|t|)") != std::string::npos);
  CHECK(a.find("theta") != std::string::npos);
  const auto ext = summarize(f, true, true);
  CHECK(ext.find("dF/dPar") != std::string::npos);
  CHECK(ext.find("dPen/dPar") != std::string::npos);
  CHECK(ext.find("Correlation") != std::string::npos);
}

TEST_CASE("JSON round trip") {
  const auto& f = nile_fit();
  const auto text = fit_to_json(f);
  CHECK(text.find("\"greybox-fit/1\"") != std::string::npos);
  const auto back = fit_from_json(text);
  CHECK(fit_to_json(back) == text);
  CHECK(back.values() == f.values());
  CHECK(back.nll == f.nll);
  CHECK(back.covariance == f.covariance);
  CHECK(back.find("S")->fixed);
  CHECK(std::isnan(back.find("S")->std_error));
  CHECK_THROWS_AS(fit_from_json("{\"schema\": \"other\"}"), Error);
  CHECK_THROWS_AS(fit_from_json("not json"), Error);
}

TEST_CASE("CSV round trip") {
  std::ifstream in(data_file("skive_inputs.csv"));
  std::stringstream ss;
  ss << in.rdbuf();
  const auto t = parse_csv(ss.str());
  const auto again = parse_csv(write_csv(t));
  CHECK(again.header == t.header);
  CHECK(again.rows == t.rows);

  const auto odd = parse_csv("t,y\n1,\n2,3.5\n", "odd.csv");
  CHECK(odd.rows[0][1].empty());
  CHECK(parse_csv(write_csv(odd)).rows == odd.rows);
  CHECK_THROWS_AS(parse_csv("t,y\n1,2,3\n", "ragged.csv"), Error);

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> mant(-1, 1);
  std::uniform_int_distribution<int> expo(-300, 300);
  for (int i = 0; i < 1000; ++i) {
    const double v = std::ldexp(mant(rng), expo(rng));
    CHECK(parse_number(format_number(v)) == v);
  }
  CHECK(format_number(std::nan("")).empty());
  CHECK_FALSE(parse_number("1,5"));
  CHECK_FALSE(parse_number("12abc"));
  CHECK_FALSE(parse_number(""));
}

TEST_CASE("dataset validation") {
  const auto m = model_from("nile.mod");
  CHECK_THROWS_AS(dataset_from_table(parse_csv("t,y\n2,1\n1,2\n"), m), Error);
  CHECK_THROWS_AS(dataset_from_table(parse_csv("t,y,w\n1,1,0\n2,2,0\n"), m), Error);
  CHECK_THROWS_AS(dataset_from_table(parse_csv("y\n1\n2\n"), m), Error);
  const auto d = dataset_from_table(parse_csv("t,y\n1,1\n2,\n3,4\n"), m);
  CHECK(d.missing(1, 0));
  CHECK(d.num_observations() == 2);
  CHECK(d.inputs()(1, 0) == 1.0);
}

TEST_CASE("prediction table") {
  const auto m = model_from("nile.mod");
  const auto d = dataset_from_table(parse_csv("t,y\n1,1100\n2,\n3,1000\n"), m);
  const auto steps = predict_one_step(m, m.initial_values(), d);
  const auto t = prediction_table(m, d, steps);
  CHECK(t.header ==
        std::vector<std::string>{"k", "t", "y_y", "yhat_y", "sd_yhat_y", "eps_y", "xpred_x1", "sd_xpred_x1"});
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[1][2].empty());
  CHECK(t.rows[1][5].empty());
  CHECK_FALSE(t.rows[1][3].empty());
  CHECK(parse_number(t.rows[0][3]) == steps[0].y_hat[0]);
}

TEST_CASE("profile likelihood") {
  const auto m = model_from("nile.mod");
  const auto d = dataset_from(m, "nile.csv");
  const auto& f = nile_fit();
  const double th = f.find("theta")->estimate, se = f.find("theta")->std_error;
  const std::vector<double> grid{th - se, th, th + se};
  const auto p = profile_likelihood(m, d, f, "theta", grid);
  REQUIRE(p.profile_loglik.size() == 3);
  CHECK(std::abs(p.profile_loglik[1] - f.loglik) < 1e-6);
  CHECK(p.wald_loglik[1] == doctest::Approx(f.loglik));
  CHECK(p.wald_loglik[0] == doctest::Approx(f.loglik - 0.5));
  CHECK(p.cutoff == doctest::Approx(f.loglik - 1.920729410347062));
  for (double v : p.profile_loglik) CHECK(v <= f.loglik + 1e-6);
  CHECK_THROWS_AS(profile_likelihood(m, d, f, "S", grid), Error);
  CHECK_THROWS_AS(profile_likelihood(m, d, f, "nope", grid), Error);

  const auto table = profile_table(p);
  CHECK(table.header == std::vector<std::string>{"value", "profile_loglik", "wald_loglik", "cutoff"});
  CHECK(table.rows.size() == 3);
}
