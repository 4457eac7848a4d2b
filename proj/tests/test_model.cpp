#include <doctest.h>

#include <random>

#include "support.hpp"

using namespace greybox;
using gbtest::data_file;
using gbtest::model_from;

namespace {

ModelSpec car_spec(bool dummy) {
  ModelSpec s;
  if (dummy) {
    s.add_system("dx1 ~ (theta*b*dummy - theta*x1)*dt + exp(sigma)*dw1");
    s.add_input({"dummy"});
  } else {
    s.add_system("dx1 ~ theta*(b - x1)*dt + exp(sigma)*dw1");
  }
  s.add_obs("y ~ x1");
  s.set_variance("yy ~ exp(S)");
  s.set_parameter("x10", 1200, 0, 2000);
  s.set_parameter("theta", 1, 0, 10);
  s.set_parameter("b", 1200, 800, 1500);
  s.set_parameter("sigma", 0, -5, 10);
  s.set_parameter("S", -30);
  return s;
}

}  // namespace

TEST_CASE("system equations split into drift and diffusion") {
  ModelSpec s;
  s.add_system("dx ~ theta*(b-x)*dt + exp(sigma)*dw1");
  REQUIRE(s.systems().size() == 1);
  CHECK(s.systems()[0].state == "x");
  CHECK(s.systems()[0].drift == expr::parse("theta*(b-x)"));
  REQUIRE(s.systems()[0].diffusion.size() == 1);
  CHECK(s.systems()[0].diffusion.at(1) == expr::parse("exp(sigma)"));

  s.add_system("dx2 ~ (exp(lka)*x1-exp(lka)*x2)*dt");
  CHECK(s.systems()[1].drift == expr::parse("exp(lka)*x1-exp(lka)*x2"));
  CHECK(s.systems()[1].diffusion.empty());

  s.add_system("dw ~ dw1");
  CHECK(s.systems()[2].drift.is_constant(0.0));
  CHECK(s.systems()[2].diffusion.at(1).is_constant(1.0));

  // redefinition replaces
  s.add_system("dx ~ -x*dt");
  CHECK(s.systems().size() == 3);
  CHECK(s.systems()[0].drift == expr::parse("-x"));
}

TEST_CASE("system equation errors") {
  ModelSpec s;
  CHECK_THROWS_AS(s.add_system("dx ~ a*x"), ModelError);
  CHECK_THROWS_AS(s.add_system("dx ~ a*x*dt*dw1"), ModelError);
  CHECK_THROWS_AS(s.add_system("x ~ a*x*dt"), ModelError);
  s.add_system("dx ~ a*x*dt + dw1 + dw3");
  s.add_obs("y ~ x");
  s.set_variance("y ~ 1");
  const auto m = compile(s);
  REQUIRE(m.warnings().size() == 1);
  CHECK(m.warnings()[0].find("dw2") != std::string::npos);
  CHECK(m.num_wiener() == 3);
}

TEST_CASE("observation and variance entries") {
  ModelSpec s;
  s.add_system("dx1 ~ -x1*dt + dw1");
  s.add_system("dx2 ~ -x2*dt + dw2");
  s.add_obs("y1 ~ x1");
  s.add_obs("y2 ~ x2");
  CHECK_THROWS_AS(s.add_obs("y1 ~ x2"), ModelError);
  CHECK_THROWS_AS(s.add_obs("y3 ~ x1*dt"), ModelError);
  s.set_variance("y1y1 ~ s1");
  s.set_variance("y2 ~ s2");
  s.set_variance("y1y2 ~ s12");
  s.set_parameter("x10", 0);
  s.set_parameter("x20", 0);
  s.set_parameter("s1", 1);
  s.set_parameter("s2", 2);
  s.set_parameter("s12", 0.5);
  const auto m = compile(s);
  CHECK(m.variance()[0][1] == expr::parse("s12"));
  CHECK(m.variance()[1][0] == expr::parse("s12"));
  CHECK(m.variance()[1][1] == expr::parse("s2"));

  const std::vector<double> p = m.initial_values();
  ModelEvaluator ev(m, p);
  ev.set_point(Vector::Zero(2), Vector(0), 0.0);
  const Matrix sv = ev.variance();
  CHECK(sv(0, 1) == sv(1, 0));
  CHECK(sv(0, 1) == 0.5);
}

TEST_CASE("unspecified covariances are zero") {
  ModelSpec s;
  s.add_system("dx1 ~ -x1*dt + dw1");
  s.add_obs("y1 ~ x1");
  s.add_obs("y2 ~ 2*x1");
  s.set_variance("y1 ~ 1");
  s.set_variance("y2 ~ 3");
  s.set_parameter("x10", 0);
  const auto m = compile(s);
  CHECK(m.variance()[0][1].is_constant(0.0));
}

TEST_CASE("classification and headers") {
  const auto nl = compile(car_spec(false));
  CHECK_FALSE(nl.is_linear());
  CHECK(nl.header() == "Non-linear state space model with 1 state, 1 output and 0 input");
  const auto lin = compile(car_spec(true));
  CHECK(lin.is_linear());
  CHECK(lin.header() == "Linear state space model with 1 state, 1 output and 1 input");

  CHECK(model_from("car_nonlinear.mod").header() == nl.header());
  CHECK(model_from("nile.mod").header() == lin.header());
  CHECK(model_from("three_compartment.mod").header() == "Linear state space model with 3 states, 1 output and 1 input");
  CHECK(model_from("skive.mod").header() == "Non-linear state space model with 1 state, 1 output and 2 inputs");

  ModelSpec ou;
  ou.add_system("dx1 ~ a*x1*dt + s*dw1");
  ou.add_obs("y ~ x1");
  ou.set_variance("y ~ 1");
  ou.set_parameter("x10", 0);
  ou.set_parameter("a", -1);
  ou.set_parameter("s", 1);
  const auto m = compile(ou);
  CHECK(m.is_linear());
  CHECK(m.jacobian_a()[0][0] == expr::parse("a"));
  CHECK(m.jacobian_c()[0][0].is_constant(1.0));
}

TEST_CASE("affine offsets make a model non-linear") {
  ModelSpec s;
  s.add_system("dx1 ~ (a*x1 - 0.5)*dt + dw1");
  s.add_obs("y ~ x1");
  s.set_variance("y ~ 1");
  s.set_parameter("x10", 0);
  s.set_parameter("a", -1);
  CHECK_FALSE(compile(s).is_linear());
}

TEST_CASE("classification ignores statement order") {
  ModelSpec a = car_spec(true);
  ModelSpec b;
  b.set_parameter("S", -30);
  b.set_parameter("sigma", 0, -5, 10);
  b.set_variance("yy ~ exp(S)");
  b.add_obs("y ~ x1");
  b.add_input({"dummy"});
  b.set_parameter("b", 1200, 800, 1500);
  b.add_system("dx1 ~ (theta*b*dummy - theta*x1)*dt + exp(sigma)*dw1");
  b.set_parameter("theta", 1, 0, 10);
  b.set_parameter("x10", 1200, 0, 2000);
  const auto ma = compile(a), mb = compile(b);
  CHECK(ma.classification() == mb.classification());
  CHECK(ma.header() == mb.header());
}

TEST_CASE("compile errors") {
  SUBCASE("state-dependent diffusion suggests a Lamperti transformation") {
    ModelSpec s;
    s.add_system("dx ~ a*x*dt + s*x*dw1");
    s.add_obs("y ~ x");
    s.set_variance("y ~ 1");
    s.set_parameter("x0", 1);
    s.set_parameter("a", 1);
    s.set_parameter("s", 1);
    CHECK_THROWS_WITH_AS(compile(s), doctest::Contains("Lamperti"), ModelError);
  }
  SUBCASE("missing variance entry") {
    ModelSpec s;
    s.add_system("dx ~ -x*dt + dw1");
    s.add_obs("y ~ x");
    s.set_parameter("x0", 1);
    CHECK_THROWS_WITH_AS(compile(s), doctest::Contains("y"), ModelError);
  }
  SUBCASE("unresolved name") {
    ModelSpec s;
    s.add_system("dx ~ -k*x*dt + u*dt + dw1");
    s.add_obs("y ~ x");
    s.set_variance("y ~ 1");
    s.set_parameter("x0", 1);
    s.set_parameter("k", 1);
    // free names are parameters; one without a value is reported when values are needed
    const auto m = compile(s);
    CHECK_THROWS_WITH_AS(m.initial_values(), doctest::Contains("without a value: u"), ModelError);
  }
  SUBCASE("unknown parameter setting") {
    ModelSpec s = car_spec(false);
    s.set_parameter("nonsense", 1);
    CHECK_THROWS_AS(compile(s), ModelError);
  }
  SUBCASE("bound ordering") {
    ModelSpec s;
    CHECK_THROWS_AS(s.set_parameter("a", 5, 0, 1), ModelError);
    CHECK_THROWS_AS(s.set_parameter("a", 0.5, 1, 0), ModelError);
  }
  SUBCASE("input collides with state") {
    ModelSpec s;
    s.add_system("dx ~ -x*dt + dw1");
    CHECK_THROWS_WITH_AS(
        [&] {
          s.add_input({"x"});
          s.add_obs("y ~ x");
          s.set_variance("y ~ 1");
          s.set_parameter("x0", 1);
          (void)compile(s);
        }(),
        doctest::Contains("collides"), ModelError);
  }
  SUBCASE("no measurement equation") {
    ModelSpec s;
    s.add_system("dx ~ -x*dt + dw1");
    s.set_parameter("x0", 1);
    CHECK_THROWS_AS(compile(s), ModelError);
  }
}

TEST_CASE("fixed parameters and initial states") {
  const auto m = compile(car_spec(true));
  const auto idx = *m.parameter_index("S");
  CHECK(m.settings()[idx]->fixed());
  CHECK(m.initial_values()[idx] == -30);
  CHECK(m.parameter_index("x10").has_value());
}

TEST_CASE("model file format") {
  const auto spec = parse_model(
      "# comment\n"
      "system dx1 ~ theta*(b - x1)*dt + exp(sigma)*dw1   # trailing\n"
      "obs y ~ x1\n"
      "obsvar yy ~ exp(S)\n"
      "\n"
      "param x10 = init=1200, lower=0, upper=2000\n"
      "param theta = init=1, lower=0, upper=10\n"
      "param b = init=1200, lower=800, upper=1500\n"
      "param sigma = init=0, lower=-5, upper=10\n"
      "param S = init=-30\n",
      "car.mod");
  const auto m = compile(spec);
  CHECK(m.header() == "Non-linear state space model with 1 state, 1 output and 0 input");
  CHECK_THROWS_WITH_AS(parse_model("system dx ~ x*dt\nbogus line\n", "bad.mod"), doctest::Contains("bad.mod:2"),
                       ModelError);
  CHECK_THROWS_WITH_AS(parse_model("param a = init=\n", "p.mod"), doctest::Contains("p.mod:1"), ModelError);
  CHECK_THROWS_AS(load_model_file(data_file("does_not_exist.mod")), Error);
}

TEST_CASE("Jacobians match finite differences on bundled models") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (const char* f : {"nile.mod", "car_nonlinear.mod", "three_compartment.mod", "three_compartment_overparam.mod",
                        "skive.mod"}) {
    const auto m = model_from(f);
    const auto p = m.initial_values();
    ModelEvaluator ev(m, p);
    for (int trial = 0; trial < 10; ++trial) {
      Vector x(static_cast<Eigen::Index>(m.num_states())), uu(static_cast<Eigen::Index>(m.num_inputs()));
      for (auto& v : x) v = u(rng);
      for (auto& v : uu) v = u(rng);
      const double t = u(rng);
      ev.set_point(x, uu, t);
      const Matrix a = ev.jacobian_a(), c = ev.jacobian_c();
      for (Eigen::Index j = 0; j < x.size(); ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(x[j]));
        Vector xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        ev.set_point(xp, uu, t);
        const Vector fp = ev.drift(), hp = ev.measurement();
        ev.set_point(xm, uu, t);
        const Vector fd_a = (fp - ev.drift()) / (2 * h), fd_c = (hp - ev.measurement()) / (2 * h);
        for (Eigen::Index i = 0; i < a.rows(); ++i)
          CHECK_MESSAGE(std::abs(a(i, j) - fd_a[i]) <= 1e-5 * std::max(1.0, std::abs(fd_a[i])), f);
        for (Eigen::Index i = 0; i < c.rows(); ++i)
          CHECK_MESSAGE(std::abs(c(i, j) - fd_c[i]) <= 1e-5 * std::max(1.0, std::abs(fd_c[i])), f);
      }
      ev.set_point(x, uu, t);
    }
  }
}

TEST_CASE("linear models reconstruct f = Ax + Bu") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (const char* f : {"nile.mod", "three_compartment.mod", "three_compartment_overparam.mod"}) {
    const auto m = model_from(f);
    REQUIRE(m.is_linear());
    const auto p = m.initial_values();
    ModelEvaluator ev(m, p);
    for (int trial = 0; trial < 20; ++trial) {
      Vector x(static_cast<Eigen::Index>(m.num_states())), uu(static_cast<Eigen::Index>(m.num_inputs()));
      for (auto& v : x) v = u(rng);
      for (auto& v : uu) v = u(rng);
      ev.set_point(x, uu, u(rng));
      const Vector f1 = ev.drift();
      const Vector f2 = ev.jacobian_a() * x + ev.jacobian_b() * uu;
      const Vector h1 = ev.measurement();
      const Vector h2 = ev.jacobian_c() * x + ev.jacobian_d() * uu;
      for (Eigen::Index i = 0; i < f1.size(); ++i)
        CHECK(std::abs(f1[i] - f2[i]) <= 1e-12 * std::max(1.0, std::abs(f1[i])));
      for (Eigen::Index i = 0; i < h1.size(); ++i)
        CHECK(std::abs(h1[i] - h2[i]) <= 1e-12 * std::max(1.0, std::abs(h1[i])));
    }
  }
}
