#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

const std::string kData = GREYBOX_DATA_DIR;

struct Sandbox {
  fs::path dir;
  Sandbox() : dir(fs::temp_directory_path() / ("greybox_cli_" + std::to_string(::getpid()))) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Sandbox() { fs::remove_all(dir); }

  // exit status; stdout and stderr land in out.txt / err.txt
  int run(const std::string& args) const {
    const std::string cmd = "cd '" + dir.string() + "' && '" GREYBOX_CLI "' " + args + " >out.txt 2>err.txt";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  }
  std::string read(const std::string& name) const {
    std::ifstream in(dir / name, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
  void write(const std::string& name, const std::string& text) const { std::ofstream(dir / name) << text; }
};

std::string nile() { return "--model " + kData + "/nile.mod --data " + kData + "/nile.csv"; }

std::size_t lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("fit writes its artifacts") {
  Sandbox sb;
  REQUIRE(sb.run("fit " + nile() + " --out fit") == 0);
  CHECK(fs::exists(sb.dir / "fit" / "fit.json"));
  const auto summary = sb.read("fit/summary.txt");
  CHECK(summary.rfind("Linear state space model with 1 state, 1 output and 1 input\n", 0) == 0);
  CHECK(summary.find("theta    0.6845") != std::string::npos);
  CHECK(sb.read("out.txt") == summary);
  CHECK(sb.read("fit/fit.json").find("\"greybox-fit/1\"") != std::string::npos);

  REQUIRE(sb.run("fit " + nile() + " --out ext --extended --correlation") == 0);
  CHECK(sb.read("ext/summary.txt").find("dF/dPar") != std::string::npos);
}

TEST_CASE("fit exit codes") {
  Sandbox sb;
  CHECK(sb.run("fit " + nile() + " --out short --max-iter 2") == 2);
  CHECK(fs::exists(sb.dir / "short" / "fit.json"));
  CHECK(fs::exists(sb.dir / "short" / "summary.txt"));

  sb.write("undeclared.mod",
           "system dx1 ~ theta*(u - x1)*dt + exp(sigma)*dw1\nobs y ~ x1\nobsvar yy ~ exp(S)\n"
           "param x10 = init=1200\nparam theta = init=1\nparam sigma = init=0\nparam S = init=-30\n");
  CHECK(sb.run("fit --model undeclared.mod --data " + kData + "/nile.csv") == 1);
  CHECK(sb.read("err.txt").find("without a value: u") != std::string::npos);

  sb.write("bad.mod", "system dx1 ~ theta*x1\n");
  CHECK(sb.run("fit --model bad.mod --data " + kData + "/nile.csv") == 1);
  CHECK(sb.read("err.txt").find("bad.mod:1") != std::string::npos);

  sb.write("extra.csv", "t,y,w\n1,2,3\n2,3,4\n");
  CHECK(sb.run("fit --model " + kData + "/nile.mod --data extra.csv") == 1);
  CHECK(sb.read("err.txt").find("'w'") != std::string::npos);

  sb.write("back.csv", "t,y\n2,1\n1,2\n");
  CHECK(sb.run("fit --model " + kData + "/nile.mod --data back.csv") == 1);
  CHECK(sb.run("fit --data back.csv") != 0);
}

TEST_CASE("simulate") {
  Sandbox sb;
  const std::string args = "simulate --model " + kData + "/three_compartment.mod --data " + kData +
                           "/three_compartment_inputs.csv --params " + kData + "/three_compartment_truth.params";
  CHECK(sb.run(args + " --out a") == 1);
  CHECK(sb.read("err.txt").find("seed") != std::string::npos);

  REQUIRE(sb.run(args + " --out a --seed 7 --nsim 3") == 0);
  REQUIRE(sb.run(args + " --out b --seed 7 --nsim 3") == 0);
  for (const char* f : {"sim_1.csv", "sim_2.csv", "sim_3.csv"})
    CHECK(sb.read(std::string("a/") + f) == sb.read(std::string("b/") + f));
  CHECK(sb.read("a/sim_1.csv") != sb.read("a/sim_2.csv"));
  CHECK(sb.read("a/sim_1.csv").rfind("t,u,y,x1,x2,x3\n", 0) == 0);

  REQUIRE(sb.run(args + " --out c --seed 8") == 0);
  CHECK(fs::exists(sb.dir / "c" / "sim_1.csv"));
  CHECK_FALSE(fs::exists(sb.dir / "c" / "sim_2.csv"));
  CHECK(sb.read("c/sim_1.csv") != sb.read("a/sim_1.csv"));
}

TEST_CASE("predict") {
  Sandbox sb;
  sb.write("gappy.csv", "t,y\n1,1100\n2,\n3,1000\n4,1050\n");
  REQUIRE(sb.run("fit " + nile() + " --out fit") == 0);
  REQUIRE(sb.run("predict --model " + kData + "/nile.mod --data gappy.csv --fit fit/fit.json --out p") == 0);
  const auto csv = sb.read("p/predict.csv");
  CHECK(csv.rfind("k,t,y_y,yhat_y,sd_yhat_y,eps_y,xpred_x1,sd_xpred_x1\n", 0) == 0);
  CHECK(lines(csv) == 5);
  CHECK(csv.find("\n1,2,,") != std::string::npos);

  REQUIRE(sb.run("predict " + nile() + " --set theta=0.5 --out q") == 0);
  CHECK(sb.run("predict " + nile() + " --set nope=1 --out q") == 1);
  CHECK(sb.run("predict " + nile() + " --set theta=abc --out q") == 1);
}

TEST_CASE("profile") {
  Sandbox sb;
  REQUIRE(sb.run("profile " + nile() + " --param theta --grid 0.2:1.4:20 --out pr") == 0);
  const auto csv = sb.read("pr/profile_theta.csv");
  CHECK(csv.rfind("value,profile_loglik,wald_loglik,cutoff\n", 0) == 0);
  CHECK(lines(csv) == 21);
  CHECK(sb.run("profile " + nile() + " --param S --grid 0:1:3 --out pr") == 1);
  CHECK(sb.run("profile " + nile() + " --param theta --grid 1:1:3 --out pr") == 1);
}
