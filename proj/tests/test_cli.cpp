/*
 * Copyright 2026 The saekit authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <saekit/cli_app.hpp>
#include <sstream>

using namespace saekit;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("params prints totals and deltas vs the plain resnet") {
  CliResult r = cli({"params", "--arch", "senetv2_50", "--classes", "100"});
  CHECK(r.code == 0);
  CHECK(contains(r.out, "total 28759812"));
  CHECK(contains(r.out, "delta_vs_resnet50 5046880"));
  CHECK(contains(r.out, "gates 5046880"));

  CliResult se = cli({"params", "--arch", "senet50", "--classes", "100"});
  CHECK(se.code == 0);
  CHECK(contains(se.out, "delta_vs_resnet50 1273048"));

  CliResult tiny = cli({"params", "--arch", "tiny_senetv2", "--classes", "10"});
  CHECK(tiny.code == 0);
  CHECK(contains(tiny.out, "delta_vs_tiny_resnet"));
}

TEST_CASE("params rejects unknown archs with the valid list") {
  CliResult r = cli({"params", "--arch", "resnet51"});
  CHECK(r.code == 2);
  CHECK(contains(r.err, "senetv2_50"));  // names the valid options
}

TEST_CASE("gradcheck passes on the tiny models and echoes eps") {
  CliResult r = cli({"gradcheck", "--arch", "tiny_senetv2", "--seed", "1",
                     "--eps", "2e-05", "--max-elems", "3"});
  CHECK(r.code == 0);
  CHECK(contains(r.out, "gradcheck PASS"));
  CHECK(contains(r.out, "eps=2e-05"));
  CHECK(contains(r.out, "layer stem.conv.weight"));

  CliResult rn = cli({"gradcheck", "--arch", "tiny_resnet", "--max-elems", "3"});
  CHECK(rn.code == 0);
  CHECK(contains(rn.out, "gradcheck PASS"));
}

TEST_CASE("gradcheck flags an injected wrong backward with the layer name") {
  CliResult r = cli({"gradcheck", "--arch", "tiny_senetv2", "--max-elems", "3",
                     "--inject-bad-grad", "s2.b0.conv1.weight"});
  CHECK(r.code == 1);
  CHECK(contains(r.out, "layer s2.b0.conv1.weight"));
  CHECK(contains(r.out, "FAIL"));
}

TEST_CASE("gradcheck refuses the -50 architectures") {
  CliResult r = cli({"gradcheck", "--arch", "resnet50"});
  CHECK(r.code == 2);
  CHECK(contains(r.err, "tiny"));
}

TEST_CASE("train on synthetic blobs: files, determinism, defaults echo") {
  auto args = [](const std::string& csv, const std::string& ckpt) {
    return std::vector<std::string>{
        "train",  "--synthetic", "--epochs", "2",   "--seed", "7",
        "--out",  csv,           "--checkpoint", ckpt};
  };
  CliResult a = cli(args("cli_a.csv", "cli_a.ckpt"));
  REQUIRE(a.code == 0);
  CHECK(contains(a.out, "wrote cli_a.csv and cli_a.ckpt"));
  // the effective-config echo carries every default that applied
  CHECK(contains(a.out, "optimizer=sgd_momentum"));
  CHECK(contains(a.out, "momentum=0.9"));
  CHECK(contains(a.out, "weight_decay=0.0001"));
  CHECK(contains(a.out, "lr=0.01"));
  CHECK(contains(a.out, "batch_size=16"));
  CHECK(contains(a.out, "seed=7"));

  CliResult b = cli(args("cli_b.csv", "cli_b.ckpt"));
  REQUIRE(b.code == 0);
  // byte-identical CSV bodies and checkpoints for equal seeds
  CHECK(slurp("cli_a.csv") == slurp("cli_b.csv"));
  CHECK(slurp("cli_a.ckpt") == slurp("cli_b.ckpt"));
  CHECK(!slurp("cli_a.csv").empty());

  // CSV starts with the config comment and the fixed header
  const std::string csv = slurp("cli_a.csv");
  CHECK(csv.rfind("# effective-config:", 0) == 0);
  CHECK(contains(csv, "epoch,lr,train_loss,top1,top5\n"));

  // a different seed changes the metrics
  CliResult c = cli({"train", "--synthetic", "--epochs", "2", "--seed", "8",
                     "--out", "cli_c.csv", "--checkpoint", "cli_c.ckpt"});
  REQUIRE(c.code == 0);
  CHECK(slurp("cli_c.csv") != slurp("cli_a.csv"));
  for (const char* f : {"cli_a.csv", "cli_b.csv", "cli_c.csv", "cli_a.ckpt",
                        "cli_b.ckpt", "cli_c.ckpt"})
    fs::remove(f);
}

TEST_CASE("train adam default lr is 0.001 and is echoed") {
  CliResult r = cli({"train", "--synthetic", "--epochs", "1", "--optimizer",
                     "adam", "--out", "cli_adam.csv", "--checkpoint",
                     "cli_adam.ckpt"});
  REQUIRE(r.code == 0);
  CHECK(contains(r.out, "optimizer=adam"));
  CHECK(contains(r.out, "lr=0.001"));
  fs::remove("cli_adam.csv");
  fs::remove("cli_adam.ckpt");
}

TEST_CASE("train without a dataset fails with exit 2") {
  CliResult r = cli({"train", "--epochs", "1"});
  CHECK(r.code == 2);
  CliResult missing = cli({"train", "--dataset", "does_not_exist"});
  CHECK(missing.code == 2);
  CHECK(contains(missing.err, "does_not_exist"));
}

TEST_CASE("eval reproduces the final training metrics from the checkpoint") {
  CliResult tr = cli({"train", "--synthetic", "--epochs", "2", "--seed", "11",
                      "--out", "cli_e.csv", "--checkpoint", "cli_e.ckpt"});
  REQUIRE(tr.code == 0);

  // final row of the CSV
  std::istringstream csv(slurp("cli_e.csv"));
  std::string line, last;
  while (std::getline(csv, line))
    if (!line.empty() && line[0] != '#' && line[0] != 'e') last = line;
  const size_t c3 = last.rfind(',');
  const size_t c2 = last.rfind(',', c3 - 1);
  const double want_top5 = std::stod(last.substr(c3 + 1));
  const double want_top1 = std::stod(last.substr(c2 + 1, c3 - c2 - 1));

  CliResult ev = cli({"eval", "--checkpoint", "cli_e.ckpt", "--synthetic",
                      "--arch", "tiny_senetv2", "--seed", "11"});
  REQUIRE(ev.code == 0);
  REQUIRE(contains(ev.out, "top1="));
  double got_top1 = 0, got_top5 = 0;
  const size_t t1 = ev.out.find("top1=");
  const size_t t5 = ev.out.find("top5=");
  got_top1 = std::stod(ev.out.substr(t1 + 5));
  got_top5 = std::stod(ev.out.substr(t5 + 5));
  CHECK(got_top1 == doctest::Approx(want_top1).epsilon(1e-4));
  CHECK(got_top5 == doctest::Approx(want_top5).epsilon(1e-4));
  CHECK(got_top5 >= got_top1);
  fs::remove("cli_e.csv");
}

TEST_CASE("eval rejects corrupted checkpoints and arch mismatches") {
  {
    std::fstream f("cli_e.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    REQUIRE(f.good());
    f.write("BADMAG7", 7);
  }
  CliResult bad = cli({"eval", "--checkpoint", "cli_e.ckpt", "--synthetic"});
  CHECK(bad.code == 2);
  CHECK(contains(bad.err, "bad magic"));
  fs::remove("cli_e.ckpt");

  CliResult gone = cli({"eval", "--checkpoint", "nope.ckpt", "--synthetic"});
  CHECK(gone.code == 2);
}

TEST_CASE("config file values apply and flags override them") {
  {
    std::ofstream f("cli_cfg.ini");
    f << "[train]\n"
      << "epochs = 2\n"
      << "arch = tiny_resnet\n"
      << "synthetic = true\n"
      << "out = cli_cfg.csv\n"
      << "checkpoint = cli_cfg.ckpt\n";
  }
  CliResult r = cli({"train", "--config", "cli_cfg.ini"});
  REQUIRE(r.code == 0);
  CHECK(contains(r.out, "arch=tiny_resnet"));
  CHECK(contains(r.out, "epochs=2"));

  CliResult o = cli({"train", "--config", "cli_cfg.ini", "--epochs", "1"});
  REQUIRE(o.code == 0);
  CHECK(contains(o.out, "epochs=1"));  // flag wins
  for (const char* f : {"cli_cfg.ini", "cli_cfg.csv", "cli_cfg.ckpt"})
    fs::remove(f);
}

TEST_CASE("help exits 0, bad flags exit 2") {
  CHECK(cli({"--help"}).code == 0);
  CHECK(cli({"train", "--no-such-flag"}).code == 2);
  CHECK(cli({}).code == 2);  // a subcommand is required
}
