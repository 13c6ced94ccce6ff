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

#include "saekit/cli_app.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "saekit/checkpoint.hpp"
#include "saekit/data.hpp"
#include "saekit/models.hpp"
#include "saekit/train.hpp"

namespace saekit {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitNumerical = 1;
constexpr int kExitUsage = 2;

// Synthetic-run constants: blobs with 100 samples per class, 12x12 images.
constexpr int64_t kSyntheticPerClass = 100;
constexpr int64_t kSyntheticHw = 12;

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

/// One ordered key=value line naming every setting that applied, defaults
/// included, so a run is reproducible from its own output.
class ConfigEcho {
 public:
  void add(const std::string& key, const std::string& value) {
    items_.emplace_back(key, value);
  }
  void add(const std::string& key, int64_t value) {
    add(key, std::to_string(value));
  }
  void add(const std::string& key, uint64_t value) {
    add(key, std::to_string(value));
  }
  void add(const std::string& key, double value) { add(key, fmt_real(value)); }

  std::string line(const std::string& command) const {
    std::string s = "effective-config: command=" + command;
    for (const auto& [k, v] : items_) s += " " + k + "=" + v;
    return s;
  }

 private:
  std::vector<std::pair<std::string, std::string>> items_;
};

struct ModelFlags {
  std::string arch = "tiny_senetv2";
  int64_t classes = -1;  // -1: resolved per command/dataset
  int64_t reduction = 32;
  int64_t cardinality = 4;
  int64_t groups = 32;

  ModelSpec spec(int64_t resolved_classes) const {
    ModelSpec s;
    s.arch = arch_from_string(arch);
    s.num_classes = resolved_classes;
    s.reduction = reduction;
    s.cardinality = cardinality;
    s.groups = groups;
    return s;
  }

  void echo(ConfigEcho& echo, int64_t resolved_classes) const {
    echo.add("arch", arch);
    echo.add("classes", resolved_classes);
    echo.add("reduction", reduction);
    echo.add("cardinality", cardinality);
    echo.add("groups", groups);
  }
};

void add_model_flags(CLI::App* cmd, ModelFlags& mf, const char* default_arch) {
  mf.arch = default_arch;
  cmd->add_option("--arch", mf.arch, "Architecture (" + arch_names() + ")")
      ->capture_default_str();
  cmd->add_option("--classes", mf.classes, "Number of output classes");
  cmd->add_option("--reduction", mf.reduction, "SE/SaE reduction ratio r")
      ->capture_default_str();
  cmd->add_option("--cardinality", mf.cardinality, "SaE branch count k")
      ->capture_default_str();
  cmd->add_option("--groups", mf.groups, "ResNeXt 3x3 conv groups")
      ->capture_default_str();
}

struct DataFlags {
  std::string dataset;
  bool synthetic = false;
};

void add_data_flags(CLI::App* cmd, DataFlags& df) {
  auto* ds = cmd->add_option("--dataset", df.dataset,
                             "Dataset directory (CIFAR-10 binary batches or "
                             "images.f32le/labels.u32le)");
  auto* sy = cmd->add_flag("--synthetic", df.synthetic,
                           "Use the built-in separable synthetic blobs");
  ds->excludes(sy);
}

Dataset resolve_dataset(const DataFlags& df, int64_t classes, uint64_t seed,
                        bool train_split) {
  if (df.synthetic) {
    return synthetic_blobs(static_cast<int32_t>(classes), kSyntheticPerClass,
                           kSyntheticHw, seed_for(seed, "synthetic"));
  }
  if (df.dataset.empty())
    throw ConfigError("either --dataset or --synthetic is required");
  namespace fs = std::filesystem;
  if (!fs::exists(df.dataset))
    throw ConfigError("dataset path '" + df.dataset + "' does not exist");
  if (fs::exists(fs::path(df.dataset) / "data_batch_1.bin")) {
    auto [train, test] = load_cifar10(df.dataset);
    return train_split ? std::move(train) : std::move(test);
  }
  return load_dataset_dir(df.dataset);
}

/// Training and eval share one input pipeline: per-channel normalization
/// with the default mean 0.5 / std 0.5.
Dataset prepare(Dataset ds) {
  ds.images = normalize(ds.images, {0.5f, 0.5f, 0.5f}, {0.5f, 0.5f, 0.5f});
  return ds;
}

int cmd_params(const ModelFlags& mf, std::ostream& out) {
  const int64_t classes = mf.classes < 0 ? 1000 : mf.classes;
  ModelSpec spec = mf.spec(classes);
  auto m = build_model<float>(spec, 1);

  ConfigEcho echo;
  mf.echo(echo, classes);
  out << "# " << echo.line("params") << "\n";

  for (const auto& [section, count] : m.breakdown())
    out << section << " " << count << "\n";
  out << "total " << m.count_params() << "\n";

  const bool tiny =
      spec.arch == Arch::tiny_resnet || spec.arch == Arch::tiny_senetv2;
  const Arch base_arch = tiny ? Arch::tiny_resnet : Arch::resnet50;
  ModelSpec base = spec;
  base.arch = base_arch;
  const int64_t delta =
      m.count_params() - build_model<float>(base, 1).count_params();
  out << "delta_vs_" << to_string(base_arch) << " " << delta << "\n";
  return kExitOk;
}

struct GradcheckFlags {
  uint64_t seed = 1;
  double eps = 1e-5;
  int64_t max_elems = 8;
  std::string inject_bad_grad;  // test fixture: corrupt one layer's gradient
};

int cmd_gradcheck(const ModelFlags& mf, const GradcheckFlags& gf,
                  std::ostream& out) {
  const int64_t classes = mf.classes < 0 ? 10 : mf.classes;
  ModelSpec spec = mf.spec(classes);
  if (spec.arch != Arch::tiny_resnet && spec.arch != Arch::tiny_senetv2)
    throw ConfigError(
        "gradcheck runs the tiny architectures only (tiny_resnet, "
        "tiny_senetv2); finite differences over a -50 model exceed the "
        "desk-scale budget");
  if (gf.eps <= 0) throw ConfigError("--eps must be > 0");

  ConfigEcho echo;
  mf.echo(echo, classes);
  echo.add("seed", gf.seed);
  echo.add("eps", gf.eps);
  echo.add("max-elems", gf.max_elems);
  out << "# " << echo.line("gradcheck") << "\n";

  auto m = build_model<double>(spec, gf.seed);
  m.set_mode(Mode::train);

  Rng in_rng(seed_for(gf.seed, "gradcheck-input"));
  TensorD x({2, 3, 8, 8});
  for (int64_t i = 0; i < x.size(); ++i) x[i] = in_rng.uniform();
  std::vector<int32_t> labels = {0, static_cast<int32_t>(classes - 1)};

  // analytic gradients from one taped forward/backward
  std::map<std::string, TensorD> analytic;
  {
    ForwardGraph<double> fg = forward_graph(m, x);
    Var<double> loss = softmax_cross_entropy(fg.logits, labels);
    fg.tape->backward(loss);
    for (const auto& [name, var] : fg.params)
      if (fg.tape->has_grad(var)) analytic.emplace(name, fg.tape->grad(var));
  }
  if (!gf.inject_bad_grad.empty()) {
    auto it = analytic.find(gf.inject_bad_grad);
    if (it == analytic.end())
      throw ConfigError("--inject-bad-grad: no trainable tensor named '" +
                        gf.inject_bad_grad + "'");
    for (int64_t i = 0; i < it->second.size(); ++i)
      it->second[i] = it->second[i] * 10.0 + 1.0;
  }

  auto loss_value = [&] {
    ForwardGraph<double> fg = forward_graph(m, x);
    return softmax_cross_entropy(fg.logits, labels).value()[0];
  };

  const double tolerance = 1e-3;
  double worst_overall = 0;
  int64_t layers = 0;
  bool all_pass = true;
  for (const auto& name : m.names()) {
    auto it = analytic.find(name);
    if (it == analytic.end()) continue;
    TensorD& w = m.tensor(name);
    const TensorD& g = it->second;

    Rng pick(seed_for(gf.seed, "probe-" + name));
    const int64_t probes = std::min<int64_t>(gf.max_elems, w.size());
    double worst = 0;
    for (int64_t p = 0; p < probes; ++p) {
      const int64_t i = w.size() <= gf.max_elems
                            ? p
                            : static_cast<int64_t>(pick.next_u64() %
                                                   static_cast<uint64_t>(w.size()));
      const double orig = w[i];
      w[i] = orig + gf.eps;
      const double up = loss_value();
      w[i] = orig - gf.eps;
      const double down = loss_value();
      w[i] = orig;
      const double numeric = (up - down) / (2 * gf.eps);
      const double denom = std::max({std::abs(g[i]), std::abs(numeric), 1e-12});
      worst = std::max(worst, std::abs(g[i] - numeric) / denom);
    }
    const bool pass = worst < tolerance;
    all_pass = all_pass && pass;
    worst_overall = std::max(worst_overall, worst);
    ++layers;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3e", worst);
    out << "layer " << name << " max_rel_err " << buf << " "
        << (pass ? "PASS" : "FAIL") << "\n";
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3e", worst_overall);
  out << "gradcheck " << (all_pass ? "PASS" : "FAIL") << " (worst " << buf
      << " over " << layers << " layers, eps " << fmt_real(gf.eps) << ")\n";
  return all_pass ? kExitOk : kExitNumerical;
}

struct TrainFlags {
  std::string optimizer = "sgd_momentum";
  double lr = -1;  // resolved per optimizer
  int64_t epochs = 30;
  int64_t batch_size = 16;
  uint64_t seed = 1;
  std::string out_csv = "metrics.csv";
  std::string checkpoint = "model.ckpt";
};

std::vector<std::string> echo_train_config(const ModelFlags& mf,
                                           const DataFlags& df, int64_t classes,
                                           const TrainConfig& cfg) {
  ConfigEcho echo;
  mf.echo(echo, classes);
  echo.add("dataset", df.synthetic ? std::string("synthetic") : df.dataset);
  echo.add("optimizer", to_string(cfg.optimizer));
  echo.add("lr", cfg.base_lr);
  echo.add("momentum", cfg.momentum);
  echo.add("weight_decay", cfg.weight_decay);
  echo.add("adam_beta1", cfg.adam_beta1);
  echo.add("adam_beta2", cfg.adam_beta2);
  echo.add("lr_step", cfg.lr_step);
  echo.add("lr_decay", cfg.lr_decay);
  echo.add("batch_size", cfg.batch_size);
  echo.add("epochs", cfg.epochs);
  echo.add("seed", cfg.seed);
  return {echo.line("train")};
}

int cmd_train(const ModelFlags& mf, const TrainFlags& tf, const DataFlags& df,
              std::ostream& out) {
  const int64_t default_classes = df.synthetic ? 3 : -1;
  int64_t classes = mf.classes >= 0 ? mf.classes : default_classes;

  Dataset raw = resolve_dataset(df, classes < 0 ? 0 : classes, tf.seed, true);
  if (classes < 0) classes = raw.class_count;
  Dataset ds = prepare(std::move(raw));

  TrainConfig cfg;
  cfg.optimizer = optimizer_from_string(tf.optimizer);
  cfg.base_lr = tf.lr > 0 ? tf.lr : TrainConfig::default_lr(cfg.optimizer);
  cfg.batch_size = tf.batch_size;
  cfg.epochs = tf.epochs;
  cfg.seed = tf.seed;

  auto comments = echo_train_config(mf, df, classes, cfg);
  for (const auto& c : comments) out << "# " << c << "\n";

  auto m = build_model<float>(mf.spec(classes), tf.seed);
  std::vector<MetricsRecord> records = train(m, ds, cfg);

  {
    std::ofstream csv(tf.out_csv);
    if (!csv) throw ConfigError("cannot write metrics CSV '" + tf.out_csv + "'");
    write_metrics_csv(csv, records, comments);
  }
  save_checkpoint(m, tf.checkpoint);

  write_metrics_csv(out, records);
  char buf[96];
  std::snprintf(buf, sizeof(buf), "final top1=%.4f top5=%.4f\n",
                records.back().top1, records.back().top5);
  out << buf;
  out << "wrote " << tf.out_csv << " and " << tf.checkpoint << "\n";
  return kExitOk;
}

struct EvalFlags {
  std::string checkpoint;
  uint64_t seed = 1;
};

int cmd_eval(const ModelFlags& mf, const EvalFlags& ef, const DataFlags& df,
             std::ostream& out) {
  const int64_t default_classes = df.synthetic ? 3 : -1;
  int64_t classes = mf.classes >= 0 ? mf.classes : default_classes;
  Dataset raw = resolve_dataset(df, classes < 0 ? 0 : classes, ef.seed, true);
  if (classes < 0) classes = raw.class_count;
  Dataset ds = prepare(std::move(raw));

  ConfigEcho echo;
  mf.echo(echo, classes);
  echo.add("dataset", df.synthetic ? std::string("synthetic") : df.dataset);
  echo.add("checkpoint", ef.checkpoint);
  echo.add("seed", ef.seed);
  out << "# " << echo.line("eval") << "\n";

  auto m = build_model<float>(mf.spec(classes), 1);
  load_checkpoint(m, ef.checkpoint);  // names+shapes double as the arch check
  m.set_mode(Mode::eval);

  auto [top1, top5] = evaluate(m, ds);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "top1=%.4f top5=%.4f\n", top1, top5);
  out << buf;
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"saekit: SE/SaE residual networks with exact parameter "
               "accounting and a desk-scale training harness"};
  app.require_subcommand(1);
  // key-value config file with one [section] per subcommand; command-line
  // flags override file values
  app.set_config("--config", "",
                 "Config file ([train]/[eval]/... sections); flags override "
                 "file values");
  app.fallthrough(true);

  ModelFlags params_mf, grad_mf, train_mf, eval_mf;
  GradcheckFlags gf;
  TrainFlags tf;
  EvalFlags ef;
  DataFlags train_df, eval_df;

  auto* params = app.add_subcommand(
      "params", "Print total and per-section parameter counts");
  add_model_flags(params, params_mf, "senetv2_50");

  auto* gradcheck = app.add_subcommand(
      "gradcheck",
      "Check every layer's analytic gradient against central differences");
  add_model_flags(gradcheck, grad_mf, "tiny_senetv2");
  gradcheck->add_option("--seed", gf.seed, "Model/init seed")
      ->capture_default_str();
  gradcheck->add_option("--eps", gf.eps, "Finite-difference step")
      ->capture_default_str();
  gradcheck->add_option("--max-elems", gf.max_elems,
                        "Probed elements per tensor")
      ->capture_default_str();
  gradcheck
      ->add_option("--inject-bad-grad", gf.inject_bad_grad,
                   "Corrupt the named layer's analytic gradient (negative "
                   "control)")
      ->group("");  // hidden

  auto* train_cmd = app.add_subcommand(
      "train", "Train a model and write metrics CSV + checkpoint");
  add_model_flags(train_cmd, train_mf, "tiny_senetv2");
  add_data_flags(train_cmd, train_df);
  train_cmd->add_option("--optimizer", tf.optimizer, "sgd_momentum or adam")
      ->capture_default_str();
  train_cmd->add_option("--lr", tf.lr,
                        "Base learning rate (default 0.01 sgd, 0.001 adam)");
  train_cmd->add_option("--epochs", tf.epochs, "Training epochs")
      ->capture_default_str();
  train_cmd->add_option("--batch-size", tf.batch_size, "Batch size")
      ->capture_default_str();
  train_cmd->add_option("--seed", tf.seed, "Run seed")->capture_default_str();
  train_cmd->add_option("--out", tf.out_csv, "Metrics CSV path")
      ->capture_default_str();
  train_cmd->add_option("--checkpoint", tf.checkpoint, "Checkpoint output path")
      ->capture_default_str();

  auto* eval_cmd = app.add_subcommand(
      "eval", "Evaluate a checkpoint; prints top1=<x> top5=<y>");
  add_model_flags(eval_cmd, eval_mf, "tiny_senetv2");
  add_data_flags(eval_cmd, eval_df);
  eval_cmd->add_option("--checkpoint", ef.checkpoint, "Checkpoint to load")
      ->required();
  eval_cmd->add_option("--seed", ef.seed,
                       "Seed for --synthetic dataset regeneration")
      ->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (params->parsed()) return cmd_params(params_mf, out);
    if (gradcheck->parsed()) return cmd_gradcheck(grad_mf, gf, out);
    if (train_cmd->parsed()) return cmd_train(train_mf, tf, train_df, out);
    if (eval_cmd->parsed()) return cmd_eval(eval_mf, ef, eval_df, out);
  } catch (const std::runtime_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, out, err);
}

}  // namespace saekit
