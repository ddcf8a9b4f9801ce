// Command-line front end: verification suites, gradient checking, analytic
// profiling, desk-scale training/evaluation, lowering benchmarks, and dataset
// generation. Exit codes: 0 all checks passed, 1 check failure or divergence,
// 2 usage/format error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "awconv/aw_conv.hpp"
#include "awconv/checks.hpp"
#include "awconv/data.hpp"
#include "awconv/models.hpp"
#include "awconv/profile.hpp"
#include "awconv/train.hpp"

using namespace awconv;

namespace {

int run_verify(uint64_t seed, int64_t equivalence_trials, int64_t identity_trials) {
  checks::CheckOptions opts;
  opts.seed = seed;
  opts.equivalence_trials = equivalence_trials;
  opts.identity_trials = identity_trials;
  const auto results = checks::run_verification_suite(opts);
  bool all_pass = true;
  for (const auto& r : results) {
    std::printf("%s %-42s max_abs_diff=%.3e trials=%lld%s%s\n", r.pass ? "PASS" : "FAIL",
                r.name.c_str(), r.max_abs_diff, static_cast<long long>(r.trials),
                r.note.empty() ? "" : " note=", r.note.c_str());
    all_pass = all_pass && r.pass;
  }
  std::printf("%s: %zu properties\n", all_pass ? "OK" : "FAILED", results.size());
  return all_pass ? 0 : 1;
}

int run_gradcheck(uint64_t seed, int64_t num_seeds, double eps, double tol) {
  const auto cases = checks::run_gradient_suite(seed, num_seeds, eps, tol);
  bool all_pass = true;
  for (const auto& c : cases) {
    std::printf("%s %-28s max_rel_err=%.3e%s%s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(),
                c.max_rel_err, c.note.empty() ? "" : " note=", c.note.c_str());
    all_pass = all_pass && c.pass;
  }
  std::printf("%s: %zu cases, %lld seeds, eps=%g tol=%g\n", all_pass ? "OK" : "FAILED",
              cases.size(), static_cast<long long>(num_seeds), eps, tol);
  return all_pass ? 0 : 1;
}

int run_profile(const std::string& arch, const std::string& attention, int64_t input_hw,
                int64_t classes, const std::string& format, bool per_layer) {
  const Attention att = parse_attention(attention);
  const LayerGraph graph = build_arch(arch, att, classes);
  const ProfileReport report = count_flops(graph, input_hw);
  if (format == "records") {
    std::fputs(format_records(report, true).c_str(), stdout);
  } else {
    std::fputs(format_report(report, true, per_layer).c_str(), stdout);
    std::printf("params: %s  flops: %s\n", millions_str(report.total_params).c_str(),
                giga_str(report.total_flops).c_str());
  }
  if (att != Attention::none) {
    const ProfileReport base = count_flops(build_arch(arch, Attention::none, classes), input_hw);
    const int64_t dp = report.total_params - base.total_params;
    const int64_t df = report.total_flops - base.total_flops;
    if (format == "records") {
      std::printf("overhead attention=%s params=%lld flops=%lld\n", attention.c_str(),
                  static_cast<long long>(dp), static_cast<long long>(df));
    } else {
      std::printf("%s overhead vs baseline: %s params (%lld), %s flops (%lld)\n",
                  attention.c_str(), millions_floor_str(dp).c_str(), static_cast<long long>(dp),
                  giga_floor_str(df).c_str(), static_cast<long long>(df));
    }
  }
  return 0;
}

int run_train(const TrainConfig& cfg) {
  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);
  const TrainResult result = fit(cfg);
  for (const auto& s : result.history) {
    std::printf("epoch=%lld train_loss=%.9g val_acc=%.6g\n", static_cast<long long>(s.epoch),
                s.train_loss, s.val_acc);
  }
  std::printf("final_val_acc=%.6g\n", result.final_val_acc);
  if (!result.checkpoint_path.empty()) {
    std::printf("checkpoint=%s\n", result.checkpoint_path.c_str());
  }
  return 0;
}

int run_eval(const std::string& checkpoint, const std::vector<std::string>& overrides) {
  CheckpointInfo info = read_checkpoint_info(checkpoint);
  TrainConfig cfg = info.config;
  for (const std::string& kv : overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("override must be key=value: " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  Dataset val = load_val_dataset(cfg);
  const int64_t classes = cfg.classes < 0 ? val.classes : cfg.classes;
  const Attention att = parse_attention(cfg.attention);
  double acc = 0;
  if (info.dtype == DType::f32) {
    Model<float> model(build_arch(cfg.model, att, classes), cfg.seed);
    load_checkpoint(checkpoint, model);
    acc = evaluate(model, val);
  } else {
    Model<double> model(build_arch(cfg.model, att, classes), cfg.seed);
    load_checkpoint(checkpoint, model);
    acc = evaluate(model, val);
  }
  std::printf("val_acc=%.6g n=%lld data=%s\n", acc, static_cast<long long>(val.size()),
              cfg.data.c_str());
  return 0;
}

// Times the per-sample loop against the grouped lowering over a shape sweep.
int run_bench(int64_t reps) {
  struct Case {
    int64_t batch, ch, hw, kernel;
  };
  const Case cases[] = {{4, 16, 16, 3}, {8, 32, 16, 3}, {8, 64, 8, 3},
                        {16, 32, 32, 3}, {32, 64, 8, 3}};
  std::printf("%-24s %12s %12s %8s\n", "case", "loop_ms", "grouped_ms", "speedup");
  Rng rng(0);
  for (const Case& c : cases) {
    Tensor<float> x({c.batch, c.ch, c.hw, c.hw});
    Tensor<float> ak({c.batch, c.ch, c.ch, c.kernel, c.kernel});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal());
    for (int64_t i = 0; i < ak.numel(); ++i) ak[i] = static_cast<float>(rng.normal());
    auto time_ms = [&](auto&& fn) {
      fn();  // warm up
      double best = 1e100;
      for (int64_t r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        best = std::min(best, ms);
      }
      return best;
    };
    const double loop_ms = time_ms([&] { aw_conv2d_per_sample(x, ak, 1, 1); });
    const double grouped_ms = time_ms([&] { aw_conv2d(x, ak, 1, 1); });
    char label[64];
    std::snprintf(label, sizeof(label), "N=%lld C=%lld HW=%lld k=%lld",
                  static_cast<long long>(c.batch), static_cast<long long>(c.ch),
                  static_cast<long long>(c.hw), static_cast<long long>(c.kernel));
    std::printf("%-24s %12.3f %12.3f %7.2fx\n", label, loop_ms, grouped_ms,
                loop_ms / grouped_ms);
  }
  std::printf("informational only; correctness is gated by `verify`\n");
  return 0;
}

int run_gen_data(const std::string& out, uint64_t seed, int64_t n, int64_t classes, int64_t hw) {
  Dataset d = gen_shapes(seed, n, classes, hw);
  write_cifar10_style(d, out);
  std::printf("wrote %lld records (%lldx%lld, %lld classes) to %s\n", static_cast<long long>(n),
              static_cast<long long>(hw), static_cast<long long>(hw),
              static_cast<long long>(classes), out.c_str());
  if (hw != 32) {
    std::printf("note: record length is %lld bytes; the cifar10 reader expects 32x32\n",
                static_cast<long long>(1 + 3 * hw * hw));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AW-convolution attention library: verification, profiling, and training"};
  app.require_subcommand(1);

  // verify
  auto* verify = app.add_subcommand("verify", "run oracle-equivalence and invariant suites");
  uint64_t v_seed = 12345;
  int64_t v_trials = 200, v_identity = 50;
  verify->add_option("--seed", v_seed, "random seed");
  verify->add_option("--trials", v_trials, "equivalence trials");
  verify->add_option("--identity-trials", v_identity, "identity/invariant trials");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  uint64_t g_seed = 1000;
  int64_t g_seeds = 10;
  double g_eps = 1e-5, g_tol = 1e-4;
  gradcheck->add_option("--seed", g_seed, "base seed");
  gradcheck->add_option("--seeds", g_seeds, "number of seeds");
  gradcheck->add_option("--eps", g_eps, "central-difference step");
  gradcheck->add_option("--tol", g_tol, "max relative error");

  // profile
  auto* profile = app.add_subcommand("profile", "analytic parameter/FLOP accounting");
  std::string p_arch = "resnet50", p_attention = "none", p_format = "table";
  int64_t p_input = 0, p_classes = -1;
  bool p_layers = false;
  profile->add_option("--arch", p_arch, "resnet50|resnet101|resnet50-cifar|mobilenet|tiny");
  profile->add_option("--attention", p_attention, "none|aw|se|cbam|aw-se|aw-cbam");
  profile->add_option("--input", p_input, "input resolution (0: architecture default)");
  profile->add_option("--classes", p_classes, "classifier classes (-1: default)");
  profile->add_option("--format", p_format, "table|records");
  profile->add_flag("--per-layer", p_layers, "print per-layer rows");

  // train
  auto* train = app.add_subcommand("train", "desk-scale training loop");
  std::string t_config;
  std::vector<std::string> t_overrides;
  train->add_option("--config", t_config, "key=value config file");
  train->add_option("--set", t_overrides, "config override KEY=VALUE (repeatable)");
  uint64_t t_seed = 0;
  int64_t t_epochs = -1;
  std::string t_out, t_model, t_attention, t_data;
  train->add_option("--seed", t_seed, "run seed");
  train->add_option("--epochs", t_epochs, "epoch count");
  train->add_option("--out", t_out, "output directory for checkpoint/history");
  train->add_option("--model", t_model, "architecture");
  train->add_option("--attention", t_attention, "attention variant");
  train->add_option("--data", t_data, "shapes|cifar10|cifar100");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string e_checkpoint;
  std::vector<std::string> e_overrides;
  eval->add_option("--checkpoint", e_checkpoint, "checkpoint path")->required();
  eval->add_option("--set", e_overrides, "config override KEY=VALUE (repeatable)");

  // bench
  auto* bench = app.add_subcommand("bench", "time per-sample loop vs grouped lowering");
  int64_t b_reps = 5;
  bench->add_option("--reps", b_reps, "repetitions per case");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a shapes dataset to disk");
  std::string d_out = "shapes.bin";
  uint64_t d_seed = 0;
  int64_t d_n = 1024, d_classes = 3, d_hw = 32;
  gen->add_option("--out", d_out, "output file");
  gen->add_option("--seed", d_seed, "generator seed");
  gen->add_option("--n", d_n, "number of samples");
  gen->add_option("--classes", d_classes, "number of classes (2 or 3)");
  gen->add_option("--hw", d_hw, "image side length");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  try {
    if (verify->parsed()) return run_verify(v_seed, v_trials, v_identity);
    if (gradcheck->parsed()) return run_gradcheck(g_seed, g_seeds, g_eps, g_tol);
    if (profile->parsed()) {
      const int64_t input = p_input > 0 ? p_input : build_arch(p_arch, Attention::none).default_hw;
      return run_profile(p_arch, p_attention, input, p_classes, p_format, p_layers);
    }
    if (train->parsed()) {
      TrainConfig cfg = t_config.empty() ? TrainConfig{} : TrainConfig::from_file(t_config);
      for (const std::string& kv : t_overrides) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("override must be key=value: " + kv);
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (train->count("--seed") > 0) cfg.seed = t_seed;
      if (t_epochs > 0) cfg.epochs = t_epochs;
      if (!t_out.empty()) cfg.out_dir = t_out;
      if (!t_model.empty()) cfg.model = t_model;
      if (!t_attention.empty()) cfg.attention = t_attention;
      if (!t_data.empty()) cfg.data = t_data;
      return run_train(cfg);
    }
    if (eval->parsed()) return run_eval(e_checkpoint, e_overrides);
    if (bench->parsed()) return run_bench(b_reps);
    if (gen->parsed()) return run_gen_data(d_out, d_seed, d_n, d_classes, d_hw);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return 2;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "shape error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
