// Acceptance suite: one pass/fail line per criterion, exit 0 only if all
// pass. Tolerances are pinned in code next to each check.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "awconv/checks.hpp"
#include "awconv/data.hpp"
#include "awconv/models.hpp"
#include "awconv/profile.hpp"
#include "awconv/train.hpp"

using namespace awconv;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
  void note(const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

// ---- criterion 1: parameter reproduction, within 0.2%, under one second ----
Outcome criterion1() {
  Outcome out;
  const auto t0 = std::chrono::steady_clock::now();
  struct Case {
    const char* arch;
    Attention att;
    double want_millions;
  };
  const Case cases[] = {
      {"resnet50", Attention::none, 25.56},  {"resnet50", Attention::aw, 25.72},
      {"resnet50", Attention::se, 28.09},    {"resnet101", Attention::none, 44.55},
      {"resnet101", Attention::aw, 44.95},   {"resnet50-cifar", Attention::none, 23.71},
      {"resnet50-cifar", Attention::aw, 23.87}, {"mobilenet", Attention::none, 4.23},
  };
  for (const Case& c : cases) {
    const int64_t got = count_params(build_arch(c.arch, c.att)).total_params;
    const double rel = std::abs(got / 1e6 - c.want_millions) / c.want_millions;
    out.require(rel <= 0.002, fmt("%s/%s: %lld (%.4fM) vs %.2fM rel=%.4f", c.arch,
                                  attention_name(c.att), static_cast<long long>(got), got / 1e6,
                                  c.want_millions, rel));
  }
  const double secs = seconds_since(t0);
  out.require(secs < 1.0, fmt("runtime %.2fs exceeds 1s", secs));
  out.note(fmt("8 architectures within 0.2%%, %.2fs", secs));
  return out;
}

// ---- criterion 2: aw overhead figures ----
Outcome criterion2() {
  Outcome out;
  const ProfileReport base = count_flops(build_arch("resnet50", Attention::none), 224);
  const ProfileReport aw = count_flops(build_arch("resnet50", Attention::aw), 224);
  const int64_t dp = aw.total_params - base.total_params;
  const int64_t df = aw.total_flops - base.total_flops;
  out.require(dp >= 155000 && dp <= 170000, fmt("param overhead %lld outside [155k,170k]",
                                                static_cast<long long>(dp)));
  out.require(millions_floor_str(dp) == "0.16M",
              "param overhead renders as " + millions_floor_str(dp));
  out.require(df >= 8000000 && df <= 14000000,
              fmt("flop overhead %lld outside [8M,14M]", static_cast<long long>(df)));
  out.require(giga_floor_str(df) == "0.01G", "flop overhead renders as " + giga_floor_str(df));
  out.note(fmt("params +%lld (%s), flops +%lld (%s)", static_cast<long long>(dp),
               millions_floor_str(dp).c_str(), static_cast<long long>(df),
               giga_floor_str(df).c_str()));
  return out;
}

// ---- criterion 3: flop reproduction within 7% ----
Outcome criterion3() {
  Outcome out;
  struct Case {
    const char* arch;
    int64_t hw;
    double want_giga;
  };
  const Case cases[] = {{"resnet50", 224, 3.86},
                        {"resnet101", 224, 7.57},
                        {"mobilenet", 224, 0.569},
                        {"resnet50-cifar", 32, 1.22}};
  for (const Case& c : cases) {
    const ProfileReport r = count_flops(build_arch(c.arch, Attention::none), c.hw);
    const double got = static_cast<double>(r.total_flops) / 1e9;
    const double rel = std::abs(got - c.want_giga) / c.want_giga;
    out.require(rel <= 0.07,
                fmt("%s@%lld: %.4fG vs %.3fG rel=%.3f", c.arch, static_cast<long long>(c.hw),
                    got, c.want_giga, rel));
    out.note(fmt("%s %.3fG (%+.1f%%)", c.arch, got, 100 * (got - c.want_giga) / c.want_giga));
  }
  out.require(std::string(flop_convention()).find("1 MAC = 1 FLOP") != std::string::npos,
              "convention line missing from report header");
  return out;
}

// Shared verification run for criteria 4, 5, and 7.
const std::vector<checks::PropertyResult>& verification_results() {
  static const std::vector<checks::PropertyResult> results = [] {
    checks::CheckOptions opts;
    opts.seed = 424242;
    opts.equivalence_trials = 200;
    opts.identity_trials = 50;
    return checks::run_verification_suite(opts);
  }();
  return results;
}

Outcome check_properties(const std::vector<std::string>& names, double time_budget_s) {
  Outcome out;
  const auto t0 = std::chrono::steady_clock::now();
  const auto& results = verification_results();
  for (const std::string& name : names) {
    bool found = false;
    for (const auto& r : results) {
      if (r.name != name) continue;
      found = true;
      out.require(r.pass, name + " failed (max_abs_diff=" + std::to_string(r.max_abs_diff) +
                              (r.note.empty() ? "" : ", " + r.note) + ")");
      out.note(fmt("%s diff=%.2e", name.c_str(), r.max_abs_diff));
    }
    out.require(found, "property " + name + " missing");
  }
  const double secs = seconds_since(t0);
  out.require(secs < time_budget_s, fmt("runtime %.1fs over budget %.0fs", secs, time_budget_s));
  return out;
}

Outcome criterion4() {
  return check_properties({"conv_matches_reference_f64", "conv_matches_reference_f32",
                           "awconv_grouped_matches_per_sample_f64",
                           "awconv_grouped_matches_per_sample_f32"},
                          60.0);
}

Outcome criterion5() {
  return check_properties(
      {"attend_weights_equals_attend_activations", "residual_decomposition",
       "shared_maps_embed_into_full_maps", "channel_pair_maps_embed_into_full_maps",
       "zero_attention_identity"},
      120.0);
}

// ---- criterion 6: gradient correctness over ten seeds ----
Outcome criterion6() {
  Outcome out;
  const auto t0 = std::chrono::steady_clock::now();
  const auto cases = checks::run_gradient_suite(2026, 10, 1e-5, 1e-4);
  double worst = 0;
  for (const auto& c : cases) {
    worst = std::max(worst, c.max_rel_err);
    out.require(c.pass, c.name + " max_rel_err=" + std::to_string(c.max_rel_err) +
                            (c.note.empty() ? "" : " (" + c.note + ")"));
  }
  const double secs = seconds_since(t0);
  out.require(secs < 300.0, fmt("runtime %.1fs exceeds 5min", secs));
  out.note(fmt("%zu cases x 10 seeds, worst rel err %.2e, %.1fs", cases.size(), worst, secs));
  return out;
}

Outcome criterion7() {
  return check_properties({"expand_c1_replication_pattern", "attention_maps_in_unit_interval",
                           "attention_constant_along_c1", "batch_permutation_equivariance"},
                          120.0);
}

// ---- criterion 8: desk-scale training ----
TrainConfig desk_config(const char* attention, uint64_t seed) {
  TrainConfig cfg;
  cfg.model = "tiny";
  cfg.attention = attention;
  cfg.data = "shapes";
  cfg.data_seed = 7;
  cfg.train_n = 512;
  cfg.val_n = 256;
  cfg.image_hw = 32;
  cfg.epochs = 10;
  cfg.batch_size = 32;
  cfg.lr = 0.03;  // batch-32 desk recipe; the documented 0.1 default assumes batch 128
  cfg.momentum = 0.9;
  cfg.weight_decay = 5e-4;
  cfg.seed = seed;
  return cfg;
}

Outcome criterion8() {
  Outcome out;
  double base_sum = 0, aw_sum = 0, base_seed0 = 0, aw_seed0 = 0;
  for (uint64_t seed = 0; seed < 3; ++seed) {
    for (const char* att : {"none", "aw"}) {
      const auto t0 = std::chrono::steady_clock::now();
      const TrainResult r = fit(desk_config(att, seed));
      const double secs = seconds_since(t0);
      out.require(secs < 900.0, fmt("%s seed %llu took %.0fs (budget 900s)", att,
                                    static_cast<unsigned long long>(seed), secs));
      out.note(fmt("%s/seed%llu=%.3f (%.0fs)", att, static_cast<unsigned long long>(seed),
                   r.final_val_acc, secs));
      if (std::string(att) == "none") {
        base_sum += r.final_val_acc;
        if (seed == 0) base_seed0 = r.final_val_acc;
      } else {
        aw_sum += r.final_val_acc;
        if (seed == 0) aw_seed0 = r.final_val_acc;
      }
    }
  }
  out.require(base_seed0 >= 0.95, fmt("baseline seed0 %.3f < 0.95", base_seed0));
  out.require(aw_seed0 >= 0.95, fmt("aw seed0 %.3f < 0.95", aw_seed0));
  const double base_mean = base_sum / 3, aw_mean = aw_sum / 3;
  out.require(aw_mean >= base_mean - 0.02,
              fmt("aw mean %.3f vs baseline mean %.3f - 2%%", aw_mean, base_mean));
  out.note(fmt("means: baseline %.3f, aw %.3f", base_mean, aw_mean));
  return out;
}

// ---- criterion 9: determinism and persistence ----
Outcome criterion9() {
  Outcome out;

  // Two identical runs produce bitwise-identical histories.
  TrainConfig cfg = desk_config("aw", 0);
  cfg.train_n = 96;
  cfg.val_n = 64;
  cfg.image_hw = 16;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  const TrainResult r1 = fit(cfg);
  const TrainResult r2 = fit(cfg);
  for (size_t i = 0; i < r1.history.size(); ++i) {
    out.require(r1.history[i].train_loss == r2.history[i].train_loss &&
                    r1.history[i].val_acc == r2.history[i].val_acc,
                fmt("history diverged at epoch %zu", i + 1));
  }
  out.note("2-epoch histories bitwise identical");

  // Checkpoint round-trip restores bitwise-equal eval logits.
  const std::string dir = "/tmp/awconv_acceptance";
  std::filesystem::create_directories(dir);
  cfg.out_dir = dir;
  const TrainResult r3 = fit(cfg);
  Model<float> restored(build_arch("tiny", Attention::aw, 3), 12345);
  load_checkpoint(r3.checkpoint_path, restored);
  Model<float> twin(build_arch("tiny", Attention::aw, 3), 54321);
  load_checkpoint(r3.checkpoint_path, twin);
  Dataset probe = gen_shapes(99, 16, 3, cfg.image_hw);
  BatchIterator it = batches(probe, 16, 0, 0, Augment::none, false);
  auto batch = it.next();
  out.require(batch.has_value(), "probe batch missing");
  out.require(bitwise_equal(restored.forward_eval(batch->images),
                            twin.forward_eval(batch->images)),
              "checkpoint reload logits differ");
  out.note("checkpoint round-trip bitwise equal");

  // Byte-exact dataset decode/encode.
  std::vector<uint8_t> bytes;
  Rng rng(4242);
  for (int rec = 0; rec < 3; ++rec) {
    bytes.push_back(static_cast<uint8_t>(rec));
    for (int i = 0; i < 3072; ++i) {
      bytes.push_back(static_cast<uint8_t>(rng.uniform_int(0, 255)));
    }
  }
  const std::string fixture = dir + "/fixture.bin";
  {
    std::ofstream f(fixture, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  }
  Dataset d = read_cifar(fixture, CifarKind::cifar10);
  const std::string reencoded = dir + "/fixture2.bin";
  write_cifar10_style(d, reencoded);
  std::ifstream f2(reencoded, std::ios::binary);
  std::vector<uint8_t> bytes2((std::istreambuf_iterator<char>(f2)),
                              std::istreambuf_iterator<char>());
  out.require(bytes2 == bytes, "re-encoded fixture differs from source bytes");
  out.note("fixture decode/encode byte-exact");
  return out;
}

}  // namespace

int main() {
  struct Entry {
    int id;
    const char* name;
    Outcome (*run)();
  };
  const Entry entries[] = {
      {1, "parameter reproduction", criterion1},
      {2, "aw overhead figures", criterion2},
      {3, "flop reproduction", criterion3},
      {4, "oracle equivalence", criterion4},
      {5, "equation identities", criterion5},
      {6, "gradient correctness", criterion6},
      {7, "structural invariants", criterion7},
      {8, "desk-scale training", criterion8},
      {9, "determinism and persistence", criterion9},
  };
  int failures = 0;
  for (const Entry& e : entries) {
    Outcome out;
    try {
      out = e.run();
    } catch (const std::exception& ex) {
      out.pass = false;
      out.detail = std::string("exception: ") + ex.what();
    }
    std::printf("[%s] criterion %d: %s%s%s\n", out.pass ? "PASS" : "FAIL", e.id, e.name,
                out.detail.empty() ? "" : " -- ", out.detail.c_str());
    std::fflush(stdout);
    if (!out.pass) ++failures;
  }
  if (failures > 0) {
    std::printf("ACCEPTANCE FAILED: %d criterion(s)\n", failures);
    return 1;
  }
  std::printf("ACCEPTANCE PASSED: 9/9 criteria\n");
  return 0;
}
