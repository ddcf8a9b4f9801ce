#include "awconv/models.hpp"
#include "awconv/profile.hpp"
#include "awconv/rng.hpp"
#include "doctest.h"

using namespace awconv;

namespace {

int64_t graph_params(const LayerGraph& g) { return count_params(g).total_params; }

// Branch parameters added when a conv becomes an AW conv.
int64_t aw_branch_params(int64_t c1, int64_t c2) {
  const int64_t mid = std::max<int64_t>(c1 / 16, 1);
  return c1 * mid + mid * c2 + 2 * mid + 2 * c2;
}

}  // namespace

TEST_CASE("bottleneck parameter arithmetic") {
  LayerGraph g;
  g.input_channels = 256;
  BlockSpec spec;
  spec.in_ch = 256;
  spec.mid_ch = 64;
  spec.out_ch = 256;
  spec.stride = 1;
  spec.attention = Attention::none;
  append_bottleneck(g, spec, "b", -1);
  // conv1 16384 + conv2 36864 + conv3 16384 + norms 2*(64+64+256) = 70400.
  CHECK(graph_params(g) == 70400);

  LayerGraph ga;
  ga.input_channels = 256;
  spec.attention = Attention::aw;
  append_bottleneck(ga, spec, "b", -1);
  CHECK(graph_params(ga) - graph_params(g) == 648);
  CHECK(aw_branch_params(64, 64) == 648);

  BlockSpec bad = spec;
  bad.out_ch = 128;
  CHECK_THROWS_AS(append_bottleneck(ga, bad, "bad", -1), UsageError);
}

TEST_CASE("resnet50 family parameter counts") {
  CHECK(graph_params(build_resnet(50, Stem::imagenet, 1000, Attention::none)) == 25557032);
  CHECK(graph_params(build_resnet(50, Stem::imagenet, 1000, Attention::aw)) == 25722240);
  CHECK(graph_params(build_resnet(50, Stem::imagenet, 1000, Attention::se)) == 28088024);
  CHECK(graph_params(build_resnet(101, Stem::imagenet, 1000, Attention::none)) == 44549160);
  CHECK(graph_params(build_resnet(50, Stem::cifar, 100, Attention::none)) == 23705252);
  CHECK(graph_params(build_resnet(50, Stem::cifar, 100, Attention::aw)) == 23870460);
  CHECK_THROWS_AS(build_resnet(34, Stem::imagenet, 1000, Attention::none), UsageError);
}

TEST_CASE("aw parameter delta equals the closed-form branch sum") {
  // ResNet50: 16 bottlenecks at widths 64/128/256/512.
  const int64_t want = 3 * aw_branch_params(64, 64) + 4 * aw_branch_params(128, 128) +
                       6 * aw_branch_params(256, 256) + 3 * aw_branch_params(512, 512);
  const int64_t base = graph_params(build_resnet(50, Stem::imagenet, 1000, Attention::none));
  const int64_t aw = graph_params(build_resnet(50, Stem::imagenet, 1000, Attention::aw));
  CHECK(aw - base == want);
  CHECK(want == 165208);

  // Tiny model: second conv of each basic block, widths 16/32/64, 2 blocks.
  const int64_t tiny_want = 2 * aw_branch_params(16, 16) + 2 * aw_branch_params(32, 32) +
                            2 * aw_branch_params(64, 64);
  const int64_t tiny_base = graph_params(build_tiny_resnet(3, Attention::none));
  const int64_t tiny_aw = graph_params(build_tiny_resnet(3, Attention::aw));
  CHECK(tiny_aw - tiny_base == tiny_want);

  // MobileNet: pointwise convs of blocks 2,4,6,8,10,12.
  const int64_t mn_want = aw_branch_params(64, 128) + aw_branch_params(128, 256) +
                          aw_branch_params(256, 512) + 2 * aw_branch_params(512, 512) +
                          aw_branch_params(512, 1024);
  const int64_t mn_base = graph_params(build_mobilenet(1000, Attention::none));
  const int64_t mn_aw = graph_params(build_mobilenet(1000, Attention::aw));
  CHECK(mn_aw - mn_base == mn_want);
  CHECK(aw_branch_params(512, 512) == 33856);
}

TEST_CASE("mobilenet baseline numbers") {
  LayerGraph g = build_mobilenet(1000, Attention::none);
  CHECK(graph_params(g) == 4231976);
  const ProfileReport r = count_flops(g, 224);
  CHECK(static_cast<double>(r.total_flops) / 1e9 == doctest::Approx(0.569).epsilon(0.07));
  CHECK_THROWS_AS(build_mobilenet(1000, Attention::se), UsageError);
}

TEST_CASE("tiny model builds, stays small, and runs forward") {
  for (Attention a : {Attention::none, Attention::aw, Attention::se, Attention::cbam,
                      Attention::aw_se, Attention::aw_cbam}) {
    LayerGraph g = build_tiny_resnet(3, a);
    CHECK(graph_params(g) < 1000000);
    Model<float> m(g, 0);
    CHECK(m.param_count() == graph_params(g));
    Rng rng(50);
    Tensor<float> x({4, 3, 32, 32});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal());
    Tensor<float> logits = m.forward_eval(x);
    CHECK(logits.shape() == Shape{4, 3});
    CHECK(all_finite(logits));
  }
}

TEST_CASE("attention variants never change interface shapes") {
  Rng rng(51);
  Tensor<float> x({2, 3, 32, 32});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal());
  Model<float> base(build_tiny_resnet(3, Attention::none), 1);
  Tensor<float> ref = base.forward_eval(x);
  for (Attention a : {Attention::aw, Attention::se, Attention::cbam, Attention::aw_cbam}) {
    Model<float> m(build_tiny_resnet(3, a), 1);
    CHECK(m.forward_eval(x).shape() == ref.shape());
  }
}

TEST_CASE("shared layers initialize identically across variants") {
  Model<float> base(build_tiny_resnet(3, Attention::none), 7);
  Model<float> aw(build_tiny_resnet(3, Attention::aw), 7);
  auto* bw = base.find_param("layer2.0.conv2.weight");
  auto* aww = aw.find_param("layer2.0.conv2.weight");
  REQUIRE(bw != nullptr);
  REQUIRE(aww != nullptr);
  CHECK(bitwise_equal(bw->value, aww->value));
  CHECK(aw.find_param("layer2.0.conv2.attn.pc1.weight") != nullptr);
  CHECK(base.find_param("layer2.0.conv2.attn.pc1.weight") == nullptr);
}

TEST_CASE("zero-attention hook reduces the aw variant to the baseline") {
  Rng rng(52);
  Tensor<float> x({4, 3, 32, 32});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal());
  Model<float> base(build_tiny_resnet(3, Attention::none), 9);
  Model<float> aw(build_tiny_resnet(3, Attention::aw), 9);
  ForwardHooks<float> hooks;
  hooks.zero_attention = true;
  Tensor<float> a = base.forward_eval(x);
  Tensor<float> b = aw.forward_eval(x, &hooks);
  CHECK(bitwise_equal(a, b));
}

TEST_CASE("per-layer attention injection hook") {
  Rng rng(53);
  Tensor<float> x({2, 3, 32, 32});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal());
  Model<float> aw(build_tiny_resnet(3, Attention::aw), 9);
  std::map<std::string, Tensor<float>> injected;
  for (const auto& spec : aw.graph().layers) {
    if (spec.kind == LayerKind::aw_conv) injected.emplace(spec.name, Tensor<float>::zeros({1}));
  }
  ForwardHooks<float> hooks;
  hooks.injected_attention = &injected;
  Model<float> base(build_tiny_resnet(3, Attention::none), 9);
  CHECK(bitwise_equal(base.forward_eval(x), aw.forward_eval(x, &hooks)));
}

TEST_CASE("model gradcheck smoke pass per attention variant") {
  // Spot-checked elements keep the finite-difference sweep tractable.
  Rng rng(54);
  Tensor<double> x({8, 3, 8, 8});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
  std::vector<int32_t> labels;
  for (int i = 0; i < 8; ++i) labels.push_back(static_cast<int32_t>(rng.uniform_int(0, 2)));

  for (Attention a : {Attention::none, Attention::aw, Attention::se, Attention::cbam,
                      Attention::aw_se, Attention::aw_cbam}) {
    Model<double> m(build_tiny_resnet(3, a), 13);
    std::vector<Tensor<double>> params;
    for (const auto& e : m.params()) params.push_back(e.value);
    GradCheckReport r = grad_check(
        [&](Tape<double>& tape, std::vector<Node<double>>& p) {
          Node<double> logits = m.forward(tape, p, x, false, nullptr);
          return nn::softmax_cross_entropy(logits, labels);
        },
        params, 1e-5, 1e-3, /*max_elements_per_param=*/2, /*sample_seed=*/77);
    INFO(attention_name(a), " max_rel_err=", r.max_rel_err, " at ", r.worst_location);
    CHECK(r.passed());
  }
}

TEST_CASE("imagenet stem geometry") {
  LayerGraph g = build_resnet(50, Stem::imagenet, 1000, Attention::none);
  const ProfileReport r = count_flops(g, 224);
  // After the stem conv and pool the stage-1 blocks run at 56x56.
  bool found = false;
  for (const auto& row : r.rows) {
    if (row.name == "layer1.0.conv1") {
      CHECK(row.out_h == 56);
      found = true;
    }
  }
  CHECK(found);
}
