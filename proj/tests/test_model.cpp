#include <doctest.h>

#include <filesystem>
#include <random>

#include "vdcnet/model.hpp"

using namespace vdcnet;

namespace {

Tensor<float> random_batch(std::size_t n, std::size_t c, std::size_t s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Tensor<float> t({n, c, s, s});
  for (auto& v : t.values()) v = u(rng);
  return t;
}

std::shared_ptr<const ModelGraph> small_vdcnet(PoolMode head = PoolMode::avg, std::size_t size = 32) {
  VdcNetConfig c;
  c.width_multiplier = 1.0 / 16;
  c.input_size = size;
  c.head_pool = head;
  return std::make_shared<const ModelGraph>(build_vdcnet(c));
}

}  // namespace

TEST_SUITE("count_params") {
  TEST_CASE("hand-countable layers") {
    ModelGraph g("tiny", 3, 8);
    const auto conv = g.conv(0, 3, 32, "c");
    CHECK(layer_param_count(g, conv) == 896);
    ModelGraph d("dense", 10, 1);
    const auto pool = d.global_pool(0, PoolMode::avg, "p");
    const auto dense = d.dense(pool, 1, "d");
    CHECK(layer_param_count(d, dense) == 11);
    const auto bn = g.batchnorm(conv, "bn");
    CHECK(layer_param_count(g, bn) == 64);  // gamma + beta, moving stats excluded
  }
}

TEST_SUITE("vdcnet structure") {
  TEST_CASE("default graph matches the published structure") {
    const ModelGraph g = build_vdcnet({});
    CHECK(g.conv_count() == 20);
    CHECK(g.maxpool_count() == 4);
    CHECK(g.count(LayerKind::concat) == 6);
    CHECK(g.count(LayerKind::batchnorm) == 20);
    const auto params = count_params(g);
    CHECK(params >= 23'300'000);
    CHECK(params <= 28'500'000);
    const auto tap = g.find_tap(kLastConvTap);
    REQUIRE(tap);
    CHECK(g.layer(*tap).output == Shape{4096, 22, 22});
    const HeadSummary head = head_summary(g);
    CHECK(head.valid);
    CHECK(head.pool == PoolMode::avg);
    CHECK(head.dense_units == 1);
  }

  TEST_CASE("channels grow strictly across blocks") {
    const ModelGraph g = build_vdcnet({});
    std::size_t prev = 0;
    for (int b = 1; b <= 6; ++b) {
      const auto idx = g.find_layer("block" + std::to_string(b) + ".concat");
      REQUIRE(idx);
      const std::size_t c = g.layer(*idx).output[0];
      CHECK(c > prev);
      prev = c;
    }
  }

  TEST_CASE("describe lists every layer and the totals") {
    const ModelGraph g = build_vdcnet({});
    const std::string text = describe(g);
    CHECK(text.find("conv layers: 20") != std::string::npos);
    CHECK(text.find("maxpool layers: 4") != std::string::npos);
    CHECK(text.find("global_avg_pool -> dense(1) -> sigmoid") != std::string::npos);
    CHECK(text.find("block6.concat") != std::string::npos);
  }

  TEST_CASE("input size must be a multiple of 16") {
    VdcNetConfig c;
    c.input_size = 350;
    CHECK_THROWS_AS(build_vdcnet(c), ArgumentError);
    ReferenceNetConfig r;
    r.input_size = 336;
    CHECK_THROWS_AS(build_reference_net(r), ArgumentError);
  }

  TEST_CASE("GMP head is reflected in the summary") {
    VdcNetConfig c;
    c.head_pool = PoolMode::max;
    CHECK(head_summary(build_vdcnet(c)).pool == PoolMode::max);
  }
}

TEST_SUITE("conv block") {
  TEST_CASE("channel arithmetic and layer counts") {
    ModelGraph g("block", 32, 16);
    const auto out = build_conv_block(g, 0, {16, 16, 32}, true, "b");
    CHECK(g.layer(out).output == Shape{64, 8, 8});
    CHECK(g.conv_count() == 3);
    CHECK(g.count(LayerKind::batchnorm) == 3);
  }

  TEST_CASE("zero conv weights leave the input slice untouched") {
    auto g = std::make_shared<ModelGraph>("block", 4, 6);
    const auto out = build_conv_block(*g, 0, {3, 3, 5}, false, "b");
    Session s(g, 1);
    for (std::size_t i = 0; i < g->layers().size(); ++i)
      if (auto* k = s.kernel(i)) k->value.fill(0.f);
    const auto x = random_batch(2, 4, 6, 3);
    // Without a sigmoid layer the session returns the last layer's value.
    REQUIRE(out == g->output_layer());
    Tape<float> tape;
    const auto r = s.forward(tape, x, Mode::infer);
    const auto& y = tape.value(r.probs);
    REQUIRE(y.shape() == Shape{2, 9, 6, 6});
    auto [head, tail] = split_channels(y, 4);
    CHECK(head == x);
    for (float v : tail.values()) CHECK(v == 0.f);
  }
}

TEST_SUITE("reference net") {
  TEST_CASE("five poolings and a quarter of the tap pixels") {
    const ModelGraph ref = build_reference_net({});
    const ModelGraph vdc = build_vdcnet({});
    CHECK(ref.maxpool_count() == 5);
    CHECK(ref.count(LayerKind::add) == 5);
    const Shape& rt = ref.layer(*ref.find_tap(kLastConvTap)).output;
    const Shape& vt = vdc.layer(*vdc.find_tap(kLastConvTap)).output;
    CHECK(rt[1] == 11);
    CHECK(rt[2] == 11);
    CHECK(vt[1] * vt[2] == 4 * rt[1] * rt[2]);
    CHECK(count_params(ref) < count_params(vdc));
  }

  TEST_CASE("addition skip with zero weights is the identity") {
    auto g = std::make_shared<ModelGraph>("res", 8, 4);
    build_residual_block(*g, 0, 8, false, "r");
    Session s(g, 2);
    for (std::size_t i = 0; i < g->layers().size(); ++i)
      if (auto* k = s.kernel(i)) k->value.fill(0.f);
    const auto x = random_batch(1, 8, 4, 5);
    Tape<float> tape;
    const auto r = s.forward(tape, x, Mode::infer);
    CHECK(tape.value(r.probs) == x);
  }

  TEST_CASE("channel change inserts a projection") {
    ModelGraph g("res", 4, 4);
    build_residual_block(g, 0, 8, true, "r");
    CHECK(g.find_layer("r.proj"));
    CHECK(g.conv_count() == 4);
  }
}

TEST_SUITE("session") {
  TEST_CASE("probabilities in (0, 1) and infer mode is deterministic") {
    Session s(small_vdcnet(), 7);
    const auto x = random_batch(3, 3, 32, 1);
    Tape<float> a, b;
    const auto ra = s.forward(a, x, Mode::infer);
    const auto rb = s.forward(b, x, Mode::infer);
    for (float p : a.value(ra.probs).values()) {
      CHECK(p > 0.f);
      CHECK(p < 1.f);
    }
    CHECK(a.value(ra.probs) == b.value(rb.probs));
    CHECK(a.value(ra.taps.at(kLastConvTap)).shape() == Shape{3, 256, 2, 2});
  }

  TEST_CASE("train mode updates BN statistics, infer mode does not") {
    Session s(small_vdcnet(), 7);
    const auto bn = *s.graph().find_layer("stem.bn");
    const auto x = random_batch(2, 3, 32, 2);
    {
      Tape<float> t;
      s.forward(t, x, Mode::infer);
    }
    CHECK(s.batchnorm_state(bn)->updates == 0);
    CHECK(s.batchnorm_state(bn)->moving_mean.value[0] == 0.f);
    Tape<float> t;
    s.forward(t, x, Mode::train);
    CHECK(s.batchnorm_state(bn)->updates == 1);
    CHECK(s.batchnorm_state(bn)->moving_mean.value[0] != 0.f);
  }

  TEST_CASE("wrong input shape") {
    Session s(small_vdcnet(), 7);
    Tape<float> t;
    CHECK_THROWS_AS(s.forward(t, random_batch(1, 3, 64, 1), Mode::infer), ShapeError);
    CHECK_THROWS_AS(s.forward(t, random_batch(1, 1, 32, 1), Mode::infer), ShapeError);
  }

  TEST_CASE("same seed gives the same initial weights") {
    const auto g = small_vdcnet();
    Session a(g, 11), b(g, 11), c(g, 12);
    const auto wa = a.export_weights(), wb = b.export_weights(), wc = c.export_weights();
    bool all_equal = true, any_diff = false;
    for (std::size_t i = 0; i < wa.size(); ++i) {
      all_equal = all_equal && wa[i].value == wb[i].value;
      any_diff = any_diff || !(wa[i].value == wc[i].value);
    }
    CHECK(all_equal);
    CHECK(any_diff);
  }

  TEST_CASE("save then load reproduces bit-identical outputs") {
    const auto g = small_vdcnet();
    Session a(g, 3);
    const auto x = random_batch(2, 3, 32, 9);
    for (int i = 0; i < 2; ++i) {
      Tape<float> t;
      a.forward(t, x, Mode::train);
    }
    const auto path = std::filesystem::temp_directory_path() / "vdcnet_test_weights.bin";
    a.save(path);
    Session b(g, 99);
    b.load(path);
    std::filesystem::remove(path);
    Tape<float> ta, tb;
    CHECK(ta.value(a.forward(ta, x, Mode::infer).probs) == tb.value(b.forward(tb, x, Mode::infer).probs));
  }

  TEST_CASE("loading a mismatched model fails cleanly") {
    Session a(small_vdcnet(), 3);
    VdcNetConfig other;
    other.width_multiplier = 1.0 / 8;
    other.input_size = 32;
    Session b(std::make_shared<const ModelGraph>(build_vdcnet(other)), 3);
    CHECK_THROWS_AS(b.import_weights(a.export_weights()), ShapeError);
  }

  TEST_CASE("dense weights require a valid head") {
    Session s(small_vdcnet(), 1);
    CHECK(s.dense_weights().value.shape() == Shape{256, 1});
    auto g = std::make_shared<ModelGraph>("headless", 3, 8);
    g->conv(0, 3, 4, "c");
    Session h(g, 1);
    CHECK_THROWS_AS(h.dense_weights(), UnsupportedArchitecture);
  }
}
