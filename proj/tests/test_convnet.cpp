#include <doctest.h>

#include <cmath>
#include <fstream>

#include "spinecade/convnet.hpp"
#include "spinecade/patch.hpp"
#include "test_util.hpp"

using namespace spinecade;

namespace {

Tensor<double> random_input(Shape s, int n, Rng& rng) {
  Tensor<double> x(n, s.c, s.h, s.w);
  for (auto& v : x.v) v = rng.uniform();
  return x;
}

std::vector<int> alternating_labels(int n) {
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) labels[i] = i % 2;
  return labels;
}

struct GradCheckStats {
  double worst_rel = 0.0;
  size_t checked = 0;
};

// Central finite differences at eps = 1e-5 against the analytic backward
// pass, all in 64-bit. Near-zero pairs fall back to an absolute floor.
GradCheckStats gradient_check(Model<double>& model, const Tensor<double>& x,
                              const std::vector<int>& labels,
                              uint64_t dropout_seed, bool training) {
  const double eps = 1e-5;
  model.reset_dropout(dropout_seed);
  model.backward(x, labels, 1, training);

  // Snapshot analytic gradients before poking parameters.
  std::vector<std::vector<double>> analytic;
  for (auto* g : model.grads()) analytic.push_back(g->v);

  GradCheckStats stats;
  auto params = model.params();
  for (size_t pi = 0; pi < params.size(); ++pi) {
    for (size_t i = 0; i < params[pi]->v.size(); ++i) {
      const double saved = params[pi]->v[i];
      params[pi]->v[i] = saved + eps;
      model.reset_dropout(dropout_seed);
      const double lp = model.loss(x, labels, 1, training);
      params[pi]->v[i] = saved - eps;
      model.reset_dropout(dropout_seed);
      const double lm = model.loss(x, labels, 1, training);
      params[pi]->v[i] = saved;

      const double fd = (lp - lm) / (2.0 * eps);
      const double an = analytic[pi][i];
      const double diff = std::abs(an - fd);
      if (diff > 1e-8) {
        const double rel = diff / std::max(std::abs(an), std::abs(fd));
        stats.worst_rel = std::max(stats.worst_rel, rel);
      }
      ++stats.checked;
    }
  }
  return stats;
}

// 2 conv + 1 fully-connected on 8x8 inputs.
std::vector<LayerSpec> tiny_gradcheck_net() {
  return {
      LayerSpec::conv(3, 4, 3, 1, 1),  LayerSpec::relu(),
      LayerSpec::max_pool(2, 2),       LayerSpec::conv(4, 6, 3, 1, 1),
      LayerSpec::relu(),               LayerSpec::max_pool(2, 2),
      LayerSpec::fully_connected(24, 2), LayerSpec::softmax(),
  };
}

PatchSet separable_toyset(int n, uint64_t seed) {
  // Class = sign of mean intensity: dim patches (around 0.3) vs bright
  // patches (around 0.7).
  PatchSet set;
  Rng rng(seed);
  for (int k = 0; k < n; ++k) {
    Patch25D p;
    const bool bright = k % 2 == 1;
    p.label = bright ? PatchLabel::fracture : PatchLabel::non_fracture;
    const float base = bright ? 0.7f : 0.3f;
    for (auto& plane : p.planes) {
      plane = Image2D<float>(kPatchSize, kPatchSize);
      for (auto& v : plane.data())
        v = base + static_cast<float>(rng.uniform(-0.05, 0.05));
    }
    (bright ? set.positives : set.negatives)++;
    set.patches.push_back(std::move(p));
  }
  return set;
}

std::vector<LayerSpec> linear_net() {
  return {LayerSpec::fully_connected(3 * 64 * 64, 2), LayerSpec::softmax()};
}

}  // namespace

TEST_SUITE("convnet") {

TEST_CASE("softmax rows are distributions") {
  Model<double> model(Shape{3, 8, 8}, tiny_gradcheck_net(), 1);
  Rng rng(2);
  const auto x = random_input(Shape{3, 8, 8}, 5, rng);
  const auto y = model.forward(x);
  REQUIRE(y.n == 5);
  REQUIRE(y.c == 2);
  for (int n = 0; n < y.n; ++n) {
    double sum = 0.0;
    for (int c = 0; c < y.c; ++c) {
      CHECK(y.sample(n)[c] >= 0.0);
      CHECK(y.sample(n)[c] <= 1.0);
      sum += y.sample(n)[c];
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("duplicated inputs give identical rows outside training") {
  Model<double> model(Shape{3, 8, 8}, tiny_gradcheck_net(), 3);
  Rng rng(4);
  auto x = random_input(Shape{3, 8, 8}, 1, rng);
  Tensor<double> dup(3, 3, 8, 8);
  for (int n = 0; n < 3; ++n)
    std::copy(x.v.begin(), x.v.end(), dup.sample(n));
  const auto y = model.forward(dup);
  for (int n = 1; n < 3; ++n)
    for (int c = 0; c < y.c; ++c)
      CHECK(y.sample(n)[c] == y.sample(0)[c]);
}

TEST_CASE("keep_prob 1 makes training and inference passes identical") {
  std::vector<LayerSpec> specs{
      LayerSpec::fully_connected(16, 8), LayerSpec::relu(),
      LayerSpec::dropout(1.0), LayerSpec::fully_connected(8, 2),
      LayerSpec::softmax()};
  Model<double> model(Shape{16, 1, 1}, specs, 5);
  Rng rng(6);
  const auto x = random_input(Shape{16, 1, 1}, 4, rng);
  const auto train_out = model.forward(x, /*training=*/true);
  const auto eval_out = model.forward(x, /*training=*/false);
  for (size_t i = 0; i < train_out.v.size(); ++i)
    CHECK(train_out.v[i] == eval_out.v[i]);
}

TEST_CASE("analytic gradients match finite differences over 10 seeds") {
  double worst = 0.0;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Model<double> model(Shape{3, 8, 8}, tiny_gradcheck_net(), seed);
    Rng rng(seed * 101);
    const auto x = random_input(Shape{3, 8, 8}, 4, rng);
    const auto stats =
        gradient_check(model, x, alternating_labels(4), seed, false);
    worst = std::max(worst, stats.worst_rel);
    CHECK(stats.checked == 384);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("gradients survive stride-2 conv, pooling and dropout") {
  std::vector<LayerSpec> specs{
      LayerSpec::conv(2, 3, 3, 2, 1),    LayerSpec::relu(),
      LayerSpec::max_pool(2, 2),         LayerSpec::fully_connected(12, 8),
      LayerSpec::relu(),                 LayerSpec::dropout(0.6),
      LayerSpec::fully_connected(8, 2),  LayerSpec::softmax()};
  double worst = 0.0;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Model<double> model(Shape{2, 9, 9}, specs, seed);
    Rng rng(seed * 77);
    const auto x = random_input(Shape{2, 9, 9}, 3, rng);
    const auto stats = gradient_check(model, x, alternating_labels(3),
                                      seed + 1000, /*training=*/true);
    worst = std::max(worst, stats.worst_rel);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("softmax layer backward matches finite differences") {
  detail::SoftmaxLayer<double> layer(LayerSpec::softmax());
  layer.bind(Shape{4, 1, 1});
  Rng rng(8);
  Tensor<double> x(2, 4, 1, 1);
  for (auto& v : x.v) v = rng.uniform(-2.0, 2.0);
  Tensor<double> dy(2, 4, 1, 1);
  for (auto& v : dy.v) v = rng.uniform(-1.0, 1.0);

  auto objective = [&](const Tensor<double>& input) {
    detail::SoftmaxLayer<double> probe(LayerSpec::softmax());
    probe.bind(Shape{4, 1, 1});
    const auto y = probe.forward(input, false, nullptr, 1);
    double s = 0.0;
    for (size_t i = 0; i < y.v.size(); ++i) s += dy.v[i] * y.v[i];
    return s;
  };

  layer.forward(x, false, nullptr, 1);
  const auto dx = layer.backward(dy, 1);
  const double eps = 1e-6;
  for (size_t i = 0; i < x.v.size(); ++i) {
    Tensor<double> xp = x, xm = x;
    xp.v[i] += eps;
    xm.v[i] -= eps;
    const double fd = (objective(xp) - objective(xm)) / (2 * eps);
    CHECK(dx.v[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("confident correct prediction has near-zero loss and gradients") {
  std::vector<LayerSpec> specs{LayerSpec::fully_connected(4, 2),
                               LayerSpec::softmax()};
  Model<double> model(Shape{4, 1, 1}, specs, 9);
  auto params = model.params();
  std::fill(params[0]->v.begin(), params[0]->v.end(), 0.0);
  params[1]->v = {40.0, -40.0};  // bias drives class 0

  Tensor<double> x(1, 4, 1, 1);
  x.v = {0.2, 0.4, 0.6, 0.8};
  const double loss = model.backward(x, {0});
  CHECK(loss < 1e-6);
  for (auto* g : model.grads())
    for (const double v : g->v) CHECK(std::abs(v) < 1e-6);
}

TEST_CASE("uniform predictions cost ln 2 per sample") {
  std::vector<LayerSpec> specs{LayerSpec::fully_connected(4, 2),
                               LayerSpec::softmax()};
  Model<double> model(Shape{4, 1, 1}, specs, 10);
  auto params = model.params();
  std::fill(params[0]->v.begin(), params[0]->v.end(), 0.0);
  std::fill(params[1]->v.begin(), params[1]->v.end(), 0.0);
  Rng rng(11);
  const auto x = random_input(Shape{4, 1, 1}, 6, rng);
  CHECK(model.loss(x, alternating_labels(6)) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("separable toy set trains to high accuracy") {
  PatchSet toy = separable_toyset(200, 12);
  ConvNetModel model(Shape{3, 64, 64}, linear_net(), 13);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.momentum = 0.99;
  cfg.batch_size = 16;
  cfg.epochs = 50;
  cfg.seed = 14;
  const TrainHistory h = train(model, toy, cfg);
  REQUIRE(h.train_accuracy.size() == 50);
  CHECK(h.train_accuracy.back() >= 0.99);
  CHECK(h.mean_loss.back() < h.mean_loss.front());
}

TEST_CASE("loss is monotone on the toy set under full-batch descent") {
  PatchSet toy = separable_toyset(100, 15);
  ConvNetModel model(Shape{3, 64, 64}, linear_net(), 16);
  TrainConfig cfg;
  cfg.learning_rate = 2e-4;
  cfg.momentum = 0.0;
  cfg.batch_size = 100;  // full batch: plain gradient descent
  cfg.epochs = 20;
  cfg.seed = 17;
  const TrainHistory h = train(model, toy, cfg);
  for (size_t e = 5; e < h.mean_loss.size(); ++e)
    CHECK(h.mean_loss[e] <= h.mean_loss[e - 1] + 1e-12);
}

TEST_CASE("zero learning rate is a no-op optimizer") {
  PatchSet toy = separable_toyset(40, 18);
  ConvNetModel model(Shape{3, 64, 64}, linear_net(), 19);
  const auto before = model.params()[0]->v;
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.weight_decay = 0.01;
  cfg.batch_size = 40;
  cfg.epochs = 4;
  cfg.seed = 20;
  const TrainHistory h = train(model, toy, cfg);
  CHECK(model.params()[0]->v == before);
  for (size_t e = 1; e < h.mean_loss.size(); ++e)
    CHECK(h.mean_loss[e] == h.mean_loss[0]);
}

TEST_CASE("training twice with one seed reproduces the loss history") {
  PatchSet toy = separable_toyset(60, 21);
  TrainConfig cfg;
  cfg.learning_rate = 2e-4;
  cfg.batch_size = 16;
  cfg.epochs = 6;
  cfg.seed = 22;

  ConvNetModel a(Shape{3, 64, 64}, linear_net(), 23);
  ConvNetModel b(Shape{3, 64, 64}, linear_net(), 23);
  const TrainHistory ha = train(a, toy, cfg);
  const TrainHistory hb = train(b, toy, cfg);
  CHECK(ha.mean_loss == hb.mean_loss);
  CHECK(ha.train_accuracy == hb.train_accuracy);
  CHECK(a.params()[0]->v == b.params()[0]->v);
}

TEST_CASE("single-class datasets are rejected") {
  PatchSet toy = separable_toyset(10, 24);
  for (auto& p : toy.patches) p.label = PatchLabel::non_fracture;
  toy.negatives = 10;
  toy.positives = 0;
  ConvNetModel model(Shape{3, 64, 64}, linear_net(), 25);
  check_errc(Errc::single_class_dataset,
             [&] { train(model, toy, TrainConfig{}); });
}

TEST_CASE("dropout keep frequency tracks keep_prob") {
  const double keep = 0.7;
  detail::DropoutLayer<double> layer(LayerSpec::dropout(keep));
  layer.bind(Shape{64, 1, 1});
  Rng rng(28);
  Tensor<double> x(1, 64, 1, 1);
  for (auto& v : x.v) v = 1.0;

  const int trials = 10000;
  std::vector<int> kept(64, 0);
  for (int t = 0; t < trials; ++t) {
    const auto y = layer.forward(x, /*training=*/true, &rng, 1);
    for (int i = 0; i < 64; ++i)
      if (y.v[i] != 0.0) {
        CHECK(y.v[i] == doctest::Approx(1.0 / keep));
        ++kept[i];
      }
  }
  const double se = std::sqrt(keep * (1 - keep) / trials);
  for (int i = 0; i < 64; ++i) {
    const double freq = static_cast<double>(kept[i]) / trials;
    CHECK(std::abs(freq - keep) <= 3.0 * se);
  }
}

TEST_CASE("shape validation") {
  check_errc(Errc::shape_mismatch, [] {
    // Fully-connected input size disagrees with the conv output.
    Model<double>(Shape{3, 8, 8},
                  {LayerSpec::conv(3, 4, 3, 1, 1),
                   LayerSpec::fully_connected(99, 2), LayerSpec::softmax()},
                  1);
  });
  check_errc(Errc::shape_mismatch, [] {
    // Softmax must be last.
    Model<double>(Shape{4, 1, 1}, {LayerSpec::fully_connected(4, 2)}, 1);
  });
  Model<double> model(Shape{3, 8, 8}, tiny_gradcheck_net(), 1);
  check_errc(Errc::shape_mismatch, [&] {
    Tensor<double> wrong(1, 3, 9, 9);
    model.forward(wrong);
  });
  check_errc(Errc::shape_mismatch, [&] {
    Tensor<double> x(1, 3, 8, 8);
    model.backward(x, {5});  // label out of range
  });
}

TEST_CASE("named architectures shape-check and run") {
  for (const std::string name : {"paper64", "tiny64"}) {
    ConvNetModel model(architecture_input(name), make_architecture(name), 31);
    Tensor<float> x(1, 3, 64, 64);
    Rng rng(32);
    for (auto& v : x.v) v = static_cast<float>(rng.uniform());
    const auto y = model.forward(x);
    REQUIRE(y.c == 2);
    CHECK(std::abs(y.sample(0)[0] + y.sample(0)[1] - 1.0f) < 1e-6f);
  }
  // paper64 depth contract: 5 conv, 3 fully-connected, final softmax.
  const auto specs = make_architecture("paper64");
  int convs = 0, fcs = 0;
  for (const auto& s : specs) {
    convs += s.kind == LayerKind::conv;
    fcs += s.kind == LayerKind::fully_connected;
  }
  CHECK(convs == 5);
  CHECK(fcs == 3);
  CHECK(specs.front().kind == LayerKind::conv);
  CHECK(specs.front().stride == 1);
  CHECK(specs.back().kind == LayerKind::softmax);
  check_errc(Errc::config_invalid, [] { make_architecture("nope"); });
}

TEST_CASE("checkpoint round trip is bit-exact; corruption is caught") {
  const auto dir = test_dir("convnet_io");
  ConvNetModel model(Shape{3, 8, 8}, tiny_gradcheck_net(), 33);
  Rng rng(34);
  Tensor<float> x(2, 3, 8, 8);
  for (auto& v : x.v) v = static_cast<float>(rng.uniform());
  const auto before = model.forward(x);

  const auto path = dir / "m.cnet";
  save_model(model, path);
  ConvNetModel loaded = load_model(path);
  const auto after = loaded.forward(x);
  CHECK(before.v == after.v);

  // Truncation: cut the payload.
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    std::ofstream out(dir / "trunc.cnet", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  check_errc(Errc::checksum_mismatch, [&] { load_model(dir / "trunc.cnet"); });

  // Wrong magic.
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    bytes[0] = 'X';
    std::ofstream out(dir / "magic.cnet", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  check_errc(Errc::version_mismatch, [&] { load_model(dir / "magic.cnet"); });

  // Flipped payload byte.
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    bytes[bytes.size() / 2] ^= 0x5a;
    std::ofstream out(dir / "flip.cnet", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  check_errc(Errc::checksum_mismatch, [&] { load_model(dir / "flip.cnet"); });

  check_errc(Errc::io_error, [&] { load_model(dir / "absent.cnet"); });
}

TEST_CASE("training is deterministic for a fixed thread count") {
  PatchSet toy = separable_toyset(48, 35);
  std::vector<LayerSpec> specs{
      LayerSpec::conv(3, 4, 5, 2, 2), LayerSpec::relu(),
      LayerSpec::max_pool(2, 2),
      LayerSpec::fully_connected(4 * 16 * 16, 2), LayerSpec::softmax()};
  TrainConfig cfg;
  cfg.learning_rate = 0.02;
  cfg.batch_size = 16;
  cfg.epochs = 2;
  cfg.seed = 36;
  cfg.threads = 2;

  ConvNetModel a(Shape{3, 64, 64}, specs, 37);
  ConvNetModel b(Shape{3, 64, 64}, specs, 37);
  const TrainHistory ha = train(a, toy, cfg);
  const TrainHistory hb = train(b, toy, cfg);
  CHECK(ha.mean_loss == hb.mean_loss);
  CHECK(a.params()[0]->v == b.params()[0]->v);
}

}  // TEST_SUITE
