#include "spinecade/convnet.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <numeric>

#include "spinecade/patch.hpp"

namespace spinecade {

namespace {

void fill_sample(Tensor<float>& x, int n, const Patch25D& p) {
  for (int ch = 0; ch < 3; ++ch)
    for (int i = 0; i < kPatchSize; ++i)
      for (int j = 0; j < kPatchSize; ++j)
        x.at(n, ch, i, j) = p.planes[ch](j, i);
}

}  // namespace

TrainHistory train(ConvNetModel& model, const PatchSet& dataset,
                   const TrainConfig& cfg) {
  if (!(cfg.learning_rate >= 0.0))
    fail(Errc::config_invalid, "learning_rate must be >= 0");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0))
    fail(Errc::config_invalid, "momentum must be in [0,1)");
  if (cfg.batch_size < 1) fail(Errc::config_invalid, "batch_size must be >= 1");
  if (cfg.epochs < 1) fail(Errc::config_invalid, "epochs must be >= 1");
  if (!(cfg.weight_decay >= 0.0))
    fail(Errc::config_invalid, "weight_decay must be >= 0");
  if (dataset.patches.empty())
    fail(Errc::single_class_dataset, "dataset is empty");
  if (dataset.positives == 0 || dataset.negatives == 0)
    fail(Errc::single_class_dataset, "training needs both classes present");

  const Shape in = model.input_shape();
  if (in.c != 3 || in.h != kPatchSize || in.w != kPatchSize)
    fail(Errc::shape_mismatch, "model input must be 3x64x64 for patch sets");

  const size_t n_total = dataset.patches.size();
  std::vector<size_t> order(n_total);
  std::iota(order.begin(), order.end(), size_t{0});

  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  model.reset_dropout(derive_seed(cfg.seed, "dropout"));
  model.set_training_mode(true);

  auto params = model.params();
  auto grads = model.grads();
  auto decay = model.decay_mask();
  std::vector<Tensor<float>> velocity;
  velocity.reserve(params.size());
  for (auto* p : params) {
    velocity.emplace_back(p->n, p->c, p->h, p->w);
  }

  TrainHistory history;
  const float lr = static_cast<float>(cfg.learning_rate);
  const float mom = static_cast<float>(cfg.momentum);
  const float wd = static_cast<float>(cfg.weight_decay);

  // Per-sample losses are summed in dataset order at epoch end, so the
  // reported epoch loss does not depend on the shuffle.
  std::vector<double> sample_loss(n_total, 0.0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    size_t correct = 0;

    for (size_t start = 0; start < n_total; start += cfg.batch_size) {
      const size_t end = std::min(n_total, start + cfg.batch_size);
      const int bs = static_cast<int>(end - start);
      Tensor<float> x(bs, in.c, in.h, in.w);
      std::vector<int> labels(bs);
      for (int b = 0; b < bs; ++b) {
        const Patch25D& p = dataset.patches[order[start + b]];
        fill_sample(x, b, p);
        labels[b] = p.label == PatchLabel::fracture ? 1 : 0;
      }

      Tensor<float> probs;
      std::vector<double> batch_losses;
      model.backward(x, labels, cfg.threads, /*training=*/true, &probs,
                     &batch_losses);
      for (int b = 0; b < bs; ++b) {
        sample_loss[order[start + b]] = batch_losses[b];
        const float* row = probs.sample(b);
        int arg = 0;
        for (int c = 1; c < probs.c; ++c)
          if (row[c] > row[arg]) arg = c;
        if (arg == labels[b]) ++correct;
      }

      for (size_t pi = 0; pi < params.size(); ++pi) {
        float* w = params[pi]->v.data();
        const float* g = grads[pi]->v.data();
        float* vel = velocity[pi].v.data();
        const float decay_here = decay[pi] ? wd : 0.0f;
        const size_t count = params[pi]->size();
        for (size_t i = 0; i < count; ++i) {
          vel[i] = mom * vel[i] - lr * (g[i] + decay_here * w[i]);
          w[i] += vel[i];
        }
      }
    }

    double loss_sum = 0.0;
    for (const double l : sample_loss) loss_sum += l;
    history.mean_loss.push_back(loss_sum / static_cast<double>(n_total));
    history.train_accuracy.push_back(static_cast<double>(correct) /
                                     static_cast<double>(n_total));
  }

  model.set_training_mode(false);
  return history;
}

void save_train_log(const TrainHistory& h, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(Errc::io_error, "cannot write " + path.string());
  out << "epoch,mean_loss,train_accuracy\n";
  out.precision(17);
  for (size_t e = 0; e < h.mean_loss.size(); ++e)
    out << (e + 1) << "," << h.mean_loss[e] << "," << h.train_accuracy[e]
        << "\n";
  if (!out) fail(Errc::io_error, "write failed for " + path.string());
}

std::vector<LayerSpec> make_architecture(const std::string& name) {
  if (name == "paper64") {
    return {
        LayerSpec::conv(3, 16, 5, 1, 2),   LayerSpec::relu(),
        LayerSpec::max_pool(2, 2),         LayerSpec::conv(16, 32, 3, 1, 1),
        LayerSpec::relu(),                 LayerSpec::conv(32, 32, 3, 1, 1),
        LayerSpec::relu(),                 LayerSpec::max_pool(2, 2),
        LayerSpec::conv(32, 64, 3, 1, 1),  LayerSpec::relu(),
        LayerSpec::conv(64, 64, 3, 1, 1),  LayerSpec::relu(),
        LayerSpec::max_pool(2, 2),
        LayerSpec::fully_connected(64 * 8 * 8, 256),
        LayerSpec::relu(),                 LayerSpec::dropout(0.5),
        LayerSpec::fully_connected(256, 64),
        LayerSpec::relu(),                 LayerSpec::fully_connected(64, 2),
        LayerSpec::softmax(),
    };
  }
  if (name == "tiny64") {
    return {
        LayerSpec::conv(3, 8, 5, 2, 2),    LayerSpec::relu(),
        LayerSpec::conv(8, 16, 3, 1, 1),   LayerSpec::relu(),
        LayerSpec::max_pool(2, 2),         LayerSpec::conv(16, 16, 3, 1, 1),
        LayerSpec::relu(),                 LayerSpec::max_pool(2, 2),
        LayerSpec::fully_connected(16 * 8 * 8, 64),
        LayerSpec::relu(),                 LayerSpec::dropout(0.5),
        LayerSpec::fully_connected(64, 2), LayerSpec::softmax(),
    };
  }
  fail(Errc::config_invalid, "unknown architecture '" + name + "'");
}

Shape architecture_input(const std::string& name) {
  if (name == "paper64" || name == "tiny64") return Shape{3, 64, 64};
  fail(Errc::config_invalid, "unknown architecture '" + name + "'");
}

namespace {

constexpr uint32_t kModelVersion = 1;

template <class T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(const std::string& in, size_t& pos) {
  if (pos + sizeof(T) > in.size())
    fail(Errc::checksum_mismatch, "model file truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

uint32_t crc_of(const std::string& bytes, size_t len) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()),
              static_cast<uInt>(len));
  return static_cast<uint32_t>(crc);
}

}  // namespace

void save_model(const ConvNetModel& model, const std::filesystem::path& path) {
  std::string buf;
  buf.append("CNET", 4);
  put(buf, kModelVersion);
  const Shape in = model.input_shape();
  put(buf, static_cast<uint32_t>(in.c));
  put(buf, static_cast<uint32_t>(in.h));
  put(buf, static_cast<uint32_t>(in.w));

  const auto& specs = model.specs();
  put(buf, static_cast<uint32_t>(specs.size()));
  for (const auto& s : specs) {
    put(buf, static_cast<uint8_t>(s.kind));
    for (const int f : {s.in_channels, s.out_channels, s.kernel_size, s.stride,
                        s.padding, s.window, s.pool_stride, s.in_dim,
                        s.out_dim})
      put(buf, static_cast<int32_t>(f));
    put(buf, s.keep_prob);
  }

  auto params = const_cast<ConvNetModel&>(model).params();
  put(buf, static_cast<uint32_t>(params.size()));
  for (const auto* p : params) {
    for (const int d : {p->n, p->c, p->h, p->w})
      put(buf, static_cast<uint32_t>(d));
    buf.append(reinterpret_cast<const char*>(p->v.data()),
               p->v.size() * sizeof(float));
  }

  put(buf, crc_of(buf, buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_error, "cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(Errc::io_error, "write failed for " + path.string());
}

ConvNetModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_error, "cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());

  if (buf.size() < 8 || buf.compare(0, 4, "CNET") != 0)
    fail(Errc::version_mismatch, "not a model checkpoint: " + path.string());
  size_t pos = 4;
  if (take<uint32_t>(buf, pos) != kModelVersion)
    fail(Errc::version_mismatch, "unsupported checkpoint version");
  if (buf.size() < 12 ||
      crc_of(buf, buf.size() - 4) !=
          [&] { size_t p = buf.size() - 4; return take<uint32_t>(buf, p); }())
    fail(Errc::checksum_mismatch, "checkpoint CRC mismatch");

  Shape input;
  input.c = static_cast<int>(take<uint32_t>(buf, pos));
  input.h = static_cast<int>(take<uint32_t>(buf, pos));
  input.w = static_cast<int>(take<uint32_t>(buf, pos));

  const uint32_t n_layers = take<uint32_t>(buf, pos);
  std::vector<LayerSpec> specs(n_layers);
  for (auto& s : specs) {
    s.kind = static_cast<LayerKind>(take<uint8_t>(buf, pos));
    for (int* f : {&s.in_channels, &s.out_channels, &s.kernel_size, &s.stride,
                   &s.padding, &s.window, &s.pool_stride, &s.in_dim,
                   &s.out_dim})
      *f = static_cast<int>(take<int32_t>(buf, pos));
    s.keep_prob = take<double>(buf, pos);
  }

  ConvNetModel model(input, specs, /*seed=*/0);
  auto params = model.params();
  const uint32_t n_params = take<uint32_t>(buf, pos);
  if (n_params != params.size())
    fail(Errc::shape_mismatch, "checkpoint parameter table mismatch");
  for (auto* p : params) {
    int dims[4];
    for (int& d : dims) d = static_cast<int>(take<uint32_t>(buf, pos));
    if (dims[0] != p->n || dims[1] != p->c || dims[2] != p->h ||
        dims[3] != p->w)
      fail(Errc::shape_mismatch, "checkpoint tensor shape mismatch");
    const size_t bytes = p->v.size() * sizeof(float);
    if (pos + bytes > buf.size())
      fail(Errc::checksum_mismatch, "model file truncated");
    std::memcpy(p->v.data(), buf.data() + pos, bytes);
    pos += bytes;
  }
  return model;
}

}  // namespace spinecade
