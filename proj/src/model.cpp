#include "tra/model.hpp"

#include <cstring>
#include <fstream>

namespace tra {

void ModelConfig::validate() const {
  auto fail = [](const std::string& field) {
    throw std::invalid_argument("ModelConfig: invalid field: " + field);
  };
  if (height < 8 || height % 8 != 0) fail("height (must be a positive multiple of 8)");
  if (width < 8 || width % 8 != 0) fail("width (must be a positive multiple of 8)");
  for (int c : encoder_channels)
    if (c < 1) fail("encoder_channels (entries must be positive)");
  if (num_classes < 2) fail("num_classes (must be >= 2)");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) fail("dropout_rate (must be in [0, 1))");
}

Tensor coordconv_augment(Tape* tape, const Tensor& x) {
  if (x.ndim() != 3)
    throw std::invalid_argument("coordconv_augment: expected h x w x c");
  const int h = x.dim(0), w = x.dim(1);
  Tensor coords({h, w, 2});
  double* cv = coords.data();
  for (int y = 0; y < h; ++y) {
    const double ry = h > 1 ? 2.0 * y / (h - 1) - 1.0 : 0.0;
    for (int xx = 0; xx < w; ++xx) {
      const double rx = w > 1 ? 2.0 * xx / (w - 1) - 1.0 : 0.0;
      cv[(static_cast<int64_t>(y) * w + xx) * 2 + 0] = ry;
      cv[(static_cast<int64_t>(y) * w + xx) * 2 + 1] = rx;
    }
  }
  return concat_channels(tape, x, coords);
}

Tensor& Model::param(const std::string& name) {
  for (size_t i = 0; i < param_names.size(); ++i)
    if (param_names[i] == name) return params[i];
  throw std::out_of_range("Model: no parameter named " + name);
}

const Tensor& Model::param(const std::string& name) const {
  return const_cast<Model*>(this)->param(name);
}

int64_t Model::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : params) n += p.size();
  return n;
}

namespace {

Tensor he_init(Shape shape, int fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape), true);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace

Model build_model(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  Model m;
  m.config = config;
  auto push = [&m](const std::string& name, Tensor t) {
    m.param_names.push_back(name);
    m.params.push_back(std::move(t));
  };

  int in_ch = config.coord_channels ? 3 : 1;
  for (int s = 0; s < 3; ++s) {
    const int c = config.encoder_channels[s];
    const std::string p = "s" + std::to_string(s) + ".";
    push(p + "convA.w", he_init({3, 3, in_ch, c}, 9 * in_ch, rng));
    push(p + "convA.b", Tensor({c}, true));
    push(p + "normA.gamma", Tensor::full({c}, 1.0, true));
    push(p + "normA.beta", Tensor({c}, true));
    push(p + "convB.w", he_init({3, 3, c, c}, 9 * c, rng));
    push(p + "convB.b", Tensor({c}, true));
    push(p + "normB.gamma", Tensor::full({c}, 1.0, true));
    push(p + "normB.beta", Tensor({c}, true));
    push(p + "down.w", he_init({3, 3, c, c}, 9 * c, rng));
    push(p + "down.b", Tensor({c}, true));
    in_ch = c;
  }
  for (int s = 0; s < 3; ++s) {
    const int c = config.encoder_channels[s];
    const std::string p = "head" + std::to_string(s) + ".";
    push(p + "w", he_init({1, 1, c, config.num_classes}, c, rng));
    push(p + "b", Tensor({config.num_classes}, true));
  }
  return m;
}

Tensor Model::forward(Tape* tape, const Tensor& image, bool training,
                      std::mt19937_64* dropout_rng) const {
  if (image.ndim() != 3 || image.dim(2) != 1)
    throw std::invalid_argument("Model::forward: expected h x w x 1 image");
  if (image.dim(0) != config.height || image.dim(1) != config.width)
    throw std::invalid_argument(
        "Model::forward: input size " + std::to_string(image.dim(0)) + "x" +
        std::to_string(image.dim(1)) + " does not match configured " +
        std::to_string(config.height) + "x" + std::to_string(config.width));
  if (training && config.dropout_rate > 0.0 && !dropout_rng)
    throw std::invalid_argument("Model::forward: training needs a dropout rng");

  Tensor x = config.coord_channels ? coordconv_augment(tape, image) : image;

  std::array<Tensor, 3> stage_out;
  for (int s = 0; s < 3; ++s) {
    const std::string p = "s" + std::to_string(s) + ".";
    x = conv2d(tape, x, param(p + "convA.w"), param(p + "convA.b"), 1, 1);
    x = channel_norm(tape, x, param(p + "normA.gamma"), param(p + "normA.beta"));
    x = relu(tape, x);
    x = conv2d(tape, x, param(p + "convB.w"), param(p + "convB.b"), 1, 1);
    x = channel_norm(tape, x, param(p + "normB.gamma"), param(p + "normB.beta"));
    x = relu(tape, x);
    x = conv2d(tape, x, param(p + "down.w"), param(p + "down.b"), 2, 1);
    if (training && config.dropout_rate > 0.0)
      x = spatial_dropout(tape, x, config.dropout_rate, *dropout_rng, true);
    stage_out[s] = x;
  }

  std::array<Tensor, 3> scores;
  for (int s = 0; s < 3; ++s) {
    const std::string p = "head" + std::to_string(s) + ".";
    scores[s] = conv2d(tape, stage_out[s], param(p + "w"), param(p + "b"), 1, 0);
  }

  Tensor fused = add(tape, bilinear_upsample(tape, scores[2], 2), scores[1]);
  fused = add(tape, bilinear_upsample(tape, fused, 2), scores[0]);
  return bilinear_upsample(tape, fused, 2);
}

ProbabilityMap Model::predict_probs(const Tensor& image) const {
  return softmax_channels(nullptr, forward(nullptr, image, false));
}

Model Model::clone() const {
  Model m;
  m.config = config;
  m.param_names = param_names;
  m.params.reserve(params.size());
  for (const auto& p : params) m.params.push_back(p.clone(true));
  return m;
}

namespace {

constexpr char kMagic[8] = {'T', 'R', 'A', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  os.write(kMagic, sizeof(kMagic));
  write_pod<int32_t>(os, model.config.height);
  write_pod<int32_t>(os, model.config.width);
  for (int c : model.config.encoder_channels) write_pod<int32_t>(os, c);
  write_pod<int32_t>(os, model.config.num_classes);
  write_pod<double>(os, model.config.dropout_rate);
  write_pod<uint64_t>(os, model.config.seed);
  write_pod<uint8_t>(os, model.config.coord_channels ? 1 : 0);
  write_pod<uint64_t>(os, model.params.size());
  for (size_t i = 0; i < model.params.size(); ++i) {
    const auto& name = model.param_names[i];
    write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto& p = model.params[i];
    write_pod<uint32_t>(os, static_cast<uint32_t>(p.ndim()));
    for (int d : p.shape()) write_pod<int32_t>(os, d);
    os.write(reinterpret_cast<const char*>(p.data()),
             static_cast<std::streamsize>(p.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  Model m;
  m.config.height = read_pod<int32_t>(is);
  m.config.width = read_pod<int32_t>(is);
  for (int& c : m.config.encoder_channels) c = read_pod<int32_t>(is);
  m.config.num_classes = read_pod<int32_t>(is);
  m.config.dropout_rate = read_pod<double>(is);
  m.config.seed = read_pod<uint64_t>(is);
  m.config.coord_channels = read_pod<uint8_t>(is) != 0;
  const uint64_t n = read_pod<uint64_t>(is);
  for (uint64_t i = 0; i < n; ++i) {
    const uint32_t name_len = read_pod<uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t ndim = read_pod<uint32_t>(is);
    Shape shape(ndim);
    for (auto& d : shape) d = read_pod<int32_t>(is);
    Tensor p(shape, true);
    is.read(reinterpret_cast<char*>(p.data()),
            static_cast<std::streamsize>(p.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    m.param_names.push_back(std::move(name));
    m.params.push_back(std::move(p));
  }
  return m;
}

}  // namespace tra
