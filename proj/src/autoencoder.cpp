#include "mus/autoencoder.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mus {

using nn::Mat;
using MatF = Mat<float>;

void EncoderConfig::validate() const {
  if (input_size <= 0 || input_size % (1 << kLayers) != 0) {
    throw std::invalid_argument("EncoderConfig: input_size must be a positive multiple of 32");
  }
  if (channels.front() != 3) throw std::invalid_argument("EncoderConfig: first channel count must be 3");
  if (channels.back() != kFeatureDim) throw std::invalid_argument("EncoderConfig: last channel count must be 256");
  for (std::size_t i = 1; i < channels.size(); ++i) {
    if (channels[i] <= channels[i - 1]) throw std::invalid_argument("EncoderConfig: channels must increase");
  }
}

AutoencoderWeights AutoencoderWeights::zeros(const EncoderConfig& config) {
  config.validate();
  AutoencoderWeights w;
  w.config = config;
  w.net = nn::Network<float>(std::vector<int>(config.channels.begin(), config.channels.end()));
  return w;
}

AutoencoderWeights AutoencoderWeights::initialized(const EncoderConfig& config, std::uint64_t seed) {
  auto w = zeros(config);
  w.seed = seed;
  w.net.init_uniform(derive_seed(seed, "ae-init"));
  return w;
}

bool AutoencoderWeights::all_finite() const {
  auto ok = [](const std::vector<nn::ConvParams<float>>& layers) {
    return std::all_of(layers.begin(), layers.end(),
                       [](const auto& p) { return p.weight.allFinite() && p.bias.allFinite(); });
  };
  return ok(net.encoder) && ok(net.decoder);
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("TrainConfig: max_epochs must be >= 1");
}

std::vector<float> resize_slice(const SliceImage& slice, int size) {
  if (slice.height <= 0 || slice.width <= 0) throw std::invalid_argument("resize_slice: empty slice");
  std::vector<float> out(static_cast<std::size_t>(size) * size);
  if (slice.height == size && slice.width == size) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(slice.codes[i]) / 255.0f;
    return out;
  }
  const double sy = static_cast<double>(slice.height) / size;
  const double sx = static_cast<double>(slice.width) / size;
  for (int y = 0; y < size; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(slice.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, slice.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < size; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(slice.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, slice.width - 1);
      const double wx = fx - x0;
      const double top = (1 - wx) * slice.intensity(y0, x0) + wx * slice.intensity(y0, x1);
      const double bottom = (1 - wx) * slice.intensity(y1, x0) + wx * slice.intensity(y1, x1);
      out[static_cast<std::size_t>(y) * size + x] = static_cast<float>((1 - wy) * top + wy * bottom);
    }
  }
  return out;
}

Tensor3 to_encoder_input(const SliceImage& slice, int size) {
  const auto gray = resize_slice(slice, size);
  Tensor3 t(3, size, size);
  for (int c = 0; c < 3; ++c) std::copy(gray.begin(), gray.end(), t.data.begin() + static_cast<std::ptrdiff_t>(c) * gray.size());
  return t;
}

namespace {

MatF to_matrix(const Tensor3& t) {
  const Eigen::Index pixels = static_cast<Eigen::Index>(t.height) * t.width;
  MatF m(t.channels, pixels);
  for (int c = 0; c < t.channels; ++c)
    for (Eigen::Index p = 0; p < pixels; ++p) m(c, p) = t.data[static_cast<std::size_t>(c) * pixels + p];
  return m;
}

Tensor3 to_tensor(const MatF& m, int size) {
  Tensor3 t(static_cast<int>(m.rows()), size, size);
  const Eigen::Index pixels = static_cast<Eigen::Index>(size) * size;
  for (int c = 0; c < t.channels; ++c)
    for (Eigen::Index p = 0; p < pixels; ++p) t.data[static_cast<std::size_t>(c) * pixels + p] = m(c, p);
  return t;
}

void check_input(const Tensor3& image, const EncoderConfig& cfg) {
  if (image.channels != cfg.channels.front() || image.height != cfg.input_size || image.width != cfg.input_size) {
    std::ostringstream os;
    os << "encode: expected input (" << cfg.channels.front() << "," << cfg.input_size << "," << cfg.input_size
       << "), got (" << image.channels << "," << image.height << "," << image.width << ")";
    throw std::invalid_argument(os.str());
  }
}

/// Stacks grayscale inputs into a 3 x (B*S*S) batch.
MatF batch_matrix(const std::vector<const std::vector<float>*>& grays, int size) {
  const Eigen::Index pixels = static_cast<Eigen::Index>(size) * size;
  MatF x(3, static_cast<Eigen::Index>(grays.size()) * pixels);
  for (std::size_t b = 0; b < grays.size(); ++b) {
    const auto& g = *grays[b];
    for (Eigen::Index p = 0; p < pixels; ++p) {
      const Eigen::Index col = static_cast<Eigen::Index>(b) * pixels + p;
      x(0, col) = x(1, col) = x(2, col) = g[p];
    }
  }
  return x;
}

std::vector<std::vector<float>> resize_all(std::span<const SliceImage* const> slices, int size) {
  std::vector<std::vector<float>> out;
  out.reserve(slices.size());
  for (const auto* s : slices) out.push_back(resize_slice(*s, size));
  return out;
}

}  // namespace

Tensor3 encode(const Tensor3& image, const AutoencoderWeights& weights) {
  check_input(image, weights.config);
  return to_tensor(weights.net.encode(to_matrix(image), 1, image.height), weights.config.latent_size());
}

std::vector<Tensor3> encode_layers(const Tensor3& image, const AutoencoderWeights& weights) {
  check_input(image, weights.config);
  nn::Network<float>::Trace trace;
  weights.net.encode(to_matrix(image), 1, image.height, &trace);
  std::vector<Tensor3> out;
  int size = image.height;
  for (const auto& act : trace.enc_out) {
    size = nn::down_size(size);
    out.push_back(to_tensor(act, size));
  }
  return out;
}

Tensor3 decode(const Tensor3& latent, const AutoencoderWeights& weights) {
  const auto& cfg = weights.config;
  if (latent.channels != cfg.channels.back() || latent.height != cfg.latent_size() ||
      latent.width != cfg.latent_size()) {
    std::ostringstream os;
    os << "decode: expected latent (" << cfg.channels.back() << "," << cfg.latent_size() << ","
       << cfg.latent_size() << "), got (" << latent.channels << "," << latent.height << "," << latent.width << ")";
    throw std::invalid_argument(os.str());
  }
  return to_tensor(weights.net.decode(to_matrix(latent), 1, latent.height), cfg.input_size);
}

double reconstruction_loss(std::span<const float> x, std::span<const float> x_hat) {
  if (x.size() != x_hat.size()) throw std::invalid_argument("reconstruction_loss: shape mismatch");
  if (x.empty()) throw std::invalid_argument("reconstruction_loss: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - x_hat[i];
    sum += d * d;
  }
  return sum / static_cast<double>(x.size());
}

double reconstruction_loss(const Tensor3& x, const Tensor3& x_hat) {
  if (x.channels != x_hat.channels || x.height != x_hat.height || x.width != x_hat.width) {
    throw std::invalid_argument("reconstruction_loss: shape mismatch");
  }
  return reconstruction_loss(std::span<const float>(x.data), std::span<const float>(x_hat.data));
}

FeatureVector pool_latent(const Tensor3& latent) {
  if (latent.channels != kFeatureDim) throw std::invalid_argument("pool_latent: latent must have 256 channels");
  FeatureVector f;
  const std::size_t pixels = static_cast<std::size_t>(latent.height) * latent.width;
  for (int c = 0; c < kFeatureDim; ++c) {
    const auto first = latent.data.begin() + static_cast<std::ptrdiff_t>(c * pixels);
    const double sum = std::accumulate(first, first + static_cast<std::ptrdiff_t>(pixels), 0.0);
    f.values[c] = static_cast<float>(sum / static_cast<double>(pixels));
  }
  return f;
}

FeatureVector extract_feature(const Tensor3& image, const AutoencoderWeights& weights) {
  return pool_latent(encode(image, weights));
}

FeatureVector extract_feature(const SliceImage& slice, const AutoencoderWeights& weights) {
  return extract_feature(to_encoder_input(slice, weights.config.input_size), weights);
}

std::vector<FeatureVector> extract_features(std::span<const SliceImage* const> slices,
                                            const AutoencoderWeights& weights, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("extract_features: batch_size must be >= 1");
  const int size = weights.config.input_size;
  const int latent = weights.config.latent_size();
  const Eigen::Index latent_pixels = static_cast<Eigen::Index>(latent) * latent;
  std::vector<FeatureVector> out;
  out.reserve(slices.size());
  for (std::size_t start = 0; start < slices.size(); start += batch_size) {
    const std::size_t end = std::min(slices.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::vector<float>> grays;
    std::vector<const std::vector<float>*> ptrs;
    for (std::size_t i = start; i < end; ++i) grays.push_back(resize_slice(*slices[i], size));
    for (const auto& g : grays) ptrs.push_back(&g);
    const int b = static_cast<int>(end - start);
    MatF z = weights.net.encode(batch_matrix(ptrs, size), b, size);
    for (int k = 0; k < b; ++k) {
      FeatureVector f;
      for (int c = 0; c < kFeatureDim; ++c) {
        double sum = 0.0;
        for (Eigen::Index p = 0; p < latent_pixels; ++p) sum += z(c, k * latent_pixels + p);
        f.values[c] = static_cast<float>(sum / static_cast<double>(latent_pixels));
      }
      out.push_back(f);
    }
  }
  return out;
}

bool CheckpointSelector::offer(int epoch, double val_loss, const AutoencoderWeights& weights) {
  if (best_epoch_ >= 0 && !(val_loss < best_loss_)) return false;
  best_epoch_ = epoch;
  best_loss_ = val_loss;
  best_ = weights;
  return true;
}

const AutoencoderWeights& CheckpointSelector::best() const {
  if (best_epoch_ < 0) throw std::logic_error("CheckpointSelector: no checkpoint offered");
  return best_;
}

namespace {

double mean_loss(const nn::Network<float>& net, const std::vector<std::vector<float>>& grays, int size,
                 int batch_size) {
  double total = 0.0;
  for (std::size_t start = 0; start < grays.size(); start += batch_size) {
    const std::size_t end = std::min(grays.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const std::vector<float>*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&grays[i]);
    const int b = static_cast<int>(end - start);
    total += static_cast<double>(net.loss(batch_matrix(ptrs, size), b, size)) * b;
  }
  return total / static_cast<double>(grays.size());
}

}  // namespace

double evaluate_reconstruction(std::span<const SliceImage* const> slices, const AutoencoderWeights& weights,
                               int batch_size) {
  if (slices.empty()) throw std::invalid_argument("evaluate_reconstruction: no slices");
  const int size = weights.config.input_size;
  return mean_loss(weights.net, resize_all(slices, size), size, batch_size);
}

TrainResult train_autoencoder(std::span<const SliceImage* const> train_slices,
                              std::span<const SliceImage* const> val_slices, const EncoderConfig& encoder,
                              const TrainConfig& config, const EpochCallback& on_epoch) {
  if (train_slices.empty()) throw std::invalid_argument("train_autoencoder: empty training set");
  if (val_slices.empty()) throw std::invalid_argument("train_autoencoder: empty validation set");
  encoder.validate();
  config.validate();

  const int size = encoder.input_size;
  const auto train = resize_all(train_slices, size);
  const auto val = resize_all(val_slices, size);

  auto weights = AutoencoderWeights::initialized(encoder, config.seed);
  nn::Adam<float> adam(weights.net, config.learning_rate);
  Rng shuffler(derive_seed(config.seed, "ae-shuffle"));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  CheckpointSelector selector;
  TrainResult result;
  std::vector<nn::ConvParams<float>> genc, gdec;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    shuffler.shuffle(order.begin(), order.end());
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<const std::vector<float>*> ptrs;
      for (std::size_t i = start; i < end; ++i) ptrs.push_back(&train[order[i]]);
      const int b = static_cast<int>(end - start);
      const double loss = weights.net.loss_and_gradient(batch_matrix(ptrs, size), b, size, genc, gdec);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train_autoencoder: non-finite training loss at epoch " + std::to_string(epoch + 1) +
                                 ", batch starting at " + std::to_string(start));
      }
      adam.step(weights.net, genc, gdec);
      epoch_total += loss * b;
    }
    const double train_mse = epoch_total / static_cast<double>(train.size());
    const double val_mse = mean_loss(weights.net, val, size, config.batch_size);
    if (!std::isfinite(val_mse)) {
      throw std::runtime_error("train_autoencoder: non-finite validation loss at epoch " + std::to_string(epoch + 1));
    }
    result.history.train_mse.push_back(train_mse);
    result.history.val_mse.push_back(val_mse);
    selector.offer(epoch, val_mse, weights);
    if (on_epoch) on_epoch(epoch, train_mse, val_mse);
  }
  result.history.best_epoch = selector.best_epoch();
  result.weights = selector.best();
  return result;
}

// Checkpoint file layout: "MUSAE\0\0\1", u64 header length, JSON header,
// then every tensor as little-endian float32 in header order.
namespace {

constexpr char kMagic[8] = {'M', 'U', 'S', 'A', 'E', 0, 0, 1};

struct TensorRef {
  std::string name;
  float* data;
  Eigen::Index rows;
  Eigen::Index cols;
};

std::vector<TensorRef> tensor_refs(nn::Network<float>& net) {
  std::vector<TensorRef> refs;
  auto add = [&](const std::string& prefix, std::vector<nn::ConvParams<float>>& layers) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& p = layers[i];
      refs.push_back({prefix + "." + std::to_string(i) + ".weight", p.weight.data(), p.weight.rows(), p.weight.cols()});
      refs.push_back({prefix + "." + std::to_string(i) + ".bias", p.bias.data(), p.bias.rows(), 1});
    }
  };
  add("encoder", net.encoder);
  add("decoder", net.decoder);
  return refs;
}

nlohmann::json config_json(const EncoderConfig& c) {
  return {{"input_size", c.input_size},
          {"channels", c.channels},
          {"kernel", nn::kKernel},
          {"stride", nn::kStride},
          {"padding", nn::kPad}};
}

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

void write_floats(std::ostream& out, const float* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(data[i]);
    unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                          static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
}

void read_floats(std::istream& in, float* data, std::size_t n) {
  std::vector<unsigned char> buf(n * 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = buf[4 * i] | (buf[4 * i + 1] << 8) | (buf[4 * i + 2] << 16) |
                         (static_cast<std::uint32_t>(buf[4 * i + 3]) << 24);
    data[i] = std::bit_cast<float>(bits);
  }
}

}  // namespace

void save_checkpoint(const AutoencoderWeights& weights, const std::filesystem::path& path) {
  auto copy = weights;
  auto refs = tensor_refs(copy.net);
  nlohmann::json header;
  header["format"] = "mus-autoencoder";
  header["version"] = 1;
  header["config"] = config_json(weights.config);
  header["seed"] = weights.seed;
  header["tensors"] = nlohmann::json::array();
  for (const auto& r : refs) header["tensors"].push_back({{"name", r.name}, {"shape", {r.rows, r.cols}}});
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& r : refs) write_floats(out, r.data, static_cast<std::size_t>(r.rows * r.cols));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

AutoencoderWeights load_checkpoint(const std::filesystem::path& path, const EncoderConfig& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("not an autoencoder checkpoint: " + path.string());
  const auto length = read_u64(in);
  if (!in || length > (1u << 24)) throw std::runtime_error("corrupt checkpoint header: " + path.string());
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt checkpoint header: " + std::string(e.what()));
  }
  if (header.value("version", 0) != 1) throw std::runtime_error("unsupported checkpoint version");
  if (header.at("config") != config_json(expected)) {
    throw std::runtime_error("checkpoint config " + header.at("config").dump() + " disagrees with expected " +
                             config_json(expected).dump());
  }
  auto weights = AutoencoderWeights::zeros(expected);
  weights.seed = header.at("seed").get<std::uint64_t>();
  auto refs = tensor_refs(weights.net);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != refs.size()) throw std::runtime_error("checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& t = tensors[i];
    if (t.at("name") != refs[i].name || t.at("shape")[0] != refs[i].rows || t.at("shape")[1] != refs[i].cols) {
      throw std::runtime_error("checkpoint tensor " + refs[i].name + " has unexpected shape");
    }
    read_floats(in, refs[i].data, static_cast<std::size_t>(refs[i].rows * refs[i].cols));
  }
  if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
  if (!weights.all_finite()) throw std::runtime_error("checkpoint contains non-finite parameters");
  return weights;
}

}  // namespace mus
