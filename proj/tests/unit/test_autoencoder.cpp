#include <doctest.h>

#include "helpers.hpp"
#include "mus/autoencoder.hpp"
#include "mus/rng.hpp"

#include <cmath>

using namespace mus;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.input_size = 64;
  return c;
}

Tensor3 random_image(int size, std::uint64_t seed) {
  Rng rng(seed);
  Tensor3 t(3, size, size);
  for (auto& v : t.data) v = static_cast<float>(rng.uniform());
  return t;
}

std::vector<SliceImage> noise_slices(int n, int size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SliceImage> out;
  for (int i = 0; i < n; ++i) {
    SliceImage s{"P", i, size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size)};
    for (auto& c : s.codes) c = static_cast<std::uint8_t>(rng.index(256));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("encoder config invariants") {
  EncoderConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.latent_size() == 8);
  c.input_size = 100;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.channels[0] = 1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.channels[5] = 128;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("shape chain halves per layer and doubles back") {
  const auto cfg = small_config();
  const auto w = AutoencoderWeights::initialized(cfg, 1);
  const auto x = random_image(64, 2);
  const auto layers = encode_layers(x, w);
  REQUIRE(layers.size() == 5);
  for (int k = 0; k < 5; ++k) {
    CHECK(layers[k].channels == cfg.channels[k + 1]);
    CHECK(layers[k].height == 64 >> (k + 1));
    CHECK(layers[k].width == 64 >> (k + 1));
  }
  const auto z = encode(x, w);
  CHECK(z.channels == 256);
  CHECK(z.height == 2);
  const auto y = decode(z, w);
  CHECK(y.channels == 3);
  CHECK(y.height == 64);
  CHECK(y.width == 64);
  CHECK_THROWS_AS(encode(random_image(32, 1), w), std::invalid_argument);
  CHECK_THROWS_AS(decode(Tensor3(128, 2, 2), w), std::invalid_argument);
}

TEST_CASE("zero weights give zero latent and zero reconstruction") {
  const auto w = AutoencoderWeights::zeros(small_config());
  const auto z = encode(Tensor3(3, 64, 64), w);
  for (float v : z.data) CHECK(v == 0.0f);
  const auto y = decode(Tensor3(256, 2, 2), w);
  for (float v : y.data) CHECK(v == 0.0f);
}

TEST_CASE("encode is deterministic") {
  const auto w = AutoencoderWeights::initialized(small_config(), 9);
  const auto x = random_image(64, 4);
  CHECK(encode(x, w).data == encode(x, w).data);
}

TEST_CASE("reconstruction loss examples") {
  const std::vector<float> ones(12, 1.0f), zeros(12, 0.0f);
  CHECK(reconstruction_loss(ones, ones) == 0.0);
  CHECK(reconstruction_loss(ones, zeros) == 1.0);
  const std::vector<float> a{1.0f, 0.0f}, b{0.0f, 0.0f};
  CHECK(reconstruction_loss(a, b) == 0.5);
  CHECK_THROWS_AS(reconstruction_loss(a, ones), std::invalid_argument);
}

TEST_CASE("pooling averages each latent channel") {
  Tensor3 z(256, 8, 8);
  for (int c = 0; c < 256; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) z.at(c, y, x) = c == 3 ? static_cast<float>((x + y) % 2) : 0.25f * c;
  const auto f = pool_latent(z);
  CHECK(f.values[3] == 0.5f);
  CHECK(f.values[8] == 2.0f);

  // Any spatial permutation leaves the features unchanged.
  Tensor3 p = z;
  Rng rng(3);
  std::vector<int> perm(64);
  for (int i = 0; i < 64; ++i) perm[i] = i;
  rng.shuffle(perm.begin(), perm.end());
  for (int c = 0; c < 256; ++c)
    for (int i = 0; i < 64; ++i) p.at(c, perm[i] / 8, perm[i] % 8) = z.at(c, i / 8, i % 8);
  CHECK(pool_latent(p).values == f.values);
}

TEST_CASE("feature extraction batched equals single") {
  const auto w = AutoencoderWeights::initialized(small_config(), 5);
  const auto slices = noise_slices(5, 40, 8);
  std::vector<const SliceImage*> ptrs;
  for (const auto& s : slices) ptrs.push_back(&s);
  const auto batched = extract_features(ptrs, w, 2);
  REQUIRE(batched.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto single = extract_feature(slices[i], w);
    for (int c = 0; c < kFeatureDim; ++c) {
      CHECK(std::isfinite(single.values[c]));
      CHECK(batched[i].values[c] == doctest::Approx(single.values[c]).epsilon(1e-5));
    }
  }
}

TEST_CASE("resize keeps constants and replicates channels") {
  const auto s = testutil::flat_slice("P", 0, 37, 51);
  const auto t = to_encoder_input(s, 32);
  CHECK(t.channels == 3);
  for (float v : t.data) CHECK(v == doctest::Approx(51.0 / 255.0));
}

TEST_CASE("checkpoint selector keeps the minimum validation epoch") {
  CheckpointSelector sel;
  const auto cfg = small_config();
  const std::vector<double> val{0.5, 0.3, 0.4};
  for (int e = 0; e < 3; ++e) sel.offer(e, val[e], AutoencoderWeights::initialized(cfg, 100 + e));
  CHECK(sel.best_epoch() == 1);
  CHECK(sel.best_loss() == 0.3);
  CHECK(sel.best().seed == 101);
  CHECK_FALSE(sel.offer(3, 0.3, AutoencoderWeights::initialized(cfg, 200)));
  CHECK(sel.best_epoch() == 1);
}

TEST_CASE("training is deterministic and reduces loss") {
  EncoderConfig cfg;
  cfg.input_size = 32;
  const auto slices = noise_slices(40, 32, 1);
  std::vector<const SliceImage*> train, val;
  for (int i = 0; i < 40; ++i) (i < 32 ? train : val).push_back(&slices[i]);
  TrainConfig tc;
  tc.max_epochs = 4;
  tc.batch_size = 8;
  tc.seed = 17;
  const auto a = train_autoencoder(train, val, cfg, tc);
  const auto b = train_autoencoder(train, val, cfg, tc);
  CHECK(a.history.train_mse == b.history.train_mse);
  CHECK(a.history.val_mse == b.history.val_mse);
  CHECK(a.history.train_mse.size() == 4);
  CHECK(a.history.train_mse.back() < a.history.train_mse.front());
  for (double v : a.history.val_mse) CHECK(a.history.val_mse[a.history.best_epoch] <= v);
  CHECK(a.weights.all_finite());
  CHECK_THROWS_AS(train_autoencoder({}, val, cfg, tc), std::invalid_argument);
  CHECK_THROWS_AS(train_autoencoder(train, {}, cfg, tc), std::invalid_argument);
}

TEST_CASE("checkpoint round trip and config rejection") {
  testutil::TempDir dir("ckpt");
  const auto cfg = small_config();
  const auto w = AutoencoderWeights::initialized(cfg, 77);
  save_checkpoint(w, dir.path() / "a.bin");
  const auto back = load_checkpoint(dir.path() / "a.bin", cfg);
  CHECK(back.seed == 77);
  const auto x = random_image(64, 3);
  CHECK(encode(x, back).data == encode(x, w).data);
  CHECK_THROWS(load_checkpoint(dir.path() / "a.bin", EncoderConfig{}));
  CHECK_THROWS(load_checkpoint(dir.path() / "missing.bin", cfg));
  std::ofstream(dir.path() / "junk.bin") << "junkjunkjunk";
  CHECK_THROWS(load_checkpoint(dir.path() / "junk.bin", cfg));
}
