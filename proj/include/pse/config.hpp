#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "pse/error.hpp"
#include "pse/losses.hpp"

namespace pse {

struct ToyDatasetSpec {
  std::vector<std::string> families{"sphere", "box", "torus", "cylinder", "two_box"};
  std::size_t per_family = 40;
  std::size_t points = 512;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

struct AugmentConfig {
  double scale_min = 0.8;
  double scale_max = 1.2;
  bool rotate = true;
  double jitter_sigma = 0.005;
  double jitter_clip = 0.015;
};

struct TrainConfig {
  std::size_t N = 512;
  std::size_t n = 128;
  std::size_t r = 4;
  std::size_t K = 8;
  std::size_t m = 8;
  std::size_t C = 32;
  std::size_t C_prime = 64;
  std::size_t k_conv = 8;
  double alpha = 5.0;
  double beta = 2.0;
  double lambda = 100.0;
  double tau = 1e-6;
  std::size_t batch_size = 8;
  std::size_t epochs = 60;
  double lr = 1e-3;
  double lr_decay = 0.5;
  std::size_t decay_every = 20;
  double lr_floor = 1e-6;
  std::uint64_t seed = 0;
  bool augment = true;
  std::size_t extractor_blocks = 3;
  ToyDatasetSpec dataset;

  LossWeights weights() const { return LossWeights{alpha, beta, lambda, tau, m}; }

  double lr_at(std::size_t epoch) const {
    const double steps = std::floor(static_cast<double>(epoch) /
                                    static_cast<double>(decay_every));
    return std::max(lr_floor, lr * std::pow(lr_decay, steps));
  }

  void validate() const {
    if (N == 0 || n == 0 || r == 0 || K == 0 || m == 0 || C == 0 || C_prime == 0 ||
        k_conv == 0 || batch_size == 0)
      throw config_error("config: all counts must be positive");
    if (r * n != N)
      throw config_error("config: r*n must equal N (" + std::to_string(r) + "*" +
                         std::to_string(n) + " != " + std::to_string(N) + ")");
    if (K * n <= N)
      throw config_error("config: need K > N/n for neighborhood coverage");
    if (K > N) throw config_error("config: K exceeds N");
    if (m >= N) throw config_error("config: need m < N");
    if (k_conv > n) throw config_error("config: k_conv exceeds n");
    if (extractor_blocks == 0) throw config_error("config: extractor_blocks must be >= 1");
    if (alpha < 0 || beta < 0 || lambda < 0)
      throw config_error("config: loss weights must be >= 0");
    if (tau <= 0) throw config_error("config: tau must be > 0");
    if (lr <= 0) throw config_error("config: lr must be > 0");
    if (lr_decay <= 0 || lr_decay > 1)
      throw config_error("config: lr_decay must be in (0, 1]");
    if (decay_every == 0) throw config_error("config: decay_every must be >= 1");
    if (lr_floor < 0 || lr_floor > lr)
      throw config_error("config: need 0 <= lr_floor <= lr");
    if (dataset.points != N)
      throw config_error("config: dataset.points must equal N");
    if (dataset.families.empty() || dataset.per_family == 0)
      throw config_error("config: dataset must name at least one family");
  }
};

inline nlohmann::json dataset_to_json(const ToyDatasetSpec& d) {
  return nlohmann::json{{"families", d.families}, {"per_family", d.per_family},
                        {"points", d.points},     {"noise_sigma", d.noise_sigma},
                        {"seed", d.seed}};
}

inline ToyDatasetSpec dataset_from_json(const nlohmann::json& j) {
  ToyDatasetSpec d;
  if (j.contains("families")) d.families = j.at("families").get<std::vector<std::string>>();
  if (j.contains("per_family")) d.per_family = j.at("per_family").get<std::size_t>();
  if (j.contains("points")) d.points = j.at("points").get<std::size_t>();
  if (j.contains("noise_sigma")) d.noise_sigma = j.at("noise_sigma").get<double>();
  if (j.contains("seed")) d.seed = j.at("seed").get<std::uint64_t>();
  return d;
}

inline nlohmann::json config_to_json(const TrainConfig& c) {
  return nlohmann::json{{"N", c.N},
                        {"n", c.n},
                        {"r", c.r},
                        {"K", c.K},
                        {"m", c.m},
                        {"C", c.C},
                        {"C_prime", c.C_prime},
                        {"k_conv", c.k_conv},
                        {"alpha", c.alpha},
                        {"beta", c.beta},
                        {"lambda", c.lambda},
                        {"tau", c.tau},
                        {"batch_size", c.batch_size},
                        {"epochs", c.epochs},
                        {"lr", c.lr},
                        {"lr_decay", c.lr_decay},
                        {"decay_every", c.decay_every},
                        {"lr_floor", c.lr_floor},
                        {"seed", c.seed},
                        {"augment", c.augment},
                        {"extractor_blocks", c.extractor_blocks},
                        {"dataset", dataset_to_json(c.dataset)}};
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto load = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  load("N", c.N);
  load("n", c.n);
  load("r", c.r);
  load("K", c.K);
  load("m", c.m);
  load("C", c.C);
  load("C_prime", c.C_prime);
  load("k_conv", c.k_conv);
  load("alpha", c.alpha);
  load("beta", c.beta);
  load("lambda", c.lambda);
  load("tau", c.tau);
  load("batch_size", c.batch_size);
  load("epochs", c.epochs);
  load("lr", c.lr);
  load("lr_decay", c.lr_decay);
  load("decay_every", c.decay_every);
  load("lr_floor", c.lr_floor);
  load("seed", c.seed);
  load("augment", c.augment);
  load("extractor_blocks", c.extractor_blocks);
  if (j.contains("dataset")) c.dataset = dataset_from_json(j.at("dataset"));
  return c;
}

inline std::string config_to_string(const TrainConfig& c) {
  return config_to_json(c).dump(2);
}

inline TrainConfig config_from_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("config: invalid JSON: ") + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("config: bad field: ") + e.what());
  }
}

}  // namespace pse
