#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "create/autodiff.hpp"
#include "create/checkpoint.hpp"
#include "create/rng.hpp"

namespace create {

struct ModelConfig {
  std::vector<std::size_t> hidden = {256, 128};
  std::size_t feature_dim = 64;  // d
  std::size_t latent_dim = 32;   // l
  bool decoder_tanh = true;
  bool squared_errors = false;

  void validate() const;
};

/// Shared backbone: an MLP with tanh after every layer. Weights are drawn
/// uniformly from +-1/sqrt(fan_in); biases start at zero.
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(std::size_t input_dim, std::vector<std::size_t> widths, Rng& rng);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t feature_dim() const { return widths_.back(); }
  std::size_t num_layers() const { return widths_.size(); }

  Var forward(const Var& x) const;
  /// Grad-free forward on raw data.
  Tensor features(const Tensor& x) const;

  std::vector<Var> parameters() const;
  std::size_t param_count() const;
  void set_trainable(bool trainable);

  /// Deep copy; the copy shares no state with the original.
  FeatureExtractor clone() const;

  void save(Checkpoint& ckpt) const;
  static FeatureExtractor load(const Checkpoint& ckpt);

 private:
  std::size_t input_dim_ = 0;
  std::vector<std::size_t> widths_;
  std::vector<Var> weights_;  // layer i: widths[i] x fan_in
  std::vector<Var> biases_;   // layer i: widths[i]
};

/// One class-specific auto-encoder: encoder d -> l with tanh, decoder l -> d
/// with tanh by default (linear when decoder_tanh is off).
struct ClassAutoEncoder {
  Var enc_w;  // l x d
  Var enc_b;  // l
  Var dec_w;  // d x l
  Var dec_b;  // d

  static ClassAutoEncoder init(std::size_t feature_dim, std::size_t latent_dim, Rng& rng);

  Var encode(const Var& h) const;
  Var decode(const Var& z, bool decoder_tanh) const;
  Var reconstruct(const Var& h, bool decoder_tanh) const;
  ClassAutoEncoder clone() const;
};

/// The growing set of per-class auto-encoders; bank index == class id.
class AutoEncoderBank {
 public:
  AutoEncoderBank() = default;
  AutoEncoderBank(std::size_t feature_dim, std::size_t latent_dim, bool decoder_tanh,
                  bool squared_errors);

  std::size_t size() const { return aes_.size(); }
  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t latent_dim() const { return latent_dim_; }
  bool decoder_tanh() const { return decoder_tanh_; }
  bool squared_errors() const { return squared_errors_; }

  /// Adds `count` freshly initialized auto-encoders; existing ones are left
  /// untouched bit for bit.
  void append_classes(std::size_t count, Rng& rng);

  const ClassAutoEncoder& ae(std::size_t class_id) const;

  /// n x C matrix of reconstruction errors |g_i(f_i(h)) - h|_2 (or its square
  /// when squared_errors is set). Column i belongs to class i.
  Var reconstruction_errors(const Var& h) const;
  Tensor reconstruction_errors(const Tensor& h) const;

  /// Latent codes of a batch under one class's encoder.
  Var latent_codes(const Var& h, std::size_t class_id) const;

  std::vector<Var> parameters() const;
  std::vector<Var> parameters_for(std::size_t class_id) const;
  std::size_t param_count() const;
  void set_trainable(bool trainable);

  AutoEncoderBank clone() const;

  void save(Checkpoint& ckpt) const;
  static AutoEncoderBank load(const Checkpoint& ckpt);

 private:
  std::size_t feature_dim_ = 0;
  std::size_t latent_dim_ = 0;
  bool decoder_tanh_ = true;
  bool squared_errors_ = false;
  std::vector<ClassAutoEncoder> aes_;
};

struct ParamCounts {
  std::size_t backbone = 0;
  std::size_t head = 0;            // actual head parameters (with biases)
  std::size_t head_bias_free = 0;  // 2 * C * l * d
  std::size_t total = 0;           // backbone + head
};

ParamCounts count_params(const FeatureExtractor& extractor, const AutoEncoderBank& bank);
/// Closed form for a head of C classes: with biases C*(l*d + l + d*l + d),
/// without 2*C*l*d.
std::size_t head_param_count(std::size_t num_classes, std::size_t feature_dim,
                             std::size_t latent_dim, bool with_bias);

/// Class probabilities from reconstruction errors: softmax over -alpha * eps.
Var predict_proba(const Var& errors, double alpha);
Tensor predict_proba(const Tensor& errors, double alpha);
/// Argmin of each error row; ties resolve to the lowest class id.
std::vector<int> classify_from_errors(const Tensor& errors);

}  // namespace create
