#include "create/model.hpp"

#include <cmath>

#include "create/errors.hpp"

namespace create {

void ModelConfig::validate() const {
  if (feature_dim == 0) throw Error("model feature_dim must be positive");
  if (latent_dim == 0) throw Error("model latent_dim must be positive");
  for (std::size_t w : hidden)
    if (w == 0) throw Error("model hidden widths must be positive");
}

namespace {

Var init_weight(std::size_t out_dim, std::size_t in_dim, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  Tensor w = Tensor::zeros({out_dim, in_dim});
  for (double& v : w.data) v = rng.uniform(-bound, bound);
  return parameter(std::move(w));
}

Var clone_var(const Var& v) {
  Var copy = parameter(v.value());
  copy.set_requires_grad(v.requires_grad());
  return copy;
}

}  // namespace

FeatureExtractor::FeatureExtractor(std::size_t input_dim, std::vector<std::size_t> widths,
                                   Rng& rng)
    : input_dim_(input_dim), widths_(std::move(widths)) {
  if (input_dim_ == 0) throw Error("extractor input_dim must be positive");
  if (widths_.empty()) throw Error("extractor needs at least one layer");
  std::size_t fan_in = input_dim_;
  for (std::size_t w : widths_) {
    if (w == 0) throw Error("extractor layer width must be positive");
    weights_.push_back(init_weight(w, fan_in, rng));
    biases_.push_back(parameter(Tensor::zeros({w})));
    fan_in = w;
  }
}

Var FeatureExtractor::forward(const Var& x) const {
  if (weights_.empty()) throw Error("forward on uninitialized extractor");
  Var h = x;
  for (std::size_t i = 0; i < weights_.size(); ++i)
    h = tanh(linear(h, weights_[i], biases_[i]));
  return h;
}

Tensor FeatureExtractor::features(const Tensor& x) const {
  NoGradGuard guard;
  return forward(constant(x)).value();
}

std::vector<Var> FeatureExtractor::parameters() const {
  std::vector<Var> params;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    params.push_back(weights_[i]);
    params.push_back(biases_[i]);
  }
  return params;
}

std::size_t FeatureExtractor::param_count() const {
  std::size_t n = 0;
  for (const Var& p : parameters()) n += p.numel();
  return n;
}

void FeatureExtractor::set_trainable(bool trainable) {
  for (Var p : parameters()) p.set_requires_grad(trainable);
}

FeatureExtractor FeatureExtractor::clone() const {
  FeatureExtractor copy;
  copy.input_dim_ = input_dim_;
  copy.widths_ = widths_;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    copy.weights_.push_back(clone_var(weights_[i]));
    copy.biases_.push_back(clone_var(biases_[i]));
  }
  return copy;
}

void FeatureExtractor::save(Checkpoint& ckpt) const {
  ckpt.put("meta/extractor_layers", Tensor::scalar(static_cast<double>(widths_.size())));
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    const std::string base = "extractor/layer" + std::to_string(i) + "/";
    ckpt.put(base + "w", weights_[i].value());
    ckpt.put(base + "b", biases_[i].value());
  }
}

FeatureExtractor FeatureExtractor::load(const Checkpoint& ckpt) {
  const std::size_t layers =
      static_cast<std::size_t>(ckpt.get("meta/extractor_layers").at(0));
  if (layers == 0) throw FormatError("checkpoint", "extractor has no layers");
  FeatureExtractor out;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string base = "extractor/layer" + std::to_string(i) + "/";
    Tensor w = ckpt.get(base + "w");
    Tensor b = ckpt.get(base + "b");
    if (w.rank() != 2 || b.rank() != 1 || w.rows() != b.numel())
      throw FormatError("checkpoint", "malformed extractor layer " + std::to_string(i));
    if (i == 0)
      out.input_dim_ = w.cols();
    else if (w.cols() != out.widths_.back())
      throw FormatError("checkpoint", "extractor layer widths do not chain");
    out.widths_.push_back(w.rows());
    out.weights_.push_back(parameter(std::move(w)));
    out.biases_.push_back(parameter(std::move(b)));
  }
  return out;
}

ClassAutoEncoder ClassAutoEncoder::init(std::size_t feature_dim, std::size_t latent_dim,
                                        Rng& rng) {
  ClassAutoEncoder ae;
  ae.enc_w = init_weight(latent_dim, feature_dim, rng);
  ae.enc_b = parameter(Tensor::zeros({latent_dim}));
  ae.dec_w = init_weight(feature_dim, latent_dim, rng);
  ae.dec_b = parameter(Tensor::zeros({feature_dim}));
  return ae;
}

Var ClassAutoEncoder::encode(const Var& h) const { return tanh(linear(h, enc_w, enc_b)); }

Var ClassAutoEncoder::decode(const Var& z, bool decoder_tanh) const {
  Var a = linear(z, dec_w, dec_b);
  return decoder_tanh ? tanh(a) : a;
}

Var ClassAutoEncoder::reconstruct(const Var& h, bool decoder_tanh) const {
  return decode(encode(h), decoder_tanh);
}

ClassAutoEncoder ClassAutoEncoder::clone() const {
  ClassAutoEncoder copy;
  copy.enc_w = clone_var(enc_w);
  copy.enc_b = clone_var(enc_b);
  copy.dec_w = clone_var(dec_w);
  copy.dec_b = clone_var(dec_b);
  return copy;
}

AutoEncoderBank::AutoEncoderBank(std::size_t feature_dim, std::size_t latent_dim,
                                 bool decoder_tanh, bool squared_errors)
    : feature_dim_(feature_dim),
      latent_dim_(latent_dim),
      decoder_tanh_(decoder_tanh),
      squared_errors_(squared_errors) {
  if (feature_dim_ == 0 || latent_dim_ == 0)
    throw Error("auto-encoder bank needs positive feature and latent dims");
}

void AutoEncoderBank::append_classes(std::size_t count, Rng& rng) {
  if (feature_dim_ == 0) throw Error("append_classes on uninitialized bank");
  for (std::size_t i = 0; i < count; ++i)
    aes_.push_back(ClassAutoEncoder::init(feature_dim_, latent_dim_, rng));
}

const ClassAutoEncoder& AutoEncoderBank::ae(std::size_t class_id) const {
  if (class_id >= aes_.size())
    throw Error("class id " + std::to_string(class_id) + " outside bank of size " +
                std::to_string(aes_.size()));
  return aes_[class_id];
}

Var AutoEncoderBank::reconstruction_errors(const Var& h) const {
  if (aes_.empty()) throw Error("reconstruction_errors on an empty bank");
  if (h.shape().size() != 2 || h.shape()[1] != feature_dim_)
    throw ShapeError("reconstruction_errors", h.shape(), {h.shape()[0], feature_dim_});
  std::vector<Var> cols;
  cols.reserve(aes_.size());
  for (const ClassAutoEncoder& ae : aes_) {
    Var sq = row_squared_norm(sub(ae.reconstruct(h, decoder_tanh_), h));
    cols.push_back(squared_errors_ ? sq : sqrt(sq));
  }
  return concat_cols(cols);
}

Tensor AutoEncoderBank::reconstruction_errors(const Tensor& h) const {
  NoGradGuard guard;
  return reconstruction_errors(constant(h)).value();
}

Var AutoEncoderBank::latent_codes(const Var& h, std::size_t class_id) const {
  return ae(class_id).encode(h);
}

std::vector<Var> AutoEncoderBank::parameters() const {
  std::vector<Var> params;
  for (std::size_t c = 0; c < aes_.size(); ++c) {
    auto p = parameters_for(c);
    params.insert(params.end(), p.begin(), p.end());
  }
  return params;
}

std::vector<Var> AutoEncoderBank::parameters_for(std::size_t class_id) const {
  const ClassAutoEncoder& a = ae(class_id);
  return {a.enc_w, a.enc_b, a.dec_w, a.dec_b};
}

std::size_t AutoEncoderBank::param_count() const {
  std::size_t n = 0;
  for (const Var& p : parameters()) n += p.numel();
  return n;
}

void AutoEncoderBank::set_trainable(bool trainable) {
  for (Var p : parameters()) p.set_requires_grad(trainable);
}

AutoEncoderBank AutoEncoderBank::clone() const {
  AutoEncoderBank copy(feature_dim_, latent_dim_, decoder_tanh_, squared_errors_);
  for (const ClassAutoEncoder& a : aes_) copy.aes_.push_back(a.clone());
  return copy;
}

void AutoEncoderBank::save(Checkpoint& ckpt) const {
  ckpt.put("meta/num_classes", Tensor::scalar(static_cast<double>(aes_.size())));
  ckpt.put("meta/feature_dim", Tensor::scalar(static_cast<double>(feature_dim_)));
  ckpt.put("meta/latent_dim", Tensor::scalar(static_cast<double>(latent_dim_)));
  ckpt.put("meta/decoder_tanh", Tensor::scalar(decoder_tanh_ ? 1.0 : 0.0));
  ckpt.put("meta/squared_errors", Tensor::scalar(squared_errors_ ? 1.0 : 0.0));
  for (std::size_t c = 0; c < aes_.size(); ++c) {
    const std::string base = "ae/" + std::to_string(c) + "/";
    ckpt.put(base + "enc_w", aes_[c].enc_w.value());
    ckpt.put(base + "enc_b", aes_[c].enc_b.value());
    ckpt.put(base + "dec_w", aes_[c].dec_w.value());
    ckpt.put(base + "dec_b", aes_[c].dec_b.value());
  }
}

AutoEncoderBank AutoEncoderBank::load(const Checkpoint& ckpt) {
  const std::size_t num_classes = static_cast<std::size_t>(ckpt.get("meta/num_classes").at(0));
  const std::size_t d = static_cast<std::size_t>(ckpt.get("meta/feature_dim").at(0));
  const std::size_t l = static_cast<std::size_t>(ckpt.get("meta/latent_dim").at(0));
  AutoEncoderBank out(d, l, ckpt.get("meta/decoder_tanh").at(0) != 0.0,
                      ckpt.get("meta/squared_errors").at(0) != 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::string base = "ae/" + std::to_string(c) + "/";
    ClassAutoEncoder ae;
    ae.enc_w = parameter(ckpt.get(base + "enc_w"));
    ae.enc_b = parameter(ckpt.get(base + "enc_b"));
    ae.dec_w = parameter(ckpt.get(base + "dec_w"));
    ae.dec_b = parameter(ckpt.get(base + "dec_b"));
    if (ae.enc_w.shape() != std::vector<std::size_t>{l, d} ||
        ae.dec_w.shape() != std::vector<std::size_t>{d, l})
      throw FormatError("checkpoint", "auto-encoder " + std::to_string(c) +
                                          " has inconsistent shapes");
    out.aes_.push_back(std::move(ae));
  }
  return out;
}

ParamCounts count_params(const FeatureExtractor& extractor, const AutoEncoderBank& bank) {
  ParamCounts counts;
  counts.backbone = extractor.param_count();
  counts.head = bank.param_count();
  counts.head_bias_free =
      head_param_count(bank.size(), bank.feature_dim(), bank.latent_dim(), false);
  counts.total = counts.backbone + counts.head;
  return counts;
}

std::size_t head_param_count(std::size_t num_classes, std::size_t feature_dim,
                             std::size_t latent_dim, bool with_bias) {
  const std::size_t per_class = with_bias
                                    ? latent_dim * feature_dim + latent_dim +
                                          feature_dim * latent_dim + feature_dim
                                    : 2 * latent_dim * feature_dim;
  return num_classes * per_class;
}

Var predict_proba(const Var& errors, double alpha) {
  if (!(alpha > 0.0)) throw Error("predict_proba: alpha must be positive");
  return softmax_rows(scale(errors, -alpha));
}

Tensor predict_proba(const Tensor& errors, double alpha) {
  NoGradGuard guard;
  return predict_proba(constant(errors), alpha).value();
}

std::vector<int> classify_from_errors(const Tensor& errors) {
  if (errors.rank() != 2 || errors.cols() == 0)
    throw Error("classify_from_errors needs a non-empty 2-d error matrix");
  std::vector<int> out(errors.rows());
  for (std::size_t i = 0; i < errors.rows(); ++i) {
    const double* row = errors.data.data() + i * errors.cols();
    std::size_t best = 0;
    for (std::size_t j = 1; j < errors.cols(); ++j)
      if (row[j] < row[best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace create
