#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "clh/common.hpp"
#include "clh/taskgen.hpp"

namespace clh {

/// Named parameter tensors. Names:
///   enc.<l>.w / enc.<l>.b                  shared encoder layers
///   head.<lang>.w / head.<lang>.b          per-language decoder heads
///   adapter.<lang>.{down,up}.{w,b}         per-language residual adapters
/// Biases are 1 x n row matrices.
using ParamMap = std::map<std::string, Matrix>;
/// Gradients share ParamMap's naming; absent names mean "not touched".
using GradientSet = ParamMap;

/// Shape and bit-for-bit equality.
bool identical(const Matrix& a, const Matrix& b);
bool identical(const ParamMap& a, const ParamMap& b);

struct ModelConfig {
  int feature_dim = 16;
  int hidden = 32;
  int encoder_layers = 2;
  int vocab_size = 16;
  int adapter_dim = 8;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::string encoder_weight(int layer);
std::string encoder_bias(int layer);
std::string head_prefix(std::string_view lang);
std::string adapter_prefix(std::string_view lang);

class ModelState {
 public:
  ModelState() = default;
  /// Encoder initialized from rng_seed; no heads yet.
  ModelState(const ModelConfig& cfg, std::uint64_t rng_seed);

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t rng_seed() const { return rng_seed_; }
  const ParamMap& params() const { return params_; }
  ParamMap& params() { return params_; }
  const Matrix& param(const std::string& name) const;

  bool has_head(std::string_view lang) const;
  bool has_adapter(std::string_view lang) const;
  /// Seeded by (rng_seed, lang) so creation order does not matter. No-op if present.
  void add_head(const std::string& lang);
  /// Down-projection random, up-projection zero: starts as the identity.
  void add_adapter(const std::string& lang);
  std::vector<std::string> head_languages() const;

  std::size_t parameter_count() const;
  bool all_finite() const;

  friend bool operator==(const ModelState& a, const ModelState& b) {
    return a.cfg_ == b.cfg_ && a.rng_seed_ == b.rng_seed_ && identical(a.params_, b.params_);
  }

 private:
  ModelConfig cfg_;
  std::uint64_t rng_seed_ = 0;
  ParamMap params_;
};

/// Bare model constructor for checkpoint loading.
ModelState make_model(const ModelConfig& cfg, std::uint64_t rng_seed, ParamMap params);

struct AdamSlot {
  Matrix m;
  Matrix v;
  std::int64_t step = 0;

  friend bool operator==(const AdamSlot& a, const AdamSlot& b) {
    return a.step == b.step && identical(a.m, b.m) && identical(a.v, b.v);
  }
};

struct OptState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  /// Moments per parameter tensor, created on first gradient.
  std::map<std::string, AdamSlot> slots;

  friend bool operator==(const OptState&, const OptState&) = default;
};

/// One labeled training example.
struct Example {
  const Sample* sample = nullptr;
  std::string language;
};

struct ForwardTrace {
  std::vector<Matrix> activations;  // [0] = input, [l+1] = tanh output of layer l
  Matrix adapter_hidden;            // tanh bottleneck, empty when no adapter
  Matrix top;                       // representation fed to the head
  Matrix logits;
  bool adapter = false;
};

/// Per-frame logits (T x vocab). Throws ValidationError for a missing head,
/// or a missing adapter when use_adapter is set.
Matrix forward(const ModelState& model, const Sample& sample, std::string_view lang, bool use_adapter);
ForwardTrace forward_trace(const ModelState& model, const Matrix& features, std::string_view lang, bool use_adapter);

/// Accumulates parameter gradients for upstream gradient d_logits into grads.
void backprop(const ModelState& model, const ForwardTrace& trace, std::string_view lang, const Matrix& d_logits,
              GradientSet& grads);

struct LossGrad {
  double loss = 0.0;
  GradientSet grads;
};

/// Mean per-frame cross-entropy over every frame of the minibatch. A language's
/// adapter is used whenever the model has one.
LossGrad loss_and_grad(const ModelState& model, std::span<const Example> minibatch);

/// Gradient of the mean over frames of ||logits||^2 for one sample.
LossGrad output_norm_and_grad(const ModelState& model, const Sample& sample, std::string_view lang);

/// Adam update of exactly the tensors present in grads. Each tensor keeps its
/// own bias-correction counter; opt.step counts calls.
void adam_step(ModelState& model, OptState& opt, const GradientSet& grads);

/// Per-frame argmax; ties resolve to the lowest token index.
std::vector<int> decode(const Matrix& logits);

/// Draws languages with P(l) proportional to count_l^(1/temperature).
class TemperatureSampler {
 public:
  TemperatureSampler(const std::map<std::string, double>& counts, double temperature, std::uint64_t seed);

  const std::vector<std::string>& languages() const { return langs_; }
  const std::vector<double>& probabilities() const { return probs_; }
  const std::string& next();

 private:
  std::vector<std::string> langs_;
  std::vector<double> probs_;
  std::vector<double> cdf_;
  Rng rng_;
};

}  // namespace clh
