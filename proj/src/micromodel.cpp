#include "clh/micromodel.hpp"

#include <cmath>
#include <cstring>
#include <limits>

namespace clh {
namespace {

void glorot(Matrix& w, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = (2.0 * uniform01(rng) - 1.0) * limit;
}

Matrix add_bias(Matrix x, const Matrix& b) {
  x.rowwise() += b.row(0);
  return x;
}

void accumulate(GradientSet& grads, const std::string& name, const Matrix& g) {
  auto it = grads.find(name);
  if (it == grads.end()) {
    grads.emplace(name, g);
  } else {
    it->second += g;
  }
}

}  // namespace

bool identical(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.size() == 0 || std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0);
}

bool identical(const ParamMap& a, const ParamMap& b) {
  if (a.size() != b.size()) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib)
    if (ia->first != ib->first || !identical(ia->second, ib->second)) return false;
  return true;
}

std::string encoder_weight(int layer) { return "enc." + std::to_string(layer) + ".w"; }
std::string encoder_bias(int layer) { return "enc." + std::to_string(layer) + ".b"; }
std::string head_prefix(std::string_view lang) { return "head." + std::string(lang) + "."; }
std::string adapter_prefix(std::string_view lang) { return "adapter." + std::string(lang) + "."; }

ModelState::ModelState(const ModelConfig& cfg, std::uint64_t rng_seed) : cfg_(cfg), rng_seed_(rng_seed) {
  if (cfg.feature_dim < 1 || cfg.hidden < 1 || cfg.encoder_layers < 1 || cfg.vocab_size < 1 || cfg.adapter_dim < 1)
    throw ValidationError("model widths must all be >= 1");
  auto rng = SeedBuilder(rng_seed).push("encoder").rng();
  int fan_in = cfg.feature_dim;
  for (int l = 0; l < cfg.encoder_layers; ++l) {
    Matrix w(fan_in, cfg.hidden);
    glorot(w, rng);
    params_[encoder_weight(l)] = std::move(w);
    params_[encoder_bias(l)] = Matrix::Zero(1, cfg.hidden);
    fan_in = cfg.hidden;
  }
}

ModelState make_model(const ModelConfig& cfg, std::uint64_t rng_seed, ParamMap params) {
  ModelState m(cfg, rng_seed);
  m.params() = std::move(params);
  return m;
}

const Matrix& ModelState::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ValidationError("model has no parameter '" + name + "'");
  return it->second;
}

bool ModelState::has_head(std::string_view lang) const { return params_.count(head_prefix(lang) + "w") > 0; }

bool ModelState::has_adapter(std::string_view lang) const {
  return params_.count(adapter_prefix(lang) + "down.w") > 0;
}

void ModelState::add_head(const std::string& lang) {
  if (has_head(lang)) return;
  auto rng = SeedBuilder(rng_seed_).push("head").push(lang).rng();
  Matrix w(cfg_.hidden, cfg_.vocab_size);
  glorot(w, rng);
  params_[head_prefix(lang) + "w"] = std::move(w);
  params_[head_prefix(lang) + "b"] = Matrix::Zero(1, cfg_.vocab_size);
}

void ModelState::add_adapter(const std::string& lang) {
  if (has_adapter(lang)) return;
  auto rng = SeedBuilder(rng_seed_).push("adapter").push(lang).rng();
  const auto p = adapter_prefix(lang);
  Matrix down(cfg_.hidden, cfg_.adapter_dim);
  glorot(down, rng);
  params_[p + "down.w"] = std::move(down);
  params_[p + "down.b"] = Matrix::Zero(1, cfg_.adapter_dim);
  params_[p + "up.w"] = Matrix::Zero(cfg_.adapter_dim, cfg_.hidden);
  params_[p + "up.b"] = Matrix::Zero(1, cfg_.hidden);
}

std::vector<std::string> ModelState::head_languages() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : params_) {
    if (name.rfind("head.", 0) == 0 && name.size() > 7 && name.compare(name.size() - 2, 2, ".w") == 0)
      out.push_back(name.substr(5, name.size() - 7));
  }
  return out;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.size());
  return n;
}

bool ModelState::all_finite() const {
  for (const auto& [_, p] : params_)
    if (!p.allFinite()) return false;
  return true;
}

ForwardTrace forward_trace(const ModelState& model, const Matrix& features, std::string_view lang, bool use_adapter) {
  if (!model.has_head(lang)) throw ValidationError("no decoder head for language '" + std::string(lang) + "'");
  if (use_adapter && !model.has_adapter(lang))
    throw ValidationError("no adapter for language '" + std::string(lang) + "'");
  ForwardTrace tr;
  const auto& cfg = model.config();
  tr.activations.reserve(static_cast<std::size_t>(cfg.encoder_layers) + 1);
  tr.activations.push_back(features);
  for (int l = 0; l < cfg.encoder_layers; ++l) {
    const auto& x = tr.activations.back();
    tr.activations.push_back(
        add_bias(x * model.param(encoder_weight(l)), model.param(encoder_bias(l))).array().tanh().matrix());
  }
  const auto& h = tr.activations.back();
  if (use_adapter) {
    const auto p = adapter_prefix(lang);
    tr.adapter = true;
    tr.adapter_hidden = add_bias(h * model.param(p + "down.w"), model.param(p + "down.b")).array().tanh().matrix();
    tr.top = h + add_bias(tr.adapter_hidden * model.param(p + "up.w"), model.param(p + "up.b"));
  } else {
    tr.top = h;
  }
  const auto hp = head_prefix(lang);
  tr.logits = add_bias(tr.top * model.param(hp + "w"), model.param(hp + "b"));
  return tr;
}

Matrix forward(const ModelState& model, const Sample& sample, std::string_view lang, bool use_adapter) {
  return forward_trace(model, sample.features, lang, use_adapter).logits;
}

void backprop(const ModelState& model, const ForwardTrace& tr, std::string_view lang, const Matrix& d_logits,
              GradientSet& grads) {
  const auto hp = head_prefix(lang);
  accumulate(grads, hp + "w", tr.top.transpose() * d_logits);
  accumulate(grads, hp + "b", d_logits.colwise().sum());
  Matrix d_h = d_logits * model.param(hp + "w").transpose();
  if (tr.adapter) {
    const auto p = adapter_prefix(lang);
    const Matrix& a = tr.adapter_hidden;
    accumulate(grads, p + "up.w", a.transpose() * d_h);
    accumulate(grads, p + "up.b", d_h.colwise().sum());
    Matrix d_z = ((d_h * model.param(p + "up.w").transpose()).array() * (1.0 - a.array().square())).matrix();
    const Matrix& h = tr.activations.back();
    accumulate(grads, p + "down.w", h.transpose() * d_z);
    accumulate(grads, p + "down.b", d_z.colwise().sum());
    d_h += d_z * model.param(p + "down.w").transpose();
  }
  for (int l = model.config().encoder_layers - 1; l >= 0; --l) {
    const Matrix& out = tr.activations[static_cast<std::size_t>(l) + 1];
    const Matrix& in = tr.activations[static_cast<std::size_t>(l)];
    Matrix d_z = (d_h.array() * (1.0 - out.array().square())).matrix();
    accumulate(grads, encoder_weight(l), in.transpose() * d_z);
    accumulate(grads, encoder_bias(l), d_z.colwise().sum());
    if (l > 0) d_h = d_z * model.param(encoder_weight(l)).transpose();
  }
}

LossGrad loss_and_grad(const ModelState& model, std::span<const Example> minibatch) {
  if (minibatch.empty()) throw ValidationError("loss_and_grad needs a nonempty minibatch");
  Eigen::Index frames = 0;
  for (const auto& ex : minibatch) frames += ex.sample->features.rows();
  const double scale = 1.0 / static_cast<double>(frames);
  LossGrad out;
  for (const auto& ex : minibatch) {
    const auto tr = forward_trace(model, ex.sample->features, ex.language, model.has_adapter(ex.language));
    // Stable softmax / log-sum-exp per frame.
    Matrix shifted = tr.logits.colwise() - tr.logits.rowwise().maxCoeff();
    Matrix probs = shifted.array().exp().matrix();
    const Vector norm = probs.rowwise().sum();
    probs.array().colwise() /= norm.array();
    for (Eigen::Index t = 0; t < probs.rows(); ++t) {
      const int y = ex.sample->reference[static_cast<std::size_t>(t)];
      out.loss -= (shifted(t, y) - std::log(norm[t])) * scale;
      probs(t, y) -= 1.0;
    }
    probs *= scale;
    backprop(model, tr, ex.language, probs, out.grads);
  }
  return out;
}

LossGrad output_norm_and_grad(const ModelState& model, const Sample& sample, std::string_view lang) {
  const auto tr = forward_trace(model, sample.features, lang, model.has_adapter(lang));
  const double scale = 1.0 / static_cast<double>(tr.logits.rows());
  LossGrad out;
  out.loss = tr.logits.squaredNorm() * scale;
  backprop(model, tr, lang, 2.0 * scale * tr.logits, out.grads);
  return out;
}

void adam_step(ModelState& model, OptState& opt, const GradientSet& grads) {
  for (const auto& [name, g] : grads) {
    auto it = model.params().find(name);
    if (it == model.params().end()) throw ValidationError("gradient for unknown parameter '" + name + "'");
    if (it->second.rows() != g.rows() || it->second.cols() != g.cols())
      throw ValidationError("gradient shape mismatch for '" + name + "'");
  }
  for (const auto& [name, g] : grads) {
    auto& theta = model.params().at(name);
    auto& slot = opt.slots[name];
    if (slot.m.size() == 0) {
      slot.m = Matrix::Zero(g.rows(), g.cols());
      slot.v = Matrix::Zero(g.rows(), g.cols());
    }
    slot.step += 1;
    slot.m = opt.beta1 * slot.m + (1.0 - opt.beta1) * g;
    slot.v = opt.beta2 * slot.v + (1.0 - opt.beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(slot.step));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(slot.step));
    theta.array() -= opt.lr * (slot.m.array() / c1) / ((slot.v.array() / c2).sqrt() + opt.epsilon);
    if (!theta.allFinite()) throw RuntimeFailure("non-finite parameter '" + name + "' after Adam step");
  }
  opt.step += 1;
}

std::vector<int> decode(const Matrix& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < logits.cols(); ++k)
      if (logits(t, k) > logits(t, best)) best = k;
    out[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return out;
}

TemperatureSampler::TemperatureSampler(const std::map<std::string, double>& counts, double temperature,
                                       std::uint64_t seed)
    : rng_(SeedBuilder(seed).push("temperature").rng()) {
  if (counts.empty()) throw ValidationError("temperature sampler needs at least one language");
  if (!(temperature >= 1.0)) throw ValidationError("temperature must be >= 1");
  const double inv = std::isinf(temperature) ? 0.0 : 1.0 / temperature;
  double total = 0.0;
  for (const auto& [lang, c] : counts) {
    if (!(c > 0.0)) throw ValidationError("temperature sampler count for '" + lang + "' must be positive");
    langs_.push_back(lang);
    probs_.push_back(std::pow(c, inv));
    total += probs_.back();
  }
  double acc = 0.0;
  for (auto& p : probs_) {
    p /= total;
    acc += p;
    cdf_.push_back(acc);
  }
}

const std::string& TemperatureSampler::next() {
  if (langs_.size() == 1) return langs_.front();
  const double u = uniform01(rng_) * cdf_.back();
  for (std::size_t i = 0; i < cdf_.size(); ++i)
    if (u < cdf_[i]) return langs_[i];
  return langs_.back();
}

}  // namespace clh
