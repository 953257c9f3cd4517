#include "clh/taskgen.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "clh/common.hpp"

namespace clh {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

int draw_token(Rng& rng, const Vector& prior) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (int k = 0; k < prior.size(); ++k) {
    acc += prior[k];
    if (u < acc) return k;
  }
  return static_cast<int>(prior.size()) - 1;
}

}  // namespace

LanguageSpec gen_language(const std::string& iso, std::uint64_t master_seed, const TaskConfig& cfg) {
  LanguageSpec lang;
  lang.language = iso;
  lang.vocab_size = cfg.vocab_size;
  lang.seed = SeedBuilder(master_seed).push("language").push(iso).derive();
  auto rng = SeedBuilder(lang.seed).rng();
  std::normal_distribution<double> normal(0.0, 1.0);
  lang.centroids.resize(cfg.vocab_size, cfg.feature_dim);
  for (int k = 0; k < cfg.vocab_size; ++k) {
    for (int j = 0; j < cfg.feature_dim; ++j) lang.centroids(k, j) = normal(rng);
    lang.centroids.row(k).normalize();
  }
  return lang;
}

DomainSpec gen_domain(std::shared_ptr<const LanguageSpec> lang, const std::string& domain, double shift_strength,
                      const TaskConfig& cfg) {
  if (!(shift_strength >= 0.0 && shift_strength <= 1.0))
    throw ValidationError("shift_strength must lie in [0, 1], got " + std::to_string(shift_strength));
  DomainSpec d;
  d.domain = domain;
  d.seed = SeedBuilder(lang->seed).push("domain").push(domain).derive();
  auto rng = SeedBuilder(d.seed).rng();
  const int dim = static_cast<int>(lang->centroids.cols());
  const int vocab = lang->vocab_size;

  // Product of Givens rotations in random planes; exact identity at zero shift.
  d.rotation = Matrix::Identity(dim, dim);
  for (int k = 0; k < dim; ++k) {
    const auto i = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(dim)));
    auto j = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(dim - 1)));
    if (j >= i) ++j;
    const double angle = shift_strength * cfg.max_angle * (0.5 + 0.5 * uniform01(rng));
    const double c = std::cos(angle), s = std::sin(angle);
    for (int col = 0; col < dim; ++col) {
      const double a = d.rotation(i, col), b = d.rotation(j, col);
      d.rotation(i, col) = c * a - s * b;
      d.rotation(j, col) = s * a + c * b;
    }
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  d.class_prior.resize(vocab);
  for (int k = 0; k < vocab; ++k) d.class_prior[k] = std::exp(shift_strength * cfg.prior_skew * normal(rng));
  d.class_prior /= d.class_prior.sum();

  d.noise_sigma = cfg.noise_sigma * (1.0 + cfg.noise_spread * shift_strength * uniform01(rng));
  d.language_spec = std::move(lang);
  return d;
}

Sample gen_sample(const DomainSpec& dspec, std::uint64_t seed, std::uint64_t index, int t_max) {
  Rng rng(splitmix64(seed ^ splitmix64(index + 0x51ed27u)));
  const auto& centroids = dspec.language_spec->centroids;
  const auto dim = centroids.cols();
  const auto frames = static_cast<Eigen::Index>(1 + uniform_index(rng, static_cast<std::uint64_t>(t_max)));
  std::normal_distribution<double> normal(0.0, dspec.noise_sigma > 0.0 ? dspec.noise_sigma : 1.0);
  Sample s;
  s.reference.resize(static_cast<std::size_t>(frames));
  Matrix clean(frames, dim);
  for (Eigen::Index t = 0; t < frames; ++t) {
    const int tok = draw_token(rng, dspec.class_prior);
    s.reference[static_cast<std::size_t>(t)] = tok;
    clean.row(t) = centroids.row(tok);
    if (dspec.noise_sigma > 0.0)
      for (Eigen::Index j = 0; j < dim; ++j) clean(t, j) += normal(rng);
  }
  // Row form of x' = R x.
  s.features = clean * dspec.rotation.transpose();
  return s;
}

std::vector<Sample> gen_batch(const DomainSpec& dspec, int n, std::uint64_t seed, int t_max) {
  if (n < 1) throw ValidationError("gen_batch needs n >= 1");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(gen_sample(dspec, seed, static_cast<std::uint64_t>(i), t_max));
  return out;
}

TaskWorld::TaskWorld(const Catalog& catalog, const TaskConfig& cfg) : catalog_(catalog), cfg_(cfg) {
  std::map<std::string, std::shared_ptr<const LanguageSpec>> langs;
  for (const auto& l : catalog_.languages())
    langs[l] = std::make_shared<const LanguageSpec>(gen_language(l, cfg_.master_seed, cfg_));
  domains_.reserve(catalog_.size());
  tests_.reserve(catalog_.size());
  for (const auto& b : catalog_.batches()) {
    domains_.push_back(gen_domain(langs.at(b.language), b.domain, cfg_.shift_strength, cfg_));
    const auto& d = domains_.back();
    train_seeds_.push_back(SeedBuilder(d.seed).push("train").push(b.batch_id).derive());
    const auto test_seed = SeedBuilder(d.seed).push("test").push(b.batch_id).derive();
    tests_.push_back(gen_batch(d, static_cast<int>(b.n_test), test_seed, cfg_.t_max));
  }
}

Sample TaskWorld::train_sample(std::size_t batch, std::uint64_t index) const {
  return gen_sample(domains_.at(batch), train_seeds_.at(batch), index, cfg_.t_max);
}

std::string dump_batch(const std::vector<Sample>& samples) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    for (Eigen::Index t = 0; t < s.features.rows(); ++t) {
      os << i << ' ' << t << ' ' << s.reference[static_cast<std::size_t>(t)];
      for (Eigen::Index j = 0; j < s.features.cols(); ++j) os << ' ' << s.features(t, j);
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace clh
