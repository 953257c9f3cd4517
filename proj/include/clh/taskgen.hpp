#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "clh/manifest.hpp"

namespace clh {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Knobs of the synthetic stand-in tasks.
struct TaskConfig {
  int feature_dim = 16;
  int vocab_size = 16;
  int t_max = 24;
  /// Domain shift applied to every batch of a catalog-backed world.
  double shift_strength = 0.5;
  /// Per-frame Gaussian noise before rotation.
  double noise_sigma = 0.35;
  /// Domains may raise noise by up to this fraction at full shift.
  double noise_spread = 0.5;
  /// Largest Givens angle (radians) at shift_strength = 1.
  double max_angle = 1.0;
  /// Log-prior scale at shift_strength = 1.
  double prior_skew = 1.0;
  std::uint64_t master_seed = 7;

  friend bool operator==(const TaskConfig&, const TaskConfig&) = default;
};

struct LanguageSpec {
  std::string language;
  int vocab_size = 0;
  Matrix centroids;  // vocab_size x feature_dim, unit rows
  std::uint64_t seed = 0;
};

struct DomainSpec {
  std::shared_ptr<const LanguageSpec> language_spec;
  std::string domain;
  Matrix rotation;    // feature_dim x feature_dim, orthogonal
  Vector class_prior; // vocab_size, sums to 1
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

struct Sample {
  Matrix features;             // T x feature_dim
  std::vector<int> reference;  // T tokens

  friend bool operator==(const Sample& a, const Sample& b) {
    return a.reference == b.reference && a.features.rows() == b.features.rows() &&
           a.features.cols() == b.features.cols() && a.features == b.features;
  }
};

LanguageSpec gen_language(const std::string& iso, std::uint64_t master_seed, const TaskConfig& cfg = {});

/// shift_strength in [0, 1]; 0 gives the identity rotation and a uniform prior.
DomainSpec gen_domain(std::shared_ptr<const LanguageSpec> lang, const std::string& domain, double shift_strength,
                      const TaskConfig& cfg = {});

/// The index-th sample of the (dspec, seed) stream.
Sample gen_sample(const DomainSpec& dspec, std::uint64_t seed, std::uint64_t index, int t_max = 24);
std::vector<Sample> gen_batch(const DomainSpec& dspec, int n, std::uint64_t seed, int t_max = 24);

/// Catalog-backed task universe: one generated language per language, one domain
/// generator per batch, lazily generated train samples and pre-generated test
/// splits. Immutable after construction.
class TaskWorld {
 public:
  TaskWorld(const Catalog& catalog, const TaskConfig& cfg);

  const Catalog& catalog() const { return catalog_; }
  const TaskConfig& config() const { return cfg_; }
  const DomainSpec& domain_spec(std::size_t batch) const { return domains_.at(batch); }
  const std::string& language_of(std::size_t batch) const { return catalog_.batch(batch).language; }

  Sample train_sample(std::size_t batch, std::uint64_t index) const;
  const std::vector<Sample>& test_set(std::size_t batch) const { return tests_.at(batch); }

 private:
  Catalog catalog_;
  TaskConfig cfg_;
  std::vector<DomainSpec> domains_;
  std::vector<std::uint64_t> train_seeds_;
  std::vector<std::vector<Sample>> tests_;
};

/// Batch dump for offline inspection: one line per frame,
/// "sample_index frame token f_0 ... f_{d-1}".
std::string dump_batch(const std::vector<Sample>& samples);

}  // namespace clh
