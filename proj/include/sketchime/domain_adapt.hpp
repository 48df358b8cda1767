#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <json.hpp>

#include "sketchime/autograd.hpp"
#include "sketchime/dataset.hpp"
#include "sketchime/knowledge.hpp"
#include "sketchime/model.hpp"

namespace sketchime {

/// Row-wise outer product of f (n x F) and g (n x C), flattened row-major to
/// n x (F*C).
Matrix multilinear_map(const Matrix& f, const Matrix& g);

/// Binary domain classifier: in -> hidden (ReLU) -> 1 logit. Label 1 means
/// source domain.
struct Discriminator {
  ag::Var w1, b1, w2, b2;

  static Discriminator init(int in, int hidden, std::mt19937_64& rng);
  ag::Var logits(const ag::Var& x) const;
  std::vector<ag::Var> vars() const;
  int input_dim() const { return static_cast<int>(w1.rows()); }
};

struct DAConfig {
  double lambda_adv = 1.0;
  int shots_target = 5;   // per class; 0 keeps every target sample
  int shots_source = 5;   // per class from the source pool
  int steps = 60;
  int batch = 8;          // samples per domain per step
  double lr = 5e-4;
  double disc_lr = 1e-3;
  double warmup = 0.1;    // fraction of steps with linearly rising lambda
  int seg_points = 64;    // points per sketch fed to the segmentation discriminator
  int disc_hidden = 64;
  double lambda1 = 1.0;   // recognition weight inside E(G)
  std::uint64_t seed = 0;

  void validate() const;
  double lambda_at(int step) const;
};

void to_json(nlohmann::json& j, const DAConfig& c);
void from_json(const nlohmann::json& j, DAConfig& c);

struct DAStepLog {
  int step = 0;
  double supervised = 0.0;
  double disc_rec = 0.0, disc_seg = 0.0;  // discriminator BCE
  double lambda = 0.0;
};

struct DAResult {
  ModelState state;
  std::vector<DAStepLog> log;
  // Discriminator accuracy on held-out source/target samples, before and after.
  double disc_accuracy_start = 0.5, disc_accuracy_end = 0.5;
  std::size_t source_used = 0, target_used = 0;
};

/// First `per_class` samples of each category after a seeded shuffle;
/// per_class = 0 keeps everything. `rest` receives the remainder.
std::vector<Sample> select_shots(const std::vector<Sample>& data, int per_class, std::uint64_t seed,
                                 std::vector<Sample>* rest = nullptr);

/// Fraction of held-out sketches whose recognition-stream discriminator call
/// matches their domain.
double discriminator_accuracy(const ModelState& state, const Discriminator& d, const std::vector<Sample>& source,
                              const std::vector<Sample>& target);

/// Supervised conditional adversarial adaptation of both streams. Target
/// samples may carry only a category; those contribute the recognition loss.
/// The input state is never modified.
DAResult adapt(const ModelState& state, const std::vector<Sample>& source, const std::vector<Sample>& target,
               const KnowledgeMatrix& km, const DAConfig& cfg);

}  // namespace sketchime
