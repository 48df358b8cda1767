#pragma once

#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sketchime/autograd.hpp"
#include "sketchime/dataset.hpp"
#include "sketchime/knowledge.hpp"
#include "sketchime/metrics.hpp"
#include "sketchime/model.hpp"
#include "sketchime/trainer.hpp"

namespace sketchime {

struct SessionStep {
  std::vector<int> categories;  // new category ids
  std::vector<int> components;  // new component ids; empty for CIL2-style plans
  int shots = 5;
};

/// Base classes plus ordered incremental sessions. Ids are those of the
/// dataset; classifier rows follow plan order (base first, then each session).
///
/// JSON: {"base": {"categories": [...], "components": [...]},
///        "sessions": [{"categories": [...], "components": [...], "shots": 5}, ...]}
struct SessionPlan {
  std::vector<int> base_categories, base_components;
  std::vector<SessionStep> sessions;

  void validate() const;
  int new_categories() const;
  int new_components() const;
  /// Plan order of every category / component seen after `session` (0 = base).
  std::vector<int> category_order(int session) const;
  std::vector<int> component_order(int session) const;
};

void to_json(nlohmann::json& j, const SessionPlan& p);
void from_json(const nlohmann::json& j, SessionPlan& p);
SessionPlan load_session_plan(const std::string& path);

/// Per-stream view of a cosine classifier. Rows are prototypes.
struct PrototypeBank {
  Matrix known;
  Matrix virtual_slots;
};

PrototypeBank category_bank(const ModelState& state);
PrototypeBank component_bank(const ModelState& state);

/// Copy of `logits` with column y[r] of row r set to zero.
ag::Var mask_logits(const ag::Var& logits, std::span<const int> y);

/// argmax over columns >= known, per row, as a column index.
std::vector<int> virtual_pseudo_labels(const Matrix& logits, int known);
/// argmax over columns < known, per row.
std::vector<int> known_pseudo_labels(const Matrix& logits, int known);

/// Instance term: CE(logits, y) + gamma CE(Mask(logits, y), y_hat) where
/// y_hat is the strongest virtual class. Rows are instances, averaged.
ag::Var fact_instance_loss(const ag::Var& logits, std::span<const int> y, int known, double gamma);

/// Virtual-instance term on mixed embeddings: CE(logits, y_hat) +
/// gamma CE(Mask(logits, y_hat), y_hat_hat), y_hat_hat the strongest known class.
ag::Var fact_virtual_loss(const ag::Var& logits, int known, double gamma);

/// z = lam h1 + (1 - lam) h2.
Matrix mixup_virtual(const Matrix& h1, const Matrix& h2, double lam);

struct FSCILConfig {
  TrainConfig base;          // model head is forced to cosine with plan-derived virtual counts
  double gamma = 0.01;
  double mixup_alpha = 2.0;  // Beta(alpha, alpha) mixing weight
  bool virtual_prototypes = true;  // false: V = 0, FACT terms off
  bool mean_base_prototypes = true;  // swap trained base prototypes for class means before session 0

  void validate() const;
};

void to_json(nlohmann::json& j, const FSCILConfig& c);
void from_json(const nlohmann::json& j, FSCILConfig& c);

/// Base-session objective for a model whose labels are already in plan order.
/// With no virtual prototypes it is exactly `total_loss`.
SampleLoss fact_sample_loss(const std::vector<Sample>& train_set, const KnowledgeMatrix& km, const LossConfig& loss,
                            double gamma, double mixup_alpha, std::uint64_t seed);

/// Appends normalized class-mean prototypes for the new classes (labels in
/// plan order: the new categories are the next `new_categories` indices)
/// and retires the closest virtual slot for each. Backbone and old
/// prototypes are untouched.
ModelState extend_session(const ModelState& state, const std::vector<Sample>& shots, int new_categories,
                          int new_components);

/// Known prototypes of both streams replaced by normalized class means of
/// `train_set` (plan-order labels). Virtual prototypes and backbone untouched.
ModelState replace_base_prototypes(const ModelState& state, const std::vector<Sample>& train_set);

struct SessionReport {
  int session = 0;
  int known_categories = 0, known_components = 0;
  int virtual_categories = 0, virtual_components = 0;
  MetricReport report;     // all seen classes
  double base_acc = 0.0;   // Acc@1 on base-category test samples
};

void to_json(nlohmann::json& j, const SessionReport& r);

struct SessionsResult {
  ModelState state;
  std::vector<SessionReport> sessions;
  std::vector<PrototypeBank> category_banks, component_banks;  // after each session
};

/// Maps dataset ids to plan order; samples of classes outside the plan are
/// dropped.
std::vector<Sample> remap_to_plan(const std::vector<Sample>& data, const SessionPlan& plan, int session);

/// Base training with the FACT objective (skipped when `base_state` is
/// given), then one extension per session. Each session is evaluated on the
/// test samples of every category seen so far. `km` uses dataset ids.
SessionsResult run_sessions(const SessionPlan& plan, const FSCILConfig& cfg, const std::vector<Sample>& train_set,
                            const std::vector<Sample>& test_set, const KnowledgeMatrix& km,
                            std::optional<ModelState> base_state = std::nullopt, const EpochHook& hook = {});

}  // namespace sketchime
