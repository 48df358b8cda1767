#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sketchime/dataset.hpp"
#include "sketchime/knowledge.hpp"
#include "sketchime/losses.hpp"
#include "sketchime/metrics.hpp"
#include "sketchime/model.hpp"

namespace sketchime {

struct AblationFlags {
  bool cfa = true;
  bool rsm = false;
  bool kld = false;
};

struct TrainConfig {
  ModelConfig model;
  double lr = 2e-3;
  int batch = 256;
  int epochs = 100;
  std::uint64_t seed = 0;
  AblationFlags flags;
  double lambda1 = 150.0;
  bool test_mode = true;

  std::string train_path, test_path, knowledge_path;
  std::string checkpoint_dir;  // empty: no checkpoints
  int checkpoint_every = 0;    // epochs; 0 disables

  LossConfig loss() const { return {lambda1, flags.kld ? 1 : 0}; }
  void validate() const;

  static TrainConfig full(int num_categories, int num_components);
  /// batch 32, 20 epochs on the desk model profile.
  static TrainConfig desk(int num_categories, int num_components);
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing fields keep the values already in `c`.
void from_json(const nlohmann::json& j, TrainConfig& c);

struct Prediction {
  int category = -1;
  std::vector<int> points;
};

using Predictor = std::function<Prediction(const Sample&)>;

/// Argmax of the (optionally gated) model output.
Predictor model_predictor(const ModelState& state, const KnowledgeMatrix& km, bool rsm);

MetricReport evaluate(const Predictor& predict, const std::vector<Sample>& data);
MetricReport evaluate(const ModelState& state, const std::vector<Sample>& data, const KnowledgeMatrix& km,
                      bool rsm);

/// P-Metric over correctly recognized sketches and over misrecognized ones.
struct SplitPMetric {
  double correct = 0.0, wrong = 0.0;
  std::size_t n_correct = 0, n_wrong = 0;
};
SplitPMetric p_metric_by_recognition(const Predictor& predict, const std::vector<Sample>& data);

struct EpochLog {
  int epoch = 0;
  double loss = 0.0, segmentation = 0.0, recognition = 0.0, kl = 0.0;
};

struct TrainResult {
  ModelState state;
  MetricReport report;
  std::vector<EpochLog> epochs;
  std::string train_manifest, test_manifest;

  nlohmann::json report_json() const;
};

using EpochHook = std::function<void(const EpochLog&)>;

/// Per-sample objective. Left empty, training uses `total_loss` on a plain
/// forward pass.
using SampleLoss = std::function<LossTerms(const ModelState&, const Sample&)>;

/// Mini-batch training: per-sample gradients summed over the batch, one Adam
/// step per batch. Labels are validated before the first step.
TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& train_set, const std::vector<Sample>& test_set,
                  const KnowledgeMatrix& km, const EpochHook& hook = {});

/// Continues from an existing state (used by fine-tuning paths).
TrainResult train_from(const TrainConfig& cfg, ModelState init, const std::vector<Sample>& train_set,
                       const std::vector<Sample>& test_set, const KnowledgeMatrix& km, const EpochHook& hook = {},
                       const SampleLoss& loss = {});

}  // namespace sketchime
